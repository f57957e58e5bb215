//! `mbsbl` command-line tool: synthesize packets, compress them, recover them
//! and run benchmark sweeps.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use mbsbl::bench::{
    compare_compressors, nmse, records_to_csv, run_sweep, summarize, synth_block_sparse, synth_pulse_train,
    CompressorSpec, ExperimentSpec, SignalModel,
};
use mbsbl::io::{read_matrix, write_matrix, FileFormat, SensingMatrixRecord};
use mbsbl::sensing::StreamState;
use mbsbl::{
    generate_bernoulli, generate_gaussian, make_partition_uniform, measurements_for_cr, Dictionary, DictionaryKind,
    Execution, Measurements, SensingKind, SolverConfig,
};
use serde_json::json;

#[derive(Parser, Debug)]
#[command(name = "mbsbl", version, about = "Compressive sensing of multichannel packets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic N×P packet.
    Synth(SynthArgs),
    /// Compress a packet with a seeded sensing matrix.
    Compress(CompressArgs),
    /// Recover a packet from its measurements.
    Recover(RecoverArgs),
    /// Run a compression-ratio sweep or the compressor cost comparison.
    Bench(BenchArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum ModelArg {
    BlockSparse,
    Pulse,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum FormatArg {
    Csv,
    Bin,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum MatrixArg {
    Bernoulli,
    Gaussian,
}

impl From<MatrixArg> for SensingKind {
    fn from(m: MatrixArg) -> Self {
        match m {
            MatrixArg::Bernoulli => SensingKind::BernoulliTwoOnes,
            MatrixArg::Gaussian => SensingKind::Gaussian,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum DictionaryArg {
    Dct,
    Identity,
}

impl From<DictionaryArg> for DictionaryKind {
    fn from(d: DictionaryArg) -> Self {
        match d {
            DictionaryArg::Dct => DictionaryKind::Dct,
            DictionaryArg::Identity => DictionaryKind::Identity,
        }
    }
}

fn positive(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) => Err("must be positive".into()),
        Ok(v) => Ok(v),
        Err(e) => Err(e.to_string()),
    }
}

fn ratio(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e: std::num::ParseFloatError| e.to_string())?;
    if v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        Err(format!("compression ratio must lie in (0, 1), got {v}"))
    }
}

fn positive_f64(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e: std::num::ParseFloatError| e.to_string())?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("must be positive, got {v}"))
    }
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, value_enum, default_value = "block-sparse")]
    model: ModelArg,
    #[arg(long, default_value = "256", value_parser = positive)]
    n: usize,
    #[arg(long, default_value = "8", value_parser = positive)]
    p: usize,
    /// Block size (block-sparse model).
    #[arg(long, default_value = "8", value_parser = positive)]
    d: usize,
    /// Number of active blocks (block-sparse model).
    #[arg(long, default_value = "8")]
    k: usize,
    /// Number of pulses (pulse model).
    #[arg(long, default_value = "4", value_parser = positive)]
    pulses: usize,
    #[arg(long, default_value = "0")]
    seed: u64,
    #[arg(short, long)]
    output: PathBuf,
    /// Defaults to CSV for `.csv` paths and binary otherwise.
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    /// Ground-truth coefficient file for the block-sparse model. Defaults to
    /// the output path with `.truth` inserted before the extension.
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CompressArgs {
    /// Packet file (binary or CSV).
    packet: PathBuf,
    /// Compression ratio; M = round(N·(1−CR)).
    #[arg(long, value_parser = ratio, conflicts_with = "m", required_unless_present = "m")]
    cr: Option<f64>,
    /// Number of measurements.
    #[arg(long, value_parser = positive)]
    m: Option<usize>,
    #[arg(long, value_enum, default_value = "bernoulli")]
    matrix: MatrixArg,
    #[arg(long, default_value = "0")]
    seed: u64,
    /// Skip one header line of a CSV packet.
    #[arg(long)]
    header: bool,
    #[arg(short, long)]
    output: PathBuf,
    /// Operation-count and matrix JSON. Defaults to the output path with a
    /// `.json` extension.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Also write the explicit matrix entries as JSON for auditing.
    #[arg(long)]
    export_matrix: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RecoverArgs {
    /// Measurements file (binary or CSV).
    measurements: PathBuf,
    /// Report or matrix JSON written by `compress`; supplies the matrix kind,
    /// seed and N.
    #[arg(long)]
    sensing: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "bernoulli")]
    matrix: MatrixArg,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = positive)]
    n: Option<usize>,
    #[arg(long, default_value = "8", value_parser = positive)]
    d: usize,
    #[arg(long, default_value = "1e-5", value_parser = positive_f64)]
    eta: f64,
    #[arg(long, default_value = "0.01", value_parser = positive_f64)]
    beta_inv_scale: f64,
    #[arg(long, default_value = "1000", value_parser = positive)]
    max_iterations: usize,
    #[arg(long, value_enum, default_value = "dct")]
    dictionary: DictionaryArg,
    /// Original packet; when given, the NMSE of the recovery is reported.
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Skip one header line of CSV inputs.
    #[arg(long)]
    header: bool,
    #[arg(short, long)]
    output: PathBuf,
    /// Result JSON. Defaults to the output path with a `.json` extension.
    #[arg(long)]
    result: Option<PathBuf>,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum BenchModelArg {
    BlockSparse,
    Pulse,
    File,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Experiment spec JSON; explicit flags below override its fields.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Comma-separated compression ratios.
    #[arg(long, value_delimiter = ',', value_parser = ratio)]
    cr: Option<Vec<f64>>,
    #[arg(long, value_parser = positive)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = positive)]
    n: Option<usize>,
    #[arg(long, value_parser = positive)]
    p: Option<usize>,
    #[arg(long, value_parser = positive)]
    d: Option<usize>,
    #[arg(long, value_enum)]
    model: Option<BenchModelArg>,
    /// Active blocks for the block-sparse model.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, value_parser = positive)]
    pulses: Option<usize>,
    /// Packet file for `--model file`; rows are cut into N-sample packets.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    header: bool,
    /// Per-trial CSV. Printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Aggregate JSON summary.
    #[arg(long)]
    summary: Option<PathBuf>,
    /// Run the compressor operation-count comparison instead of a sweep.
    #[arg(long)]
    compressors: bool,
    /// Output stem for the comparison; writes `<stem>.json` and `<stem>.md`.
    #[arg(long, default_value = "compressors")]
    compressors_out: PathBuf,
    /// Write wall time as 0 so the CSV is byte-reproducible.
    #[arg(long)]
    deterministic: bool,
    /// Run trials on one thread.
    #[arg(long)]
    sequential: bool,
}

fn with_extension(path: &Path, ext: &str) -> PathBuf {
    path.with_extension(ext)
}

fn truth_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("packet");
    let name = match out.extension().and_then(|e| e.to_str()) {
        Some(ext) => format!("{stem}.truth.{ext}"),
        None => format!("{stem}.truth"),
    };
    out.with_file_name(name)
}

fn read_input(path: &Path, header: bool) -> anyhow::Result<nalgebra::DMatrix<f64>> {
    read_matrix(path, header).with_context(|| format!("reading {}", path.display()))
}

fn write_json(path: &Path, value: &serde_json::Value) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn cmd_synth(a: SynthArgs) -> anyhow::Result<()> {
    let format = match a.format {
        Some(FormatArg::Csv) => FileFormat::Csv,
        Some(FormatArg::Bin) => FileFormat::Binary,
        None => FileFormat::from_path(&a.output),
    };
    match a.model {
        ModelArg::BlockSparse => {
            let (pkt, coeffs) = synth_block_sparse(a.n, a.p, a.d, a.k, a.seed)?;
            write_matrix(&a.output, &pkt.samples, format)?;
            let truth = a.truth.unwrap_or_else(|| truth_path(&a.output));
            write_matrix(&truth, &coeffs, format)?;
        }
        ModelArg::Pulse => {
            let pkt = synth_pulse_train(a.n, a.p, a.pulses, a.seed)?;
            write_matrix(&a.output, &pkt.samples, format)?;
        }
    }
    Ok(())
}

fn cmd_compress(a: CompressArgs) -> anyhow::Result<()> {
    let x = read_input(&a.packet, a.header)?;
    let n = x.nrows();
    let m = match (a.cr, a.m) {
        (Some(cr), _) => measurements_for_cr(n, cr)?,
        (None, Some(m)) if m < n => m,
        (None, Some(m)) => {
            return Err(mbsbl::Error::InvalidConfig(format!(
                "--m {m} gives no compression for N = {n}; it must be below N"
            ))
            .into())
        }
        (None, None) => bail!("one of --cr or --m is required"),
    };
    let phi = match a.matrix {
        MatrixArg::Bernoulli => generate_bernoulli(m, n, a.seed)?,
        MatrixArg::Gaussian => generate_gaussian(m, n, a.seed)?,
    };
    let mut stream = StreamState::new(&phi, x.ncols())?;
    for row in x.row_iter() {
        let row: Vec<f64> = row.iter().copied().collect();
        stream.push(&row)?;
    }
    let (y, ops) = stream.finish()?;
    write_matrix(&a.output, &y.values, FileFormat::from_path(&a.output))?;

    let report = json!({
        "n": n,
        "p": x.ncols(),
        "m": m,
        "cr": 1.0 - m as f64 / n as f64,
        "matrix": SensingMatrixRecord::from_matrix(&phi, false),
        "ops": ops,
    });
    write_json(&a.report.unwrap_or_else(|| with_extension(&a.output, "json")), &report)?;
    if let Some(path) = a.export_matrix {
        write_json(&path, &serde_json::to_value(SensingMatrixRecord::from_matrix(&phi, true))?)?;
    }
    Ok(())
}

/// Accepts either a `compress` report (matrix under `"matrix"`) or a bare
/// matrix record.
fn load_record(path: &Path) -> anyhow::Result<SensingMatrixRecord> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut value: serde_json::Value = serde_json::from_str(&text)?;
    if let Some(inner) = value.get_mut("matrix") {
        value = inner.take();
    }
    Ok(serde_json::from_value(value).map_err(mbsbl::Error::from)?)
}

fn cmd_recover(a: RecoverArgs) -> anyhow::Result<()> {
    let y = Measurements::new(read_input(&a.measurements, a.header)?)?;
    let record = match &a.sensing {
        Some(path) => load_record(path)?,
        None => {
            let (Some(seed), Some(n)) = (a.seed, a.n) else {
                return Err(mbsbl::Error::InvalidConfig(
                    "give --sensing, or both --seed and --n to regenerate the sensing matrix".into(),
                )
                .into());
            };
            SensingMatrixRecord {
                kind: a.matrix.into(),
                rows: y.rows(),
                cols: n,
                seed,
                pairs: None,
                entries: None,
            }
        }
    };
    if record.rows != y.rows() {
        return Err(mbsbl::Error::DimensionMismatch(format!(
            "sensing matrix has {} rows, measurements have {}",
            record.rows,
            y.rows()
        ))
        .into());
    }
    let phi = record.regenerate()?;
    let n = phi.cols();
    let dictionary = Dictionary::new(a.dictionary.into(), n)?;
    let partition = make_partition_uniform(n, a.d)?;
    let cfg = SolverConfig {
        eta: a.eta,
        beta_inv_scale: a.beta_inv_scale,
        max_iterations: a.max_iterations,
        ..SolverConfig::default()
    };
    let result = mbsbl::solve(&y, &phi, &dictionary, &partition, &cfg)?;
    write_matrix(&a.output, &result.signal, FileFormat::from_path(&a.output))?;

    let mut value = serde_json::to_value(result.report())?;
    if let Some(path) = &a.reference {
        let x = read_input(path, a.header)?;
        value["nmse"] = json!(nmse(&result.signal, &x)?);
    }
    write_json(&a.result.unwrap_or_else(|| with_extension(&a.output, "json")), &value)?;
    Ok(())
}

fn bench_spec(a: &BenchArgs) -> anyhow::Result<ExperimentSpec> {
    let mut spec = match &a.spec {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text).map_err(mbsbl::Error::from)?
        }
        None => ExperimentSpec::default(),
    };
    if let Some(cr) = &a.cr {
        spec.cr_list = cr.clone();
    }
    if let Some(v) = a.trials {
        spec.trials = v;
    }
    if let Some(v) = a.seed {
        spec.seed = v;
    }
    if let Some(v) = a.n {
        spec.n = v;
    }
    if let Some(v) = a.p {
        spec.p = v;
    }
    if let Some(v) = a.d {
        spec.d = v;
    }
    let model = match (a.model, &a.input) {
        (Some(m), _) => Some(m),
        (None, Some(_)) => Some(BenchModelArg::File),
        (None, None) => None,
    };
    match model {
        Some(BenchModelArg::BlockSparse) => {
            spec.signal_model = SignalModel::BlockSparseDct { k_active: a.k.unwrap_or(8) }
        }
        Some(BenchModelArg::Pulse) => spec.signal_model = SignalModel::PulseTrain { pulses: a.pulses.unwrap_or(4) },
        Some(BenchModelArg::File) => {
            let Some(path) = &a.input else {
                return Err(mbsbl::Error::InvalidConfig("--model file needs --input".into()).into());
            };
            spec.signal_model = SignalModel::FromFile {
                path: path.clone(),
                header: a.header,
            };
        }
        None => {}
    }
    if a.deterministic {
        spec.record_timing = false;
    }
    if a.sequential {
        spec.execution = Execution::Sequential;
    }
    spec.validate()?;
    Ok(spec)
}

fn cmd_bench(a: BenchArgs) -> anyhow::Result<()> {
    if a.compressors {
        let defaults = CompressorSpec::default();
        let spec = CompressorSpec {
            n: a.n.unwrap_or(defaults.n),
            cr: a.cr.as_ref().and_then(|c| c.first().copied()).unwrap_or(defaults.cr),
            trials: a.trials.unwrap_or(defaults.trials),
            seed: a.seed.unwrap_or(defaults.seed),
            ..defaults
        };
        let report = compare_compressors(&spec)?;
        write_json(&with_extension(&a.compressors_out, "json"), &serde_json::to_value(&report)?)?;
        let md = report.to_markdown();
        fs::write(with_extension(&a.compressors_out, "md"), &md)?;
        print!("{md}");
        return Ok(());
    }

    let spec = bench_spec(&a)?;
    let records = run_sweep(&spec)?;
    let csv = records_to_csv(&records)?;
    match &a.out {
        Some(path) => fs::write(path, &csv).with_context(|| format!("writing {}", path.display()))?,
        None => std::io::stdout().write_all(csv.as_bytes())?,
    }
    let summary = summarize(&spec, &records)?;
    if let Some(path) = &a.summary {
        write_json(path, &serde_json::to_value(&summary)?)?;
    }
    for c in &summary.per_cr {
        eprintln!("cr={:.2} m={} mean_nmse={:.3e}", c.cr, c.m, c.mean_nmse);
    }
    Ok(())
}

/// Honors `MBSBL_THREADS` for the rayon pool used by sweeps.
fn configure_threads() -> anyhow::Result<()> {
    let Ok(raw) = std::env::var("MBSBL_THREADS") else {
        return Ok(());
    };
    let threads = positive(raw.trim())
        .map_err(|e| mbsbl::Error::InvalidConfig(format!("MBSBL_THREADS={raw:?}: {e}")))?;
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .context("configuring the thread pool")?;
    #[cfg(not(feature = "parallel"))]
    let _ = threads;
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Compress(a) => cmd_compress(a),
        Command::Recover(a) => cmd_recover(a),
        Command::Bench(a) => cmd_bench(a),
    }
}

fn error_line(kind: &str, message: String) -> String {
    json!({ "error": { "kind": kind, "message": message } }).to_string()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help / --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.render().to_string();
            eprintln!("{}", error_line("usage", msg.trim().to_string()));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = e
                .chain()
                .find_map(|c| c.downcast_ref::<mbsbl::Error>())
                .map(|c| c.code())
                .or_else(|| e.chain().find_map(|c| c.downcast_ref::<std::io::Error>()).map(|_| "io"))
                .unwrap_or("error");
            eprintln!("{}", error_line(kind, format!("{e:#}")));
            ExitCode::FAILURE
        }
    }
}
