//! Synthetic signals, metrics and the experiment drivers: compression-ratio
//! sweeps over the full compress→recover loop, and the operation-count
//! comparison of the streaming compressors against the lifting DWT.

use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{map_indexed, Execution};
use crate::model::{make_partition_uniform, measurements_for_cr, Packet, SolverConfig};
use crate::sensing::{compress, generate_bernoulli, generate_gaussian, OperationCounter};
use crate::solver::solve;
use crate::transform::{dwt53_forward, Dictionary, DictionaryKind, DwtConfig};

/// `‖X̂ − X‖_F² / ‖X‖_F²`.
pub fn nmse(estimate: &DMatrix<f64>, reference: &DMatrix<f64>) -> Result<f64> {
    if estimate.shape() != reference.shape() {
        return Err(Error::DimensionMismatch(format!(
            "estimate is {:?}, reference is {:?}",
            estimate.shape(),
            reference.shape()
        )));
    }
    let denom = reference.norm_squared();
    if denom == 0.0 {
        return Err(Error::UndefinedMetric);
    }
    Ok((estimate - reference).norm_squared() / denom)
}

/// SplitMix64 finalizer over a sequence of words.
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut z = 0x243F_6A88_85A3_08D3u64;
    for &p in parts {
        z = z.wrapping_add(p).wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

/// Block-sparse coefficients shared across channels, synthesized through the
/// DCT. Returns the packet and the ground-truth coefficient matrix.
pub fn synth_block_sparse(
    n: usize,
    p: usize,
    d: usize,
    k_active: usize,
    seed: u64,
) -> Result<(Packet, DMatrix<f64>)> {
    let partition = make_partition_uniform(n, d)?;
    let g = partition.num_blocks();
    if k_active > g {
        return Err(Error::InvalidConfig(format!(
            "{k_active} active blocks requested, only {g} exist"
        )));
    }
    if p == 0 {
        return Err(Error::InvalidDimensions("need at least one channel".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut blocks = index::sample(&mut rng, g, k_active).into_vec();
    blocks.sort_unstable();
    let mut coeffs = DMatrix::zeros(n, p);
    for b in blocks {
        for r in partition.range(b) {
            for c in 0..p {
                coeffs[(r, c)] = StandardNormal.sample(&mut rng);
            }
        }
    }
    let dict = Dictionary::new(DictionaryKind::Dct, n)?;
    let samples = dict.synthesize(&coeffs)?;
    Ok((Packet::new(samples)?, coeffs))
}

/// ECG-like surrogate: a train of Gaussian pulses at locations shared by all
/// channels, with per-channel gains and a slow baseline wander.
pub fn synth_pulse_train(n: usize, p: usize, pulses: usize, seed: u64) -> Result<Packet> {
    if pulses == 0 {
        return Err(Error::InvalidConfig("pulse train needs at least one pulse".into()));
    }
    if n == 0 || p == 0 {
        return Err(Error::InvalidDimensions("pulse train needs n, p >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nf = n as f64;
    let shape: Vec<(f64, f64, f64)> = (0..pulses)
        .map(|_| {
            let center = rng.random_range(0.0..nf);
            let width = rng.random_range(nf / 64.0..nf / 16.0).max(1.0);
            let amp = rng.random_range(0.5..1.5) * if rng.random_bool(0.8) { 1.0 } else { -1.0 };
            (center, width, amp)
        })
        .collect();
    let mut samples = DMatrix::zeros(n, p);
    for c in 0..p {
        let gains: Vec<f64> = (0..pulses).map(|_| rng.random_range(0.5..1.5)).collect();
        let wander_amp = rng.random_range(0.0..0.05);
        let wander_phase = rng.random_range(0.0..std::f64::consts::TAU);
        for t in 0..n {
            let tf = t as f64;
            let mut v = wander_amp * (std::f64::consts::TAU * tf / nf + wander_phase).sin();
            for ((center, width, amp), gain) in shape.iter().zip(&gains) {
                let z = (tf - center) / width;
                v += gain * amp * (-0.5 * z * z).exp();
            }
            samples[(t, c)] = v;
        }
    }
    Packet::new(samples)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SignalModel {
    BlockSparseDct { k_active: usize },
    PulseTrain { pulses: usize },
    /// Rows of the file are cut into consecutive N-sample packets; trial t
    /// uses packet `t mod count`.
    FromFile { path: PathBuf, header: bool },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub n: usize,
    pub p: usize,
    pub d: usize,
    pub cr_list: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub dictionary: DictionaryKind,
    pub signal_model: SignalModel,
    pub solver: SolverConfig,
    /// Record measured wall time. When false `wall_time_s` is written as 0 so
    /// that outputs are byte-reproducible.
    pub record_timing: bool,
    pub execution: Execution,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            n: 256,
            p: 8,
            d: 8,
            cr_list: vec![0.4, 0.5, 0.6, 0.7, 0.8],
            trials: 10,
            seed: 0,
            dictionary: DictionaryKind::Dct,
            signal_model: SignalModel::BlockSparseDct { k_active: 8 },
            solver: SolverConfig::default(),
            record_timing: true,
            execution: Execution::default(),
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.p == 0 || self.d == 0 {
            return Err(Error::InvalidConfig("n, p and d must be positive".into()));
        }
        if self.trials == 0 {
            return Err(Error::InvalidConfig("trials must be at least 1".into()));
        }
        if self.cr_list.is_empty() {
            return Err(Error::InvalidConfig("cr_list is empty".into()));
        }
        for &cr in &self.cr_list {
            let m = measurements_for_cr(self.n, cr)?;
            if m < 2 {
                return Err(Error::InvalidConfig(format!(
                    "CR {cr} leaves {m} measurements; the sensing matrix needs at least 2"
                )));
            }
        }
        self.solver.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub cr: f64,
    pub trial: usize,
    pub nmse: f64,
    pub wall_time_s: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrSummary {
    pub cr: f64,
    pub m: usize,
    pub trials: usize,
    pub mean_nmse: f64,
    pub mean_wall_time_s: f64,
    pub mean_iterations: f64,
    pub converged_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub n: usize,
    pub p: usize,
    pub d: usize,
    pub seed: u64,
    pub per_cr: Vec<CrSummary>,
}

fn load_file_packets(path: &std::path::Path, header: bool, n: usize, p: usize) -> Result<Vec<Packet>> {
    let m = crate::io::read_matrix(path, header)?;
    if m.ncols() != p {
        return Err(Error::DimensionMismatch(format!(
            "{} has {} channels, experiment expects {p}",
            path.display(),
            m.ncols()
        )));
    }
    let count = m.nrows() / n;
    if count == 0 {
        return Err(Error::DimensionMismatch(format!(
            "{} has {} rows, fewer than one packet of {n}",
            path.display(),
            m.nrows()
        )));
    }
    (0..count)
        .map(|i| Packet::new(m.rows(i * n, n).into_owned()))
        .collect()
}

/// Runs every (CR, trial) pair. Records come back ordered by CR index, then
/// trial index, whatever the execution mode.
pub fn run_sweep(spec: &ExperimentSpec) -> Result<Vec<TrialRecord>> {
    spec.validate()?;
    let file_packets = match &spec.signal_model {
        SignalModel::FromFile { path, header } => Some(load_file_packets(path, *header, spec.n, spec.p)?),
        _ => None,
    };
    let partition = make_partition_uniform(spec.n, spec.d)?;
    let dictionary = Dictionary::new(spec.dictionary, spec.n)?;
    dictionary.matrix();

    let total = spec.cr_list.len() * spec.trials;
    let results = map_indexed(total, spec.execution, |idx| -> Result<TrialRecord> {
        let cr_idx = idx / spec.trials;
        let trial = idx % spec.trials;
        let cr = spec.cr_list[cr_idx];
        // The signal depends on the trial only, so every CR sees the same packets.
        let signal_seed = derive_seed(&[spec.seed, 0x5349_474E, trial as u64]);
        let matrix_seed = derive_seed(&[spec.seed, cr_idx as u64, trial as u64]);
        let packet = match &spec.signal_model {
            SignalModel::BlockSparseDct { k_active } => {
                synth_block_sparse(spec.n, spec.p, spec.d, *k_active, signal_seed)?.0
            }
            SignalModel::PulseTrain { pulses } => synth_pulse_train(spec.n, spec.p, *pulses, signal_seed)?,
            SignalModel::FromFile { .. } => {
                let packets = file_packets.as_ref().expect("loaded above");
                packets[trial % packets.len()].clone()
            }
        };
        let m = measurements_for_cr(spec.n, cr)?;
        let phi = generate_bernoulli(m, spec.n, matrix_seed)?;
        let (y, _) = compress(&phi, &packet.samples)?;
        let mut solver_cfg = spec.solver;
        if spec.execution == Execution::Parallel {
            // Trials already saturate the pool.
            solver_cfg.execution = Execution::Sequential;
        }
        let start = Instant::now();
        let result = solve(&y, &phi, &dictionary, &partition, &solver_cfg)?;
        let elapsed = start.elapsed().as_secs_f64();
        Ok(TrialRecord {
            cr,
            trial,
            nmse: nmse(&result.signal, &packet.samples)?,
            wall_time_s: if spec.record_timing { elapsed } else { 0.0 },
            iterations: result.iterations,
            converged: result.converged,
        })
    });
    results.into_iter().collect()
}

pub fn summarize(spec: &ExperimentSpec, records: &[TrialRecord]) -> Result<SweepSummary> {
    let mut per_cr = Vec::with_capacity(spec.cr_list.len());
    for &cr in &spec.cr_list {
        let rows: Vec<&TrialRecord> = records.iter().filter(|r| r.cr == cr).collect();
        let k = rows.len().max(1) as f64;
        per_cr.push(CrSummary {
            cr,
            m: measurements_for_cr(spec.n, cr)?,
            trials: rows.len(),
            mean_nmse: rows.iter().map(|r| r.nmse).sum::<f64>() / k,
            mean_wall_time_s: rows.iter().map(|r| r.wall_time_s).sum::<f64>() / k,
            mean_iterations: rows.iter().map(|r| r.iterations as f64).sum::<f64>() / k,
            converged_fraction: rows.iter().filter(|r| r.converged).count() as f64 / k,
        });
    }
    Ok(SweepSummary {
        n: spec.n,
        p: spec.p,
        d: spec.d,
        seed: spec.seed,
        per_cr,
    })
}

/// CSV with columns `cr,trial,nmse,wall_time_s,iterations,converged`.
pub fn write_records_csv<W: Write>(out: W, records: &[TrialRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn records_to_csv(records: &[TrialRecord]) -> Result<String> {
    let mut buf = Vec::new();
    write_records_csv(&mut buf, records)?;
    String::from_utf8(buf).map_err(|e| Error::Format(e.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompressorSpec {
    pub n: usize,
    pub levels: u32,
    pub cr: f64,
    pub trials: usize,
    pub seed: u64,
}

impl Default for CompressorSpec {
    fn default() -> Self {
        Self {
            n: 256,
            levels: 4,
            cr: 0.6,
            trials: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressorRow {
    pub name: String,
    /// Operations left to do once the last sample has arrived.
    pub latency_ops: u64,
    pub additions: u64,
    pub multiplications: u64,
    pub shifts: u64,
}

impl CompressorRow {
    fn from_counter(name: &str, ops: OperationCounter) -> Self {
        Self {
            name: name.to_string(),
            latency_ops: ops.post_acquisition_ops,
            additions: ops.additions,
            multiplications: ops.multiplications,
            shifts: ops.shifts,
        }
    }
}

/// Single-channel operation counts per packet. Counts do not depend on the
/// data, so every trial must agree; `consistent` records whether they did.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressorReport {
    pub n: usize,
    pub m: usize,
    pub levels: u32,
    pub trials: usize,
    pub rows: Vec<CompressorRow>,
    pub consistent: bool,
    /// Transform work only; the wavelet coder's quantization and entropy
    /// coding stages are not counted.
    pub note: String,
}

impl CompressorReport {
    pub fn to_markdown(&self) -> String {
        let mut s = format!(
            "Single-channel compressor cost, N = {}, M = {}, DWT levels = {}\n\n\
             | compressor | latency ops | additions | multiplications | shifts |\n\
             |---|---:|---:|---:|---:|\n",
            self.n, self.m, self.levels
        );
        for r in &self.rows {
            s.push_str(&format!(
                "| {} | {} | {} | {} | {} |\n",
                r.name, r.latency_ops, r.additions, r.multiplications, r.shifts
            ));
        }
        s.push_str(&format!("\n{}\n", self.note));
        s
    }
}

/// Runs the two-ones and Gaussian streaming compressors and the 5/3 lifting
/// DWT on identical random integer packets.
pub fn compare_compressors(spec: &CompressorSpec) -> Result<CompressorReport> {
    DwtConfig { levels: spec.levels }.check_len(spec.n)?;
    if spec.trials == 0 {
        return Err(Error::InvalidConfig("trials must be at least 1".into()));
    }
    let m = measurements_for_cr(spec.n, spec.cr)?;
    let mut first: Option<[OperationCounter; 3]> = None;
    let mut consistent = true;
    for trial in 0..spec.trials {
        let seed = derive_seed(&[spec.seed, 0x434F_4D50, trial as u64]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // 12-bit ADC codes
        let ints: Vec<i64> = (0..spec.n).map(|_| rng.random_range(-2048..2048)).collect();
        let column = DMatrix::from_iterator(spec.n, 1, ints.iter().map(|&v| v as f64));

        let bern = generate_bernoulli(m, spec.n, derive_seed(&[seed, 1]))?;
        let (_, bern_ops) = compress(&bern, &column)?;
        let gauss = generate_gaussian(m, spec.n, derive_seed(&[seed, 2]))?;
        let (_, gauss_ops) = compress(&gauss, &column)?;

        let mut dwt_ops = OperationCounter::default();
        dwt53_forward(&ints, DwtConfig { levels: spec.levels }, &mut dwt_ops)?;
        // The whole transform runs after the packet is buffered.
        dwt_ops.post_acquisition_ops = dwt_ops.total();

        let counts = [bern_ops, gauss_ops, dwt_ops];
        match &first {
            None => first = Some(counts),
            Some(f) => consistent &= *f == counts,
        }
    }
    let [bern, gauss, dwt] = first.expect("at least one trial");
    Ok(CompressorReport {
        n: spec.n,
        m,
        levels: spec.levels,
        trials: spec.trials,
        rows: vec![
            CompressorRow::from_counter("CS-Bernoulli", bern),
            CompressorRow::from_counter("CS-Gaussian", gauss),
            CompressorRow::from_counter("DWT-5/3", dwt),
        ],
        consistent,
        note: "Counts cover transform/accumulation arithmetic only; DWT coefficient \
               quantization and encoding are not included."
            .to_string(),
    })
}
