//! Domain types shared by the compressor, the transforms and the solver.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;

pub const DEFAULT_SAMPLE_RATE_HZ: f64 = 256.0;

/// One N×P window of multichannel samples; rows are time, columns channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Packet {
    pub samples: DMatrix<f64>,
    pub sample_rate_hz: f64,
}

impl Packet {
    pub fn new(samples: DMatrix<f64>) -> Result<Self> {
        Self::with_rate(samples, DEFAULT_SAMPLE_RATE_HZ)
    }

    pub fn with_rate(samples: DMatrix<f64>, sample_rate_hz: f64) -> Result<Self> {
        if samples.nrows() == 0 || samples.ncols() == 0 {
            return Err(Error::InvalidDimensions(format!(
                "packet must be at least 1x1, got {}x{}",
                samples.nrows(),
                samples.ncols()
            )));
        }
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "sample rate must be positive, got {sample_rate_hz}"
            )));
        }
        check_finite(&samples)?;
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    /// Number of time samples.
    pub fn len(&self) -> usize {
        self.samples.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.samples.ncols()
    }

    pub fn duration_s(&self) -> f64 {
        self.len() as f64 / self.sample_rate_hz
    }
}

pub(crate) fn check_finite(m: &DMatrix<f64>) -> Result<()> {
    for c in 0..m.ncols() {
        for r in 0..m.nrows() {
            if !m[(r, c)].is_finite() {
                return Err(Error::NonFinite { row: r, col: c });
            }
        }
    }
    Ok(())
}

/// Compressed measurements, M×P.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurements {
    pub values: DMatrix<f64>,
}

impl Measurements {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::InvalidDimensions(format!(
                "measurements must be at least 1x1, got {}x{}",
                values.nrows(),
                values.ncols()
            )));
        }
        check_finite(&values)?;
        Ok(Self { values })
    }

    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn channels(&self) -> usize {
        self.values.ncols()
    }
}

/// Number of measurements for a compression ratio `CR = (N - M) / N`,
/// rounded to the nearest integer.
pub fn measurements_for_cr(n: usize, cr: f64) -> Result<usize> {
    if !(cr > 0.0 && cr < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "compression ratio must lie in (0, 1), got {cr}"
        )));
    }
    let m = (n as f64 * (1.0 - cr)).round() as usize;
    Ok(m.clamp(1, n))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SensingKind {
    BernoulliTwoOnes,
    Gaussian,
}

impl SensingKind {
    pub fn name(self) -> &'static str {
        match self {
            SensingKind::BernoulliTwoOnes => "bernoulli",
            SensingKind::Gaussian => "gaussian",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SensingData {
    /// Row positions of the two 1s of every column, `pairs[j] = [r0, r1]`, r0 < r1.
    TwoOnes(Vec<[usize; 2]>),
    /// Dense M×N entries.
    Dense(DMatrix<f64>),
}

/// An M×N sensing operator. Construct through
/// [`generate_bernoulli`](crate::sensing::generate_bernoulli) or
/// [`generate_gaussian`](crate::sensing::generate_gaussian), or from explicit
/// index pairs with [`SensingMatrix::from_pairs`].
#[derive(Debug, Clone, PartialEq)]
pub struct SensingMatrix {
    pub(crate) kind: SensingKind,
    pub(crate) rows: usize,
    pub(crate) cols: usize,
    pub(crate) seed: u64,
    pub(crate) data: SensingData,
}

impl SensingMatrix {
    /// Builds a two-ones matrix from explicit per-column row pairs.
    pub fn from_pairs(rows: usize, pairs: Vec<[usize; 2]>, seed: u64) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::InvalidDimensions("sensing matrix needs at least one column".into()));
        }
        let mut normalized = Vec::with_capacity(pairs.len());
        for (j, [a, b]) in pairs.into_iter().enumerate() {
            if a == b || a >= rows || b >= rows {
                return Err(Error::InvalidDimensions(format!(
                    "column {j}: row pair ({a}, {b}) invalid for {rows} rows"
                )));
            }
            normalized.push([a.min(b), a.max(b)]);
        }
        Ok(Self {
            kind: SensingKind::BernoulliTwoOnes,
            rows,
            cols: normalized.len(),
            seed,
            data: SensingData::TwoOnes(normalized),
        })
    }

    /// Recovers the index-pair form from a dense 0/1 matrix with exactly two
    /// ones per column.
    pub fn from_dense_two_ones(dense: &DMatrix<f64>, seed: u64) -> Result<Self> {
        let mut pairs = Vec::with_capacity(dense.ncols());
        for j in 0..dense.ncols() {
            let mut ones = Vec::with_capacity(2);
            for i in 0..dense.nrows() {
                match dense[(i, j)] {
                    1.0 => ones.push(i),
                    0.0 => {}
                    v => {
                        return Err(Error::Format(format!(
                            "entry ({i}, {j}) = {v} is not 0 or 1"
                        )))
                    }
                }
            }
            if ones.len() != 2 {
                return Err(Error::Format(format!(
                    "column {j} has {} ones, expected 2",
                    ones.len()
                )));
            }
            pairs.push([ones[0], ones[1]]);
        }
        Self::from_pairs(dense.nrows(), pairs, seed)
    }

    pub fn kind(&self) -> SensingKind {
        self.kind
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn data(&self) -> &SensingData {
        &self.data
    }

    pub fn pairs(&self) -> Option<&[[usize; 2]]> {
        match &self.data {
            SensingData::TwoOnes(p) => Some(p),
            SensingData::Dense(_) => None,
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match &self.data {
            SensingData::Dense(m) => m.clone(),
            SensingData::TwoOnes(pairs) => {
                let mut m = DMatrix::zeros(self.rows, self.cols);
                for (j, &[a, b]) in pairs.iter().enumerate() {
                    m[(a, j)] = 1.0;
                    m[(b, j)] = 1.0;
                }
                m
            }
        }
    }

    /// Computes `Φ · X` for an N×K right-hand side. The two-ones form uses
    /// row additions only.
    pub fn apply(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.nrows() != self.cols {
            return Err(Error::DimensionMismatch(format!(
                "sensing matrix has {} columns, operand has {} rows",
                self.cols,
                x.nrows()
            )));
        }
        match &self.data {
            SensingData::Dense(m) => Ok(m * x),
            SensingData::TwoOnes(pairs) => {
                let mut out = DMatrix::zeros(self.rows, x.ncols());
                for (j, &[a, b]) in pairs.iter().enumerate() {
                    for c in 0..x.ncols() {
                        let v = x[(j, c)];
                        out[(a, c)] += v;
                        out[(b, c)] += v;
                    }
                }
                Ok(out)
            }
        }
    }
}

/// Division of N coefficient rows into contiguous blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockPartition {
    sizes: Vec<usize>,
    offsets: Vec<usize>,
}

impl BlockPartition {
    pub fn new(sizes: Vec<usize>) -> Result<Self> {
        if sizes.is_empty() || sizes.contains(&0) {
            return Err(Error::InvalidDimensions(
                "block partition needs at least one block and no empty blocks".into(),
            ));
        }
        let mut offsets = Vec::with_capacity(sizes.len());
        let mut acc = 0;
        for &d in &sizes {
            offsets.push(acc);
            acc += d;
        }
        Ok(Self { sizes, offsets })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn num_blocks(&self) -> usize {
        self.sizes.len()
    }

    /// Total number of rows covered.
    pub fn total(&self) -> usize {
        self.offsets.last().copied().unwrap_or(0) + self.sizes.last().copied().unwrap_or(0)
    }

    pub fn offset(&self, block: usize) -> usize {
        self.offsets[block]
    }

    pub fn size(&self, block: usize) -> usize {
        self.sizes[block]
    }

    pub fn range(&self, block: usize) -> std::ops::Range<usize> {
        self.offsets[block]..self.offsets[block] + self.sizes[block]
    }
}

/// Splits `n` rows into blocks of size `d`; the last block holds the
/// remainder when `d` does not divide `n`.
pub fn make_partition_uniform(n: usize, d: usize) -> Result<BlockPartition> {
    if n == 0 || d == 0 {
        return Err(Error::InvalidDimensions(format!(
            "uniform partition needs n >= 1 and d >= 1, got n={n}, d={d}"
        )));
    }
    let mut sizes = vec![d; n / d];
    if !n.is_multiple_of(d) {
        sizes.push(n % d);
    }
    BlockPartition::new(sizes)
}

/// Which dimension multiplies `log|C|` in the marginal-likelihood cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogdetMultiplier {
    /// P, the number of channels: the cost equals `-2 log p(Y)` up to a constant.
    #[default]
    ChannelsP,
    /// N, the number of coefficient rows.
    RowsN,
}

/// What the fixed noise variance β⁻¹ is proportional to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseReference {
    /// β⁻¹ = beta_inv_scale · ‖Y‖_F² / (M·P), a fraction of the mean power
    /// of one measurement entry.
    #[default]
    MeanPower,
    /// β⁻¹ = beta_inv_scale · ‖Y‖_F². With the default scale of 0.01 this
    /// exceeds the per-entry power once M·P > 100 and nothing is recovered.
    TotalEnergy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Stop once the best available cost decrease is smaller than this.
    pub eta: f64,
    /// Noise variance as a multiple of the measurement energy selected by
    /// `noise_reference`.
    pub beta_inv_scale: f64,
    pub noise_reference: NoiseReference,
    pub max_iterations: usize,
    /// Candidate variances at or below this are treated as zero.
    pub gamma_floor: f64,
    pub logdet_multiplier: LogdetMultiplier,
    /// How the per-block candidate scan is executed.
    pub execution: Execution,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            eta: 1e-5,
            beta_inv_scale: 0.01,
            noise_reference: NoiseReference::MeanPower,
            max_iterations: 1000,
            gamma_floor: 1e-12,
            logdet_multiplier: LogdetMultiplier::ChannelsP,
            execution: Execution::default(),
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0) {
            return Err(Error::InvalidConfig(format!("eta must be positive, got {}", self.eta)));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidConfig("max_iterations must be at least 1".into()));
        }
        if !(self.beta_inv_scale > 0.0 && self.beta_inv_scale.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "beta_inv_scale must be positive and finite, got {}",
                self.beta_inv_scale
            )));
        }
        if !(self.gamma_floor > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "gamma_floor must be positive, got {}",
                self.gamma_floor
            )));
        }
        Ok(())
    }
}

/// Output of a recovery.
#[derive(Debug, Clone)]
pub struct RecoveryResult {
    /// Posterior mean over all N rows (zeros on pruned blocks), N×P. These are
    /// dictionary coefficients when a dictionary is used.
    pub coefficients: DMatrix<f64>,
    /// Reconstructed signal, dictionary applied to `coefficients`.
    pub signal: DMatrix<f64>,
    /// Per-block variance; zero for pruned blocks.
    pub gamma: Vec<f64>,
    /// Blocks kept in the model, in the order of `posterior_covariance`.
    pub active_blocks: Vec<usize>,
    /// Posterior covariance restricted to the active rows.
    pub posterior_covariance: DMatrix<f64>,
    /// Cost after initialization followed by the cost after each iteration.
    pub cost_trace: Vec<f64>,
    pub iterations: usize,
    pub wall_time_s: f64,
    pub converged: bool,
    /// Blocks skipped at least once because their statistic was singular.
    pub skipped_blocks: Vec<usize>,
}

/// JSON-facing part of a [`RecoveryResult`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub gamma: Vec<f64>,
    pub active_blocks: Vec<usize>,
    pub cost_trace: Vec<f64>,
    pub iterations: usize,
    pub wall_time_s: f64,
    pub converged: bool,
    pub skipped_blocks: Vec<usize>,
}

impl RecoveryResult {
    pub fn report(&self) -> RecoveryReport {
        RecoveryReport {
            gamma: self.gamma.clone(),
            active_blocks: self.active_blocks.clone(),
            cost_trace: self.cost_trace.clone(),
            iterations: self.iterations,
            wall_time_s: self.wall_time_s,
            converged: self.converged,
            skipped_blocks: self.skipped_blocks.clone(),
        }
    }
}
