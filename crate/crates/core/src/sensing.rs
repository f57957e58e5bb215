//! Sensing-matrix generation and the streaming compressor.
//!
//! The compressor keeps one accumulator `y` per channel and folds every new
//! sample row into it as it arrives: `y ← y + φ_k · x_k`. With a two-ones
//! matrix that is two additions per channel and no multiplications, and the
//! measurements are complete the moment the last sample lands.

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Measurements, SensingData, SensingKind, SensingMatrix};

/// Sparse binary matrix with exactly two 1s per column at distinct rows drawn
/// uniformly without replacement.
pub fn generate_bernoulli(m: usize, n: usize, seed: u64) -> Result<SensingMatrix> {
    if m < 2 || n == 0 {
        return Err(Error::InvalidDimensions(format!(
            "two-ones matrix needs M >= 2 and N >= 1, got M={m}, N={n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs = (0..n)
        .map(|_| {
            let picked = index::sample(&mut rng, m, 2);
            let (a, b) = (picked.index(0), picked.index(1));
            [a.min(b), a.max(b)]
        })
        .collect();
    SensingMatrix::from_pairs(m, pairs, seed)
}

/// Dense matrix of i.i.d. standard-normal entries.
pub fn generate_gaussian(m: usize, n: usize, seed: u64) -> Result<SensingMatrix> {
    if m == 0 || n == 0 {
        return Err(Error::InvalidDimensions(format!(
            "Gaussian matrix needs M >= 1 and N >= 1, got M={m}, N={n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Column-major fill so that column j only depends on the first (j+1)·M draws.
    let data: Vec<f64> = (0..m * n).map(|_| StandardNormal.sample(&mut rng)).collect();
    Ok(SensingMatrix {
        kind: SensingKind::Gaussian,
        rows: m,
        cols: n,
        seed,
        data: SensingData::Dense(DMatrix::from_vec(m, n, data)),
    })
}

/// Software stand-in for the encoder's arithmetic cost.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OperationCounter {
    pub additions: u64,
    pub multiplications: u64,
    /// Arithmetic shifts (the multiplierless halving/quartering in lifting).
    pub shifts: u64,
    /// Operations executed after the last sample of the packet was acquired.
    pub post_acquisition_ops: u64,
}

impl OperationCounter {
    pub fn total(&self) -> u64 {
        self.additions + self.multiplications + self.shifts
    }
}

/// Accumulator state of the streaming compressor for one packet.
#[derive(Debug, Clone)]
pub struct StreamState<'a> {
    phi: &'a SensingMatrix,
    accumulator: DMatrix<f64>,
    samples_seen: usize,
    ops: OperationCounter,
}

impl<'a> StreamState<'a> {
    /// Zero accumulator for `channels` parallel channels.
    pub fn new(phi: &'a SensingMatrix, channels: usize) -> Result<Self> {
        if channels == 0 {
            return Err(Error::InvalidDimensions("stream needs at least one channel".into()));
        }
        Ok(Self {
            phi,
            accumulator: DMatrix::zeros(phi.rows(), channels),
            samples_seen: 0,
            ops: OperationCounter::default(),
        })
    }

    pub fn accumulator(&self) -> &DMatrix<f64> {
        &self.accumulator
    }

    pub fn samples_seen(&self) -> usize {
        self.samples_seen
    }

    pub fn ops(&self) -> OperationCounter {
        self.ops
    }

    pub fn channels(&self) -> usize {
        self.accumulator.ncols()
    }

    /// Folds the next sample row (one value per channel) into the accumulator.
    pub fn push(&mut self, row: &[f64]) -> Result<()> {
        let k = self.samples_seen;
        if k >= self.phi.cols() {
            return Err(Error::PacketOverflow {
                capacity: self.phi.cols(),
            });
        }
        let p = self.channels();
        if row.len() != p {
            return Err(Error::DimensionMismatch(format!(
                "sample row has {} values, stream has {p} channels",
                row.len()
            )));
        }
        match self.phi.data() {
            SensingData::TwoOnes(pairs) => {
                let [a, b] = pairs[k];
                for (c, &x) in row.iter().enumerate() {
                    self.accumulator[(a, c)] += x;
                    self.accumulator[(b, c)] += x;
                }
                self.ops.additions += 2 * p as u64;
            }
            SensingData::Dense(m) => {
                let col = m.column(k);
                for (c, &x) in row.iter().enumerate() {
                    for r in 0..m.nrows() {
                        self.accumulator[(r, c)] += col[r] * x;
                    }
                }
                let work = (m.nrows() * p) as u64;
                self.ops.multiplications += work;
                self.ops.additions += work;
            }
        }
        self.samples_seen += 1;
        Ok(())
    }

    /// Convenience wrapper over [`push`](Self::push) for a column vector row.
    pub fn push_vector(&mut self, row: &DVector<f64>) -> Result<()> {
        self.push(row.as_slice())
    }

    /// Hands out the measurements. No arithmetic happens here: the
    /// accumulator is already complete after the final push.
    pub fn finish(self) -> Result<(Measurements, OperationCounter)> {
        if self.samples_seen != self.phi.cols() {
            return Err(Error::IncompletePacket {
                seen: self.samples_seen,
                expected: self.phi.cols(),
            });
        }
        let ops = self.ops;
        Ok((Measurements { values: self.accumulator }, ops))
    }
}

/// Streams every row of `samples` through a fresh [`StreamState`].
pub fn compress(phi: &SensingMatrix, samples: &DMatrix<f64>) -> Result<(Measurements, OperationCounter)> {
    if samples.nrows() != phi.cols() {
        return Err(Error::DimensionMismatch(format!(
            "packet has {} samples, sensing matrix expects {}",
            samples.nrows(),
            phi.cols()
        )));
    }
    let mut state = StreamState::new(phi, samples.ncols())?;
    let mut row = vec![0.0; samples.ncols()];
    for k in 0..samples.nrows() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = samples[(k, c)];
        }
        state.push(&row)?;
    }
    state.finish()
}
