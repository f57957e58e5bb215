//! Compressive sensing toolkit for multichannel physiological-style signals.
//!
//! The crate covers the whole acquisition/recovery loop:
//!
//! * [`sensing`]: seeded sparse-binary and Gaussian sensing matrices, plus the
//!   streaming compressor that accumulates `Y = ΦX` one sample row at a time.
//! * [`transform`]: the orthonormal DCT synthesis dictionary and the LeGall 5/3
//!   integer lifting wavelet used as the transform-coding baseline.
//! * [`solver`]: MBSBL-FM, a fast marginalized-likelihood block-sparse Bayesian
//!   learning solver for the multiple-measurement-vector model.
//! * [`bench`]: synthetic signal generators, NMSE, compression-ratio sweeps and
//!   the compressor operation-count comparison.
//!
//! With the default `parallel` feature, trial sweeps and the per-block
//! candidate scan run on rayon; without it everything runs sequentially and
//! produces identical numbers.

pub mod bench;
pub mod error;
pub mod exec;
pub mod io;
pub mod model;
pub mod sensing;
pub mod solver;
pub mod transform;

pub use error::{Error, Result};
pub use exec::Execution;
pub use model::{
    measurements_for_cr, make_partition_uniform, BlockPartition, LogdetMultiplier, Measurements,
    NoiseReference, Packet, RecoveryResult, SensingData, SensingKind, SensingMatrix, SolverConfig,
};
pub use sensing::{generate_bernoulli, generate_gaussian, OperationCounter, StreamState};
pub use solver::{solve, SolverState};
pub use transform::{dct_dictionary, Dictionary, DictionaryKind, DwtConfig};
