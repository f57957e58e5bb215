//! Sparsifying dictionaries and the integer wavelet baseline.

use std::f64::consts::PI;
use std::sync::OnceLock;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::SensingMatrix;
use crate::sensing::OperationCounter;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DictionaryKind {
    Identity,
    #[default]
    Dct,
}

/// Synthesis operator `D` with `x = D·α`. The dense matrix is built on first
/// use.
#[derive(Debug, Clone)]
pub struct Dictionary {
    kind: DictionaryKind,
    size: usize,
    matrix: OnceLock<DMatrix<f64>>,
}

impl Dictionary {
    pub fn new(kind: DictionaryKind, size: usize) -> Result<Self> {
        if size == 0 {
            return Err(Error::InvalidDimensions("dictionary size must be at least 1".into()));
        }
        Ok(Self {
            kind,
            size,
            matrix: OnceLock::new(),
        })
    }

    pub fn identity(size: usize) -> Result<Self> {
        Self::new(DictionaryKind::Identity, size)
    }

    pub fn kind(&self) -> DictionaryKind {
        self.kind
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        self.matrix.get_or_init(|| match self.kind {
            DictionaryKind::Identity => DMatrix::identity(self.size, self.size),
            DictionaryKind::Dct => dct_synthesis_matrix(self.size),
        })
    }

    fn check_rows(&self, a: &DMatrix<f64>) -> Result<()> {
        if a.nrows() != self.size {
            return Err(Error::DimensionMismatch(format!(
                "dictionary of size {} applied to {} rows",
                self.size,
                a.nrows()
            )));
        }
        Ok(())
    }

    /// `D · A`.
    pub fn synthesize(&self, a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_rows(a)?;
        Ok(match self.kind {
            DictionaryKind::Identity => a.clone(),
            DictionaryKind::Dct => self.matrix() * a,
        })
    }

    /// `Dᵀ · X`, the inverse of [`synthesize`](Self::synthesize) for both
    /// (orthonormal) kinds.
    pub fn analyze(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_rows(x)?;
        Ok(match self.kind {
            DictionaryKind::Identity => x.clone(),
            DictionaryKind::Dct => self.matrix().tr_mul(x),
        })
    }

    /// The effective sensing operator `Φ · D`, M×N.
    pub fn effective_operator(&self, phi: &SensingMatrix) -> Result<DMatrix<f64>> {
        if phi.cols() != self.size {
            return Err(Error::DimensionMismatch(format!(
                "sensing matrix has {} columns, dictionary size is {}",
                phi.cols(),
                self.size
            )));
        }
        match self.kind {
            DictionaryKind::Identity => Ok(phi.to_dense()),
            DictionaryKind::Dct => phi.apply(self.matrix()),
        }
    }
}

/// Orthonormal DCT synthesis dictionary: column k is the k-th DCT-II basis
/// vector.
pub fn dct_dictionary(n: usize) -> Result<Dictionary> {
    Dictionary::new(DictionaryKind::Dct, n)
}

fn dct_synthesis_matrix(n: usize) -> DMatrix<f64> {
    let nf = n as f64;
    let dc = (1.0 / nf).sqrt();
    let ac = (2.0 / nf).sqrt();
    DMatrix::from_fn(n, n, |t, k| {
        let scale = if k == 0 { dc } else { ac };
        scale * (PI * (2 * t + 1) as f64 * k as f64 / (2.0 * nf)).cos()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DwtConfig {
    pub levels: u32,
}

impl Default for DwtConfig {
    fn default() -> Self {
        Self { levels: 4 }
    }
}

impl DwtConfig {
    pub fn check_len(&self, len: usize) -> Result<()> {
        if self.levels == 0 {
            return Err(Error::InvalidConfig("DWT needs at least one level".into()));
        }
        let block = 1usize
            .checked_shl(self.levels)
            .ok_or_else(|| Error::InvalidConfig(format!("{} levels is too deep", self.levels)))?;
        if len == 0 || !len.is_multiple_of(block) {
            return Err(Error::InvalidDimensions(format!(
                "signal length {len} is not a positive multiple of 2^{} = {block}",
                self.levels
            )));
        }
        Ok(())
    }
}

// Whole-sample symmetric extension for the predict step: x[len] mirrors to x[len - 2].
#[inline]
fn right_even(x: &[i64], n: usize, half: usize) -> i64 {
    if n + 1 < half {
        x[2 * n + 2]
    } else {
        x[2 * n]
    }
}

/// Multi-level LeGall 5/3 reversible lifting. After each level the active
/// prefix of length L is rearranged to `[approx (L/2) | detail (L/2)]`, and
/// the next level transforms the approximation half.
///
/// Only additions and arithmetic shifts are used; `ops` accumulates them.
pub fn dwt53_forward(x: &[i64], cfg: DwtConfig, ops: &mut OperationCounter) -> Result<Vec<i64>> {
    cfg.check_len(x.len())?;
    let mut buf = x.to_vec();
    let mut len = x.len();
    let mut scratch = vec![0i64; len];
    for _ in 0..cfg.levels {
        let half = len / 2;
        let (approx, detail) = scratch[..len].split_at_mut(half);
        let sig = &buf[..len];
        // predict: d[n] = x[2n+1] - floor((x[2n] + x[2n+2]) / 2)
        for n in 0..half {
            detail[n] = sig[2 * n + 1] - ((sig[2 * n] + right_even(sig, n, half)) >> 1);
        }
        // update: s[n] = x[2n] + floor((d[n-1] + d[n] + 2) / 4), d[-1] = d[0]
        for n in 0..half {
            let left = if n == 0 { detail[0] } else { detail[n - 1] };
            approx[n] = sig[2 * n] + ((left + detail[n] + 2) >> 2);
        }
        ops.additions += 5 * half as u64;
        ops.shifts += 2 * half as u64;
        buf[..len].copy_from_slice(&scratch[..len]);
        len = half;
    }
    Ok(buf)
}

/// Exact inverse of [`dwt53_forward`].
pub fn dwt53_inverse(c: &[i64], cfg: DwtConfig, ops: &mut OperationCounter) -> Result<Vec<i64>> {
    cfg.check_len(c.len())?;
    let mut buf = c.to_vec();
    let mut scratch = vec![0i64; c.len()];
    for level in (0..cfg.levels).rev() {
        let len = c.len() >> level;
        let half = len / 2;
        let (approx, detail) = buf[..len].split_at(half);
        let out = &mut scratch[..len];
        for n in 0..half {
            let left = if n == 0 { detail[0] } else { detail[n - 1] };
            out[2 * n] = approx[n] - ((left + detail[n] + 2) >> 2);
        }
        for n in 0..half {
            let right = if n + 1 < half { out[2 * n + 2] } else { out[2 * n] };
            out[2 * n + 1] = detail[n] + ((out[2 * n] + right) >> 1);
        }
        ops.additions += 5 * half as u64;
        ops.shifts += 2 * half as u64;
        buf[..len].copy_from_slice(&scratch[..len]);
    }
    Ok(buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn max_orthonormality_error(n: usize) -> f64 {
        let d = dct_dictionary(n).unwrap();
        let g = d.matrix().tr_mul(d.matrix()) - DMatrix::<f64>::identity(n, n);
        g.amax()
    }

    #[test]
    fn dct_two_point() {
        let d = dct_dictionary(2).unwrap();
        let a = std::f64::consts::FRAC_1_SQRT_2;
        let expected = DMatrix::from_row_slice(2, 2, &[a, a, a, -a]);
        assert!((d.matrix() - expected).amax() < 1e-15);
    }

    #[test]
    fn dct_is_orthonormal() {
        for n in [2, 8, 256] {
            assert!(max_orthonormality_error(n) < 1e-12, "N={n}");
        }
    }

    #[test]
    fn dc_coefficient_synthesizes_constant() {
        let n = 16;
        let d = dct_dictionary(n).unwrap();
        let mut alpha = DMatrix::zeros(n, 1);
        alpha[(0, 0)] = 1.0;
        let x = d.synthesize(&alpha).unwrap();
        let c = 1.0 / (n as f64).sqrt();
        assert!(x.iter().all(|&v| (v - c).abs() < 1e-15));
    }

    #[test]
    fn identity_synthesis_is_a_no_op() {
        let a = DMatrix::from_fn(5, 3, |r, c| (r as f64) - 2.0 * c as f64);
        let d = Dictionary::identity(5).unwrap();
        assert_eq!(d.synthesize(&a).unwrap(), a);
        assert!(d.synthesize(&DMatrix::zeros(4, 3)).is_err());
    }

    #[test]
    fn dct_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = DMatrix::from_fn(64, 4, |_, _| rng.random_range(-5.0..5.0));
        let d = dct_dictionary(64).unwrap();
        let back = d.synthesize(&d.analyze(&x).unwrap()).unwrap();
        assert!((back - x).amax() < 1e-10);
    }

    #[test]
    fn synthesis_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = DMatrix::from_fn(8, 2, |_, _| rng.random_range(-1.0..1.0));
        let d = dct_dictionary(8).unwrap();
        let got = d.synthesize(&a).unwrap();
        let nf = 8.0f64;
        for t in 0..8 {
            for p in 0..2 {
                let mut acc = 0.0;
                for k in 0..8 {
                    let scale = if k == 0 { (1.0 / nf).sqrt() } else { (2.0 / nf).sqrt() };
                    acc += scale * (PI * (2 * t + 1) as f64 * k as f64 / 16.0).cos() * a[(k, p)];
                }
                assert!((acc - got[(t, p)]).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn effective_operator_matches_dense_product() {
        let phi = crate::sensing::generate_bernoulli(10, 32, 4).unwrap();
        let d = dct_dictionary(32).unwrap();
        let eff = d.effective_operator(&phi).unwrap();
        assert!((eff - phi.to_dense() * d.matrix()).amax() < 1e-14);
    }

    #[test]
    fn constant_signal_has_no_detail() {
        let x = vec![37i64; 64];
        let cfg = DwtConfig { levels: 4 };
        let c = dwt53_forward(&x, cfg, &mut OperationCounter::default()).unwrap();
        // Detail bands occupy c[4..64] after four levels.
        assert!(c[4..].iter().all(|&v| v == 0));
        assert!(c[..4].iter().all(|&v| v == 37));
    }

    #[test]
    fn ramp_interior_detail_vanishes() {
        let x: Vec<i64> = (0..32).collect();
        let c = dwt53_forward(&x, DwtConfig { levels: 1 }, &mut OperationCounter::default()).unwrap();
        let detail = &c[16..];
        assert!(detail[..15].iter().all(|&v| v == 0));
        assert_eq!(detail[15], 1);
    }

    #[test]
    fn dwt_rejects_bad_lengths() {
        let mut ops = OperationCounter::default();
        assert!(dwt53_forward(&[1; 24], DwtConfig { levels: 4 }, &mut ops).is_err());
        assert!(dwt53_inverse(&[1; 24], DwtConfig { levels: 4 }, &mut ops).is_err());
        assert!(dwt53_forward(&[1; 16], DwtConfig { levels: 0 }, &mut ops).is_err());
    }

    #[test]
    fn zero_coefficients_invert_to_zero() {
        let x = dwt53_inverse(&[0; 256], DwtConfig::default(), &mut OperationCounter::default()).unwrap();
        assert!(x.iter().all(|&v| v == 0));
    }

    #[test]
    fn inverse_of_constant_image() {
        let cfg = DwtConfig::default();
        let c = dwt53_forward(&[-5; 32], cfg, &mut OperationCounter::default()).unwrap();
        let x = dwt53_inverse(&c, cfg, &mut OperationCounter::default()).unwrap();
        assert_eq!(x, vec![-5; 32]);
    }

    #[test]
    fn hand_count_length_eight_one_level() {
        // 4 predicts (2 adds, 1 shift) + 4 updates (3 adds, 1 shift)
        let mut ops = OperationCounter::default();
        dwt53_forward(&[1, 2, 3, 4, 5, 6, 7, 8], DwtConfig { levels: 1 }, &mut ops).unwrap();
        assert_eq!(ops.additions, 20);
        assert_eq!(ops.shifts, 8);
        assert_eq!(ops.multiplications, 0);
    }

    proptest! {
        #[test]
        fn perfect_reconstruction(
            levels in 1u32..=4,
            len_idx in 0usize..3,
            seed in any::<u64>(),
        ) {
            let len = [16usize, 64, 256][len_idx];
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<i64> = (0..len).map(|_| rng.random_range(-32768..32768)).collect();
            let cfg = DwtConfig { levels };
            let mut ops = OperationCounter::default();
            let c = dwt53_forward(&x, cfg, &mut ops).unwrap();
            prop_assert_eq!(dwt53_inverse(&c, cfg, &mut ops).unwrap(), x);
            prop_assert_eq!(ops.multiplications, 0);
        }
    }
}
