//! Dense linear-algebra reference computations. Everything here forms `C`,
//! its inverses and the posterior explicitly, independent of the incremental
//! solver.

#![allow(dead_code)]

use mbsbl::model::{BlockPartition, Measurements};
use mbsbl::solver::SolverState;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rel_frob(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let denom = b.norm().max(f64::MIN_POSITIVE);
    (a - b).norm() / denom
}

/// `C = β⁻¹ I + Σ_{m ≠ skip} γ_m Φ_m Φ_mᵀ`.
pub fn covariance(
    phi: &DMatrix<f64>,
    partition: &BlockPartition,
    gamma: &[f64],
    beta: f64,
    skip: Option<usize>,
) -> DMatrix<f64> {
    let m = phi.nrows();
    let mut c = DMatrix::identity(m, m) / beta;
    for b in 0..partition.num_blocks() {
        if Some(b) == skip || gamma[b] == 0.0 {
            continue;
        }
        let r = partition.range(b);
        let cols = phi.columns(r.start, r.len());
        c += cols * cols.transpose() * gamma[b];
    }
    c
}

/// `mult · log|C| + Tr(Yᵀ C⁻¹ Y)`.
pub fn cost(
    y: &DMatrix<f64>,
    phi: &DMatrix<f64>,
    partition: &BlockPartition,
    gamma: &[f64],
    beta: f64,
    mult: f64,
) -> f64 {
    let c = covariance(phi, partition, gamma, beta, None);
    let logdet = c.clone().cholesky().expect("C is SPD").determinant().ln();
    let cinv = c.try_inverse().unwrap();
    mult * logdet + (y.transpose() * cinv * y).trace()
}

/// Leave-one-out `(Φ_iᵀ C_{-i}⁻¹ Φ_i, Φ_iᵀ C_{-i}⁻¹ Y)`.
pub fn leave_one_out(
    y: &DMatrix<f64>,
    phi: &DMatrix<f64>,
    partition: &BlockPartition,
    gamma: &[f64],
    beta: f64,
    block: usize,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let cinv = covariance(phi, partition, gamma, beta, Some(block))
        .try_inverse()
        .unwrap();
    let r = partition.range(block);
    let pi = phi.columns(r.start, r.len()).into_owned();
    (pi.transpose() * &cinv * &pi, pi.transpose() * &cinv * y)
}

/// Posterior over the given active blocks, in that order:
/// `Σ = (Γ⁻¹ + β Φ_AᵀΦ_A)⁻¹`, `μ = β Σ Φ_Aᵀ Y`.
pub fn posterior(
    y: &DMatrix<f64>,
    phi: &DMatrix<f64>,
    partition: &BlockPartition,
    gamma: &[f64],
    beta: f64,
    active: &[usize],
) -> (DMatrix<f64>, DMatrix<f64>) {
    let rows: Vec<usize> = active.iter().flat_map(|&b| partition.range(b)).collect();
    let pa = phi.select_columns(rows.iter());
    let mut prec = pa.transpose() * &pa * beta;
    let mut k = 0;
    for &b in active {
        for _ in partition.range(b) {
            prec[(k, k)] += 1.0 / gamma[b];
            k += 1;
        }
    }
    let sigma = prec.try_inverse().unwrap();
    let mu = &sigma * pa.transpose() * y * beta;
    (mu, sigma)
}

/// Worst relative mismatch between the state's statistics/posterior and the
/// dense references.
pub struct StateCheck {
    pub loo: f64,
    pub posterior_mu: f64,
    pub posterior_sigma: f64,
}

pub fn check_state(state: &SolverState, y: &DMatrix<f64>, phi: &DMatrix<f64>) -> StateCheck {
    let part = state.partition();
    let gamma = state.gamma();
    let beta = state.beta();
    let mut loo: f64 = 0.0;
    for b in 0..part.num_blocks() {
        let (s, q) = leave_one_out(y, phi, part, gamma, beta, b);
        let st = &state.stats()[b];
        loo = loo.max(rel_frob(&st.s, &s)).max(rel_frob(&st.q, &q));
    }
    let (mut pm, mut ps) = (0.0, 0.0);
    if !state.active().is_empty() {
        let (mu, sigma) = posterior(y, phi, part, gamma, beta, state.active());
        pm = rel_frob(state.mu(), &mu);
        ps = rel_frob(state.sigma(), &sigma);
    }
    StateCheck {
        loo,
        posterior_mu: pm,
        posterior_sigma: ps,
    }
}

/// Random small problem: Gaussian operator, block-sparse coefficients plus a
/// little noise.
pub struct SmallProblem {
    pub phi: DMatrix<f64>,
    pub y: Measurements,
    pub partition: BlockPartition,
}

pub fn small_problem(seed: u64, m: usize, n: usize, p: usize, d: usize) -> SmallProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let partition = mbsbl::make_partition_uniform(n, d).unwrap();
    let phi = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
    let g = partition.num_blocks();
    let mut x = DMatrix::zeros(n, p);
    for b in 0..g {
        if rng.random_bool(0.4) {
            for r in partition.range(b) {
                for c in 0..p {
                    x[(r, c)] = rng.random_range(-2.0..2.0);
                }
            }
        }
    }
    let noise = DMatrix::from_fn(m, p, |_, _| rng.random_range(-0.05..0.05));
    let mut yv = &phi * &x + noise;
    if yv.norm() == 0.0 {
        yv[(0, 0)] = 1.0;
    }
    SmallProblem {
        phi,
        y: Measurements::new(yv).unwrap(),
        partition,
    }
}
