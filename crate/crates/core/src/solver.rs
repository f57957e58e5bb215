//! MBSBL-FM: block-sparse Bayesian learning for the multiple-measurement-vector
//! model, driven by fast marginalized-likelihood updates.
//!
//! Model: `Y = Φ_eff A + V`, with every block `A_i` (d_i×P) drawn from
//! `N(0, γ_i I)` independently per channel and white noise of precision β.
//! The marginal covariance of each measurement column is
//! `C = β⁻¹ I + Σ_i γ_i Φ_i Φ_iᵀ`, and the solver minimizes
//!
//! ```text
//! L(γ) = m · log|C| + Tr(Yᵀ C⁻¹ Y)        m = P (default) or N
//! ```
//!
//! one block at a time. For block i the cost splits into a part that does not
//! depend on γ_i and
//!
//! ```text
//! ℓ_i(γ) = m · log|I + γ s_i| − Tr(q_iᵀ (γ⁻¹ I + s_i)⁻¹ q_i)
//! ```
//!
//! where `s_i = Φ_iᵀ C_{-i}⁻¹ Φ_i` and `q_i = Φ_iᵀ C_{-i}⁻¹ Y` are computed
//! against the model with block i removed. Every iteration evaluates the
//! candidate variance
//!
//! ```text
//! γ̃_i = (1/d_i) · Tr(s_i⁻¹ (q_i q_iᵀ − s_i) s_i⁻¹)
//! ```
//!
//! for all blocks, picks the add/re-estimate/delete action with the most
//! negative cost change, and applies it with rank-d_i updates of the
//! posterior and of the per-block statistics.
//!
//! Bookkeeping identities used below (A = active blocks, G = βΦᵀΦ_A):
//!
//! * `Σ = (Γ_A⁻¹ + β Φ_AᵀΦ_A)⁻¹`, `μ = β Σ Φ_Aᵀ Y`
//! * `S = βΦᵀΦ − G Σ Gᵀ`, `Q = βΦᵀY − G μ` (full-model statistics)
//! * for active i at position j: `S_i = γ⁻¹I − γ⁻²Σ_jj`, `Q_i = μ_j / γ`,
//!   `s_i = Σ_jj⁻¹ − γ⁻¹ I`, `q_i = Σ_jj⁻¹ μ_j`

use std::time::Instant;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::map_indexed;
use crate::model::{
    BlockPartition, LogdetMultiplier, Measurements, NoiseReference, RecoveryResult, SensingMatrix,
    SolverConfig,
};
use crate::transform::Dictionary;

/// Relative ridge added to the eigenvalues of `s_i` when it is inverted.
const S_RIDGE: f64 = 1e-10;

/// Per-block statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockStats {
    /// Leave-one-out `Φ_iᵀ C_{-i}⁻¹ Φ_i`, d×d.
    pub s: DMatrix<f64>,
    /// Leave-one-out `Φ_iᵀ C_{-i}⁻¹ Y`, d×P.
    pub q: DMatrix<f64>,
    /// Full-model `Φ_iᵀ C⁻¹ Φ_i`.
    pub s_full: DMatrix<f64>,
    /// Full-model `Φ_iᵀ C⁻¹ Y`.
    pub q_full: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Action {
    Add,
    Reestimate,
    Delete,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub block: usize,
    pub action: Action,
    /// New variance; 0 for [`Action::Delete`].
    pub gamma: f64,
    /// Exact change of the cost if the action is applied.
    pub delta_cost: f64,
}

#[derive(Debug, Clone, Default)]
pub struct Selection {
    /// Most negative-cost action, ties broken by lowest block index. `None`
    /// when no block offers any action.
    pub best: Option<Candidate>,
    /// Blocks whose statistic was singular and were skipped.
    pub skipped: Vec<usize>,
}

/// Eigen-decomposition of `s` with the energy of `q` along each eigenvector;
/// everything the candidate and cost formulas need.
struct Spectrum {
    eigenvalues: Vec<f64>,
    energy: Vec<f64>,
    ridge: f64,
}

impl Spectrum {
    fn new(stats: &BlockStats) -> Option<Self> {
        let d = stats.s.nrows();
        let trace = stats.s.trace();
        if !(trace.is_finite() && trace > 0.0) {
            return None;
        }
        let eig = SymmetricEigen::new(stats.s.clone());
        let projected = eig.eigenvectors.tr_mul(&stats.q);
        let energy = (0..d).map(|k| projected.row(k).norm_squared()).collect();
        let ridge = S_RIDGE * trace / d as f64;
        let eigenvalues: Vec<f64> = eig.eigenvalues.iter().map(|&l| l.max(0.0)).collect();
        if eigenvalues.iter().any(|&l| !(l + ridge > 0.0) || !l.is_finite()) {
            return None;
        }
        Some(Self {
            eigenvalues,
            energy,
            ridge,
        })
    }

    /// `(1/d) Tr(s⁻¹ (q qᵀ − s) s⁻¹)`, unclamped.
    fn gamma_candidate(&self) -> f64 {
        let d = self.eigenvalues.len() as f64;
        self.eigenvalues
            .iter()
            .zip(&self.energy)
            .map(|(&l, &e)| {
                let l = l + self.ridge;
                e / (l * l) - 1.0 / l
            })
            .sum::<f64>()
            / d
    }

    /// `ℓ(γ)` with `ℓ(0) = 0`.
    fn block_cost(&self, gamma: f64, multiplier: f64) -> f64 {
        if gamma <= 0.0 {
            return 0.0;
        }
        self.eigenvalues
            .iter()
            .zip(&self.energy)
            .map(|(&l, &e)| {
                let denom = 1.0 + gamma * l;
                multiplier * denom.ln() - gamma * e / denom
            })
            .sum()
    }
}

/// Candidate variance for a block, clamped to zero at or below
/// `gamma_floor`. `None` when `s` is singular even after regularization.
pub fn gamma_candidate(stats: &BlockStats, gamma_floor: f64) -> Option<f64> {
    let g = Spectrum::new(stats)?.gamma_candidate();
    Some(if g > gamma_floor { g } else { 0.0 })
}

/// `ℓ_i(γ_new) − ℓ_i(γ_old)` for the given log-determinant multiplier.
pub fn block_delta_cost(stats: &BlockStats, gamma_old: f64, gamma_new: f64, multiplier: f64) -> f64 {
    if gamma_old == gamma_new {
        return 0.0;
    }
    match Spectrum::new(stats) {
        Some(sp) => sp.block_cost(gamma_new, multiplier) - sp.block_cost(gamma_old, multiplier),
        None => 0.0,
    }
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

fn spd_inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    if let Some(ch) = m.clone().cholesky() {
        let mut inv = ch.inverse();
        symmetrize(&mut inv);
        return Ok(inv);
    }
    Err(Error::NumericalFailure(format!("{what} is not positive definite")))
}

fn general_inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    m.clone()
        .try_inverse()
        .ok_or_else(|| Error::NumericalFailure(format!("{what} is singular")))
}

/// Working state of one recovery.
#[derive(Debug, Clone)]
pub struct SolverState {
    partition: BlockPartition,
    /// β Φᵀ Φ, N×N.
    gram: DMatrix<f64>,
    beta: f64,
    multiplier: f64,
    cfg: SolverConfig,
    /// Active blocks in the row order of `mu` and `sigma`.
    active: Vec<usize>,
    gamma: Vec<f64>,
    mu: DMatrix<f64>,
    sigma: DMatrix<f64>,
    stats: Vec<BlockStats>,
    cost: f64,
}

impl SolverState {
    /// Empty model: no active blocks, `C = β⁻¹ I`, so `S_i = βΦ_iᵀΦ_i` and
    /// `Q_i = βΦ_iᵀY` for every block. β is fixed from the measurement
    /// energy and never re-estimated.
    pub fn init(
        y: &Measurements,
        phi_eff: &DMatrix<f64>,
        partition: &BlockPartition,
        cfg: &SolverConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        if phi_eff.nrows() != y.rows() {
            return Err(Error::DimensionMismatch(format!(
                "operator has {} rows, measurements have {}",
                phi_eff.nrows(),
                y.rows()
            )));
        }
        if phi_eff.ncols() != partition.total() {
            return Err(Error::DimensionMismatch(format!(
                "operator has {} columns, partition covers {}",
                phi_eff.ncols(),
                partition.total()
            )));
        }
        let energy = y.values.norm_squared();
        if energy == 0.0 {
            return Err(Error::ZeroMeasurements);
        }
        let reference = match cfg.noise_reference {
            NoiseReference::MeanPower => energy / y.values.len() as f64,
            NoiseReference::TotalEnergy => energy,
        };
        let beta = 1.0 / (cfg.beta_inv_scale * reference);
        if !(beta.is_finite() && beta > 0.0) {
            return Err(Error::NumericalFailure(format!("noise precision {beta} out of range")));
        }
        let m = phi_eff.nrows();
        let p = y.channels();
        let multiplier = match cfg.logdet_multiplier {
            LogdetMultiplier::ChannelsP => p as f64,
            LogdetMultiplier::RowsN => phi_eff.ncols() as f64,
        };

        let mut gram = phi_eff.tr_mul(phi_eff) * beta;
        symmetrize(&mut gram);
        let proj = phi_eff.tr_mul(&y.values) * beta;
        let stats = (0..partition.num_blocks())
            .map(|b| {
                let r = partition.range(b);
                let s = gram.view((r.start, r.start), (r.len(), r.len())).into_owned();
                let q = proj.rows(r.start, r.len()).into_owned();
                BlockStats {
                    s: s.clone(),
                    q: q.clone(),
                    s_full: s,
                    q_full: q,
                }
            })
            .collect();

        Ok(Self {
            partition: partition.clone(),
            gram,
            beta,
            multiplier,
            cfg: *cfg,
            active: Vec::new(),
            gamma: vec![0.0; partition.num_blocks()],
            mu: DMatrix::zeros(0, p),
            sigma: DMatrix::zeros(0, 0),
            stats,
            // log|β⁻¹ I| = −M log β, Tr(Yᵀ β Y) = β‖Y‖²
            cost: multiplier * m as f64 * (-beta.ln()) + beta * energy,
        })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn cost(&self) -> f64 {
        self.cost
    }

    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    pub fn active(&self) -> &[usize] {
        &self.active
    }

    /// Posterior mean over the active rows, in `active()` order.
    pub fn mu(&self) -> &DMatrix<f64> {
        &self.mu
    }

    /// Posterior covariance over the active rows, in `active()` order.
    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn stats(&self) -> &[BlockStats] {
        &self.stats
    }

    pub fn partition(&self) -> &BlockPartition {
        &self.partition
    }

    /// Coefficient indices of the active blocks, in `active()` order.
    pub fn active_rows(&self) -> Vec<usize> {
        self.active
            .iter()
            .flat_map(|&b| self.partition.range(b))
            .collect()
    }

    fn active_offsets(&self) -> Vec<usize> {
        let mut acc = 0;
        self.active
            .iter()
            .map(|&b| {
                let o = acc;
                acc += self.partition.size(b);
                o
            })
            .collect()
    }

    fn position(&self, block: usize) -> Option<usize> {
        self.active.iter().position(|&b| b == block)
    }

    /// Posterior mean embedded into all N rows.
    pub fn coefficients(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.partition.total(), self.mu.ncols());
        for (&b, off) in self.active.iter().zip(self.active_offsets()) {
            let r = self.partition.range(b);
            out.rows_mut(r.start, r.len())
                .copy_from(&self.mu.rows(off, r.len()));
        }
        out
    }

    fn evaluate_block(&self, block: usize) -> std::result::Result<Option<Candidate>, usize> {
        let Some(sp) = Spectrum::new(&self.stats[block]) else {
            return Err(block);
        };
        let raw = sp.gamma_candidate();
        let proposed = if raw > self.cfg.gamma_floor { raw } else { 0.0 };
        let old = self.gamma[block];
        let action = match (old > 0.0, proposed > 0.0) {
            (false, false) => return Ok(None),
            (false, true) => Action::Add,
            (true, true) => Action::Reestimate,
            (true, false) => Action::Delete,
        };
        let delta = sp.block_cost(proposed, self.multiplier) - sp.block_cost(old, self.multiplier);
        Ok(Some(Candidate {
            block,
            action,
            gamma: proposed,
            delta_cost: delta,
        }))
    }

    /// Scores every block and returns the action with the most negative cost
    /// change.
    pub fn select_action(&self) -> Selection {
        let evals = map_indexed(self.partition.num_blocks(), self.cfg.execution, |b| {
            self.evaluate_block(b)
        });
        let mut selection = Selection::default();
        for e in evals {
            match e {
                Err(b) => selection.skipped.push(b),
                Ok(Some(c)) => {
                    let better = match selection.best {
                        None => true,
                        Some(best) => c.delta_cost < best.delta_cost,
                    };
                    if better {
                        selection.best = Some(c);
                    }
                }
                Ok(None) => {}
            }
        }
        selection
    }

    /// Applies an action chosen by [`select_action`](Self::select_action).
    pub fn apply_action(&mut self, c: &Candidate) -> Result<()> {
        let block = c.block;
        if block >= self.partition.num_blocks() {
            return Err(Error::InvalidConfig(format!("block {block} out of range")));
        }
        match (c.action, self.position(block)) {
            (Action::Add, None) => {
                if !(c.gamma > 0.0) {
                    return Err(Error::InvalidConfig("add needs a positive variance".into()));
                }
                self.add_block(block, c.gamma)?
            }
            (Action::Reestimate, Some(j)) => {
                if !(c.gamma > 0.0) {
                    return Err(Error::InvalidConfig("re-estimate needs a positive variance".into()));
                }
                self.reestimate_block(j, c.gamma)?
            }
            (Action::Delete, Some(j)) => self.delete_block(j)?,
            (action, pos) => {
                return Err(Error::InvalidConfig(format!(
                    "{action:?} is not applicable to block {block} (active: {})",
                    pos.is_some()
                )))
            }
        }
        self.cost += c.delta_cost;
        self.refresh_leave_one_out()?;
        Ok(())
    }

    /// Columns of βΦᵀΦ belonging to the active rows, N×K.
    fn gram_active(&self) -> DMatrix<f64> {
        self.gram.select_columns(self.active_rows().iter())
    }

    fn add_block(&mut self, block: usize, gamma: f64) -> Result<()> {
        let r = self.partition.range(block);
        let d = r.len();
        let k = self.sigma.nrows();
        let p = self.mu.ncols();

        let mut prec = self.stats[block].s_full.clone();
        for t in 0..d {
            prec[(t, t)] += 1.0 / gamma;
        }
        let sigma_ii = spd_inverse(&prec, "new block precision")?;
        let mu_i = &sigma_ii * &self.stats[block].q_full;

        let g = self.gram_active();
        // b = βΦ_AᵀΦ_i (K×d), t = Σ b
        let b = g.rows(r.start, d).transpose();
        let t = &self.sigma * &b;
        // Φᵀ C⁻¹ Φ_i for every row, N×d
        let cross = self.gram.columns(r.start, d) - &g * &t;

        let mut sigma = DMatrix::zeros(k + d, k + d);
        let t_sig = &t * &sigma_ii;
        sigma
            .view_mut((0, 0), (k, k))
            .copy_from(&(&self.sigma + &t_sig * t.transpose()));
        let off = -&t_sig;
        sigma.view_mut((0, k), (k, d)).copy_from(&off);
        sigma.view_mut((k, 0), (d, k)).copy_from(&off.transpose());
        sigma.view_mut((k, k), (d, d)).copy_from(&sigma_ii);
        symmetrize(&mut sigma);

        let mut mu = DMatrix::zeros(k + d, p);
        mu.rows_mut(0, k).copy_from(&(&self.mu - &t * &mu_i));
        mu.rows_mut(k, d).copy_from(&mu_i);

        let q_shift = &cross * &mu_i;
        for (m, st) in self.stats.iter_mut().enumerate() {
            let rm = self.partition.range(m);
            let cm = cross.rows(rm.start, rm.len());
            st.s_full -= cm * &sigma_ii * cm.transpose();
            symmetrize(&mut st.s_full);
            st.q_full -= q_shift.rows(rm.start, rm.len());
        }

        self.sigma = sigma;
        self.mu = mu;
        self.active.push(block);
        self.gamma[block] = gamma;
        Ok(())
    }

    /// Shared rank-d downdate for re-estimation and deletion:
    /// `Σ ← Σ − Σ_{:,j} F Σ_{j,:}`, `μ ← μ − Σ_{:,j} F μ_j`, and the matching
    /// `S += H F Hᵀ`, `Q += H F μ_j` with `H = G Σ_{:,j}`.
    fn downdate(&mut self, off: usize, d: usize, f: &DMatrix<f64>) {
        let sig_cols = self.sigma.columns(off, d).into_owned();
        let mu_j = self.mu.rows(off, d).into_owned();
        let h = self.gram_active() * &sig_cols;
        let f_mu = f * &mu_j;

        self.sigma -= &sig_cols * f * sig_cols.transpose();
        symmetrize(&mut self.sigma);
        self.mu -= &sig_cols * &f_mu;

        let q_shift = &h * &f_mu;
        for (m, st) in self.stats.iter_mut().enumerate() {
            let rm = self.partition.range(m);
            let hm = h.rows(rm.start, rm.len());
            st.s_full += hm * f * hm.transpose();
            symmetrize(&mut st.s_full);
            st.q_full += q_shift.rows(rm.start, rm.len());
        }
    }

    fn reestimate_block(&mut self, j: usize, gamma: f64) -> Result<()> {
        let block = self.active[j];
        let off = self.active_offsets()[j];
        let d = self.partition.size(block);
        let old = self.gamma[block];
        // Γ⁻¹ changes by κ I on this block; F = (κ⁻¹ I + Σ_jj)⁻¹ = κ (I + κ Σ_jj)⁻¹
        let kappa = 1.0 / gamma - 1.0 / old;
        if kappa != 0.0 {
            let mut m = self.sigma.view((off, off), (d, d)) * kappa;
            for t in 0..d {
                m[(t, t)] += 1.0;
            }
            let mut f = general_inverse(&m, "re-estimation kernel")? * kappa;
            symmetrize(&mut f);
            self.downdate(off, d, &f);
        }
        self.gamma[block] = gamma;
        Ok(())
    }

    fn delete_block(&mut self, j: usize) -> Result<()> {
        let block = self.active[j];
        let off = self.active_offsets()[j];
        let d = self.partition.size(block);
        let f = spd_inverse(
            &self.sigma.view((off, off), (d, d)).into_owned(),
            "posterior covariance block",
        )?;
        self.downdate(off, d, &f);
        let sigma = std::mem::replace(&mut self.sigma, DMatrix::zeros(0, 0));
        self.sigma = sigma.remove_rows(off, d).remove_columns(off, d);
        let mu = std::mem::replace(&mut self.mu, DMatrix::zeros(0, 0));
        self.mu = mu.remove_rows(off, d);
        self.active.remove(j);
        self.gamma[block] = 0.0;
        Ok(())
    }

    /// Rebuilds leave-one-out statistics. Active blocks read them straight
    /// from the posterior; this avoids forming `(I − γS)⁻¹` which cancels
    /// badly once `Σ_jj ≪ γ`.
    fn refresh_leave_one_out(&mut self) -> Result<()> {
        let mut is_active = vec![None; self.partition.num_blocks()];
        for (j, (&b, off)) in self.active.iter().zip(self.active_offsets()).enumerate() {
            is_active[b] = Some((j, off));
        }
        for (b, st) in self.stats.iter_mut().enumerate() {
            match is_active[b] {
                None => {
                    st.s.clone_from(&st.s_full);
                    st.q.clone_from(&st.q_full);
                }
                Some((_, off)) => {
                    let d = self.partition.size(b);
                    let g = self.gamma[b];
                    let sig = self.sigma.view((off, off), (d, d)).into_owned();
                    let mu_j = self.mu.rows(off, d);
                    let sig_inv = spd_inverse(&sig, "posterior covariance block")?;
                    let mut s = sig_inv.clone();
                    let mut s_full = &sig * (-1.0 / (g * g));
                    for t in 0..d {
                        s[(t, t)] -= 1.0 / g;
                        s_full[(t, t)] += 1.0 / g;
                    }
                    symmetrize(&mut s);
                    symmetrize(&mut s_full);
                    st.q = &sig_inv * mu_j;
                    st.q_full = mu_j / g;
                    st.s = s;
                    st.s_full = s_full;
                }
            }
        }
        Ok(())
    }
}

/// Runs MBSBL-FM on `Y ≈ (Φ D) A` and returns `A` together with `X̂ = D A`.
pub fn solve(
    y: &Measurements,
    phi: &SensingMatrix,
    dictionary: &Dictionary,
    partition: &BlockPartition,
    cfg: &SolverConfig,
) -> Result<RecoveryResult> {
    let start = Instant::now();
    let phi_eff = dictionary.effective_operator(phi)?;
    let mut result = solve_operator(y, &phi_eff, partition, cfg)?;
    result.signal = dictionary.synthesize(&result.coefficients)?;
    result.wall_time_s = start.elapsed().as_secs_f64();
    Ok(result)
}

/// Same as [`solve`] for an explicit effective operator; `signal` equals
/// `coefficients`.
pub fn solve_operator(
    y: &Measurements,
    phi_eff: &DMatrix<f64>,
    partition: &BlockPartition,
    cfg: &SolverConfig,
) -> Result<RecoveryResult> {
    let start = Instant::now();
    cfg.validate()?;
    let state = match SolverState::init(y, phi_eff, partition, cfg) {
        Ok(s) => s,
        Err(Error::ZeroMeasurements) => {
            let zero = DMatrix::zeros(partition.total(), y.channels());
            return Ok(RecoveryResult {
                coefficients: zero.clone(),
                signal: zero,
                gamma: vec![0.0; partition.num_blocks()],
                active_blocks: Vec::new(),
                posterior_covariance: DMatrix::zeros(0, 0),
                cost_trace: Vec::new(),
                iterations: 0,
                wall_time_s: start.elapsed().as_secs_f64(),
                converged: true,
                skipped_blocks: Vec::new(),
            });
        }
        Err(e) => return Err(e),
    };
    let mut state = state;
    let mut trace = vec![state.cost()];
    let mut skipped: Vec<usize> = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iterations {
        let selection = state.select_action();
        for b in selection.skipped {
            if !skipped.contains(&b) {
                skipped.push(b);
            }
        }
        match selection.best {
            Some(c) if c.delta_cost < -cfg.eta => {
                state.apply_action(&c)?;
                iterations += 1;
                trace.push(state.cost());
            }
            _ => {
                converged = true;
                break;
            }
        }
    }
    skipped.sort_unstable();
    let coefficients = state.coefficients();
    Ok(RecoveryResult {
        signal: coefficients.clone(),
        coefficients,
        gamma: state.gamma().to_vec(),
        active_blocks: state.active().to_vec(),
        posterior_covariance: state.sigma().clone(),
        cost_trace: trace,
        iterations,
        wall_time_s: start.elapsed().as_secs_f64(),
        converged,
        skipped_blocks: skipped,
    })
}
