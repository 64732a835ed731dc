//! Cube-section volumes: the finite reduction to an `m × n` matrix, its
//! real Laplace transform, and the saddlepoint asymptotic volume.
//!
//! For the uniform `n`-grid on `[0,1]`, `W` has columns
//! `W_j = ∫_{I_j} w`, and `vol(y)` is the `(n-m)`-volume of
//! `{x ∈ [0,1]^n : W x = y}`. Its Laplace transform is
//! `‖w_1 ∧ … ∧ w_m‖ ∏_j P((Wᵀs)_j)` and, as `n -> ∞`,
//!
//! ```text
//! log vol(y0) ≈ log‖w_1 ∧ … ∧ w_m‖ + (m/2) log(n/2π) - ½ log det h''(τ0)
//!               + log φ_n(τ0) + n h(τ0)
//! ```
//!
//! with `τ0` the root of the saddlepoint equation and `h` its potential.
//! The correction `φ_n` accounts for grid cells that straddle a jump of `w`.
//! Everything is assembled in the log domain since `e^{n h}` underflows.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::saddle::{self, PieceSystem, SolveError, SolveOptions};
use crate::specfun::{bounded, Regime};
use crate::stepfn::{self, ResponseVector, StepError, StepFunction};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum VolumeError {
    #[error("grid size {n} is smaller than the channel count {m}")]
    GridTooCoarse { n: usize, m: usize },
    #[error("the rows of W are linearly dependent")]
    RankDeficient,
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Step(#[from] StepError),
}

/// The `n`-grid reduction of a responsivity on `[0,1]`.
#[derive(Debug, Clone)]
pub struct FiniteReduction {
    pub n: usize,
    /// `m × n`, column `j` is `∫_{I_j} w`.
    pub w: DMatrix<f64>,
    /// `log sqrt(det(W Wᵀ))`.
    pub log_exterior_norm: f64,
}

impl FiniteReduction {
    pub fn m(&self) -> usize {
        self.w.nrows()
    }

    /// `‖w_1 ∧ … ∧ w_m‖ = sqrt(det(W Wᵀ))`.
    pub fn exterior_norm(&self) -> f64 {
        self.log_exterior_norm.exp()
    }

    /// The scaled cell vectors `w_{j,n} = n W_j`, as an `m × n` matrix.
    pub fn w_jn(&self) -> DMatrix<f64> {
        &self.w * self.n as f64
    }

    /// The system `Σ_j (1/n) σ(⟨τ, w_{j,n}⟩) w_{j,n} = y`, whose root gives
    /// the finite-grid centroid.
    pub fn piece_system(&self) -> PieceSystem {
        let (m, n) = self.w.shape();
        let nf = n as f64;
        let vectors = (0..n).flat_map(|j| (0..m).map(move |i| (i, j))).map(|(i, j)| nf * self.w[(i, j)]).collect();
        PieceSystem::new(vec![1.0 / nf; n], vectors, m)
    }
}

pub fn reduce(w: &StepFunction, n: usize) -> Result<FiniteReduction, VolumeError> {
    let (a, b) = w.domain();
    if a != 0.0 || b != 1.0 {
        return Err(StepError::NotUnitInterval(a, b).into());
    }
    let m = w.channels();
    if n < m {
        return Err(VolumeError::GridTooCoarse { n, m });
    }
    let cells = stepfn::cell_integrals(w, n)?;
    let mat = DMatrix::from_fn(m, n, |i, j| cells[j * m + i]);
    let gram = DMatrix::from_fn(m, m, |a, b| stepfn::compensated_sum((0..n).map(|j| mat[(a, j)] * mat[(b, j)])));
    if !stepfn::channels_independent(&gram) {
        return Err(VolumeError::RankDeficient);
    }
    let chol = Cholesky::new(gram).ok_or(VolumeError::RankDeficient)?;
    let log_exterior_norm = chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum();
    Ok(FiniteReduction { n, w: mat, log_exterior_norm })
}

/// `log P(s)` with `P(s) = (1 - e^{-s})/s`; equals `K(-s)`.
fn log_p(s: f64) -> f64 {
    bounded::cumulant(-s)
}

/// `log` of the Laplace transform `∫ e^{-⟨s, y⟩} vol(y) dy`.
pub fn log_vol_transform(red: &FiniteReduction, s: &[f64]) -> f64 {
    let s = DVector::from_column_slice(s);
    let ws = red.w.transpose() * s;
    red.log_exterior_norm + ws.iter().map(|&x| log_p(x)).sum::<f64>()
}

pub fn vol_transform(red: &FiniteReduction, s: &[f64]) -> f64 {
    log_vol_transform(red, s).exp()
}

/// `log φ_n(τ) = Σ_j [K(⟨w_{j,n}, τ⟩) - n ∫_{I_j} K(⟨τ, w⟩)]`.
///
/// Cells on which `w` is constant contribute zero; a cell with a single jump
/// from `y1` to `y2` at `x0 = λ1 (j-1)/n + λ2 j/n` contributes
/// `K(λ1⟨y2,τ⟩ + λ2⟨y1,τ⟩) - λ1 K(⟨y2,τ⟩) - λ2 K(⟨y1,τ⟩)`.
pub fn log_phi_n_at(red: &FiniteReduction, w: &StepFunction, tau: &[f64]) -> Result<f64, VolumeError> {
    let n = red.n;
    let nf = n as f64;
    let k_of_arg = stepfn::linear_combination(w, tau)?.map_pieces(1, |v, out| out[0] = bounded::cumulant(v[0]));
    let k_cells = stepfn::cell_integrals(&k_of_arg, n)?;
    let m = red.m();
    let mut acc = 0.0;
    for (j, kc) in k_cells.iter().enumerate() {
        let arg: f64 = (0..m).map(|i| nf * red.w[(i, j)] * tau[i]).sum();
        let term = bounded::cumulant(arg) - nf * kc;
        // Constant cells cancel up to rounding; drop them so aligned grids give exactly 1.
        if term.abs() > 1e-13 * (1.0 + bounded::cumulant(arg).abs()) {
            acc += term;
        }
    }
    Ok(acc)
}

pub fn phi_n_at(red: &FiniteReduction, w: &StepFunction, tau: &[f64]) -> Result<f64, VolumeError> {
    Ok(log_phi_n_at(red, w, tau)?.exp())
}

/// Terms of the asymptotic volume, all in the log domain.
#[derive(Debug, Clone, Serialize)]
pub struct AsymptoticVolume {
    pub n: usize,
    pub tau0: Vec<f64>,
    pub log_exterior_norm: f64,
    /// `h(τ0)`.
    pub potential: f64,
    /// `log det h''(τ0)`.
    pub log_det_hessian: f64,
    pub log_phi: f64,
    pub log_volume: f64,
    /// `exp(log_volume)`, `None` if it under- or overflows.
    pub volume: Option<f64>,
}

impl AsymptoticVolume {
    /// The same approximation with `φ_n` forced to 1.
    pub fn log_volume_without_phi(&self) -> f64 {
        self.log_volume - self.log_phi
    }
}

pub fn asymptotic_volume(
    w: &StepFunction,
    y0: &ResponseVector,
    n: usize,
    opts: &SolveOptions,
) -> Result<AsymptoticVolume, VolumeError> {
    let red = reduce(w, n)?;
    let sol = saddle::solve_saddlepoint(w, y0, Regime::Bounded, opts)?;
    let m = w.channels();
    let potential = saddle::potential_h(w, &sol.tau0, y0, Regime::Bounded)?;
    let chol = Cholesky::new(sol.hessian_at_solution.clone())
        .expect("the Jacobian at a converged root is positive definite");
    let log_det_hessian = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let log_phi = log_phi_n_at(&red, w, &sol.tau0)?;
    let nf = n as f64;
    let log_volume = red.log_exterior_norm + 0.5 * m as f64 * (nf / (2.0 * std::f64::consts::PI)).ln()
        - 0.5 * log_det_hessian
        + log_phi
        + nf * potential;
    let volume = Some(log_volume.exp()).filter(|v| v.is_finite() && *v > 0.0);
    Ok(AsymptoticVolume {
        n,
        tau0: sol.tau0,
        log_exterior_norm: red.log_exterior_norm,
        potential,
        log_det_hessian,
        log_phi,
        log_volume,
        volume,
    })
}
