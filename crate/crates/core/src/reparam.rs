//! Reparameterization of `[a,b]` onto `[0,1]` that makes a positive linear
//! combination of the responsivities constant.
//!
//! With `S(λ) = Σ α_i w_i(λ) > 0`, `C = ∫ S` and `θ(λ) = C⁻¹ ∫_a^λ S`, the
//! map `φ = θ⁻¹ : [0,1] -> [a,b]` pulls `w` back to the equalized
//! responsivities `ŵ(ω) = w(φ(ω)) φ'(ω)`, which satisfy `Σ α_i ŵ_i ≡ C`.
//! For a step function `θ` is piecewise linear with knots at the
//! breakpoints, so everything is exact. The shortcut system solves the
//! equivalent equation `∫ σ(⟨τ, w/S⟩) w = y0` directly on `[a,b]`.

use serde::Serialize;
use thiserror::Error;

use crate::saddle::{self, PieceSystem, SaddleResult, SolveError, SolveOptions};
use crate::specfun::Regime;
use crate::stepfn::{ResponseVector, StepError, StepFunction};

/// `S` must exceed this fraction of `max |S|` on every piece.
pub const POSITIVITY_MARGIN: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReparamError {
    #[error("the combination Σ α_i w_i is not positive on piece {piece} (value {value})")]
    NonPositiveCombination { piece: usize, value: f64 },
    #[error("alpha has {got} coefficients for {expected} channels")]
    AlphaLength { expected: usize, got: usize },
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Step(#[from] StepError),
}

/// The piecewise-linear `φ` together with the data defining it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Reparameterization {
    pub alpha: Vec<f64>,
    /// `C = ∫ Σ α_i w_i`.
    pub c: f64,
    /// Graph of `φ` as `(ω, λ)` pairs, one per breakpoint of `w`.
    pub knots: Vec<(f64, f64)>,
    /// `S` on each piece of `w`.
    pub combination: Vec<f64>,
}

/// `S = Σ α_i w_i` on each piece, checked for strict positivity.
pub fn combination(w: &StepFunction, alpha: &[f64]) -> Result<Vec<f64>, ReparamError> {
    if alpha.len() != w.channels() {
        return Err(ReparamError::AlphaLength { expected: w.channels(), got: alpha.len() });
    }
    let s: Vec<f64> = (0..w.pieces())
        .map(|k| w.piece(k).iter().zip(alpha).map(|(a, b)| a * b).sum())
        .collect();
    let scale = s.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if let Some((piece, &value)) = s.iter().enumerate().find(|(_, &v)| !(v > POSITIVITY_MARGIN * scale)) {
        return Err(ReparamError::NonPositiveCombination { piece, value });
    }
    Ok(s)
}

pub fn build_equalization(w: &StepFunction, alpha: &[f64]) -> Result<Reparameterization, ReparamError> {
    let s = combination(w, alpha)?;
    let masses: Vec<f64> = s.iter().enumerate().map(|(k, sk)| w.width(k) * sk).collect();
    let c: f64 = masses.iter().sum();
    let breaks = w.breaks();
    let mut knots = Vec::with_capacity(breaks.len());
    let mut acc = 0.0;
    knots.push((0.0, breaks[0]));
    for (k, m) in masses.iter().enumerate() {
        acc += m;
        let omega = if k + 1 == masses.len() { 1.0 } else { acc / c };
        knots.push((omega, breaks[k + 1]));
    }
    Ok(Reparameterization { alpha: alpha.to_vec(), c, knots, combination: s })
}

impl Reparameterization {
    /// `φ(ω)`, for `ω ∈ [0,1]`.
    pub fn phi(&self, omega: f64) -> f64 {
        interpolate(&self.knots, omega, |k| k.0, |k| k.1)
    }

    /// `θ(λ) = φ⁻¹(λ)`, for `λ ∈ [a,b]`.
    pub fn theta(&self, lambda: f64) -> f64 {
        interpolate(&self.knots, lambda, |k| k.1, |k| k.0)
    }

    /// `φ'` on each segment; equals `C / S_k`.
    pub fn slopes(&self) -> Vec<f64> {
        self.combination.iter().map(|s| self.c / s).collect()
    }

    /// `ŵ(ω) = w(φ(ω)) φ'(ω)` as a step function on `[0,1]`.
    pub fn equalized_responsivities(&self, w: &StepFunction) -> Result<StepFunction, ReparamError> {
        if w.pieces() + 1 != self.knots.len() {
            return Err(StepError::ValueCount { expected: self.knots.len() - 1, got: w.pieces() }.into());
        }
        let m = w.channels();
        let slopes = self.slopes();
        let values = (0..w.pieces())
            .flat_map(|k| w.piece(k).iter().map(|v| v * slopes[k]).collect::<Vec<_>>())
            .collect();
        let breaks = self.knots.iter().map(|k| k.0).collect();
        Ok(StepFunction::from_flat(breaks, values, m)?.with_labels(w.labels().to_vec())?)
    }

    /// Pulls a function on `[0,1]` with the knot breakpoints back to `[a,b]`:
    /// `f ∘ θ`, which for step functions keeps the values and maps the breaks.
    pub fn pull_back(&self, f: &StepFunction) -> Result<StepFunction, ReparamError> {
        let breaks = f.breaks().iter().map(|&omega| self.phi(omega)).collect();
        Ok(StepFunction::from_flat(breaks, f.values().to_vec(), f.channels())?.with_labels(f.labels().to_vec())?)
    }
}

fn interpolate(knots: &[(f64, f64)], x: f64, xs: impl Fn(&(f64, f64)) -> f64, ys: impl Fn(&(f64, f64)) -> f64) -> f64 {
    let j = knots.partition_point(|k| xs(k) <= x);
    if j == 0 {
        return ys(&knots[0]);
    }
    if j == knots.len() {
        return ys(&knots[knots.len() - 1]);
    }
    let (a, b) = (&knots[j - 1], &knots[j]);
    let t = (x - xs(a)) / (xs(b) - xs(a));
    ys(a) + t * (ys(b) - ys(a))
}

/// `w̃ = w / S`.
pub fn normalized_responsivities(w: &StepFunction, alpha: &[f64]) -> Result<StepFunction, ReparamError> {
    let s = combination(w, alpha)?;
    let m = w.channels();
    let values = (0..w.pieces())
        .flat_map(|k| w.piece(k).iter().map(|v| v / s[k]).collect::<Vec<_>>())
        .collect();
    Ok(StepFunction::from_flat(w.breaks().to_vec(), values, m)?.with_labels(w.labels().to_vec())?)
}

/// The system `Σ μ_k S_k σ(⟨τ, ω_k/S_k⟩) ω_k/S_k = y0`.
pub fn shortcut_system(w: &StepFunction, alpha: &[f64]) -> Result<PieceSystem, ReparamError> {
    let s = combination(w, alpha)?;
    let weights = (0..w.pieces()).map(|k| w.width(k) * s[k]).collect();
    let vectors = (0..w.pieces())
        .flat_map(|k| w.piece(k).iter().map(|v| v / s[k]).collect::<Vec<_>>())
        .collect();
    Ok(PieceSystem::new(weights, vectors, w.channels()))
}

/// Solves `∫ σ(⟨τ, w̃⟩) w = y0` and returns `σ(⟨τ0, w̃⟩)` over the breaks
/// of `w`. Equivalent to solving on the equalized responsivities and
/// pulling the estimate back through `φ`; the two `τ0` differ by the factor
/// `C`.
pub fn solve_shortcut(
    w: &StepFunction,
    alpha: &[f64],
    y0: &ResponseVector,
    regime: Regime,
    opts: &SolveOptions,
) -> Result<SaddleResult, ReparamError> {
    let system = shortcut_system(w, alpha)?;
    let sol = system.solve(&y0.components, regime, opts)?;
    Ok(saddle::assemble(&system, sol, w, regime)?)
}
