//! The saddlepoint equation `∫ σ(⟨τ, w⟩) w = y0` and its solver.
//!
//! The strictly convex potential `h(τ) = ∫ K(⟨τ, w⟩) - ⟨y0, τ⟩` has
//! gradient `G(τ) - y0` with `G(τ) = ∫ σ(⟨τ, w⟩) w`, so the root is the
//! unique minimiser of `h`. The solver runs damped Newton on `∇h = G - y0`
//! with the analytic Jacobian `∫ σ'(⟨τ, w⟩) w wᵀ` and an Armijo
//! backtracking search on `h`.
//!
//! In the unbounded regime `G` is defined on the open negative orthant, so
//! a root with a nonnegative component means the response is not
//! estimable, as does divergence of the iterates.
//!
//! Everything here works on a [`PieceSystem`]: weights `c_k > 0` and
//! vectors `v_k` with `G(τ) = Σ c_k σ(⟨τ, v_k⟩) v_k`. A step function with
//! pieces `(μ_k, ω_k)` is the system `(μ_k, ω_k)`; other reductions (the
//! normalized shortcut system, the finite `n`-grid system) are built the
//! same way.

use log::{debug, warn};
use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use thiserror::Error;

use crate::specfun::{bounded, Regime};
use crate::stepfn::{self, ResponseVector, StepError, StepFunction};
use crate::zonotope::{ZonotopeError, ZonotopeModel};

/// Jacobian condition numbers above this trigger a warning.
pub const CONDITION_WARN: f64 = 1e12;
/// Iterates with `|τ|` beyond this are declared divergent.
pub const DIVERGENCE_NORM: f64 = 1e8;
/// Extra Newton steps taken after the residual test passes.
const MAX_POLISH: usize = 2;
/// Newton steps smaller than this, relative to `1 + |τ|∞`, end polishing.
const POLISH_STEP: f64 = 4.0 * f64::EPSILON;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolveError {
    #[error("responsivity channels are linearly dependent (Gram margin {margin:.3e})")]
    DependentChannels { margin: f64 },
    #[error("response is on the boundary of, or outside, the image of the unit cube")]
    BoundaryOrExteriorResponse,
    #[error("response is not estimable: {reason}")]
    NotEstimable { reason: String },
    #[error("solver did not converge in {iterations} iterations (residual {residual:.3e})")]
    MaxIterations { iterations: usize, residual: f64 },
    #[error("τ is outside the feasibility cone (piece {piece}: ⟨τ, w⟩ = {value})")]
    InfeasiblePoint { piece: usize, value: f64 },
    #[error("unbounded regime requires nonnegative responsivities with positive sum (violated on piece {piece})")]
    UnboundedConditions { piece: usize },
    #[error("unbounded regime requires a nonnegative response (component {index} = {value})")]
    NegativeResponse { index: usize, value: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Zonotope(#[from] ZonotopeError),
    #[error(transparent)]
    Step(#[from] StepError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOptions {
    pub tol_abs: f64,
    pub tol_rel: f64,
    pub max_iterations: usize,
    /// Armijo sufficient-decrease constant.
    pub armijo: f64,
    /// Backtracking factor.
    pub backtrack: f64,
    /// Fraction of the distance to the cone boundary a step may cover
    /// (unbounded regime).
    pub boundary_fraction: f64,
    /// Starting point; defaults to `0` (bounded) or a flat-spectrum guess
    /// (unbounded).
    pub initial_tau: Option<Vec<f64>>,
    /// Run the exact zonotope membership test first (bounded, `m <= 3`).
    pub check_membership: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol_abs: 1e-12,
            tol_rel: 1e-10,
            max_iterations: 500,
            armijo: 1e-4,
            backtrack: 0.5,
            boundary_fraction: 0.99,
            initial_tau: None,
            check_membership: true,
        }
    }
}

/// Outcome of a successful solve on a step-function responsivity.
#[derive(Debug, Clone)]
pub struct SaddleResult {
    pub tau0: Vec<f64>,
    /// `σ(⟨τ0, w⟩)` on the breakpoints of `w`.
    pub estimate: StepFunction,
    /// `|G(τ0) - y0|` per channel.
    pub response_residual: Vec<f64>,
    pub iterations: usize,
    /// `DG(τ0)`, the Hessian of the potential at the root.
    pub hessian_at_solution: DMatrix<f64>,
    pub jacobian_condition: f64,
    pub regime: Regime,
}

/// Root of a [`PieceSystem`].
#[derive(Debug, Clone)]
pub struct Solution {
    pub tau: DVector<f64>,
    pub iterations: usize,
    pub residual: DVector<f64>,
    pub hessian: DMatrix<f64>,
    pub condition: f64,
}

/// Weighted vectors `(c_k, v_k)` defining `G(τ) = Σ c_k σ(⟨τ, v_k⟩) v_k`.
#[derive(Debug, Clone)]
pub struct PieceSystem {
    weights: Vec<f64>,
    vectors: Vec<f64>,
    dim: usize,
}

impl PieceSystem {
    /// `vectors` is row-major: `vectors[k*dim + i]`.
    pub fn new(weights: Vec<f64>, vectors: Vec<f64>, dim: usize) -> Self {
        assert_eq!(weights.len() * dim, vectors.len());
        Self { weights, vectors, dim }
    }

    pub fn from_step(w: &StepFunction) -> Self {
        let weights = (0..w.pieces()).map(|k| w.width(k)).collect();
        Self::new(weights, w.values().to_vec(), w.channels())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn vector(&self, k: usize) -> &[f64] {
        &self.vectors[k * self.dim..(k + 1) * self.dim]
    }

    fn iter(&self) -> impl Iterator<Item = (f64, &[f64])> + '_ {
        self.weights.iter().copied().zip(self.vectors.chunks_exact(self.dim))
    }

    /// `⟨τ, v_k⟩` for every piece.
    pub fn arguments(&self, tau: &[f64]) -> Vec<f64> {
        self.vectors
            .chunks_exact(self.dim)
            .map(|v| v.iter().zip(tau).map(|(a, b)| a * b).sum())
            .collect()
    }

    fn feasible_arguments(&self, tau: &[f64], regime: Regime) -> Result<Vec<f64>, SolveError> {
        if tau.len() != self.dim {
            return Err(SolveError::DimensionMismatch { expected: self.dim, got: tau.len() });
        }
        let args = self.arguments(tau);
        if regime == Regime::Unbounded {
            if let Some((piece, &value)) = args.iter().enumerate().find(|(_, &t)| !(t < 0.0)) {
                return Err(SolveError::InfeasiblePoint { piece, value });
            }
        }
        Ok(args)
    }

    /// `Σ c_k σ(⟨τ, v_k⟩) v_k`.
    pub fn g_map(&self, tau: &[f64], regime: Regime) -> Result<DVector<f64>, SolveError> {
        let args = self.feasible_arguments(tau, regime)?;
        let mut g = DVector::zeros(self.dim);
        for ((c, v), t) in self.iter().zip(args) {
            let s = c * sigma(t, regime);
            for (gi, vi) in g.iter_mut().zip(v) {
                *gi += s * vi;
            }
        }
        Ok(g)
    }

    /// `Σ c_k σ'(⟨τ, v_k⟩) v_k v_kᵀ`.
    pub fn jacobian(&self, tau: &[f64], regime: Regime) -> Result<DMatrix<f64>, SolveError> {
        let args = self.feasible_arguments(tau, regime)?;
        Ok(self.jacobian_from_args(&args, regime))
    }

    fn jacobian_from_args(&self, args: &[f64], regime: Regime) -> DMatrix<f64> {
        let m = self.dim;
        let mut j = DMatrix::zeros(m, m);
        for ((c, v), &t) in self.iter().zip(args) {
            let s = c * sigma_prime(t, regime);
            for a in 0..m {
                let sa = s * v[a];
                for b in 0..=a {
                    j[(a, b)] += sa * v[b];
                }
            }
        }
        for a in 0..m {
            for b in 0..a {
                j[(b, a)] = j[(a, b)];
            }
        }
        j
    }

    /// `Σ c_k K(⟨τ, v_k⟩) - ⟨y, τ⟩`.
    pub fn potential(&self, tau: &[f64], y: &[f64], regime: Regime) -> Result<f64, SolveError> {
        let args = self.feasible_arguments(tau, regime)?;
        let k: f64 = self.weights.iter().zip(&args).map(|(c, &t)| c * cumulant(t, regime)).sum();
        Ok(k - y.iter().zip(tau).map(|(a, b)| a * b).sum::<f64>())
    }

    pub fn gram(&self) -> DMatrix<f64> {
        self.jacobian_from_args(&vec![0.0; self.len()], Regime::Bounded) * 12.0
    }

    pub fn zonotope(&self) -> ZonotopeModel {
        ZonotopeModel::from_generators(
            self.iter()
                .map(|(c, v)| DVector::from_iterator(self.dim, v.iter().map(|x| c * x)))
                .collect(),
        )
    }

    fn check_unbounded_conditions(&self) -> Result<(), SolveError> {
        for (piece, (_, v)) in self.iter().enumerate() {
            let sum: f64 = v.iter().sum();
            if v.iter().any(|&x| x < 0.0) || !(sum > 0.0) {
                return Err(SolveError::UnboundedConditions { piece });
            }
        }
        Ok(())
    }

    fn unbounded_start(&self, y: &[f64]) -> Result<DVector<f64>, SolveError> {
        let total_y: f64 = y.iter().sum();
        if !(total_y > 0.0) {
            return Err(SolveError::NotEstimable { reason: "zero response".into() });
        }
        // Flat spectrum with the same channel total.
        let total_weight: f64 = self.weights.iter().sum();
        Ok(DVector::from_element(self.dim, -total_weight / total_y))
    }

    /// Solves `G(τ) = y` by damped Newton on the convex potential.
    pub fn solve(&self, y: &[f64], regime: Regime, opts: &SolveOptions) -> Result<Solution, SolveError> {
        let m = self.dim;
        if y.len() != m {
            return Err(SolveError::DimensionMismatch { expected: m, got: y.len() });
        }
        let margin = stepfn::independence_margin(&self.gram());
        if margin < stepfn::DEPENDENCE_THRESHOLD {
            return Err(SolveError::DependentChannels { margin });
        }
        match regime {
            Regime::Bounded => {
                if opts.check_membership && m <= 3 {
                    let inside = self.zonotope().contains_interior(&ResponseVector::new(y.to_vec()))?;
                    if !inside {
                        return Err(SolveError::BoundaryOrExteriorResponse);
                    }
                }
            }
            Regime::Unbounded => {
                self.check_unbounded_conditions()?;
                if let Some((index, &value)) = y.iter().enumerate().find(|(_, &v)| v < 0.0) {
                    return Err(SolveError::NegativeResponse { index, value });
                }
            }
        }

        let mut tau = match (&opts.initial_tau, regime) {
            (Some(t), _) => {
                if t.len() != m {
                    return Err(SolveError::DimensionMismatch { expected: m, got: t.len() });
                }
                DVector::from_column_slice(t)
            }
            (None, Regime::Bounded) => DVector::zeros(m),
            (None, Regime::Unbounded) => self.unbounded_start(y)?,
        };
        let yv = DVector::from_column_slice(y);
        let y_scale = yv.amax();
        let tol = opts.tol_abs + opts.tol_rel * y_scale;

        let mut iterations = 0;
        let mut polish = 0;
        loop {
            let args = self.feasible_arguments(tau.as_slice(), regime)?;
            let grad = self.g_map(tau.as_slice(), regime)? - &yv;
            let jac = self.jacobian_from_args(&args, regime);
            let res = grad.amax();
            debug!("newton iter {iterations}: |G - y| = {res:.3e}");
            if res <= tol {
                // Ill-conditioned roots can meet the residual test with τ still
                // off by res / λ_min; full Newton steps are safe this close in.
                if polish < MAX_POLISH {
                    let step = newton_direction(&jac, &grad);
                    if step.amax() > POLISH_STEP * (1.0 + tau.amax()) {
                        let cand = &tau + &step;
                        if self.feasible_arguments(cand.as_slice(), regime).is_ok() {
                            let g1 = self.g_map(cand.as_slice(), regime)? - &yv;
                            if g1.amax() <= res {
                                tau = cand;
                                polish += 1;
                                continue;
                            }
                        }
                    }
                }
                if regime == Regime::Unbounded {
                    if let Some((i, t)) = tau.iter().enumerate().find(|(_, t)| !(**t < 0.0)) {
                        return Err(SolveError::NotEstimable {
                            reason: format!("root has τ[{i}] = {t:.3e}, outside the open negative orthant"),
                        });
                    }
                }
                let condition = condition_number(&jac);
                if condition > CONDITION_WARN {
                    warn!("Jacobian condition {condition:.3e} at the solution; response may be near the boundary");
                }
                return Ok(Solution { tau, iterations, residual: grad.abs(), hessian: jac, condition });
            }
            if iterations >= opts.max_iterations {
                return Err(match regime {
                    Regime::Unbounded => SolveError::NotEstimable {
                        reason: format!("no convergence after {iterations} iterations (residual {res:.3e})"),
                    },
                    Regime::Bounded => SolveError::MaxIterations { iterations, residual: res },
                });
            }
            iterations += 1;

            let dir = newton_direction(&jac, &grad);
            let mut alpha: f64 = 1.0;
            if regime == Regime::Unbounded {
                let dargs = self.arguments(dir.as_slice());
                for (&t, &dt) in args.iter().zip(&dargs) {
                    if dt > 0.0 {
                        alpha = alpha.min(opts.boundary_fraction * (-t / dt));
                    }
                }
            }
            let h0 = self.potential(tau.as_slice(), y, regime)?;
            let slope = grad.dot(&dir);
            let mut accepted = None;
            for _ in 0..80 {
                let cand = &tau + alpha * &dir;
                if let Ok(h1) = self.potential(cand.as_slice(), y, regime) {
                    if h1 <= h0 + opts.armijo * alpha * slope {
                        accepted = Some(cand);
                        break;
                    }
                    // Near the root h is flat to rounding; fall back to the residual.
                    if (h1 - h0).abs() <= 64.0 * f64::EPSILON * (1.0 + h0.abs()) {
                        let g1 = self.g_map(cand.as_slice(), regime)? - &yv;
                        if g1.amax() < res {
                            accepted = Some(cand);
                            break;
                        }
                    }
                }
                alpha *= opts.backtrack;
            }
            let Some(next) = accepted else {
                return Err(match regime {
                    Regime::Unbounded => SolveError::NotEstimable { reason: "line search stalled".into() },
                    Regime::Bounded => SolveError::MaxIterations { iterations, residual: res },
                });
            };
            tau = next;
            if !(tau.norm() <= DIVERGENCE_NORM) {
                return Err(match regime {
                    Regime::Unbounded => SolveError::NotEstimable { reason: format!("|τ| exceeded {DIVERGENCE_NORM:e}") },
                    Regime::Bounded => SolveError::BoundaryOrExteriorResponse,
                });
            }
        }
    }
}

fn sigma(t: f64, regime: Regime) -> f64 {
    match regime {
        Regime::Bounded => bounded::sigma(t),
        Regime::Unbounded => -1.0 / t,
    }
}

fn sigma_prime(t: f64, regime: Regime) -> f64 {
    match regime {
        Regime::Bounded => bounded::sigma_prime(t),
        Regime::Unbounded => 1.0 / (t * t),
    }
}

fn cumulant(t: f64, regime: Regime) -> f64 {
    match regime {
        Regime::Bounded => bounded::cumulant(t),
        Regime::Unbounded => -(-t).ln(),
    }
}

/// Solves `J d = -g`, regularising if `J` is numerically indefinite.
fn newton_direction(jac: &DMatrix<f64>, grad: &DVector<f64>) -> DVector<f64> {
    let rhs = -grad;
    if let Some(ch) = Cholesky::new(jac.clone()) {
        return ch.solve(&rhs);
    }
    let m = jac.nrows();
    let mut shift = 1e-14 * jac.trace().abs().max(f64::MIN_POSITIVE) / m as f64;
    loop {
        let reg = jac + DMatrix::identity(m, m) * shift;
        if let Some(ch) = Cholesky::new(reg) {
            return ch.solve(&rhs);
        }
        shift *= 10.0;
    }
}

pub(crate) fn condition_number(mat: &DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new(mat.clone()).eigenvalues;
    let (lo, hi) = (eig.min(), eig.max());
    if lo > 0.0 {
        hi / lo
    } else {
        f64::INFINITY
    }
}

/// `G_σ(τ) = Λ_w(σ(⟨τ, w⟩))`.
pub fn g_map(w: &StepFunction, tau: &[f64], regime: Regime) -> Result<ResponseVector, SolveError> {
    let g = PieceSystem::from_step(w).g_map(tau, regime)?;
    Ok(ResponseVector::with_labels(g.iter().copied().collect(), w.labels().to_vec()))
}

/// `(DG)_ij = ∫ w_i σ'(⟨τ, w⟩) w_j`.
pub fn g_jacobian(w: &StepFunction, tau: &[f64], regime: Regime) -> Result<DMatrix<f64>, SolveError> {
    PieceSystem::from_step(w).jacobian(tau, regime)
}

/// `h(τ) = ∫ K(⟨τ, w⟩) - ⟨y0, τ⟩`.
pub fn potential_h(w: &StepFunction, tau: &[f64], y0: &ResponseVector, regime: Regime) -> Result<f64, SolveError> {
    PieceSystem::from_step(w).potential(tau, &y0.components, regime)
}

/// Finds the unique `τ0` with `∫ σ(⟨τ0, w⟩) w = y0` and returns the
/// centroid estimate `σ(⟨τ0, w⟩)`.
pub fn solve_saddlepoint(
    w: &StepFunction,
    y0: &ResponseVector,
    regime: Regime,
    opts: &SolveOptions,
) -> Result<SaddleResult, SolveError> {
    let system = PieceSystem::from_step(w);
    let sol = system.solve(&y0.components, regime, opts)?;
    assemble(&system, sol, w, regime)
}

/// Packages a root of `system`, whose pieces are those of `w`, as a
/// [`SaddleResult`] over the breakpoints of `w`.
pub(crate) fn assemble(
    system: &PieceSystem,
    sol: Solution,
    w: &StepFunction,
    regime: Regime,
) -> Result<SaddleResult, SolveError> {
    let estimate_values = system.arguments(sol.tau.as_slice()).into_iter().map(|t| sigma(t, regime)).collect();
    let estimate = StepFunction::scalar(w.breaks().to_vec(), estimate_values)?;
    Ok(SaddleResult {
        tau0: sol.tau.iter().copied().collect(),
        estimate,
        response_residual: sol.residual.iter().copied().collect(),
        iterations: sol.iterations,
        hessian_at_solution: sol.hessian,
        jacobian_condition: sol.condition,
        regime,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::specfun;
    use crate::stepfn::{apply_operator, gram_matrix};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn two_step() -> StepFunction {
        StepFunction::scalar(vec![0.0, 0.5, 1.0], vec![2.0, 1.0]).unwrap()
    }

    fn random_w(rng: &mut ChaCha8Rng, pieces: usize, m: usize) -> StepFunction {
        let mut cuts: Vec<f64> = (0..pieces - 1).map(|_| rng.random::<f64>()).collect();
        cuts.sort_by(f64::total_cmp);
        let mut breaks = vec![0.0];
        breaks.extend(cuts);
        breaks.push(1.0);
        let values = (0..pieces * m).map(|_| rng.random_range(-1.0..2.0)).collect();
        StepFunction::from_flat(breaks, values, m).unwrap()
    }

    fn bisect(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn g_map_examples() {
        let w = StepFunction::new(vec![0.0, 0.4, 1.0], vec![vec![1.0, 0.5], vec![0.2, 2.0]]).unwrap();
        let g = g_map(&w, &[0.0, 0.0], Regime::Bounded).unwrap();
        let white = w.integral();
        for (a, b) in g.components.iter().zip(white) {
            assert!((a - 0.5 * b).abs() < 1e-16);
        }
        let one = StepFunction::constant(0.0, 1.0, &[1.0]).unwrap();
        for t in [-3.0, 0.2, 5.0] {
            assert_eq!(g_map(&one, &[t], Regime::Bounded).unwrap().components[0], specfun::bounded::sigma(t));
        }
    }

    #[test]
    fn g_map_matches_dense_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..10 {
            let w = random_w(&mut rng, 5, 3);
            let tau: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
            let g = g_map(&w, &tau, Regime::Bounded).unwrap();
            // Riemann sum at 10^4 cells, with cells straddling a break split exactly.
            let n = 10_000;
            let mut pts: Vec<f64> = (0..=n).map(|j| j as f64 / n as f64).chain(w.breaks().iter().copied()).collect();
            pts.sort_by(f64::total_cmp);
            pts.dedup();
            let mut acc = [0.0; 3];
            for p in pts.windows(2) {
                let v = w.value_at(0.5 * (p[0] + p[1])).unwrap();
                let t: f64 = v.iter().zip(&tau).map(|(a, b)| a * b).sum();
                let s = specfun::bounded::sigma(t);
                for (a, vi) in acc.iter_mut().zip(v) {
                    *a += (p[1] - p[0]) * s * vi;
                }
            }
            for (gi, ai) in g.components.iter().zip(&acc) {
                assert!((gi - ai).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn unbounded_g_map_requires_cone() {
        let w = StepFunction::constant(0.0, 1.0, &[1.0]).unwrap();
        assert!(matches!(g_map(&w, &[1.0], Regime::Unbounded), Err(SolveError::InfeasiblePoint { .. })));
        assert_eq!(g_map(&w, &[-2.0], Regime::Unbounded).unwrap().components[0], 0.5);
    }

    #[test]
    fn jacobian_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w = random_w(&mut rng, 6, 3);
        let j0 = g_jacobian(&w, &[0.0; 3], Regime::Bounded).unwrap();
        let gram = gram_matrix(&w, None).unwrap();
        assert!((j0 - gram / 12.0).abs().max() < 1e-15);

        let one = StepFunction::constant(0.0, 1.0, &[1.0]).unwrap();
        let j = g_jacobian(&one, &[0.7], Regime::Bounded).unwrap();
        assert_eq!(j[(0, 0)], specfun::bounded::sigma_prime(0.7));
    }

    #[test]
    fn jacobian_matches_weighted_gram() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let w = random_w(&mut rng, 6, 2);
        let tau = [0.8, -1.3];
        let arg = stepfn::linear_combination(&w, &tau).unwrap();
        let weight = arg.map_pieces(1, |v, out| out[0] = specfun::bounded::sigma_prime(v[0]));
        let gram = gram_matrix(&w, Some(&weight)).unwrap();
        let j = g_jacobian(&w, &tau, Regime::Bounded).unwrap();
        assert!((j - gram).abs().max() < 1e-15);
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let h = 1e-6;
        for trial in 0..20 {
            let m = 1 + trial % 3;
            let w = random_w(&mut rng, 7, m);
            let tau: Vec<f64> = (0..m).map(|_| rng.random_range(-4.0..4.0)).collect();
            let j = g_jacobian(&w, &tau, Regime::Bounded).unwrap();
            for c in 0..m {
                let mut tp = tau.clone();
                let mut tm = tau.clone();
                tp[c] += h;
                tm[c] -= h;
                let gp = g_map(&w, &tp, Regime::Bounded).unwrap();
                let gm = g_map(&w, &tm, Regime::Bounded).unwrap();
                for r in 0..m {
                    let fd = (gp.components[r] - gm.components[r]) / (2.0 * h);
                    assert!((j[(r, c)] - fd).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn potential_examples() {
        let one = StepFunction::constant(0.0, 1.0, &[1.0]).unwrap();
        let half = ResponseVector::new(vec![0.5]);
        assert_eq!(potential_h(&one, &[0.0], &half, Regime::Bounded).unwrap(), 0.0);
        // h(t) = K(t) - t/2 is minimised at 0.
        for t in [-1.0, -0.1, 0.1, 1.0] {
            assert!(potential_h(&one, &[t], &half, Regime::Bounded).unwrap() > 0.0);
        }
    }

    #[test]
    fn potential_gradient_is_g_minus_y() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let h = 1e-6;
        for _ in 0..20 {
            let w = random_w(&mut rng, 5, 3);
            let y = ResponseVector::new((0..3).map(|_| rng.random_range(-0.5..0.5)).collect());
            let tau: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let d: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let shift = |s: f64| -> Vec<f64> { tau.iter().zip(&d).map(|(a, b)| a + s * b).collect() };
            let fd = (potential_h(&w, &shift(h), &y, Regime::Bounded).unwrap()
                - potential_h(&w, &shift(-h), &y, Regime::Bounded).unwrap())
                / (2.0 * h);
            let g = g_map(&w, &tau, Regime::Bounded).unwrap().sub(&y);
            let analytic: f64 = g.components.iter().zip(&d).map(|(a, b)| a * b).sum();
            assert!((fd - analytic).abs() < 1e-6);
            // Convexity along the segment.
            let h0 = potential_h(&w, &shift(0.0), &y, Regime::Bounded).unwrap();
            let hp = potential_h(&w, &shift(1.0), &y, Regime::Bounded).unwrap();
            let hm = potential_h(&w, &shift(-1.0), &y, Regime::Bounded).unwrap();
            assert!(hp + hm - 2.0 * h0 >= -1e-12);
        }
    }

    #[test]
    fn scalar_inversion() {
        let one = StepFunction::constant(0.0, 1.0, &[1.0]).unwrap();
        let y = ResponseVector::new(vec![specfun::bounded::sigma(1.7)]);
        let r = solve_saddlepoint(&one, &y, Regime::Bounded, &SolveOptions::default()).unwrap();
        assert!((r.tau0[0] - 1.7).abs() < 1e-9);
        assert!((r.estimate.values()[0] - y.components[0]).abs() < 1e-12);
    }

    #[test]
    fn white_half_gives_zero_tau() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for m in 1..=3 {
            let w = random_w(&mut rng, 8, m);
            let y = ResponseVector::new(w.integral().iter().map(|v| 0.5 * v).collect());
            let r = solve_saddlepoint(&w, &y, Regime::Bounded, &SolveOptions::default()).unwrap();
            assert!(r.tau0.iter().all(|t| t.abs() < 1e-10));
            assert!(r.estimate.values().iter().all(|v| (v - 0.5).abs() < 1e-12));
        }
    }

    #[test]
    fn two_step_matches_bisection() {
        let w = two_step();
        let y = ResponseVector::new(vec![1.0]);
        let r = solve_saddlepoint(&w, &y, Regime::Bounded, &SolveOptions::default()).unwrap();
        let oracle = bisect(-50.0, 50.0, |t| specfun::bounded::sigma(2.0 * t) + 0.5 * specfun::bounded::sigma(t) - 1.0);
        assert!((r.tau0[0] - oracle).abs() < 1e-10, "{} vs {}", r.tau0[0], oracle);
        let back = apply_operator(&w, &r.estimate).unwrap();
        assert!((back.components[0] - 1.0).abs() < 1e-12);
        assert!(r.hessian_at_solution[(0, 0)] > 0.0);
    }

    #[test]
    fn monotone_in_response() {
        let w = two_step();
        let mut last = f64::NEG_INFINITY;
        for i in 1..30 {
            let y = ResponseVector::new(vec![1.5 * i as f64 / 30.0]);
            let r = solve_saddlepoint(&w, &y, Regime::Bounded, &SolveOptions::default()).unwrap();
            assert!(r.tau0[0] > last);
            last = r.tau0[0];
        }
    }

    #[test]
    fn involution_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let w = random_w(&mut rng, 9, 3);
        let z = ZonotopeModel::from_responsivity(&w);
        let f = StepFunction::scalar(w.breaks().to_vec(), (0..9).map(|_| rng.random_range(0.1..0.9)).collect()).unwrap();
        let y = apply_operator(&w, &f).unwrap();
        let opts = SolveOptions::default();
        let a = solve_saddlepoint(&w, &y, Regime::Bounded, &opts).unwrap();
        let b = solve_saddlepoint(&w, &z.involute(&y), Regime::Bounded, &opts).unwrap();
        for (p, q) in a.tau0.iter().zip(&b.tau0) {
            assert!((p + q).abs() < 1e-8);
        }
        for (p, q) in a.estimate.values().iter().zip(b.estimate.values()) {
            assert!((p + q - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn degenerate_inputs() {
        let dup = StepFunction::new(vec![0.0, 0.5, 1.0], vec![vec![1.0, 1.0], vec![0.5, 0.5]]).unwrap();
        let y = ResponseVector::new(vec![0.3, 0.3]);
        assert!(matches!(
            solve_saddlepoint(&dup, &y, Regime::Bounded, &SolveOptions::default()),
            Err(SolveError::DependentChannels { .. })
        ));
        let w = StepFunction::new(vec![0.0, 0.5, 1.0], vec![vec![1.0, 0.2], vec![0.1, 1.0]]).unwrap();
        let white = ResponseVector::new(w.integral());
        assert!(matches!(
            solve_saddlepoint(&w, &white, Regime::Bounded, &SolveOptions::default()),
            Err(SolveError::BoundaryOrExteriorResponse)
        ));
        let outside = white.scaled(1.5);
        assert!(matches!(
            solve_saddlepoint(&w, &outside, Regime::Bounded, &SolveOptions::default()),
            Err(SolveError::BoundaryOrExteriorResponse)
        ));
    }

    #[test]
    fn exterior_detected_without_membership_test() {
        let w = StepFunction::new(vec![0.0, 0.5, 1.0], vec![vec![1.0, 0.2], vec![0.1, 1.0]]).unwrap();
        let outside = ResponseVector::new(w.integral()).scaled(1.5);
        let opts = SolveOptions { check_membership: false, ..SolveOptions::default() };
        let err = solve_saddlepoint(&w, &outside, Regime::Bounded, &opts).unwrap_err();
        assert!(matches!(err, SolveError::BoundaryOrExteriorResponse | SolveError::MaxIterations { .. }));
    }

    #[test]
    fn unbounded_scalar() {
        let one = StepFunction::constant(0.0, 1.0, &[1.0]).unwrap();
        for c in [0.2, 1.0, 7.5] {
            let r = solve_saddlepoint(&one, &ResponseVector::new(vec![c]), Regime::Unbounded, &SolveOptions::default())
                .unwrap();
            assert!((r.tau0[0] + 1.0 / c).abs() < 1e-12 * (1.0 / c));
            assert!((r.estimate.values()[0] - c).abs() < 1e-12 * c);
        }
    }

    #[test]
    fn unbounded_preconditions() {
        let w = StepFunction::new(vec![0.0, 0.5, 1.0], vec![vec![1.0, -0.2], vec![0.1, 1.0]]).unwrap();
        let y = ResponseVector::new(vec![0.3, 0.3]);
        assert!(matches!(
            solve_saddlepoint(&w, &y, Regime::Unbounded, &SolveOptions::default()),
            Err(SolveError::UnboundedConditions { piece: 0 })
        ));
        let w = StepFunction::new(vec![0.0, 0.5, 1.0], vec![vec![1.0, 0.2], vec![0.1, 1.0]]).unwrap();
        assert!(matches!(
            solve_saddlepoint(&w, &ResponseVector::new(vec![-0.1, 0.3]), Regime::Unbounded, &SolveOptions::default()),
            Err(SolveError::NegativeResponse { index: 0, .. })
        ));
        assert!(matches!(
            solve_saddlepoint(&w, &ResponseVector::new(vec![0.0, 0.0]), Regime::Unbounded, &SolveOptions::default()),
            Err(SolveError::NotEstimable { .. })
        ));
    }

    #[test]
    fn unbounded_non_surjective() {
        // w = (1,1) on [0,½), (0,1) on [½,1]. Then G = (-½/(τ1+τ2), -½/(τ1+τ2) - ½/τ2),
        // so y = (1, 3) has root (-¼, -¼) while y = (1, 1.1) has root (4.5, -5),
        // which lies outside the negative orthant.
        let w = StepFunction::new(vec![0.0, 0.5, 1.0], vec![vec![1.0, 1.0], vec![0.0, 1.0]]).unwrap();
        let r = solve_saddlepoint(&w, &ResponseVector::new(vec![1.0, 3.0]), Regime::Unbounded, &SolveOptions::default())
            .unwrap();
        assert!((r.tau0[0] + 0.25).abs() < 1e-12 && (r.tau0[1] + 0.25).abs() < 1e-12);
        let back = apply_operator(&w, &r.estimate).unwrap();
        assert!((back.components[1] - 3.0).abs() < 1e-10);
        let out = solve_saddlepoint(&w, &ResponseVector::new(vec![1.0, 1.1]), Regime::Unbounded, &SolveOptions::default());
        match out {
            Err(SolveError::NotEstimable { reason }) => assert!(reason.contains("orthant"), "{reason}"),
            other => panic!("expected NotEstimable, got {other:?}"),
        }
    }

    #[test]
    fn uniqueness_from_random_starts() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let w = random_w(&mut rng, 10, 3);
        let f = StepFunction::scalar(w.breaks().to_vec(), (0..10).map(|_| rng.random_range(0.05..0.95)).collect()).unwrap();
        let y = apply_operator(&w, &f).unwrap();
        let base = solve_saddlepoint(&w, &y, Regime::Bounded, &SolveOptions::default()).unwrap();
        for _ in 0..5 {
            let start: Vec<f64> = (0..3).map(|_| rng.random_range(-5.0..5.0)).collect();
            let opts = SolveOptions { initial_tau: Some(start), ..SolveOptions::default() };
            let r = solve_saddlepoint(&w, &y, Regime::Bounded, &opts).unwrap();
            for (a, b) in r.tau0.iter().zip(&base.tau0) {
                assert!((a - b).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn root_depends_smoothly_on_w() {
        // Small perturbations of w move τ0 by a comparably small amount.
        let w = StepFunction::new(
            vec![0.0, 0.3, 0.7, 1.0],
            vec![vec![1.0, 0.1, 0.3], vec![0.2, 1.0, 0.1], vec![0.1, 0.4, 1.0]],
        )
        .unwrap();
        let y = ResponseVector::new(vec![0.25, 0.35, 0.3]);
        let base = solve_saddlepoint(&w, &y, Regime::Bounded, &SolveOptions::default()).unwrap();
        let mut prev = f64::INFINITY;
        for eps in [1e-2, 1e-3, 1e-4] {
            let wp = w.map_pieces(3, |v, out| {
                for (o, x) in out.iter_mut().zip(v) {
                    *o = x * (1.0 + eps);
                }
            });
            let r = solve_saddlepoint(&wp, &y, Regime::Bounded, &SolveOptions::default()).unwrap();
            let d: f64 = r.tau0.iter().zip(&base.tau0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(d < prev);
            assert!(d < 100.0 * eps);
            prev = d;
        }
    }
}
