//! Independent ground truth for the centroid and volume formulas.
//!
//! [`hit_and_run`] samples the slice `{x ∈ [0,1]^n : W x = y}` uniformly,
//! giving an empirical centroid to compare with `σ(⟨τ0, w_{j,n}⟩)`.
//! [`irwin_hall_density`] and [`uniform_sum_density`] evaluate exact
//! densities of weighted sums of uniforms in rational arithmetic, which give
//! exact section volumes when `m = 1`.
//!
//! The sampler draws directions from a standard Gaussian projected onto the
//! null space of `W` (uniform on the unit sphere of that space), moves to a
//! uniform point of the exact feasible chord, and periodically projects back
//! onto the affine slice to remove rounding drift. Random numbers come from
//! ChaCha8, one stream per chain.

use nalgebra::{DMatrix, DVector};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::saddle::{solve_saddlepoint, SolveError, SolveOptions};
use crate::specfun::{bounded, Regime};
use crate::stepfn::{ResponseVector, StepFunction};
use crate::volume::{self, FiniteReduction, VolumeError};

/// Retained samples must satisfy `|W x - y|∞` below this.
pub const CONSTRAINT_TOL: f64 = 1e-9;
/// Chords shorter than this are discarded and a new direction is drawn.
pub const DEGENERATE_CHORD: f64 = 1e-14;
/// Upper bound on inclusion-exclusion terms for the exact densities.
pub const MAX_DENSITY_TERMS: u64 = 10_000_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("slice has no interior directions (n = {n}, m = {m})")]
    NoFreeDirections { n: usize, m: usize },
    #[error("start point is infeasible (constraint error {0:.3e})")]
    InfeasibleStart(f64),
    #[error("{0} is outside the support [0, {1}]")]
    OutOfRange(f64, f64),
    #[error("exact density needs {0} terms, more than the supported maximum")]
    TooManyTerms(u64),
    #[error("non-finite coefficient or argument")]
    NonFinite,
    #[error("exact volumes are implemented for one channel only (got {0})")]
    NotScalar(usize),
    #[error("need at least one sample")]
    NoSamples,
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

/// Finite-grid centroid: solves `Σ_j (1/n) σ(⟨τ, w_{j,n}⟩) w_{j,n} = y` and
/// returns `x_j = σ(⟨τ, w_{j,n}⟩)`, a point of `(0,1)^n` with `W x = y`.
pub fn interior_start(red: &FiniteReduction, y: &ResponseVector) -> Result<Vec<f64>, OracleError> {
    let opts = SolveOptions { tol_abs: 1e-13, tol_rel: 1e-13, ..SolveOptions::default() };
    let system = red.piece_system();
    let sol = system.solve(&y.components, Regime::Bounded, &opts)?;
    Ok(system.arguments(sol.tau.as_slice()).into_iter().map(bounded::sigma).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct HitAndRunOptions {
    /// Retained samples, summed over chains.
    pub samples: usize,
    pub seed: u64,
    /// Steps discarded at the start of each chain; default `10 n`.
    pub burn_in: Option<usize>,
    /// Steps between retained samples; default `n`.
    pub thinning: Option<usize>,
    pub chains: usize,
    /// Batches per chain for the batch-means standard errors.
    pub batches_per_chain: usize,
    /// Steps between projections back onto `W x = y`.
    pub reproject_every: usize,
}

impl Default for HitAndRunOptions {
    fn default() -> Self {
        Self {
            samples: 10_000,
            seed: 0,
            burn_in: None,
            thinning: None,
            chains: 1,
            batches_per_chain: 50,
            reproject_every: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SectionSampleStats {
    pub n: usize,
    pub m: usize,
    pub sample_count: usize,
    pub empirical_centroid: Vec<f64>,
    /// Batch-means standard errors; they ignore correlation between
    /// consecutive batches, which is small when batches are long.
    pub standard_errors: Vec<f64>,
    pub seed: u64,
    pub burn_in: usize,
    pub thinning: usize,
    pub chains: usize,
    pub constraint_violation_max: f64,
    pub degenerate_chords: u64,
}

/// Orthonormal basis `Q` of the row space of `W` together with `R`,
/// `Wᵀ = Q R`.
struct RowSpace {
    q: DMatrix<f64>,
    r: DMatrix<f64>,
}

impl RowSpace {
    fn new(w: &DMatrix<f64>) -> Self {
        let qr = w.transpose().qr();
        Self { q: qr.q(), r: qr.r() }
    }

    /// Removes the row-space component of `g`.
    fn project_null(&self, g: &mut DVector<f64>) {
        let coeffs = self.q.tr_mul(g);
        g.gemv(-1.0, &self.q, &coeffs, 1.0);
    }

    /// Minimal-norm correction making `W x = y`.
    fn project_affine(&self, w: &DMatrix<f64>, y: &DVector<f64>, x: &mut DVector<f64>) {
        let resid = w * &*x - y;
        if let Some(z) = self.r.transpose().solve_lower_triangular(&resid) {
            x.gemv(-1.0, &self.q, &z, 1.0);
        }
    }
}

struct ChainOutput {
    batch_sums: Vec<(usize, DVector<f64>)>,
    violation: f64,
    degenerate: u64,
}

#[allow(clippy::too_many_arguments)]
fn run_chain(
    w: &DMatrix<f64>,
    basis: &RowSpace,
    y: &DVector<f64>,
    start: &DVector<f64>,
    samples: usize,
    batches: usize,
    burn_in: usize,
    thinning: usize,
    reproject_every: usize,
    mut rng: ChaCha8Rng,
) -> ChainOutput {
    let n = start.len();
    let mut x = start.clone();
    let mut d = DVector::zeros(n);
    let mut degenerate = 0u64;
    let mut violation: f64 = 0.0;
    let batches = batches.clamp(1, samples.max(1));
    let mut batch_sums: Vec<(usize, DVector<f64>)> = (0..batches)
        .map(|b| (samples / batches + usize::from(b < samples % batches), DVector::zeros(n)))
        .collect();
    let mut batch = 0;
    let mut in_batch = 0;
    let total_steps = burn_in + samples * thinning;

    for step in 1..=total_steps {
        loop {
            for di in d.iter_mut() {
                *di = rng.sample(StandardNormal);
            }
            basis.project_null(&mut d);
            let norm = d.norm();
            if norm == 0.0 {
                degenerate += 1;
                continue;
            }
            d /= norm;
            let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
            for (&xi, &di) in x.iter().zip(d.iter()) {
                if di > 0.0 {
                    lo = lo.max(-xi / di);
                    hi = hi.min((1.0 - xi) / di);
                } else if di < 0.0 {
                    lo = lo.max((1.0 - xi) / di);
                    hi = hi.min(-xi / di);
                }
            }
            if !(hi - lo >= DEGENERATE_CHORD) {
                degenerate += 1;
                continue;
            }
            let t = lo + (hi - lo) * rng.random::<f64>();
            x.axpy(t, &d, 1.0);
            break;
        }
        if step % reproject_every == 0 {
            basis.project_affine(w, y, &mut x);
        }
        x.apply(|v| *v = v.clamp(0.0, 1.0));
        if step > burn_in && (step - burn_in).is_multiple_of(thinning) {
            let err = (w * &x - y).amax();
            assert!(err <= CONSTRAINT_TOL, "hit-and-run left the slice: |Wx - y| = {err:e}");
            violation = violation.max(err);
            batch_sums[batch].1 += &x;
            in_batch += 1;
            if in_batch == batch_sums[batch].0 && batch + 1 < batch_sums.len() {
                batch += 1;
                in_batch = 0;
            }
        }
    }
    ChainOutput { batch_sums, violation, degenerate }
}

/// Uniform sampling of `{x ∈ [0,1]^n : W x = y}` by hit-and-run, started at
/// the feasible point `start`. Output is deterministic given the options,
/// independent of how many threads run the chains.
pub fn hit_and_run(
    red: &FiniteReduction,
    y: &ResponseVector,
    start: &[f64],
    opts: &HitAndRunOptions,
) -> Result<SectionSampleStats, OracleError> {
    let (m, n) = red.w.shape();
    if n <= m {
        return Err(OracleError::NoFreeDirections { n, m });
    }
    if opts.samples == 0 {
        return Err(OracleError::NoSamples);
    }
    let yv = DVector::from_column_slice(&y.components);
    let x0 = DVector::from_column_slice(start);
    let start_err = (&red.w * &x0 - &yv).amax();
    if start.len() != n || start.iter().any(|v| !(0.0..=1.0).contains(v)) || !(start_err <= CONSTRAINT_TOL) {
        return Err(OracleError::InfeasibleStart(start_err));
    }
    let basis = RowSpace::new(&red.w);
    let burn_in = opts.burn_in.unwrap_or(10 * n);
    let thinning = opts.thinning.unwrap_or(n).max(1);
    let chains = opts.chains.max(1);
    let reproject_every = opts.reproject_every.max(1);

    let outputs: Vec<ChainOutput> = (0..chains)
        .into_par_iter()
        .map(|c| {
            let samples = opts.samples / chains + usize::from(c < opts.samples % chains);
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(c as u64);
            run_chain(&red.w, &basis, &yv, &x0, samples, opts.batches_per_chain, burn_in, thinning, reproject_every, rng)
        })
        .collect();

    let mut total = DVector::zeros(n);
    let mut count = 0usize;
    let mut means = Vec::new();
    let mut violation: f64 = 0.0;
    let mut degenerate = 0;
    for out in &outputs {
        violation = violation.max(out.violation);
        degenerate += out.degenerate;
        for (size, sum) in &out.batch_sums {
            if *size > 0 {
                total += sum;
                count += size;
                means.push(sum / *size as f64);
            }
        }
    }
    let centroid = total / count as f64;
    let b = means.len() as f64;
    let standard_errors = (0..n)
        .map(|j| {
            if means.len() < 2 {
                return f64::NAN;
            }
            let var = means.iter().map(|mu| (mu[j] - centroid[j]).powi(2)).sum::<f64>() / (b - 1.0);
            (var / b).sqrt()
        })
        .collect();
    Ok(SectionSampleStats {
        n,
        m,
        sample_count: count,
        empirical_centroid: centroid.iter().copied().collect(),
        standard_errors,
        seed: opts.seed,
        burn_in,
        thinning,
        chains,
        constraint_violation_max: violation,
        degenerate_chords: degenerate,
    })
}

fn rational(x: f64) -> Result<BigRational, OracleError> {
    BigRational::from_float(x).ok_or(OracleError::NonFinite)
}

fn binomial(n: u64, k: u64) -> BigInt {
    let mut acc = BigInt::one();
    for i in 0..k {
        acc = acc * (n - i) / (i + 1);
    }
    acc
}

fn factorial(n: u64) -> BigInt {
    (1..=n).fold(BigInt::one(), |acc, i| acc * i)
}

/// `z₊^p` with `0₊^0 = 0`.
fn positive_power(z: &BigRational, p: usize) -> BigRational {
    if z.is_positive() {
        num_traits::pow(z.clone(), p)
    } else {
        BigRational::zero()
    }
}

/// Exact density of `Σ c_j U_j` at `y`, for independent uniform `U_j` on
/// `[0,1]`. Coefficients equal to zero are ignored, negative ones are
/// reflected (`c U = c + |c| (1 - U)`), and equal coefficients are grouped so
/// inclusion-exclusion runs over multiplicities rather than subsets.
pub fn uniform_sum_density(coeffs: &[f64], y: f64) -> Result<f64, OracleError> {
    if coeffs.iter().any(|c| !c.is_finite()) || !y.is_finite() {
        return Err(OracleError::NonFinite);
    }
    let mut shift = BigRational::zero();
    let mut abs: Vec<BigRational> = Vec::new();
    for &c in coeffs.iter().filter(|c| **c != 0.0) {
        let r = rational(c)?;
        if r.is_negative() {
            shift += &r;
        }
        abs.push(r.abs());
    }
    if abs.is_empty() {
        return Err(OracleError::NonFinite);
    }
    abs.sort();
    let mut groups: Vec<(BigRational, u64)> = Vec::new();
    for c in abs {
        match groups.last_mut() {
            Some((g, k)) if *g == c => *k += 1,
            _ => groups.push((c, 1)),
        }
    }
    let terms = groups.iter().try_fold(1u64, |acc, (_, k)| acc.checked_mul(k + 1));
    match terms {
        Some(t) if t <= MAX_DENSITY_TERMS => {}
        t => return Err(OracleError::TooManyTerms(t.unwrap_or(u64::MAX))),
    }
    let total: u64 = groups.iter().map(|(_, k)| k).sum();
    let z = rational(y)? - shift;
    let power = (total - 1) as usize;

    // Walk every multiplicity vector (k_1, …, k_G) with 0 <= k_g <= mult_g.
    let mut counts = vec![0u64; groups.len()];
    let mut acc = BigRational::zero();
    loop {
        let mut offset = BigRational::zero();
        let mut weight = BigInt::one();
        let mut parity = 0u64;
        for ((c, mult), &k) in groups.iter().zip(&counts) {
            offset += c * BigRational::from_integer(BigInt::from(k));
            weight *= binomial(*mult, k);
            parity += k;
        }
        let term = positive_power(&(&z - offset), power) * BigRational::from_integer(weight);
        if parity.is_multiple_of(2) {
            acc += term;
        } else {
            acc -= term;
        }
        let mut g = 0;
        loop {
            if g == counts.len() {
                let mut denom = BigRational::from_integer(factorial(total - 1));
                for (c, mult) in &groups {
                    denom *= num_traits::pow(c.clone(), *mult as usize);
                }
                return Ok((acc / denom).to_f64().unwrap_or(f64::NAN).max(0.0));
            }
            if counts[g] < groups[g].1 {
                counts[g] += 1;
                break;
            }
            counts[g] = 0;
            g += 1;
        }
    }
}

/// Density of the sum of `n` independent uniforms on `[0,1]`, exact up to
/// the final rounding to `f64`. Zero outside `[0, n]`.
pub fn irwin_hall_density(n: usize, x: f64) -> f64 {
    irwin_hall_density_checked(n, x).unwrap_or(0.0)
}

/// As [`irwin_hall_density`], reporting arguments outside `[0, n]`.
pub fn irwin_hall_density_checked(n: usize, x: f64) -> Result<f64, OracleError> {
    if !(0.0..=n as f64).contains(&x) {
        return Err(OracleError::OutOfRange(x, n as f64));
    }
    uniform_sum_density(&vec![1.0; n.max(1)], x)
}

/// Exact `vol(y)` for a one-channel reduction: `‖W‖ · p_Y(y)` with
/// `Y = Σ_j W_j U_j`.
pub fn exact_section_volume_1d(red: &FiniteReduction, y: f64) -> Result<f64, OracleError> {
    if red.m() != 1 {
        return Err(OracleError::NotScalar(red.m()));
    }
    let coeffs: Vec<f64> = red.w.row(0).iter().copied().collect();
    Ok(red.exterior_norm() * uniform_sum_density(&coeffs, y)?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellComparison {
    pub cell: usize,
    pub sampled_mean: f64,
    pub standard_error: f64,
    pub predicted: f64,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CentroidReport {
    pub n: usize,
    pub tau0: Vec<f64>,
    pub cells: Vec<CellComparison>,
    pub max_abs_z: f64,
    /// `∫ |sampled - predicted|` over `[0,1]` with both as `n`-cell step functions.
    pub l1_distance: f64,
    pub stats: SectionSampleStats,
}

/// Compares the hit-and-run centroid of the `n`-grid slice with the
/// predicted `σ(⟨τ0, w_{j,n}⟩)`, `τ0` being the root of the continuum
/// saddlepoint equation.
pub fn empirical_centroid_vs_formula(
    w: &StepFunction,
    y0: &ResponseVector,
    n: usize,
    opts: &HitAndRunOptions,
) -> Result<CentroidReport, OracleError> {
    let sol = solve_saddlepoint(w, y0, Regime::Bounded, &SolveOptions::default())?;
    let red = volume::reduce(w, n)?;
    let start = interior_start(&red, y0)?;
    let stats = hit_and_run(&red, y0, &start, opts)?;
    let predicted: Vec<f64> = red.piece_system().arguments(&sol.tau0).into_iter().map(bounded::sigma).collect();
    let cells: Vec<CellComparison> = (0..n)
        .map(|j| {
            let diff = stats.empirical_centroid[j] - predicted[j];
            let se = stats.standard_errors[j];
            let z = if se > 0.0 {
                diff / se
            } else if diff == 0.0 {
                0.0
            } else {
                f64::INFINITY
            };
            CellComparison {
                cell: j,
                sampled_mean: stats.empirical_centroid[j],
                standard_error: se,
                predicted: predicted[j],
                z,
            }
        })
        .collect();
    let max_abs_z = cells.iter().map(|c| c.z.abs()).fold(0.0, f64::max);
    let l1_distance = cells.iter().map(|c| (c.sampled_mean - c.predicted).abs()).sum::<f64>() / n as f64;
    Ok(CentroidReport { n, tau0: sol.tau0, cells, max_abs_z, l1_distance, stats })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn one() -> StepFunction {
        StepFunction::constant(0.0, 1.0, &[1.0]).unwrap()
    }

    #[test]
    fn irwin_hall_examples() {
        assert_eq!(irwin_hall_density(2, 1.0), 1.0);
        assert_eq!(irwin_hall_density(3, 1.5), 0.75);
        for x in [0.1, 0.5, 0.99] {
            assert_eq!(irwin_hall_density(1, x), 1.0);
        }
        assert_eq!(irwin_hall_density(3, -0.1), 0.0);
        assert!(matches!(irwin_hall_density_checked(3, 3.5), Err(OracleError::OutOfRange(..))));
        // n = 4 at its mode: 2/3.
        assert!((irwin_hall_density(4, 2.0) - 2.0 / 3.0).abs() < 1e-16);
    }

    #[test]
    fn irwin_hall_matches_polynomial_pieces() {
        // n = 3: x²/2, (-2x² + 6x - 3)/2, (3 - x)²/2.
        for i in 0..=60 {
            let x = i as f64 * 0.05;
            let expected = if x <= 1.0 {
                x * x / 2.0
            } else if x <= 2.0 {
                (-2.0 * x * x + 6.0 * x - 3.0) / 2.0
            } else {
                (3.0 - x).powi(2) / 2.0
            };
            assert!((irwin_hall_density(3, x) - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn irwin_hall_integrates_to_one() {
        // Midpoint rule with the integers on the grid: the density is a
        // polynomial between integers with continuous derivative for n >= 3.
        let k = 2_520;
        for n in 1..=10 {
            let h = n as f64 / k as f64;
            let integral: f64 = (0..k).map(|i| irwin_hall_density(n, (i as f64 + 0.5) * h)).sum::<f64>() * h;
            assert!((integral - 1.0).abs() < 1e-8, "n={n}: {integral}");
        }
    }

    #[test]
    fn irwin_hall_scaled_mode_approaches_gaussian_limit() {
        let limit = (6.0 / std::f64::consts::PI).sqrt();
        let errors: Vec<f64> = (2..=50)
            .step_by(2)
            .map(|n| ((n as f64).sqrt() * irwin_hall_density(n, n as f64 / 2.0) - limit).abs())
            .collect();
        // n = 2 overshoots; from n = 4 on the error decreases monotonically.
        assert!(errors[0] < errors[1]);
        for pair in errors[1..].windows(2) {
            assert!(pair[1] < pair[0]);
        }
        assert!(errors[errors.len() - 1] / limit < 0.01);
    }

    #[test]
    fn uniform_sum_matches_convolution() {
        // U1 + 2 U2: density 1/2 on [1,2], linear ramps elsewhere.
        for (y, p) in [(0.5, 0.25), (1.0, 0.5), (1.5, 0.5), (2.5, 0.25), (3.5, 0.0)] {
            assert!((uniform_sum_density(&[1.0, 2.0], y).unwrap() - p).abs() < 1e-16);
        }
        // Negative coefficient: 2 U1 - U2 ranges over [-1, 2].
        assert!((uniform_sum_density(&[2.0, -1.0], 0.5).unwrap() - 0.5).abs() < 1e-16);
        assert!((uniform_sum_density(&[2.0, -1.0], -0.5).unwrap() - 0.25).abs() < 1e-16);
        assert_eq!(uniform_sum_density(&[1.0, 0.0, 1.0], 1.0).unwrap(), 1.0);
    }

    #[test]
    fn uniform_sum_matches_monte_carlo() {
        let coeffs = [0.3, 0.7, 0.7, 1.1];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (a, b) = (1.0, 1.2);
        let k = 400_000;
        let hits = (0..k)
            .filter(|_| {
                let s: f64 = coeffs.iter().map(|c| c * rng.random::<f64>()).sum();
                (a..b).contains(&s)
            })
            .count();
        let mc = hits as f64 / k as f64 / (b - a);
        // Midpoint rule on the exact density.
        let exact: f64 =
            (0..200).map(|i| uniform_sum_density(&coeffs, a + (i as f64 + 0.5) * (b - a) / 200.0).unwrap()).sum::<f64>()
                / 200.0;
        assert!((mc - exact).abs() < 0.01, "{mc} vs {exact}");
    }

    #[test]
    fn section_volume_examples() {
        let red = volume::reduce(&one(), 2).unwrap();
        assert!((exact_section_volume_1d(&red, 0.5).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        let red = volume::reduce(&one(), 50).unwrap();
        let direct = 50f64.sqrt() * irwin_hall_density(50, 25.0);
        assert!((exact_section_volume_1d(&red, 0.5).unwrap() - direct).abs() < 1e-13 * direct);
    }

    #[test]
    fn interior_start_examples() {
        let red = volume::reduce(&one(), 7).unwrap();
        let x = interior_start(&red, &ResponseVector::new(vec![0.5])).unwrap();
        assert!(x.iter().all(|v| (v - 0.5).abs() < 1e-15));

        let w = StepFunction::new(vec![0.0, 0.5, 1.0], vec![vec![2.0, 0.3], vec![1.0, 1.5]]).unwrap();
        let red = volume::reduce(&w, 8).unwrap();
        let white: Vec<f64> = w.integral().iter().map(|v| v / 2.0).collect();
        let x = interior_start(&red, &ResponseVector::new(white)).unwrap();
        assert!(x.iter().all(|v| (v - 0.5).abs() < 1e-15));

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w = StepFunction::new(
            vec![0.0, 0.3, 0.55, 1.0],
            vec![vec![1.0, 0.1, 0.4], vec![0.2, 1.0, 0.3], vec![0.1, 0.6, 1.0]],
        )
        .unwrap();
        let red = volume::reduce(&w, 20).unwrap();
        let f: Vec<f64> = (0..20).map(|_| rng.random_range(0.1..0.9)).collect();
        let y = &red.w * DVector::from_vec(f);
        let y = ResponseVector::new(y.iter().copied().collect());
        let x = interior_start(&red, &y).unwrap();
        let err = (&red.w * DVector::from_vec(x.clone()) - DVector::from_vec(y.components.clone())).amax();
        assert!(err < 1e-11);
        assert!(x.iter().all(|v| *v > 0.0 && *v < 1.0));
    }

    #[test]
    fn hit_and_run_symmetric_case() {
        let red = volume::reduce(&one(), 3).unwrap();
        let y = ResponseVector::new(vec![0.5]);
        let start = interior_start(&red, &y).unwrap();
        let opts = HitAndRunOptions { samples: 20_000, seed: 3, ..HitAndRunOptions::default() };
        let stats = hit_and_run(&red, &y, &start, &opts).unwrap();
        for (m, se) in stats.empirical_centroid.iter().zip(&stats.standard_errors) {
            assert!((m - 0.5).abs() < 3.0 * se + 1e-12, "{m} ± {se}");
        }
        assert!(stats.constraint_violation_max <= CONSTRAINT_TOL);
        assert_eq!(stats.sample_count, 20_000);
    }

    #[test]
    fn hit_and_run_is_deterministic() {
        let w = StepFunction::scalar(vec![0.0, 0.5, 1.0], vec![2.0, 1.0]).unwrap();
        let red = volume::reduce(&w, 8).unwrap();
        let y = ResponseVector::new(vec![1.0]);
        let start = interior_start(&red, &y).unwrap();
        let opts = HitAndRunOptions { samples: 2_000, seed: 11, chains: 3, ..HitAndRunOptions::default() };
        let a = hit_and_run(&red, &y, &start, &opts).unwrap();
        let b = hit_and_run(&red, &y, &start, &opts).unwrap();
        assert_eq!(a, b);
        let c = hit_and_run(&red, &y, &start, &HitAndRunOptions { seed: 12, ..opts }).unwrap();
        assert_ne!(a.empirical_centroid, c.empirical_centroid);
    }

    #[test]
    fn hit_and_run_rejects_bad_input() {
        let red = volume::reduce(&one(), 1).unwrap();
        let y = ResponseVector::new(vec![0.5]);
        assert!(matches!(
            hit_and_run(&red, &y, &[0.5], &HitAndRunOptions::default()),
            Err(OracleError::NoFreeDirections { .. })
        ));
        let red = volume::reduce(&one(), 4).unwrap();
        assert!(matches!(
            hit_and_run(&red, &y, &[0.9, 0.9, 0.9, 0.9], &HitAndRunOptions::default()),
            Err(OracleError::InfeasibleStart(_))
        ));
    }

    #[test]
    fn centroid_report_zero_tau() {
        let w = StepFunction::scalar(vec![0.0, 0.5, 1.0], vec![2.0, 1.0]).unwrap();
        let y = ResponseVector::new(vec![0.75]);
        let opts = HitAndRunOptions { samples: 20_000, seed: 1, ..HitAndRunOptions::default() };
        let report = empirical_centroid_vs_formula(&w, &y, 8, &opts).unwrap();
        assert!(report.tau0[0].abs() < 1e-12);
        assert!(report.cells.iter().all(|c| c.predicted == 0.5));
        assert!(report.max_abs_z <= 4.0, "{}", report.max_abs_z);
    }

    #[test]
    fn centroid_report_decoupled_indicators() {
        let w = StepFunction::new(vec![0.0, 0.5, 1.0], vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let y = ResponseVector::new(vec![0.15, 0.3]);
        let opts = HitAndRunOptions { samples: 20_000, seed: 4, ..HitAndRunOptions::default() };
        let report = empirical_centroid_vs_formula(&w, &y, 8, &opts).unwrap();
        // Each half solves ½ σ(τ_i) = y_i independently.
        for (t, yi) in report.tau0.iter().zip(&y.components) {
            assert!((0.5 * bounded::sigma(*t) - yi).abs() < 1e-12);
        }
        assert!(report.max_abs_z <= 4.0, "{}", report.max_abs_z);
    }
}
