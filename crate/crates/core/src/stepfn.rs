//! Piecewise-constant vector-valued functions on a closed interval.
//!
//! A [`StepFunction`] with `N` pieces and `m` channels takes the value
//! `values[k]` on the half-open cell `[λ_k, λ_{k+1})` (the last cell is
//! closed). Every integral needed by the solver is then a finite sum
//! `Σ μ_k · value_k` with `μ_k = λ_{k+1} - λ_k`, computed exactly up to
//! floating-point rounding.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::specfun::{DomainError, Regime};

/// Breakpoints closer than this fraction of the domain length are merged.
const MERGE_TOL: f64 = 1e-12;

/// Channels are declared dependent when the smallest Gram eigenvalue falls
/// below this fraction of the mean eigenvalue.
pub const DEPENDENCE_THRESHOLD: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StepError {
    #[error("a step function needs at least two breakpoints, got {0}")]
    TooFewBreakpoints(usize),
    #[error("breakpoints must be strictly increasing (index {index}: {prev} >= {next})")]
    NotIncreasing { index: usize, prev: f64, next: f64 },
    #[error("expected {expected} values, got {got}")]
    ValueCount { expected: usize, got: usize },
    #[error("non-finite value in piece {piece}")]
    NonFinite { piece: usize },
    #[error("channel count mismatch: expected {expected}, got {got}")]
    ChannelMismatch { expected: usize, got: usize },
    #[error("domains differ: [{}, {}] vs [{}, {}]", .left.0, .left.1, .right.0, .right.1)]
    DomainMismatch { left: (f64, f64), right: (f64, f64) },
    #[error("operation requires the domain [0, 1], got [{0}, {1}]")]
    NotUnitInterval(f64, f64),
    #[error("grid size must be positive")]
    ZeroGrid,
    #[error("expected a single-channel function, got {0} channels")]
    ExpectedScalar(usize),
    #[error("weight must be nonnegative (piece {piece} has {value})")]
    NegativeWeight { piece: usize, value: f64 },
    #[error(transparent)]
    Domain(#[from] DomainError),
}

/// A piecewise-constant map `[a,b] -> R^m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepFunction {
    breaks: Vec<f64>,
    values: Vec<f64>,
    channels: usize,
    labels: Vec<String>,
}

/// A point of `R^m` with channel labels: the right-hand side of `Λ_w f = y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseVector {
    pub components: Vec<f64>,
    pub labels: Vec<String>,
}

fn default_labels(m: usize) -> Vec<String> {
    (1..=m).map(|i| format!("w{i}")).collect()
}

impl ResponseVector {
    pub fn new(components: Vec<f64>) -> Self {
        let labels = default_labels(components.len());
        Self { components, labels }
    }

    pub fn with_labels(components: Vec<f64>, labels: Vec<String>) -> Self {
        debug_assert_eq!(components.len(), labels.len());
        Self { components, labels }
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn norm_inf(&self) -> f64 {
        self.components.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            components: self.components.iter().map(|v| v * k).collect(),
            labels: self.labels.clone(),
        }
    }

    /// Componentwise `self - other`.
    pub fn sub(&self, other: &ResponseVector) -> Self {
        Self {
            components: self
                .components
                .iter()
                .zip(&other.components)
                .map(|(a, b)| a - b)
                .collect(),
            labels: self.labels.clone(),
        }
    }
}

impl StepFunction {
    /// Builds a step function from `N+1` breakpoints and `N` rows of `m` values.
    pub fn new(breaks: Vec<f64>, rows: Vec<Vec<f64>>) -> Result<Self, StepError> {
        let m = rows.first().map(|r| r.len()).unwrap_or(0);
        if let Some((_, bad)) = rows.iter().enumerate().find(|(_, r)| r.len() != m) {
            return Err(StepError::ChannelMismatch { expected: m, got: bad.len() });
        }
        let values = rows.into_iter().flatten().collect();
        Self::from_flat(breaks, values, m)
    }

    /// Builds from row-major values (`values[k*m + i]` is channel `i` on piece `k`).
    pub fn from_flat(breaks: Vec<f64>, values: Vec<f64>, channels: usize) -> Result<Self, StepError> {
        if breaks.len() < 2 {
            return Err(StepError::TooFewBreakpoints(breaks.len()));
        }
        for (i, pair) in breaks.windows(2).enumerate() {
            if !(pair[1] > pair[0]) || !pair[0].is_finite() || !pair[1].is_finite() {
                return Err(StepError::NotIncreasing { index: i + 1, prev: pair[0], next: pair[1] });
            }
        }
        let pieces = breaks.len() - 1;
        if channels == 0 || values.len() != pieces * channels {
            return Err(StepError::ValueCount { expected: pieces * channels.max(1), got: values.len() });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(StepError::NonFinite { piece: i / channels });
        }
        Ok(Self { breaks, values, channels, labels: default_labels(channels) })
    }

    /// A single-channel step function.
    pub fn scalar(breaks: Vec<f64>, values: Vec<f64>) -> Result<Self, StepError> {
        Self::from_flat(breaks, values, 1)
    }

    /// The constant function `value` on `[a,b]`.
    pub fn constant(a: f64, b: f64, value: &[f64]) -> Result<Self, StepError> {
        Self::from_flat(vec![a, b], value.to_vec(), value.len())
    }

    /// `n` equal cells on `[a,b]` with the given row-major values.
    pub fn uniform(a: f64, b: f64, values: Vec<f64>, channels: usize) -> Result<Self, StepError> {
        if channels == 0 || !values.len().is_multiple_of(channels) || values.is_empty() {
            return Err(StepError::ValueCount { expected: channels, got: values.len() });
        }
        let n = values.len() / channels;
        Self::from_flat(uniform_breaks(a, b, n), values, channels)
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self, StepError> {
        if labels.len() != self.channels {
            return Err(StepError::ChannelMismatch { expected: self.channels, got: labels.len() });
        }
        self.labels = labels;
        Ok(self)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.breaks[0], self.breaks[self.breaks.len() - 1])
    }

    pub fn breaks(&self) -> &[f64] {
        &self.breaks
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn pieces(&self) -> usize {
        self.breaks.len() - 1
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Value vector on piece `k`.
    pub fn piece(&self, k: usize) -> &[f64] {
        &self.values[k * self.channels..(k + 1) * self.channels]
    }

    /// Width `μ_k` of piece `k`.
    pub fn width(&self, k: usize) -> f64 {
        self.breaks[k + 1] - self.breaks[k]
    }

    /// Iterates `(μ_k, value_k)` over pieces.
    pub fn iter_pieces(&self) -> impl Iterator<Item = (f64, &[f64])> + '_ {
        self.breaks
            .windows(2)
            .zip(self.values.chunks_exact(self.channels))
            .map(|(b, v)| (b[1] - b[0], v))
    }

    /// Index of the cell containing `x` under the half-open convention, or
    /// `None` outside the domain.
    pub fn locate(&self, x: f64) -> Option<usize> {
        let (a, b) = self.domain();
        if !(x >= a && x <= b) {
            return None;
        }
        if x == b {
            return Some(self.pieces() - 1);
        }
        // Last breakpoint <= x.
        let idx = self.breaks.partition_point(|&bp| bp <= x);
        Some(idx - 1)
    }

    /// Pointwise value; `None` outside the domain.
    pub fn value_at(&self, x: f64) -> Option<&[f64]> {
        self.locate(x).map(|k| self.piece(k))
    }

    /// Channel `i` as its own single-channel function.
    pub fn channel(&self, i: usize) -> StepFunction {
        let values = self.values.chunks_exact(self.channels).map(|v| v[i]).collect();
        StepFunction {
            breaks: self.breaks.clone(),
            values,
            channels: 1,
            labels: vec![self.labels[i].clone()],
        }
    }

    /// `∫ w_i` for every channel.
    pub fn integral(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.channels];
        for (mu, v) in self.iter_pieces() {
            for (o, x) in out.iter_mut().zip(v) {
                *o += mu * x;
            }
        }
        out
    }

    /// Applies `f` to every piece value vector, producing `out_channels` values.
    pub fn map_pieces<F>(&self, out_channels: usize, mut f: F) -> StepFunction
    where
        F: FnMut(&[f64], &mut [f64]),
    {
        let mut values = vec![0.0; self.pieces() * out_channels];
        for (v, out) in self.values.chunks_exact(self.channels).zip(values.chunks_exact_mut(out_channels)) {
            f(v, out);
        }
        StepFunction {
            breaks: self.breaks.clone(),
            values,
            channels: out_channels,
            labels: default_labels(out_channels),
        }
    }

    pub fn scale(&self, k: f64) -> StepFunction {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= k);
        out
    }

    /// Same breakpoints, new values; used to express results over an
    /// existing grid.
    pub(crate) fn with_values(&self, values: Vec<f64>, channels: usize) -> StepFunction {
        debug_assert_eq!(values.len(), self.pieces() * channels);
        StepFunction {
            breaks: self.breaks.clone(),
            values,
            channels,
            labels: default_labels(channels),
        }
    }

    /// Maximum of `|self - other|` over the common refinement.
    pub fn sup_distance(&self, other: &StepFunction) -> Result<f64, StepError> {
        check_same_shape(self, other)?;
        let mut d: f64 = 0.0;
        for (_, ku, kv) in overlay(self, other)? {
            for (a, b) in self.piece(ku).iter().zip(other.piece(kv)) {
                d = d.max((a - b).abs());
            }
        }
        Ok(d)
    }

    /// `∫ |self - other|` summed over channels.
    pub fn l1_distance(&self, other: &StepFunction) -> Result<f64, StepError> {
        check_same_shape(self, other)?;
        let mut d = 0.0;
        for (mu, ku, kv) in overlay(self, other)? {
            for (a, b) in self.piece(ku).iter().zip(other.piece(kv)) {
                d += mu * (a - b).abs();
            }
        }
        Ok(d)
    }
}

fn check_same_shape(u: &StepFunction, v: &StepFunction) -> Result<(), StepError> {
    if u.channels != v.channels {
        return Err(StepError::ChannelMismatch { expected: u.channels, got: v.channels });
    }
    Ok(())
}

/// Neumaier-compensated sum.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(xs: I) -> f64 {
    let (mut sum, mut c) = (0.0f64, 0.0f64);
    for x in xs {
        let t = sum + x;
        c += if sum.abs() >= x.abs() { (sum - t) + x } else { (x - t) + sum };
        sum = t;
    }
    sum + c
}

pub(crate) fn uniform_breaks(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..=n)
        .map(|j| if j == n { b } else { a + (b - a) * (j as f64) / (n as f64) })
        .collect()
}

fn check_domains(u: &StepFunction, v: &StepFunction) -> Result<f64, StepError> {
    let (a1, b1) = u.domain();
    let (a2, b2) = v.domain();
    let tol = MERGE_TOL * (b1 - a1).abs().max(b2 - a2);
    if (a1 - a2).abs() > tol || (b1 - b2).abs() > tol {
        return Err(StepError::DomainMismatch { left: (a1, b1), right: (a2, b2) });
    }
    Ok(tol)
}

/// Cells of the common refinement of `u` and `v` as
/// `(width, piece of u, piece of v)`, in order.
fn overlay(u: &StepFunction, v: &StepFunction) -> Result<Vec<(f64, usize, usize)>, StepError> {
    let tol = check_domains(u, v)?;
    let (ub, vb) = (&u.breaks, &v.breaks);
    let mut out = Vec::with_capacity(ub.len() + vb.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut left = ub[0];
    let nu = u.pieces();
    let nv = v.pieces();
    while i < nu && j < nv {
        let ru = ub[i + 1];
        let rv = vb[j + 1];
        let right = ru.min(rv);
        if right - left > tol || (i == nu - 1 && j == nv - 1) {
            let right = if i == nu - 1 && j == nv - 1 { ru } else { right };
            out.push((right - left, i, j));
            left = right;
        }
        // Advance whichever piece ends here; both if their ends coincide.
        if (ru - rv).abs() <= tol {
            i += 1;
            j += 1;
        } else if ru < rv {
            i += 1;
        } else {
            j += 1;
        }
    }
    Ok(out)
}

/// `Λ_w f = ∫ f(x) w(x) dx` for a single-channel `f`.
pub fn apply_operator(w: &StepFunction, f: &StepFunction) -> Result<ResponseVector, StepError> {
    if f.channels != 1 {
        return Err(StepError::ExpectedScalar(f.channels));
    }
    let mut out = vec![0.0; w.channels];
    for (mu, kw, kf) in overlay(w, f)? {
        let fv = mu * f.values[kf];
        for (o, x) in out.iter_mut().zip(w.piece(kw)) {
            *o += fv * x;
        }
    }
    Ok(ResponseVector::with_labels(out, w.labels.clone()))
}

/// Both functions re-expressed on the union of their breakpoints.
pub fn common_refinement(
    u: &StepFunction,
    v: &StepFunction,
) -> Result<(StepFunction, StepFunction), StepError> {
    let cells = overlay(u, v)?;
    let mut breaks = Vec::with_capacity(cells.len() + 1);
    let mut x = u.breaks[0];
    breaks.push(x);
    let mut uv = Vec::with_capacity(cells.len() * u.channels);
    let mut vv = Vec::with_capacity(cells.len() * v.channels);
    for (k, &(mu, ku, kv)) in cells.iter().enumerate() {
        x = if k + 1 == cells.len() { u.domain().1 } else { x + mu };
        breaks.push(x);
        uv.extend_from_slice(u.piece(ku));
        vv.extend_from_slice(v.piece(kv));
    }
    let mut ur = StepFunction::from_flat(breaks.clone(), uv, u.channels)?;
    let mut vr = StepFunction::from_flat(breaks, vv, v.channels)?;
    ur.labels = u.labels.clone();
    vr.labels = v.labels.clone();
    Ok((ur, vr))
}

/// `G_ij = ∫ weight · w_i w_j`, with `weight ≡ 1` when absent.
pub fn gram_matrix(w: &StepFunction, weight: Option<&StepFunction>) -> Result<DMatrix<f64>, StepError> {
    let m = w.channels;
    let mut g = DMatrix::zeros(m, m);
    let mut accumulate = |scale: f64, v: &[f64]| {
        for i in 0..m {
            for j in 0..=i {
                g[(i, j)] += scale * v[i] * v[j];
            }
        }
    };
    match weight {
        None => w.iter_pieces().for_each(|(mu, v)| accumulate(mu, v)),
        Some(rho) => {
            if rho.channels != 1 {
                return Err(StepError::ExpectedScalar(rho.channels));
            }
            if let Some(k) = rho.values.iter().position(|&r| r < 0.0) {
                return Err(StepError::NegativeWeight { piece: k, value: rho.values[k] });
            }
            for (mu, kw, kr) in overlay(w, rho)? {
                accumulate(mu * rho.values[kr], w.piece(kw));
            }
        }
    }
    for i in 0..m {
        for j in 0..i {
            g[(j, i)] = g[(i, j)];
        }
    }
    Ok(g)
}

/// Smallest eigenvalue of a symmetric matrix divided by its mean eigenvalue.
/// Zero for an all-zero matrix.
pub fn independence_margin(gram: &DMatrix<f64>) -> f64 {
    let m = gram.nrows();
    let trace = gram.trace();
    if m == 0 || !(trace > 0.0) {
        return 0.0;
    }
    let min = SymmetricEigen::new(gram.clone()).eigenvalues.min();
    min / (trace / m as f64)
}

/// Linear-independence test on the channels of `w` (optionally weighted).
pub fn channels_independent(gram: &DMatrix<f64>) -> bool {
    independence_margin(gram) >= DEPENDENCE_THRESHOLD
}

/// Cell averages on the uniform `n`-grid of `[0,1]`: piece `j` holds
/// `n ∫_{I_j} f`.
pub fn project_pn(f: &StepFunction, n: usize) -> Result<StepFunction, StepError> {
    if n == 0 {
        return Err(StepError::ZeroGrid);
    }
    let (a, b) = f.domain();
    let tol = MERGE_TOL;
    if (a - 0.0).abs() > tol || (b - 1.0).abs() > tol {
        return Err(StepError::NotUnitInterval(a, b));
    }
    let integrals = cell_integrals(f, n)?;
    let nf = n as f64;
    let values = integrals.into_iter().map(|x| x * nf).collect();
    let mut out = StepFunction::from_flat(uniform_breaks(0.0, 1.0, n), values, f.channels)?;
    out.labels = f.labels.clone();
    Ok(out)
}

/// `∫_{I_j} f` over the `n` equal cells of the domain of `f`, row-major.
pub fn cell_integrals(f: &StepFunction, n: usize) -> Result<Vec<f64>, StepError> {
    if n == 0 {
        return Err(StepError::ZeroGrid);
    }
    let (a, b) = f.domain();
    let grid = StepFunction::from_flat(uniform_breaks(a, b, n), vec![0.0; n], 1)?;
    let mut out = vec![0.0; n * f.channels];
    for (mu, kf, kg) in overlay(f, &grid)? {
        for (o, x) in out[kg * f.channels..(kg + 1) * f.channels].iter_mut().zip(f.piece(kf)) {
            *o += mu * x;
        }
    }
    Ok(out)
}

/// `⟨t, w⟩` as a single-channel function.
pub fn linear_combination(w: &StepFunction, t: &[f64]) -> Result<StepFunction, StepError> {
    if t.len() != w.channels {
        return Err(StepError::ChannelMismatch { expected: w.channels, got: t.len() });
    }
    Ok(w.map_pieces(1, |v, out| {
        out[0] = v.iter().zip(t).map(|(a, b)| a * b).sum();
    }))
}

/// `σ ∘ f` for a single-channel `f`.
pub fn squash(f: &StepFunction, regime: Regime) -> Result<StepFunction, StepError> {
    if f.channels != 1 {
        return Err(StepError::ExpectedScalar(f.channels));
    }
    let values = f
        .values
        .iter()
        .map(|&v| regime.sigma(v))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(f.with_values(values, 1))
}
