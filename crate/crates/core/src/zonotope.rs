//! The image of the unit cube under `Λ_w` as a zonotope.
//!
//! For a step function `w` with pieces `(μ_k, ω_k)`, the image of all
//! `[0,1]`-valued functions is `Z = { Σ f_k g_k : f_k ∈ [0,1] }` with
//! generators `g_k = μ_k ω_k`. Its support function is
//! `ψ_Z(u) = Σ_k max(⟨u, g_k⟩, 0)`.

use nalgebra::{DVector, Vector3};
use thiserror::Error;

use crate::stepfn::{ResponseVector, StepFunction};

/// Parallel generator pairs are skipped below this relative cross-product norm.
const PARALLEL_TOL: f64 = 1e-12;
/// Relative strictness margin for interior membership.
const MEMBERSHIP_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ZonotopeError {
    #[error("support function needs a nonzero direction")]
    ZeroDirection,
    #[error("dimension mismatch: model has {expected} channels, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("exact membership is implemented for m <= 3 (got m = {0}); rely on solver diagnostics instead")]
    UnsupportedDimension(usize),
}

#[derive(Debug, Clone)]
pub struct ZonotopeModel {
    generators: Vec<DVector<f64>>,
    white_point: DVector<f64>,
}

impl ZonotopeModel {
    pub fn from_generators(generators: Vec<DVector<f64>>) -> Self {
        let m = generators.first().map_or(0, |g| g.len());
        let white_point = generators.iter().fold(DVector::zeros(m), |acc, g| acc + g);
        Self { generators, white_point }
    }

    /// Generators `μ_k ω_k` of the image of the cube under `Λ_w`.
    pub fn from_responsivity(w: &StepFunction) -> Self {
        Self::from_generators(
            w.iter_pieces()
                .map(|(mu, v)| DVector::from_iterator(v.len(), v.iter().map(|x| mu * x)))
                .collect(),
        )
    }

    pub fn dim(&self) -> usize {
        self.white_point.len()
    }

    pub fn generators(&self) -> &[DVector<f64>] {
        &self.generators
    }

    /// `Λ_w(1) = Σ g_k`.
    pub fn white_point(&self) -> &DVector<f64> {
        &self.white_point
    }

    pub fn white_response(&self) -> ResponseVector {
        ResponseVector::new(self.white_point.iter().copied().collect())
    }

    /// `ψ_Z(u) = sup_{z ∈ Z} ⟨u, z⟩`.
    pub fn support(&self, u: &[f64]) -> Result<f64, ZonotopeError> {
        if u.len() != self.dim() {
            return Err(ZonotopeError::DimensionMismatch { expected: self.dim(), got: u.len() });
        }
        if u.iter().all(|&x| x == 0.0) {
            return Err(ZonotopeError::ZeroDirection);
        }
        Ok(self.support_unchecked(u))
    }

    fn support_unchecked(&self, u: &[f64]) -> f64 {
        self.generators
            .iter()
            .map(|g| g.iter().zip(u).map(|(a, b)| a * b).sum::<f64>().max(0.0))
            .sum()
    }

    /// Facet normals (up to sign) of the zonotope for `m <= 3`.
    fn facet_normals(&self) -> Result<Vec<DVector<f64>>, ZonotopeError> {
        let m = self.dim();
        let gens: Vec<&DVector<f64>> = self.generators.iter().filter(|g| g.norm() > 0.0).collect();
        let mut normals = Vec::new();
        match m {
            1 => normals.push(DVector::from_element(1, 1.0)),
            2 => {
                for g in &gens {
                    let n = DVector::from_vec(vec![-g[1], g[0]]);
                    normals.push(n.normalize());
                }
            }
            3 => {
                for (i, a) in gens.iter().enumerate() {
                    let a3 = Vector3::new(a[0], a[1], a[2]);
                    for b in &gens[i + 1..] {
                        let b3 = Vector3::new(b[0], b[1], b[2]);
                        let c = a3.cross(&b3);
                        if c.norm() <= PARALLEL_TOL * a3.norm() * b3.norm() {
                            continue;
                        }
                        let c = c.normalize();
                        normals.push(DVector::from_column_slice(c.as_slice()));
                    }
                }
            }
            _ => return Err(ZonotopeError::UnsupportedDimension(m)),
        }
        Ok(normals)
    }

    /// True iff `y` lies strictly inside `Z`, with margin
    /// `1e-9 · (1 + |ψ_Z(u)|)` on every facet normal `±u`.
    pub fn contains_interior(&self, y: &ResponseVector) -> Result<bool, ZonotopeError> {
        let m = self.dim();
        if y.dim() != m {
            return Err(ZonotopeError::DimensionMismatch { expected: m, got: y.dim() });
        }
        let normals = self.facet_normals()?;
        // No normals means the generators span at most a line in R^3
        // (or there are none): Z has empty interior.
        if normals.is_empty() {
            return Ok(false);
        }
        for n in &normals {
            for sign in [1.0, -1.0] {
                let u: Vec<f64> = n.iter().map(|x| sign * x).collect();
                let psi = self.support_unchecked(&u);
                let proj: f64 = u.iter().zip(&y.components).map(|(a, b)| a * b).sum();
                if proj >= psi - MEMBERSHIP_TOL * (1.0 + psi.abs()) {
                    return Ok(false);
                }
            }
        }
        Ok(true)
    }

    /// The standard involution `y ↦ Λ_w(1) - y`.
    pub fn involute(&self, y: &ResponseVector) -> ResponseVector {
        let components = self.white_point.iter().zip(&y.components).map(|(w, v)| w - v).collect();
        ResponseVector::with_labels(components, y.labels.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model(gens: &[&[f64]]) -> ZonotopeModel {
        ZonotopeModel::from_generators(gens.iter().map(|g| DVector::from_column_slice(g)).collect())
    }

    // max over all 2^N vertex sums
    fn brute_support(z: &ZonotopeModel, u: &[f64]) -> (f64, f64) {
        let n = z.generators().len();
        let (mut hi, mut lo) = (f64::NEG_INFINITY, f64::INFINITY);
        for mask in 0u32..(1 << n) {
            let mut s = 0.0;
            for (k, g) in z.generators().iter().enumerate() {
                if mask & (1 << k) != 0 {
                    s += g.iter().zip(u).map(|(a, b)| a * b).sum::<f64>();
                }
            }
            hi = hi.max(s);
            lo = lo.min(s);
        }
        (hi, lo)
    }

    #[test]
    fn one_dimensional_support() {
        let z = model(&[&[3.0]]);
        assert_eq!(z.support(&[1.0]).unwrap(), 3.0);
        assert_eq!(z.support(&[-1.0]).unwrap(), 0.0);
        // Mixed-sign responsivity with image [-2, 3].
        let w = StepFunction::scalar(vec![0.0, 0.5, 1.0], vec![6.0, -4.0]).unwrap();
        let z = ZonotopeModel::from_responsivity(&w);
        assert_eq!(z.support(&[1.0]).unwrap(), 3.0);
        assert_eq!(z.support(&[-1.0]).unwrap(), 2.0);
        assert!(matches!(z.support(&[0.0]), Err(ZonotopeError::ZeroDirection)));
    }

    #[test]
    fn support_matches_vertex_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for trial in 0..20 {
            let m = 1 + trial % 3;
            let n = 4 + trial % 12;
            let gens: Vec<DVector<f64>> =
                (0..n).map(|_| DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0))).collect();
            let z = ZonotopeModel::from_generators(gens);
            for _ in 0..5 {
                let u: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
                let (hi, lo) = brute_support(&z, &u);
                let neg: Vec<f64> = u.iter().map(|x| -x).collect();
                assert!((z.support(&u).unwrap() - hi).abs() < 1e-12);
                assert!((z.support(&neg).unwrap() + lo).abs() < 1e-12);
                let spread: f64 = z
                    .generators()
                    .iter()
                    .map(|g| g.iter().zip(&u).map(|(a, b)| a * b).sum::<f64>().abs())
                    .sum();
                assert!((z.support(&u).unwrap() + z.support(&neg).unwrap() - spread).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn membership_examples() {
        let w = StepFunction::new(
            vec![0.0, 0.3, 0.6, 1.0],
            vec![vec![1.0, 0.2, 0.0], vec![0.3, 1.0, 0.1], vec![0.0, 0.2, 1.0]],
        )
        .unwrap();
        let z = ZonotopeModel::from_responsivity(&w);
        let white = z.white_response();
        assert!(z.contains_interior(&white.scaled(0.5)).unwrap());
        assert!(!z.contains_interior(&white).unwrap());
        assert!(!z.contains_interior(&ResponseVector::new(vec![0.0; 3])).unwrap());

        let sq = model(&[&[1.0, 0.0], &[0.0, 1.0]]);
        assert!(!sq.contains_interior(&ResponseVector::new(vec![0.5, 1.0])).unwrap());
        assert!(sq.contains_interior(&ResponseVector::new(vec![0.5, 0.999])).unwrap());

        let big = model(&[&[1.0, 0.0, 0.0, 0.0]]);
        assert!(matches!(
            big.contains_interior(&ResponseVector::new(vec![0.0; 4])),
            Err(ZonotopeError::UnsupportedDimension(4))
        ));
    }

    #[test]
    fn flat_zonotopes_have_no_interior() {
        let z = model(&[&[1.0, 1.0], &[2.0, 2.0]]);
        assert!(!z.contains_interior(&ResponseVector::new(vec![1.5, 1.5])).unwrap());
        let z = model(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[1.0, 1.0, 0.0]]);
        assert!(!z.contains_interior(&ResponseVector::new(vec![1.0, 1.0, 0.0])).unwrap());
        let z = model(&[&[1.0, 1.0, 1.0], &[2.0, 2.0, 2.0]]);
        assert!(!z.contains_interior(&ResponseVector::new(vec![1.5, 1.5, 1.5])).unwrap());
    }

    #[test]
    fn involution() {
        let z = model(&[&[1.0, 0.5], &[0.2, 1.0], &[0.3, 0.3]]);
        let white = z.white_response();
        let half = white.scaled(0.5);
        assert_eq!(z.involute(&half).components, half.components);
        assert_eq!(z.involute(&ResponseVector::new(vec![0.0, 0.0])).components, white.components);
        let y = ResponseVector::new(vec![0.7, 0.4]);
        let back = z.involute(&z.involute(&y));
        for (a, b) in back.components.iter().zip(&y.components) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn membership_symmetry_and_segment_principle() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for trial in 0..30 {
            let m = 1 + trial % 3;
            let gens: Vec<DVector<f64>> =
                (0..7).map(|_| DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0))).collect();
            let z = ZonotopeModel::from_generators(gens);
            let c = z.white_response().scaled(0.5);
            for _ in 0..10 {
                let f: Vec<f64> = (0..7).map(|_| rng.random::<f64>()).collect();
                let y: Vec<f64> = (0..m)
                    .map(|i| z.generators().iter().zip(&f).map(|(g, t)| g[i] * t).sum())
                    .collect();
                let y = ResponseVector::new(y);
                let inside = z.contains_interior(&y).unwrap();
                assert_eq!(inside, z.contains_interior(&z.involute(&y)).unwrap());
                if inside {
                    for l in [0.0, 0.25, 0.5, 0.9] {
                        let p = ResponseVector::new(
                            y.components.iter().zip(&c.components).map(|(a, b)| b + l * (a - b)).collect(),
                        );
                        assert!(z.contains_interior(&p).unwrap());
                    }
                }
            }
        }
    }
}
