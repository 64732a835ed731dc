//! Scalar special functions for the cube and orthant regimes.
//!
//! In the bounded (cube) regime the cell density is the indicator of
//! `[0,1]`, whose reflected Laplace transform gives the cumulant function
//! `K(t) = log((e^t - 1)/t)` and the squashing function
//! `σ(t) = K'(t) = (coth(t/2) - 2/t + 1)/2`. In the unbounded (orthant)
//! regime the density is the indicator of `[0,∞)`, so `K(t) = -log(-t)`
//! and `σ(t) = -1/t`, both defined only for `t < 0`.
//!
//! Near `t = 0` the closed forms cancel catastrophically, so the bounded
//! functions switch to their Bernoulli series for `|t| < SERIES_THRESHOLD`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Which cell density the centroid is taken over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    /// Functions with values in `[0,1]`; `σ` maps `R` onto `(0,1)`.
    Bounded,
    /// Nonnegative functions; `σ(t) = -1/t` on `t < 0`.
    Unbounded,
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
#[error("{function}({t}) is undefined in the unbounded regime (requires t < 0)")]
pub struct DomainError {
    pub function: &'static str,
    pub t: f64,
}

/// Below this magnitude the bounded functions use their power series.
pub const SERIES_THRESHOLD: f64 = 1.0;

/// Above this magnitude `K` switches to its asymptotic forms.
const K_ASYMPTOTIC: f64 = 30.0;

/// `B_{2n} / (2n)!` for `n = 1..=20`.
const BERNOULLI_RATIOS: [f64; 20] = [
    0.083_333_333_333_333_33,
    -0.001_388_888_888_888_889,
    0.000_033_068_783_068_783_07,
    -8.267_195_767_195_768e-7,
    2.087_675_698_786_81e-8,
    -5.284_190_138_687_493e-10,
    1.338_253_653_068_467_9e-11,
    -3.389_680_296_322_582_7e-13,
    8.586_062_056_277_845e-15,
    -2.174_868_698_558_062e-16,
    5.509_002_828_360_229_5e-18,
    -1.395_446_468_581_252_2e-19,
    3.534_707_039_629_467e-21,
    -8.953_517_427_037_546e-23,
    2.267_952_452_337_683e-24,
    -5.744_790_668_872_202e-26,
    1.455_172_475_614_865e-27,
    -3.685_994_940_665_310_3e-29,
    9.336_734_257_095_045e-31,
    -2.365_022_415_700_63e-32,
];

/// The Bernoulli ratios `B_{2n}/(2n)!` used by the series branch.
pub fn bernoulli_ratios() -> &'static [f64] {
    &BERNOULLI_RATIOS
}

impl Regime {
    pub fn sigma(self, t: f64) -> Result<f64, DomainError> {
        sigma(t, self)
    }

    pub fn sigma_prime(self, t: f64) -> Result<f64, DomainError> {
        sigma_prime(t, self)
    }

    pub fn cumulant(self, t: f64) -> Result<f64, DomainError> {
        cumulant_k(t, self)
    }

    /// True if `t` lies in the domain of `σ` and `K`.
    pub fn admits(self, t: f64) -> bool {
        match self {
            Regime::Bounded => t.is_finite(),
            Regime::Unbounded => t < 0.0,
        }
    }
}

fn check_unbounded(function: &'static str, t: f64) -> Result<(), DomainError> {
    if t < 0.0 {
        Ok(())
    } else {
        Err(DomainError { function, t })
    }
}

/// The squashing function `σ = K'`.
pub fn sigma(t: f64, regime: Regime) -> Result<f64, DomainError> {
    match regime {
        Regime::Bounded => Ok(bounded::sigma(t)),
        Regime::Unbounded => {
            check_unbounded("sigma", t)?;
            Ok(-1.0 / t)
        }
    }
}

/// `σ' = K''`, strictly positive on the domain.
pub fn sigma_prime(t: f64, regime: Regime) -> Result<f64, DomainError> {
    match regime {
        Regime::Bounded => Ok(bounded::sigma_prime(t)),
        Regime::Unbounded => {
            check_unbounded("sigma_prime", t)?;
            Ok(1.0 / (t * t))
        }
    }
}

/// The cumulant function `K(t) = log P(-t)`.
pub fn cumulant_k(t: f64, regime: Regime) -> Result<f64, DomainError> {
    match regime {
        Regime::Bounded => Ok(bounded::cumulant(t)),
        Regime::Unbounded => {
            check_unbounded("cumulant_k", t)?;
            Ok(-(-t).ln())
        }
    }
}

/// Laplace transform of the indicator of `[0,1]`: `P(s) = (1 - e^{-s})/s`.
pub fn laplace_p(s: f64) -> f64 {
    if s == 0.0 {
        1.0
    } else {
        -(-s).exp_m1() / s
    }
}

/// Laplace transform of `t·1_[0,1](t)`, equal to `-P'(s)`:
/// `(1 - (1+s)e^{-s})/s^2`. With this convention `K'(t) = P̂(-t)/P(-t)`.
pub fn laplace_phat(s: f64) -> f64 {
    if s.abs() < 1.0 {
        // Σ (-s)^k / (k! (k+2))
        let mut term = 1.0;
        let mut sum = 0.5;
        for k in 1..30 {
            term *= -s / k as f64;
            let next = term / (k as f64 + 2.0);
            sum += next;
            if next.abs() < 1e-18 * sum.abs() {
                break;
            }
        }
        sum
    } else {
        let e = (-s).exp();
        (-(-s).exp_m1() - s * e) / (s * s)
    }
}

/// Infallible bounded-regime evaluations, used in inner loops.
pub mod bounded {
    use super::{branches, K_ASYMPTOTIC, SERIES_THRESHOLD};

    #[inline]
    pub fn sigma(t: f64) -> f64 {
        if t.abs() < SERIES_THRESHOLD {
            branches::series_sigma(t)
        } else {
            branches::closed_sigma(t)
        }
    }

    #[inline]
    pub fn sigma_prime(t: f64) -> f64 {
        if t.abs() < SERIES_THRESHOLD {
            branches::series_sigma_prime(t)
        } else {
            branches::closed_sigma_prime(t)
        }
    }

    #[inline]
    pub fn cumulant(t: f64) -> f64 {
        let a = t.abs();
        if a < SERIES_THRESHOLD {
            branches::series_cumulant(t)
        } else if a <= K_ASYMPTOTIC {
            branches::closed_cumulant(t)
        } else if t > 0.0 {
            t - t.ln() + (-(-t).exp()).ln_1p()
        } else {
            -(-t).ln() + (-t.exp()).ln_1p()
        }
    }
}

/// The two evaluation routes for each bounded function, exposed so they can
/// be compared on their overlap.
pub mod branches {
    use super::BERNOULLI_RATIOS;

    /// `1/2 + Σ c_n t^{2n-1}`.
    pub fn series_sigma(t: f64) -> f64 {
        let t2 = t * t;
        let mut acc = 0.0;
        for c in BERNOULLI_RATIOS.iter().rev() {
            acc = acc * t2 + c;
        }
        0.5 + t * acc
    }

    /// `Σ (2n-1) c_n t^{2n-2}`.
    pub fn series_sigma_prime(t: f64) -> f64 {
        let t2 = t * t;
        let mut acc = 0.0;
        for (i, c) in BERNOULLI_RATIOS.iter().enumerate().rev() {
            let n = (i + 1) as f64;
            acc = acc * t2 + (2.0 * n - 1.0) * c;
        }
        acc
    }

    /// `t/2 + Σ c_n t^{2n} / (2n)`.
    pub fn series_cumulant(t: f64) -> f64 {
        let t2 = t * t;
        let mut acc = 0.0;
        for (i, c) in BERNOULLI_RATIOS.iter().enumerate().rev() {
            let n = (i + 1) as f64;
            acc = acc * t2 + c / (2.0 * n);
        }
        0.5 * t + t2 * acc
    }

    // -1/u - 1/(e^{-u} - 1) for u < 0; no cancellation on that side.
    fn lower_half(u: f64) -> f64 {
        -1.0 / u - 1.0 / (-u).exp_m1()
    }

    pub fn closed_sigma(t: f64) -> f64 {
        if t < 0.0 {
            lower_half(t)
        } else {
            1.0 - lower_half(-t)
        }
    }

    pub fn closed_sigma_prime(t: f64) -> f64 {
        let s = (0.5 * t).sinh();
        1.0 / (t * t) - 0.25 / (s * s)
    }

    pub fn closed_cumulant(t: f64) -> f64 {
        (t.exp_m1() / t).ln()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::BigRational;
    use num_traits::{One, ToPrimitive, Zero};

    // B_0..B_{2N} from the recurrence Σ_{k<m} C(m+1,k) B_k = -(m+1) B_m.
    fn bernoulli_exact(count: usize) -> Vec<BigRational> {
        let mut b: Vec<BigRational> = vec![BigRational::one()];
        for m in 1..=count {
            let mut sum = BigRational::zero();
            let mut binom = BigRational::one(); // C(m+1, 0)
            for (k, bk) in b.iter().enumerate() {
                sum += &binom * bk;
                binom = binom * BigRational::from_integer(((m + 1 - k) as i64).into())
                    / BigRational::from_integer(((k + 1) as i64).into());
            }
            b.push(-sum / BigRational::from_integer(((m + 1) as i64).into()));
        }
        b
    }

    #[test]
    fn series_coefficients_match_exact_bernoulli() {
        let b = bernoulli_exact(40);
        let mut fact = BigRational::one();
        for n in 1..=20usize {
            for k in (2 * n - 1)..=(2 * n) {
                fact *= BigRational::from_integer((k as i64).into());
            }
            let exact = (&b[2 * n] / &fact).to_f64().unwrap();
            let frozen = BERNOULLI_RATIOS[n - 1];
            assert!(((exact - frozen) / exact).abs() < 1e-15, "n={n}");
        }
    }

    #[test]
    fn spot_values() {
        assert_eq!(sigma(0.0, Regime::Bounded).unwrap(), 0.5);
        // coth(1)/2 from a 40-digit evaluation.
        assert!((sigma(2.0, Regime::Bounded).unwrap() - 0.656_517_642_749_665_6).abs() < 1e-15);
        assert_eq!(sigma(-4.0, Regime::Unbounded).unwrap(), 0.25);
        assert!((sigma_prime(0.0, Regime::Bounded).unwrap() - 1.0 / 12.0).abs() < 1e-17);
        assert_eq!(sigma_prime(-2.0, Regime::Unbounded).unwrap(), 0.25);
        assert_eq!(cumulant_k(0.0, Regime::Bounded).unwrap(), 0.0);
        assert!((cumulant_k(1.0, Regime::Bounded).unwrap() - 0.541_324_854_612_918_1).abs() < 1e-15);
        assert!((cumulant_k(-2.0, Regime::Unbounded).unwrap() + 2f64.ln()).abs() < 1e-16);
        assert_eq!(laplace_p(0.0), 1.0);
        assert_eq!(laplace_phat(0.0), 0.5);
        assert!((laplace_p(1.0) - 0.632_120_558_828_557_7).abs() < 1e-16);
    }

    #[test]
    fn unbounded_domain_errors() {
        assert!(sigma(0.0, Regime::Unbounded).is_err());
        assert!(sigma_prime(1.0, Regime::Unbounded).is_err());
        assert!(cumulant_k(3.0, Regime::Unbounded).is_err());
        let e = sigma(2.0, Regime::Unbounded).unwrap_err();
        assert_eq!(e.function, "sigma");
    }

    #[test]
    fn sigma_prime_matches_central_difference() {
        let h = 1e-6;
        for i in 0..=200 {
            let t = -20.0 + 0.2 * i as f64;
            let fd = (bounded::sigma(t + h) - bounded::sigma(t - h)) / (2.0 * h);
            assert!((bounded::sigma_prime(t) - fd).abs() < 1e-6, "t={t}");
        }
    }

    #[test]
    fn k_prime_is_phat_over_p() {
        for i in 0..=120 {
            let t = -30.0 + 0.5 * i as f64;
            let ratio = laplace_phat(-t) / laplace_p(-t);
            assert!((bounded::sigma(t) - ratio).abs() < 1e-12, "t={t}");
        }
    }

    #[test]
    fn asymptotic_k_branches_are_finite() {
        for &t in &[31.0, 100.0, 700.0, 5000.0, 1e10] {
            let k = bounded::cumulant(t);
            assert!(k.is_finite());
            let km = bounded::cumulant(-t);
            assert!(km.is_finite());
        }
        // Continuity across the asymptotic switch.
        let eps = 1e-9;
        for &t in &[K_ASYMPTOTIC, -K_ASYMPTOTIC] {
            let a = bounded::cumulant(t * (1.0 - eps));
            let b = bounded::cumulant(t * (1.0 + eps));
            assert!((a - b).abs() < 1e-7);
        }
    }

    #[test]
    fn laplace_transforms_positive() {
        for i in 0..=400 {
            let s = -50.0 + 0.25 * i as f64;
            assert!(laplace_p(s) > 0.0);
            assert!(laplace_phat(s) > 0.0);
        }
    }

    #[test]
    fn sigma_prime_bounded_by_its_value_at_zero() {
        for i in 0..=2000 {
            let t = -50.0 + 0.05 * i as f64;
            assert!(bounded::sigma_prime(t) <= 1.0 / 12.0 + 1e-17);
            assert!(bounded::sigma_prime(t) > 0.0);
        }
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn odd_symmetry(t in -700.0f64..700.0) {
                let s = bounded::sigma(t) + bounded::sigma(-t);
                prop_assert!((s - 1.0).abs() <= 2.0 * f64::EPSILON);
            }

            #[test]
            fn strictly_inside_unit_interval(t in -1e6f64..1e6) {
                let s = bounded::sigma(t);
                prop_assert!(s > 0.0 && s < 1.0);
            }

            #[test]
            fn monotone(t in -50.0f64..50.0, dt in 1e-3f64..1.0) {
                prop_assert!(bounded::sigma(t + dt) > bounded::sigma(t));
            }
        }
    }
}
