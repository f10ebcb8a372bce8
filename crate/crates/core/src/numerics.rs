//! Standard normal special functions and a guarded bisection root finder.
//!
//! The forward CDF goes through `erfc` so that both tails keep full relative
//! precision; the inverse starts from a rational approximation and is polished
//! with two Halley steps against the forward function.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use crate::error::{Error, Result};

/// A value in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Probability(f64);

impl Probability {
    pub fn new(value: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&value) {
            Ok(Self(value))
        } else {
            Err(Error::Domain(format!("probability {value} outside [0, 1]")))
        }
    }

    #[inline]
    pub fn get(self) -> f64 {
        self.0
    }
}

impl From<Probability> for f64 {
    fn from(p: Probability) -> f64 {
        p.0
    }
}

/// Search interval for [`bisect`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bracket {
    lo: f64,
    hi: f64,
    tolerance: f64,
}

impl Bracket {
    pub fn new(lo: f64, hi: f64, tolerance: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::Domain(format!("bracket requires lo < hi, got [{lo}, {hi}]")));
        }
        if !(tolerance > 0.0) {
            return Err(Error::Domain(format!("bracket tolerance must be positive, got {tolerance}")));
        }
        Ok(Self { lo, hi, tolerance })
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }
}

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal density.
#[inline]
pub fn std_normal_pdf(x: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Natural log of the standard normal density.
#[inline]
pub fn std_normal_ln_pdf(x: f64) -> f64 {
    -0.5 * x * x - 0.5 * (2.0 * PI).ln()
}

#[inline]
pub(crate) fn phi(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

#[inline]
pub(crate) fn q(x: f64) -> f64 {
    0.5 * libm::erfc(x * FRAC_1_SQRT_2)
}

/// Standard normal CDF.
pub fn std_normal_cdf(x: f64) -> Result<Probability> {
    if !x.is_finite() {
        return Err(Error::Domain(format!("normal CDF of non-finite {x}")));
    }
    Ok(Probability(phi(x)))
}

/// Upper tail `Q(x) = 1 - Φ(x)`, accurate in relative terms for large `x`.
pub fn q_tail(x: f64) -> Result<Probability> {
    if !x.is_finite() {
        return Err(Error::Domain(format!("normal tail of non-finite {x}")));
    }
    Ok(Probability(q(x)))
}

/// Inverse standard normal CDF on the open unit interval.
pub fn std_normal_inv_cdf(p: Probability) -> Result<f64> {
    let p = p.get();
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("inverse normal CDF needs 0 < p < 1, got {p}")));
    }
    Ok(inv_cdf_unchecked(p))
}

/// Inverse of [`q_tail`].
pub fn q_tail_inv(p: Probability) -> Result<f64> {
    std_normal_inv_cdf(p).map(|x| -x)
}

// Acklam's rational approximation; relative error about 1.2e-9.
const ACKLAM_A: [f64; 6] = [
    -3.969_683_028_665_376e1,
    2.209_460_984_245_205e2,
    -2.759_285_104_469_687e2,
    1.383_577_518_672_69e2,
    -3.066_479_806_614_716e1,
    2.506_628_277_459_239,
];
const ACKLAM_B: [f64; 5] = [
    -5.447_609_879_822_406e1,
    1.615_858_368_580_409e2,
    -1.556_989_798_598_866e2,
    6.680_131_188_771_972e1,
    -1.328_068_155_288_572e1,
];
const ACKLAM_C: [f64; 6] = [
    -7.784_894_002_430_293e-3,
    -3.223_964_580_411_365e-1,
    -2.400_758_277_161_838,
    -2.549_732_539_343_734,
    4.374_664_141_464_968,
    2.938_163_982_698_783,
];
const ACKLAM_D: [f64; 4] = [
    7.784_695_709_041_462e-3,
    3.224_671_290_700_398e-1,
    2.445_134_137_142_996,
    3.754_408_661_907_416,
];
const ACKLAM_P_LOW: f64 = 0.02425;

fn acklam(p: f64) -> f64 {
    let tail = |q: f64| {
        let c = &ACKLAM_C;
        let d = &ACKLAM_D;
        (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5])
            / ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0)
    };
    if p < ACKLAM_P_LOW {
        tail((-2.0 * p.ln()).sqrt())
    } else if p <= 1.0 - ACKLAM_P_LOW {
        let (a, b) = (&ACKLAM_A, &ACKLAM_B);
        let q = p - 0.5;
        let r = q * q;
        (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q
            / (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0)
    } else {
        -tail((-2.0 * (1.0 - p).ln()).sqrt())
    }
}

/// `p` must lie in (0, 1).
pub(crate) fn inv_cdf_unchecked(p: f64) -> f64 {
    if p == 0.5 {
        return 0.0;
    }
    let mut x = acklam(p);
    // For p >= 1/2 the complement 1 - p is exact, so the residual is formed
    // from upper-tail quantities and keeps its relative precision.
    let upper = p >= 0.5;
    let comp = 1.0 - p;
    for _ in 0..2 {
        let err = if upper { comp - q(x) } else { phi(x) - p };
        let u = err / std_normal_pdf(x);
        if !u.is_finite() {
            break;
        }
        x -= u / (1.0 + 0.5 * x * u);
    }
    x
}

/// Bisection on a sign-changing bracket.
///
/// Stops when the bracket is no wider than its tolerance, when an exact zero
/// is hit, or when the midpoint is no longer representable between the
/// endpoints. Returns whichever final endpoint has the smaller `|f|`.
pub fn bisect<F>(f: F, bracket: Bracket) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    let (mut lo, mut hi) = (bracket.lo, bracket.hi);
    let mut f_lo = eval(&f, lo)?;
    let mut f_hi = eval(&f, hi)?;
    if f_lo == 0.0 {
        return Ok(lo);
    }
    if f_hi == 0.0 {
        return Ok(hi);
    }
    if f_lo.signum() == f_hi.signum() {
        return Err(Error::Bracket { lo, hi, f_lo, f_hi });
    }
    while hi - lo > bracket.tolerance {
        let mid = lo + 0.5 * (hi - lo);
        if mid <= lo || mid >= hi {
            break;
        }
        let f_mid = eval(&f, mid)?;
        if f_mid == 0.0 {
            return Ok(mid);
        }
        if f_mid.signum() == f_lo.signum() {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
            f_hi = f_mid;
        }
    }
    Ok(if f_lo.abs() <= f_hi.abs() { lo } else { hi })
}

fn eval<F: Fn(f64) -> f64>(f: &F, x: f64) -> Result<f64> {
    let v = f(x);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Numeric(x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(v: f64) -> Probability {
        Probability::new(v).unwrap()
    }

    #[test]
    fn cdf_reference_points() {
        assert_eq!(std_normal_cdf(0.0).unwrap().get(), 0.5);
        // mpmath, 40 digits
        let q8 = 6.220_960_574_271_784e-16;
        let c8 = std_normal_cdf(8.0).unwrap().get();
        assert!((c8 - (1.0 - q8)).abs() <= 1e-12);
        assert!((q_tail(8.0).unwrap().get() / q8 - 1.0).abs() < 1e-13);
        let c196 = std_normal_cdf(1.96).unwrap().get();
        assert!((c196 - 0.975_002_104_851_779_6).abs() <= 1e-12);
        assert!((q_tail(1.0).unwrap().get() - 0.158_655_253_931_457_05).abs() <= 1e-12);
    }

    #[test]
    fn non_finite_inputs_are_rejected() {
        assert!(matches!(std_normal_cdf(f64::NAN), Err(Error::Domain(_))));
        assert!(matches!(std_normal_cdf(f64::INFINITY), Err(Error::Domain(_))));
        assert!(matches!(q_tail(f64::NEG_INFINITY), Err(Error::Domain(_))));
    }

    #[test]
    fn inverse_reference_points() {
        assert_eq!(std_normal_inv_cdf(p(0.5)).unwrap(), 0.0);
        let x = std_normal_inv_cdf(p(0.975_002_1)).unwrap();
        assert!((x - 1.96).abs() < 1e-6);
        // mpmath: 1.959963984540053855...
        let t = q_tail_inv(p(0.025)).unwrap();
        assert!((t - 1.959_963_984_540_054).abs() < 1e-12);
        assert!(matches!(std_normal_inv_cdf(p(0.0)), Err(Error::Domain(_))));
        assert!(matches!(std_normal_inv_cdf(p(1.0)), Err(Error::Domain(_))));
    }

    #[test]
    fn inverse_round_trips() {
        for k in -3..=3 {
            let x = k as f64;
            let back = std_normal_inv_cdf(std_normal_cdf(x).unwrap()).unwrap();
            assert!((back - x).abs() <= 1e-9, "x = {x}, back = {back}");
        }
        for &pr in &[1e-300, 1e-100, 1e-20, 1e-8, 0.01, 0.3, 0.7, 0.99, 1.0 - 1e-12] {
            let x = std_normal_inv_cdf(p(pr)).unwrap();
            assert!((phi(x) - pr).abs() <= 1e-12);
            if pr < 0.5 {
                assert!((phi(x) / pr - 1.0).abs() < 1e-13, "relative tail error at {pr}");
            }
        }
    }

    #[test]
    fn tail_bound_and_symmetry() {
        assert_eq!(q_tail(0.0).unwrap().get(), 0.5);
        assert!(q_tail(3.0).unwrap().get() <= 0.5 * (-4.5f64).exp());
        assert!(0.5 * (-4.5f64).exp() - 0.005_554 < 1e-6);
        for i in 0..=800 {
            let x = i as f64 * 0.01;
            let a = std_normal_cdf(-x).unwrap().get();
            let b = std_normal_cdf(x).unwrap().get();
            assert!((a - (1.0 - b)).abs() <= 1e-12);
        }
    }

    #[test]
    fn bisect_examples() {
        let b = Bracket::new(0.0, 1.0, 1e-12).unwrap();
        assert_eq!(bisect(|x| x - 0.25, b).unwrap(), 0.25);
        let r = bisect(|x| x * x * x - x * x - 3.0 * x + 1.0, b).unwrap();
        assert!((r - 0.311_107_817_465_981_9).abs() < 1e-11);
        let err = bisect(|x| x * x + 1.0, b).unwrap_err();
        assert!(matches!(err, Error::Bracket { .. }));
        let err = bisect(|x| if x > 0.3 { f64::NAN } else { x - 0.6 }, b).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
    }

    #[test]
    fn bracket_validation() {
        assert!(Bracket::new(1.0, 0.0, 1e-9).is_err());
        assert!(Bracket::new(0.0, 1.0, 0.0).is_err());
        assert!(Bracket::new(0.0, f64::NAN, 1e-3).is_err());
    }
}
