//! Variable-rate decoder built on the right-composed chain of kernel maps.
//!
//! Each step contributes an increasing affine kernel `w(s) = √(B/P)·s + A·y`
//! that undoes one encoder update. Composing them as
//! `T_n = w_1 ∘ w_2 ∘ … ∘ w_n` pulls a fixed terminal interval for `X_{n+1}`
//! back to an interval for `X_1`, and `Φ(·/√P)` carries that to the message
//! interval.

use std::f64::consts::LN_2;

use crate::encoder::{Coefficients, MessagePoint};
use crate::error::{Error, Result};
use crate::numerics::{phi, q, q_tail_inv, std_normal_ln_pdf, Probability};

/// Below this normalized half-width the message-interval width is taken
/// from the mean-value form instead of a difference of CDF values.
pub const DIRECT_WIDTH_THRESHOLD: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineMap {
    slope: f64,
    intercept: f64,
}

impl AffineMap {
    pub fn new(slope: f64, intercept: f64) -> Result<Self> {
        if !(slope > 0.0 && slope.is_finite() && intercept.is_finite()) {
            return Err(Error::Domain(format!("kernel needs a positive slope, got {slope}")));
        }
        Ok(Self { slope, intercept })
    }

    pub fn slope(&self) -> f64 {
        self.slope
    }

    pub fn intercept(&self) -> f64 {
        self.intercept
    }

    #[inline]
    pub fn apply(&self, s: f64) -> f64 {
        self.slope * s + self.intercept
    }
}

/// `w(s) = √(B / P_next)·s + A·y`.
pub fn kernel_from_step(c: &Coefficients, y: f64, next_power: f64) -> AffineMap {
    AffineMap {
        slope: (c.b() / next_power).sqrt(),
        intercept: c.a() * y,
    }
}

/// Running composition `T_n`. `log_slope` is kept separately and stays exact
/// after `slope` underflows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComposedMap {
    slope: f64,
    intercept: f64,
    log_slope: f64,
    steps: usize,
}

impl Default for ComposedMap {
    fn default() -> Self {
        Self::identity()
    }
}

impl ComposedMap {
    pub fn identity() -> Self {
        Self {
            slope: 1.0,
            intercept: 0.0,
            log_slope: 0.0,
            steps: 0,
        }
    }

    /// `T'(s) = T(w(s))`: the new kernel goes innermost.
    pub fn compose(&self, w: &AffineMap) -> Self {
        Self {
            slope: self.slope * w.slope,
            intercept: self.slope * w.intercept + self.intercept,
            log_slope: self.log_slope + w.slope.ln(),
            steps: self.steps + 1,
        }
    }

    pub fn slope(&self) -> f64 {
        self.slope
    }

    pub fn intercept(&self) -> f64 {
        self.intercept
    }

    pub fn log_slope(&self) -> f64 {
        self.log_slope
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    #[inline]
    pub fn apply(&self, s: f64) -> f64 {
        self.slope * s + self.intercept
    }
}

/// Symmetric terminal interval `J₁ = (−t, t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TerminalInterval {
    half_width: f64,
}

impl TerminalInterval {
    pub fn new(half_width: f64) -> Result<Self> {
        if half_width > 0.0 && half_width.is_finite() {
            Ok(Self { half_width })
        } else {
            Err(Error::Domain(format!("terminal half-width must be positive, got {half_width}")))
        }
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn contains(&self, x: f64) -> bool {
        -self.half_width < x && x < self.half_width
    }
}

/// `t = √P · Q⁻¹(ε/2)`, so that `P(X ∉ (−t, t)) = ε` for `X ~ N(0, P)`.
pub fn choose_terminal_interval(target_error: f64, power: f64) -> Result<TerminalInterval> {
    if !(target_error > 0.0 && target_error < 1.0) {
        return Err(Error::Domain(format!("target error must lie in (0, 1), got {target_error}")));
    }
    if !(power > 0.0) {
        return Err(Error::Domain(format!("power must be positive, got {power}")));
    }
    let t = power.sqrt() * q_tail_inv(Probability::new(0.5 * target_error)?)?;
    TerminalInterval::new(t)
}

/// Decoded message interval `Δ_n`. `lo ≤ hi`; the endpoints coincide in
/// floating point once the interval is narrower than the spacing of doubles
/// near them, and `log_width` remains meaningful past that point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MessageInterval {
    pub lo: Probability,
    pub hi: Probability,
    pub log_width: f64,
}

impl MessageInterval {
    pub fn width(&self) -> f64 {
        self.log_width.exp()
    }
}

/// `Δ_n = F_{X₁}(T_n(J₁))` where `F_{X₁}(x) = Φ(x / √P₁)`.
pub fn decode(t_map: &ComposedMap, j1: &TerminalInterval, first_power: f64) -> MessageInterval {
    let scale = first_power.sqrt();
    let t = j1.half_width();
    let l = t_map.apply(-t) / scale;
    let u = t_map.apply(t) / scale;
    let lo = Probability::new(phi(l).clamp(0.0, 1.0)).expect("clamped");
    let hi = Probability::new(phi(u).clamp(0.0, 1.0)).expect("clamped");

    let ln_half = t_map.log_slope() + t.ln() - scale.ln();
    let half = ln_half.exp();
    let log_width = if half >= DIRECT_WIDTH_THRESHOLD {
        let width = if l > 0.0 { q(l) - q(u) } else { phi(u) - phi(l) };
        width.ln()
    } else {
        // ∫_{m−h}^{m+h} φ = 2h φ(m) · sinh(mh)/(mh) · (1 + O(h²))
        let mid = t_map.intercept() / scale;
        let mh = mid * half;
        let shape = if mh.abs() < 1e-8 { 0.0 } else { (mh.sinh() / mh).ln() };
        LN_2 + ln_half + std_normal_ln_pdf(mid) + shape
    };
    MessageInterval { lo, hi, log_width }
}

/// `−log₂|Δ| / n`.
pub fn achieved_rate(delta: &MessageInterval, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    -delta.log_width / (n as f64 * LN_2)
}

/// `θ ∈ Δ` on the open interval.
pub fn check_success(theta: MessagePoint, delta: &MessageInterval) -> bool {
    delta.lo.get() < theta.get() && theta.get() < delta.hi.get()
}

/// Fixed-rate reading of a variable-rate decode: succeeds when the interval
/// is no wider than `2^{−nR}`.
pub fn meets_fixed_rate(delta: &MessageInterval, n: usize, rate_bits: f64) -> bool {
    delta.log_width <= -(n as f64) * rate_bits * LN_2
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{update_symbol, EncoderSymbol};
    use crate::numerics::std_normal_cdf;

    #[test]
    fn kernel_examples() {
        let c = Coefficients::new(0.0, 0.25, 1.0).unwrap();
        let w = kernel_from_step(&c, 3.0, 1.0);
        assert_eq!(w.intercept(), 0.0);
        assert_eq!(w.slope(), 0.5);

        let c = Coefficients::new(0.5, 0.5, 1.0).unwrap();
        assert!((kernel_from_step(&c, 0.7, 1.0).slope() - 0.5f64.sqrt()).abs() < 1e-15);

        for &(x, y) in &[(0.3, 1.1), (-2.0, 0.4), (1.7, -3.3)] {
            let c = Coefficients::new(0.37, 0.61, 1.3).unwrap();
            let next = update_symbol(EncoderSymbol { x, user: 0 }, y, &c, 1.3);
            let back = kernel_from_step(&c, y, 1.3).apply(next.x);
            assert!((back - x).abs() < 1e-9);
        }
    }

    #[test]
    fn compose_examples() {
        let w = AffineMap::new(3.0, 4.0).unwrap();
        let t = ComposedMap::identity().compose(&w);
        assert_eq!((t.slope(), t.intercept()), (3.0, 4.0));

        let t = ComposedMap::identity().compose(&AffineMap::new(2.0, 1.0).unwrap()).compose(&w);
        assert_eq!((t.slope(), t.intercept()), (6.0, 9.0));

        let half = AffineMap::new(0.5, 0.0).unwrap();
        let mut t = ComposedMap::identity();
        for _ in 0..1200 {
            t = t.compose(&half);
        }
        assert!((t.log_slope() + 1200.0 * LN_2).abs() < 1e-9);
        assert_eq!(t.slope(), 0.0);
        assert_eq!(t.steps(), 1200);
        assert!(AffineMap::new(0.0, 1.0).is_err());
    }

    #[test]
    fn terminal_examples() {
        let t = choose_terminal_interval(0.317_310_507_862_914_1, 1.0).unwrap();
        assert!((t.half_width() - 1.0).abs() < 1e-12);
        let t = choose_terminal_interval(0.05, 1.0).unwrap();
        assert!((t.half_width() - 1.959_96).abs() < 1e-5);
        let t = choose_terminal_interval(0.05, 4.0).unwrap();
        assert!((t.half_width() - 3.919_93).abs() < 1e-5);
        assert!(choose_terminal_interval(0.0, 1.0).is_err());
        assert!(choose_terminal_interval(1.0, 1.0).is_err());
    }

    #[test]
    fn identity_decode() {
        let j = TerminalInterval::new(1.5).unwrap();
        let d = decode(&ComposedMap::identity(), &j, 1.0);
        assert!((d.lo.get() - std_normal_cdf(-1.5).unwrap().get()).abs() < 1e-15);
        assert!((d.hi.get() - std_normal_cdf(1.5).unwrap().get()).abs() < 1e-15);
        let expected = 1.0 - 2.0 * q(1.5);
        assert!((d.width() - expected).abs() < 1e-14);
    }

    #[test]
    fn mean_value_width_matches_direct_near_threshold() {
        let j = TerminalInterval::new(2.0).unwrap();
        for &mid in &[0.0, 0.8, -2.5] {
            // half-widths just above and below the switch
            for &half in &[1.01e-4, 0.99e-4] {
                let w = AffineMap::new(half / 2.0, mid).unwrap();
                let t = ComposedMap::identity().compose(&w);
                let d = decode(&t, &j, 1.0);
                let direct = (phi(mid + half) - phi(mid - half)).ln();
                assert!((d.log_width - direct).abs() < 1e-8, "mid {mid} half {half}");
            }
        }
    }

    #[test]
    fn log_width_decay_for_constant_slope() {
        let j = TerminalInterval::new(1.96).unwrap();
        let w = AffineMap::new(0.5f64.sqrt(), 0.0).unwrap();
        let mut t = ComposedMap::identity();
        let mut prev = decode(&t, &j, 1.0).log_width;
        for n in 1..=120 {
            t = t.compose(&w);
            let cur = decode(&t, &j, 1.0).log_width;
            assert!(cur < prev);
            if n > 40 {
                assert!((cur - prev - 0.5f64.sqrt().ln()).abs() < 1e-9);
            }
            prev = cur;
        }
        let d = decode(&t, &j, 1.0);
        let rate = achieved_rate(&d, 120);
        assert!((rate - 0.5).abs() < 0.01);
    }

    #[test]
    fn rate_and_success() {
        let d = MessageInterval {
            lo: Probability::new(0.4).unwrap(),
            hi: Probability::new(0.6).unwrap(),
            log_width: -10.0 * LN_2,
        };
        assert!((achieved_rate(&d, 10) - 1.0).abs() < 1e-15);
        assert!(check_success(MessagePoint::new(0.5).unwrap(), &d));
        assert!(!check_success(MessagePoint::new(0.4).unwrap(), &d));
        assert!(meets_fixed_rate(&d, 10, 1.0));
        assert!(!meets_fixed_rate(&d, 10, 1.01));
        let full = MessageInterval { log_width: 0.0, ..d };
        assert_eq!(achieved_rate(&full, 7), 0.0);
    }
}
