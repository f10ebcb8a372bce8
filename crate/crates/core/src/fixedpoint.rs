//! Fixed points of the deterministic state recursions, and the one-time
//! forcing interventions that put the state on its limit cycle.

use crate::encoder::{symmetric_lambda_step, two_user_rho_step};
use crate::error::{Error, Result};
use crate::numerics::{bisect, Bracket};

/// Number of grid cells scanned for the rightmost sign change.
pub const SCAN_POINTS: usize = 10_000;
pub const RESIDUAL_TOLERANCE: f64 = 1e-10;
const BISECT_TOLERANCE: f64 = 1e-15;
const CYCLE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoUserFixedPoint {
    pub rho_star: f64,
    pub sigma_w2: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricFixedPoint {
    pub lambda_star: f64,
    /// Target eigenvalue vector in the schedule frame; `cycle[0] = λ*`.
    pub cycle: Vec<f64>,
    /// Powers for steps `1..M`.
    pub forcing_powers: Vec<f64>,
    pub residual: f64,
}

/// Left side of the two-user fixed-point equation
/// `ρ + (ρ − √(P₁P₂)(1 − ρ²)) / √([P₂(1 − ρ²) + 1][P₁(1 − ρ²) + 1]) = 0`.
pub fn ozarow_residual(rho: f64, p1: f64, p2: f64) -> f64 {
    let one_minus = 1.0 - rho * rho;
    let den = ((p2 * one_minus + 1.0) * (p1 * one_minus + 1.0)).sqrt();
    rho + (rho - (p1 * p2).sqrt() * one_minus) / den
}

/// `(M − 1) ln(PMλ + 1) − M ln(Pλ(M − λ) + 1)`: the symmetric fixed-point
/// equation in log form, which stays representable for large `M`.
pub fn kramer_residual(lambda: f64, power: f64, users: usize) -> f64 {
    let m = users as f64;
    (m - 1.0) * (power * m * lambda).ln_1p() - m * (power * lambda * (m - lambda)).ln_1p()
}

fn rightmost_root<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, what: &str) -> Result<f64> {
    let step = (hi - lo) / SCAN_POINTS as f64;
    let at = |i: usize| if i == SCAN_POINTS { hi } else { lo + step * i as f64 };
    let mut prev = f(at(SCAN_POINTS));
    for i in (0..SCAN_POINTS).rev() {
        let cur = f(at(i));
        if cur == 0.0 {
            return Ok(at(i));
        }
        if cur.signum() != prev.signum() {
            return bisect(&f, Bracket::new(at(i), at(i + 1), BISECT_TOLERANCE)?);
        }
        prev = cur;
    }
    Err(Error::Infeasible(format!("{what}: no sign change on [{lo}, {hi}]")))
}

/// Largest root in (0, 1) of the two-user fixed-point equation.
pub fn ozarow_rho_star(p1: f64, p2: f64) -> Result<f64> {
    check_power(p1)?;
    check_power(p2)?;
    let rho = rightmost_root(|r| ozarow_residual(r, p1, p2), 0.0, 1.0, "two-user fixed point")?;
    if !(rho > 0.0 && rho < 1.0) {
        return Err(Error::Infeasible(format!("two-user fixed point {rho} not in (0, 1)")));
    }
    let residual = ozarow_residual(rho, p1, p2).abs();
    if residual > RESIDUAL_TOLERANCE {
        return Err(Error::Infeasible(format!("two-user fixed point residual {residual:e}")));
    }
    Ok(rho)
}

/// Largest root in `[1, M]` of `(PMλ + 1)^{M−1} = [Pλ(M − λ) + 1]^M`.
pub fn kramer_lambda_star(power: f64, users: usize) -> Result<f64> {
    check_power(power)?;
    if users == 0 {
        return Err(Error::Domain("number of users must be positive".into()));
    }
    if users == 1 {
        return Ok(1.0);
    }
    let lambda = rightmost_root(|l| kramer_residual(l, power, users), 1.0, users as f64, "symmetric fixed point")?;
    let residual = kramer_residual(lambda, power, users).abs();
    if residual > RESIDUAL_TOLERANCE {
        return Err(Error::Infeasible(format!("symmetric fixed point residual {residual:e}")));
    }
    Ok(lambda)
}

/// `|ρ₂|` after the first step when the feedback carries extra noise of
/// variance `sigma_w2`.
pub fn injected_rho2(sigma_w2: f64, p1: f64, p2: f64) -> f64 {
    (p1 * p2).sqrt() / ((p1 + 1.0 + sigma_w2) * (p2 + 1.0 + sigma_w2)).sqrt()
}

/// Injection variance `σ_w²` that makes `|ρ₂| = ρ_target`.
pub fn sigma_w_for_target(rho_target: f64, p1: f64, p2: f64) -> Result<f64> {
    check_power(p1)?;
    check_power(p2)?;
    let ceiling = injected_rho2(0.0, p1, p2);
    if !(rho_target > 0.0) || rho_target > ceiling * (1.0 + 1e-15) {
        return Err(Error::Infeasible(format!(
            "target |rho_2| = {rho_target} outside (0, {ceiling}]"
        )));
    }
    let h = |s: f64| injected_rho2(s, p1, p2) - rho_target;
    if h(0.0) <= RESIDUAL_TOLERANCE * 1e-3 {
        return Ok(0.0);
    }
    let mut hi = 1.0;
    while h(hi) > 0.0 {
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(Error::Infeasible("injection variance diverged".into()));
        }
    }
    let s = bisect(h, Bracket::new(0.0, hi, BISECT_TOLERANCE * hi)?)?;
    let check = two_user_rho_step(0.0, p1, p2, 1.0 + s).abs();
    if (check - rho_target).abs() > RESIDUAL_TOLERANCE {
        return Err(Error::Internal(format!("injection gives |rho_2| = {check}, wanted {rho_target}")));
    }
    Ok(s)
}

pub fn two_user_fixed_point(p1: f64, p2: f64) -> Result<TwoUserFixedPoint> {
    let rho_star = ozarow_rho_star(p1, p2)?;
    Ok(TwoUserFixedPoint {
        rho_star,
        sigma_w2: sigma_w_for_target(rho_star, p1, p2)?,
        residual: ozarow_residual(rho_star, p1, p2),
    })
}

/// Powers `P_1 … P_{M−1}` that drive the eigenvalue recursion from `R₁ = I`
/// onto its stationary vector in `M − 1` steps.
///
/// At the stationary vector every step multiplies the frame by
/// `g = (1 + MPλ*) / (1 + Pλ*(M − λ*))`, so consecutive target eigenvalues
/// differ by the factor `g`. Starting from all-ones, after `M − 1` forced
/// steps the ratio `λ^{(1)}/λ^{(n+1)}` equals `1 + M P_n μ_n`, where `μ_n` is
/// the leading eigenvalue at step `n`; solving for `P_n` gives the schedule.
pub fn forcing_powers(power: f64, users: usize) -> Result<SymmetricFixedPoint> {
    let lambda_star = kramer_lambda_star(power, users)?;
    let residual = kramer_residual(lambda_star, power, users);
    if users == 1 {
        return Ok(SymmetricFixedPoint {
            lambda_star,
            cycle: vec![1.0],
            forcing_powers: Vec::new(),
            residual,
        });
    }
    let m = users as f64;
    let g = (1.0 + m * power * lambda_star) / (1.0 + power * lambda_star * (m - lambda_star));
    let mut cycle = vec![lambda_star];
    for k in 1..users {
        cycle.push(cycle[k - 1] / g);
    }

    let mut mu = 1.0;
    let mut forced = Vec::with_capacity(users - 1);
    let mut printed = Vec::with_capacity(users - 1);
    for n in 1..users {
        let ratio = cycle[0] / cycle[n];
        let p_n = (ratio - 1.0) / (m * mu);
        printed.push((ratio - 1.0) / mu);
        forced.push(p_n);
        mu *= (1.0 + m * p_n * mu) / (1.0 + p_n * mu * (m - mu));
    }
    if forced.iter().any(|p| !(*p >= 0.0)) {
        return Err(Error::Normalization(format!(
            "negative forcing power: canonical {forced:?}, alternate {printed:?}"
        )));
    }

    // Confirm by direct iteration rather than trusting the algebra.
    let mut lambda = vec![1.0; users];
    for &p_n in &forced {
        lambda = symmetric_lambda_step(&lambda, p_n, 1.0);
    }
    let reached = max_relative_gap(&lambda, &cycle);
    let mut looped = cycle.clone();
    for _ in 0..users {
        looped = symmetric_lambda_step(&looped, power, 1.0);
    }
    let drift = max_relative_gap(&looped, &cycle);
    if reached > CYCLE_TOLERANCE || drift > CYCLE_TOLERANCE {
        return Err(Error::Normalization(format!(
            "forced state misses the stationary vector (reach gap {reached:e}, drift {drift:e}); \
             canonical {forced:?}, alternate {printed:?}"
        )));
    }
    Ok(SymmetricFixedPoint {
        lambda_star,
        cycle,
        forcing_powers: forced,
        residual,
    })
}

fn max_relative_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / y.abs().max(1.0))
        .fold(0.0, f64::max)
}

fn check_power(p: f64) -> Result<()> {
    if p.is_finite() && p > 0.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("power must be positive, got {p}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Plain bisection on ρ³ − ρ² − 3ρ + 1, the P₁ = P₂ = 1 reduction.
    fn cubic_oracle() -> f64 {
        let f = |r: f64| r * r * r - r * r - 3.0 * r + 1.0;
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn rho_star_unit_power() {
        let rho = ozarow_rho_star(1.0, 1.0).unwrap();
        assert!((rho - cubic_oracle()).abs() < 1e-12);
        assert!((rho - 0.311_10).abs() < 1e-4);
        assert!(ozarow_residual(rho, 1.0, 1.0).abs() <= RESIDUAL_TOLERANCE);
    }

    #[test]
    fn rho_star_increases_with_power() {
        let vals: Vec<f64> = [0.5, 1.0, 2.0, 4.0].iter().map(|&p| ozarow_rho_star(p, p).unwrap()).collect();
        assert!(vals.windows(2).all(|w| w[0] < w[1]), "{vals:?}");
    }

    #[test]
    fn lambda_star_values() {
        assert_eq!(kramer_lambda_star(1.0, 1).unwrap(), 1.0);
        let l2 = kramer_lambda_star(1.0, 2).unwrap();
        assert!((l2 - 1.311_10).abs() < 1e-4);
        assert!((l2 - (1.0 + ozarow_rho_star(1.0, 1.0).unwrap())).abs() < 1e-9);
        // mpmath: 1.879149320307161956...
        let l4 = kramer_lambda_star(1.0, 4).unwrap();
        assert!((l4 - 1.879_149_320_307_162).abs() < 1e-10);
        for &m in &[2, 4, 8, 16, 64] {
            for &p in &[0.1, 0.5, 1.0, 4.0, 20.0] {
                let l = kramer_lambda_star(p, m).unwrap();
                assert!((1.0..=m as f64).contains(&l));
                assert!(kramer_residual(l, p, m).abs() <= RESIDUAL_TOLERANCE);
            }
        }
    }

    #[test]
    fn sigma_w_examples() {
        assert_eq!(sigma_w_for_target(0.5, 1.0, 1.0).unwrap(), 0.0);
        let rho = ozarow_rho_star(1.0, 1.0).unwrap();
        let s = sigma_w_for_target(rho, 1.0, 1.0).unwrap();
        // 1/(2 + s) = ρ*  ⇒  s = 1/ρ* − 2
        assert!((s - (1.0 / rho - 2.0)).abs() < 1e-12);
        assert!((s - 1.2144).abs() < 1e-4);
        assert!((two_user_rho_step(0.0, 1.0, 1.0, 1.0 + s) + rho).abs() < 1e-10);
        assert!(matches!(sigma_w_for_target(0.6, 1.0, 1.0), Err(Error::Infeasible(_))));
        assert!(matches!(sigma_w_for_target(0.0, 1.0, 1.0), Err(Error::Infeasible(_))));
    }

    #[test]
    fn asymmetric_sigma_w() {
        for &(p1, p2) in &[(1.0, 4.0), (2.0, 3.0), (10.0, 0.5)] {
            let fp = two_user_fixed_point(p1, p2).unwrap();
            assert!(fp.residual.abs() <= RESIDUAL_TOLERANCE);
            let rho2 = two_user_rho_step(0.0, p1, p2, 1.0 + fp.sigma_w2);
            assert!((rho2.abs() - fp.rho_star).abs() < 1e-10);
            let rho3 = two_user_rho_step(rho2, p1, p2, 1.0);
            assert!((rho3 + rho2).abs() < 1e-10);
        }
    }

    #[test]
    fn forcing_examples() {
        let one = forcing_powers(1.0, 1).unwrap();
        assert!(one.forcing_powers.is_empty());
        assert_eq!(one.lambda_star, 1.0);

        let two = forcing_powers(1.0, 2).unwrap();
        let rho = ozarow_rho_star(1.0, 1.0).unwrap();
        assert!((two.cycle[0] - (1.0 + rho)).abs() < 1e-9);
        assert!((two.cycle[1] - (1.0 - rho)).abs() < 1e-9);

        for &m in &[4, 8, 12, 16] {
            for &p in &[0.5, 1.0, 4.0] {
                let fp = forcing_powers(p, m).unwrap();
                assert_eq!(fp.forcing_powers.len(), m - 1);
                assert!(fp.forcing_powers.iter().all(|&q| q >= 0.0));
                let mut lam = fp.cycle.clone();
                for _ in 0..m {
                    lam = symmetric_lambda_step(&lam, p, 1.0);
                }
                for (a, b) in lam.iter().zip(&fp.cycle) {
                    assert!((a - b).abs() <= 1e-9);
                }
                assert!((fp.cycle.iter().sum::<f64>() - m as f64).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn invalid_powers() {
        assert!(ozarow_rho_star(0.0, 1.0).is_err());
        assert!(kramer_lambda_star(-1.0, 4).is_err());
        assert!(kramer_lambda_star(1.0, 0).is_err());
    }
}
