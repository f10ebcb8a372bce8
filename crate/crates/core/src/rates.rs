//! Closed-form rate predictions, contraction coefficients and error-exponent
//! target curves. All external rates are in bits per channel use.

use std::f64::consts::LN_2;

use crate::decoder::{decode, AffineMap, ComposedMap, TerminalInterval};
use crate::encoder::{CorrelationState, Schedule, Scheme};
use crate::error::{Error, Result};
use crate::fixedpoint;

#[derive(Debug, Clone, PartialEq)]
pub struct RatePrediction {
    pub scheme: &'static str,
    /// `R*_m` per user.
    pub per_user: Vec<f64>,
    pub sum_rate: f64,
    /// Kernel contraction `r_m = √L_m` on the limit cycle.
    pub contraction: Vec<f64>,
    /// Gap between `Σ R*_m` and the scheme's closed-form sum rate.
    pub identity_residual: f64,
}

fn log2(x: f64) -> f64 {
    x.ln() / LN_2
}

/// `L_n^{(m)} = 1 − (Σ_t α_t ρ^{(t,m)} √P_t)² / (Σ_t Σ_l α_t α_l ρ^{(t,l)} √(P_t P_l) + N)`.
pub fn l_coefficient(state: &CorrelationState, alpha: &[f64], powers: &[f64], noise: f64, m: usize) -> Result<f64> {
    let users = state.users();
    if alpha.len() != users || powers.len() != users {
        return Err(Error::Dimension {
            expected: users,
            actual: alpha.len(),
        });
    }
    let num: f64 = (0..users)
        .map(|t| alpha[t] * state.correlation(t, m) * powers[t].sqrt())
        .sum();
    let mut den = noise;
    for t in 0..users {
        for l in 0..users {
            den += alpha[t] * alpha[l] * state.correlation(t, l) * (powers[t] * powers[l]).sqrt();
        }
    }
    Ok(1.0 - num * num / den)
}

/// Contraction verdict for a kernel-slope sequence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Contraction {
    pub r: f64,
    pub satisfied: bool,
}

/// Contraction from a single limit value of `L`.
pub fn contraction_at(l: f64) -> Contraction {
    let r = l.max(0.0).sqrt();
    Contraction {
        r,
        satisfied: r > 0.0 && r < 1.0,
    }
}

/// `limsup` of the slopes `√L_n` evaluated over the final `period` entries,
/// which is exact once the state sequence is periodic.
pub fn contraction_condition(l_sequence: &[f64], period: usize) -> Result<Contraction> {
    if l_sequence.is_empty() || period == 0 {
        return Err(Error::Domain("empty L sequence".into()));
    }
    let start = l_sequence.len().saturating_sub(period);
    let worst = l_sequence[start..].iter().copied().fold(f64::MIN, f64::max);
    Ok(contraction_at(worst))
}

/// Two-user rates at `|ρ| = ρ*`: `R*_1 = ½ log₂(1 + P₁(1 − ρ*²))`, likewise
/// for user 2, checked against `½ log₂(1 + P₁ + P₂ + 2ρ*√(P₁P₂))`.
pub fn ozarow_rates(rho_star: f64, p1: f64, p2: f64) -> RatePrediction {
    let q = (p1 * p2).sqrt();
    let one_minus = 1.0 - rho_star * rho_star;
    let r1 = 0.5 * log2(1.0 + p1 * one_minus);
    let r2 = 0.5 * log2(1.0 + p2 * one_minus);
    let sum = 0.5 * log2(1.0 + p1 + p2 + 2.0 * rho_star * q);
    let den = p1 + p2 + 1.0 + 2.0 * rho_star * q;
    let l1 = (p2 * one_minus + 1.0) / den;
    let l2 = (p1 * one_minus + 1.0) / den;
    RatePrediction {
        scheme: "two_user",
        per_user: vec![r1, r2],
        sum_rate: r1 + r2,
        contraction: vec![l1.sqrt(), l2.sqrt()],
        identity_residual: (r1 + r2 - sum).abs(),
    }
}

/// Symmetric scheme: sum rate `½ log₂(1 + PMλ*)`, per-user
/// `−½ log₂(1 − Pλ*²/(MPλ* + 1))`.
pub fn symmetric_sum_rate(lambda_star: f64, power: f64, users: usize) -> RatePrediction {
    let m = users as f64;
    let sum = 0.5 * log2(1.0 + power * m * lambda_star);
    let l = 1.0 - power * lambda_star * lambda_star / (m * power * lambda_star + 1.0);
    let per = -0.5 * log2(l);
    RatePrediction {
        scheme: if users == 1 { "point_to_point" } else { "symmetric" },
        per_user: vec![per; users],
        sum_rate: sum,
        contraction: vec![l.sqrt(); users],
        identity_residual: (m * per - sum).abs(),
    }
}

/// Closed-form prediction on the scheme's forced limit cycle.
pub fn predict(scheme: &Scheme) -> Result<RatePrediction> {
    scheme.validate()?;
    match scheme {
        Scheme::PointToPoint { power } => Ok(symmetric_sum_rate(1.0, *power, 1)),
        Scheme::TwoUser { p1, p2, .. } => Ok(ozarow_rates(fixedpoint::ozarow_rho_star(*p1, *p2)?, *p1, *p2)),
        Scheme::Symmetric { users, power, .. } => Ok(symmetric_sum_rate(
            fixedpoint::kramer_lambda_star(*power, *users)?,
            *power,
            *users,
        )),
    }
}

/// Per-user `L_n = B_n / P_n` straight from a precomputed schedule.
pub fn schedule_l_sequence(schedule: &Schedule, user: usize) -> Vec<f64> {
    schedule
        .steps()
        .iter()
        .map(|s| s.coefficients[user].b() / s.powers[user])
        .collect()
}

/// `2^{2n(R* − R − δ)}`, the order of growth of `−log p_n(e)`.
pub fn error_exponent_target(r_star: f64, rate: f64, n: usize, delta: f64) -> Result<f64> {
    if rate >= r_star {
        return Err(Error::Domain(format!("rate {rate} must be below R* = {r_star}")));
    }
    Ok((2.0 * n as f64 * (r_star - rate - delta)).exp2())
}

/// Deterministic `−(1/n) log₂|Δ_n|` per user for a pre-image centred at the
/// origin: only the slope product enters, so no sampling is involved.
pub fn deterministic_rate(schedule: &Schedule, n: usize, target_error: f64) -> Result<Vec<f64>> {
    if n == 0 || n > schedule.horizon() {
        return Err(Error::Domain(format!("horizon {n} outside 1..={}", schedule.horizon())));
    }
    (0..schedule.users())
        .map(|u| {
            let mut t = ComposedMap::identity();
            for plan in &schedule.steps()[..n] {
                let slope = (plan.coefficients[u].b() / plan.next_powers[u]).sqrt();
                t = t.compose(&AffineMap::new(slope, 0.0)?);
            }
            let j1: TerminalInterval =
                crate::decoder::choose_terminal_interval(target_error, schedule.powers_at(n + 1)[u])?;
            let delta = decode(&t, &j1, schedule.powers_at(1)[u]);
            Ok(crate::decoder::achieved_rate(&delta, n))
        })
        .collect()
}
