//! Time-varying posterior matching encoders.
//!
//! Every transmitter keeps its symbol marginally `N(0, P)`. At each step the
//! posterior of `X_n` given `Y_n` is Gaussian with mean `A_n Y_n` and variance
//! `B_n`, and the next symbol is that posterior residual rescaled back to the
//! input law. The normalized covariance of the symbols evolves independently
//! of the messages and the noise, so the whole coefficient schedule can be
//! computed up front ([`Schedule`]).

use crate::channel::PowerProfile;
use crate::error::{Error, Result};
use crate::fixedpoint;
use crate::hadamard::{self, HadamardMatrix};
use crate::numerics::inv_cdf_unchecked;

/// Tolerance for unit-diagonal and eigenvector checks on the correlation state.
pub const STATE_TOLERANCE: f64 = 1e-9;

/// Message point `θ ∈ (0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct MessagePoint(f64);

impl MessagePoint {
    pub fn new(theta: f64) -> Result<Self> {
        if theta > 0.0 && theta < 1.0 {
            Ok(Self(theta))
        } else {
            Err(Error::Domain(format!("message point must lie in (0, 1), got {theta}")))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

/// Per-step MMSE pair: `E[X | Y] = a·Y`, `var(X | Y) = b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coefficients {
    a: f64,
    b: f64,
}

impl Coefficients {
    /// From `cov(X, Y)`, `var(Y)` and `var(X) = power`.
    pub fn from_moments(cov_xy: f64, var_y: f64, power: f64) -> Result<Self> {
        if !(var_y > 0.0) {
            return Err(Error::Internal(format!("output variance {var_y} is not positive")));
        }
        let a = cov_xy / var_y;
        let b = power - cov_xy * cov_xy / var_y;
        let c = Self::new(a, b, power)?;
        let check = power * (1.0 - a * cov_xy / power);
        if (check - b).abs() > 1e-12 * power.max(1.0) {
            return Err(Error::Internal(format!("inconsistent coefficients: B = {b}, P(1 - A cov/P) = {check}")));
        }
        Ok(c)
    }

    pub fn new(a: f64, b: f64, power: f64) -> Result<Self> {
        if !(a.is_finite() && b > 0.0 && b <= power * (1.0 + 1e-12)) {
            return Err(Error::Internal(format!(
                "coefficients out of range: A = {a}, B = {b}, P = {power}"
            )));
        }
        Ok(Self { a, b })
    }

    #[inline]
    pub fn a(&self) -> f64 {
        self.a
    }

    #[inline]
    pub fn b(&self) -> f64 {
        self.b
    }
}

/// One transmitter's current symbol.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncoderSymbol {
    pub x: f64,
    pub user: usize,
}

/// `sgn` with `sgn(0) = +1`.
#[inline]
pub fn sgn(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// `X₁ = √P · Φ⁻¹(θ)`.
pub fn init_symbol(theta: MessagePoint, power: f64, user: usize) -> EncoderSymbol {
    EncoderSymbol {
        x: power.sqrt() * inv_cdf_unchecked(theta.get()),
        user,
    }
}

/// `X_{n+1} = √P_next · (X_n − A·y) / √B`.
#[inline]
pub fn update_symbol(x: EncoderSymbol, y: f64, c: &Coefficients, next_power: f64) -> EncoderSymbol {
    EncoderSymbol {
        x: (next_power / c.b).sqrt() * (x.x - c.a * y),
        user: x.user,
    }
}

/// Normalized covariance of the transmitted symbols.
#[derive(Debug, Clone, PartialEq)]
pub enum CorrelationState {
    /// Two users; `rho` is the correlation coefficient of `(X⁽¹⁾, X⁽²⁾)`.
    TwoUser { rho: f64, step: usize },
    /// Equal-power users on a Hadamard schedule. `lambda[k]` is the
    /// eigenvalue of `matrix` for the schedule column used at step `step + k`.
    Symmetric {
        users: usize,
        matrix: Vec<f64>,
        lambda: Vec<f64>,
        step: usize,
    },
}

impl CorrelationState {
    pub fn two_user() -> Self {
        Self::TwoUser { rho: 0.0, step: 1 }
    }

    /// `R₁ = I` for independent messages.
    pub fn symmetric(users: usize) -> Self {
        let mut matrix = vec![0.0; users * users];
        for i in 0..users {
            matrix[i * users + i] = 1.0;
        }
        Self::Symmetric {
            users,
            matrix,
            lambda: vec![1.0; users],
            step: 1,
        }
    }

    pub fn users(&self) -> usize {
        match self {
            Self::TwoUser { .. } => 2,
            Self::Symmetric { users, .. } => *users,
        }
    }

    pub fn step(&self) -> usize {
        match self {
            Self::TwoUser { step, .. } | Self::Symmetric { step, .. } => *step,
        }
    }

    /// `ρ^{(t,l)}`.
    pub fn correlation(&self, t: usize, l: usize) -> f64 {
        match self {
            Self::TwoUser { rho, .. } => {
                if t == l {
                    1.0
                } else {
                    *rho
                }
            }
            Self::Symmetric { users, matrix, .. } => matrix[t * users + l],
        }
    }

    /// Checks symmetry, unit diagonal, positive definiteness, and for the
    /// symmetric variant that every Hadamard column is an eigenvector with the
    /// recorded eigenvalue.
    pub fn validate(&self, h: Option<&HadamardMatrix>) -> Result<()> {
        match self {
            Self::TwoUser { rho, .. } => {
                if rho.abs() <= 1.0 {
                    Ok(())
                } else {
                    Err(Error::StateCorruption(format!("|rho| = {} > 1", rho.abs())))
                }
            }
            Self::Symmetric {
                users,
                matrix,
                lambda,
                step,
            } => {
                check_correlation_matrix(matrix, *users)?;
                if let Some(h) = h {
                    let residual = eigen_residual(matrix, lambda, h, *step);
                    if residual > STATE_TOLERANCE {
                        return Err(Error::StateCorruption(format!(
                            "Hadamard columns are no longer eigenvectors (residual {residual:e})"
                        )));
                    }
                }
                Ok(())
            }
        }
    }
}

/// `max_k ‖R h − λ h‖∞` over the schedule columns, pairing `lambda[k]` with
/// the column used at step `step + k`.
pub fn eigen_residual(matrix: &[f64], lambda: &[f64], h: &HadamardMatrix, step: usize) -> f64 {
    let m = h.order();
    let mut worst: f64 = 0.0;
    for (k, &lam) in lambda.iter().enumerate() {
        let col = hadamard::column_index(m, step + k);
        for i in 0..m {
            let rh: f64 = (0..m).map(|j| matrix[i * m + j] * h.get(j, col) as f64).sum();
            worst = worst.max((rh - lam * h.get(i, col) as f64).abs());
        }
    }
    worst
}

fn check_correlation_matrix(matrix: &[f64], m: usize) -> Result<()> {
    if matrix.len() != m * m {
        return Err(Error::Dimension {
            expected: m * m,
            actual: matrix.len(),
        });
    }
    for i in 0..m {
        let d = matrix[i * m + i];
        if (d - 1.0).abs() > STATE_TOLERANCE {
            return Err(Error::StateCorruption(format!("diagonal entry {i} is {d}")));
        }
        for j in 0..i {
            if (matrix[i * m + j] - matrix[j * m + i]).abs() > STATE_TOLERANCE {
                return Err(Error::StateCorruption(format!("asymmetric at ({i}, {j})")));
            }
        }
    }
    // Cholesky; a non-positive pivot means R is not positive definite.
    let mut l = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i * m + k] * l[j * m + k]).sum();
            if i == j {
                let pivot = matrix[i * m + i] - s;
                if !(pivot > 0.0) {
                    return Err(Error::StateCorruption(format!(
                        "correlation matrix lost positive definiteness (pivot {pivot:e} at {i})"
                    )));
                }
                l[i * m + i] = pivot.sqrt();
            } else {
                l[i * m + j] = (matrix[i * m + j] - s) / l[j * m + j];
            }
        }
    }
    Ok(())
}

/// General MMSE coefficients for user `m`:
/// `A = cov(X_m, Y)/var(Y)`, `B = P_m − cov²/var(Y)` with
/// `cov = Σ_t α_t ρ^{(t,m)} √(P_t P_m)` and
/// `var(Y) = Σ_t Σ_l α_t α_l √(P_t P_l) ρ^{(t,l)} + noise`.
pub fn coefficients(
    state: &CorrelationState,
    alpha: &[f64],
    powers: &[f64],
    noise_variance: f64,
    m: usize,
) -> Result<Coefficients> {
    let users = state.users();
    if alpha.len() != users || powers.len() != users {
        return Err(Error::Dimension {
            expected: users,
            actual: if alpha.len() != users { alpha.len() } else { powers.len() },
        });
    }
    let amp: Vec<f64> = powers.iter().map(|p| p.sqrt()).collect();
    let cov: f64 = (0..users)
        .map(|t| alpha[t] * state.correlation(t, m) * amp[t] * amp[m])
        .sum();
    let mut var_y = noise_variance;
    for t in 0..users {
        for l in 0..users {
            var_y += alpha[t] * alpha[l] * amp[t] * amp[l] * state.correlation(t, l);
        }
    }
    Coefficients::from_moments(cov, var_y, powers[m])
}

/// Closed-form two-user coefficients with `α = (1, sgn ρ)`.
pub fn two_user_coefficients(rho: f64, p1: f64, p2: f64, noise: f64) -> Result<[Coefficients; 2]> {
    let q = (p1 * p2).sqrt();
    let r = rho.abs();
    let s = sgn(rho);
    let den = p1 + p2 + 2.0 * r * q + noise;
    let one_minus = 1.0 - rho * rho;
    let a1 = p1.sqrt() * (p1.sqrt() + r * p2.sqrt()) / den;
    let a2 = p2.sqrt() * (p2.sqrt() + p1.sqrt() * r) * s / den;
    let b1 = p1 * (p2 * one_minus + noise) / den;
    let b2 = p2 * (p1 * one_minus + noise) / den;
    Ok([Coefficients::new(a1, b1, p1)?, Coefficients::new(a2, b2, p2)?])
}

/// Closed-form coefficients on the Hadamard eigen-schedule:
/// `A = Pλα/(MPλ + N)`, `B = P(1 − Pλ²/(MPλ + N))`.
pub fn symmetric_coefficients(lambda1: f64, alpha_m: f64, power: f64, users: usize, noise: f64) -> Result<Coefficients> {
    let den = users as f64 * power * lambda1 + noise;
    let a = power * lambda1 * alpha_m / den;
    let b = power * (1.0 - power * lambda1 * lambda1 / den);
    Coefficients::new(a, b, power)
}

/// Two-user correlation recursion with `α = (1, sgn ρ)` and feedback noise
/// variance `noise`:
/// `ρ' = (N ρ − sgn(ρ) √(P₁P₂)(1 − ρ²)) / √([P₂(1 − ρ²) + N][P₁(1 − ρ²) + N])`.
pub fn two_user_rho_step(rho: f64, p1: f64, p2: f64, noise: f64) -> f64 {
    let one_minus = 1.0 - rho * rho;
    let num = noise * rho - sgn(rho) * (p1 * p2).sqrt() * one_minus;
    let den = ((p2 * one_minus + noise) * (p1 * one_minus + noise)).sqrt();
    (num / den).clamp(-1.0, 1.0)
}

/// General normalized-covariance update for an arbitrary sign vector:
/// `ρ'^{(m,k)} = (c_{mk} − A_m A_k var(Y)) / √(B_m B_k)`.
pub fn generic_corr_step(
    state: &CorrelationState,
    alpha: &[f64],
    powers: &[f64],
    noise_variance: f64,
) -> Result<Vec<f64>> {
    let m = state.users();
    let coeffs: Vec<Coefficients> = (0..m)
        .map(|u| coefficients(state, alpha, powers, noise_variance, u))
        .collect::<Result<_>>()?;
    let amp: Vec<f64> = powers.iter().map(|p| p.sqrt()).collect();
    let mut var_y = noise_variance;
    for t in 0..m {
        for l in 0..m {
            var_y += alpha[t] * alpha[l] * amp[t] * amp[l] * state.correlation(t, l);
        }
    }
    let mut out = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..m {
            let cij = state.correlation(i, j) * amp[i] * amp[j];
            out[i * m + j] =
                (cij - coeffs[i].a * coeffs[j].a * var_y) / (coeffs[i].b * coeffs[j].b).sqrt();
        }
    }
    Ok(out)
}

/// Closed-form symmetric update:
/// `R' = [(N + MPλ₁) R − Pλ₁² α αᵀ] / (N + Pλ₁(M − λ₁))`.
pub fn symmetric_corr_step(matrix: &[f64], lambda1: f64, alpha: &[f64], power: f64, noise: f64) -> Result<Vec<f64>> {
    let m = alpha.len();
    if matrix.len() != m * m {
        return Err(Error::Dimension {
            expected: m * m,
            actual: matrix.len(),
        });
    }
    let mf = m as f64;
    let den = noise + power * lambda1 * (mf - lambda1);
    let keep = (noise + mf * power * lambda1) / den;
    let drop = power * lambda1 * lambda1 / den;
    let mut out = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..m {
            out[i * m + j] = keep * matrix[i * m + j] - drop * alpha[i] * alpha[j];
        }
    }
    check_correlation_matrix(&out, m)?;
    // same drift as the eigenvalues: restore the unit diagonal exactly
    let d: Vec<f64> = (0..m).map(|i| out[i * m + i].sqrt()).collect();
    for i in 0..m {
        for j in 0..m {
            out[i * m + j] /= d[i] * d[j];
        }
    }
    Ok(out)
}

/// Eigenvalue recursion in the rotating schedule frame:
/// `λ'_k = (N + MPλ₁) λ_{k+1} / D` for `k < M`, `λ'_M = N λ₁ / D`,
/// `D = N + Pλ₁(M − λ₁)`.
pub fn symmetric_lambda_step(lambda: &[f64], power: f64, noise: f64) -> Vec<f64> {
    let m = lambda.len();
    let l1 = lambda[0];
    let den = noise + power * l1 * (m as f64 - l1);
    let grow = (noise + m as f64 * power * l1) / den;
    let mut out: Vec<f64> = lambda[1..].iter().map(|l| grow * l).collect();
    out.push(noise * l1 / den);
    // The map preserves Σλ = M exactly, but rounding errors in the trace grow
    // geometrically; projecting back keeps long horizons on the cycle.
    let scale = m as f64 / out.iter().sum::<f64>();
    out.iter_mut().for_each(|l| *l *= scale);
    out
}

impl CorrelationState {
    /// Advances the symmetric state one step with power `power`, using the
    /// closed-form recursions.
    ///
    /// Components of the matrix outside the Hadamard eigenstructure are
    /// amplified by `(N + MPλ₁)/D` per step, so in f64 the eigenvector
    /// residual reaches ~1e-9 after roughly 35 steps at `M = 4, P = 1`.
    /// [`Schedule`] works from the eigenvalues alone and has no such limit.
    pub fn advance_symmetric(&self, h: &HadamardMatrix, power: f64, noise: f64) -> Result<Self> {
        match self {
            Self::Symmetric {
                users,
                matrix,
                lambda,
                step,
            } => {
                let alpha = hadamard::column_schedule(h, *step);
                let next = symmetric_corr_step(matrix, lambda[0], &alpha, power, noise)?;
                Ok(Self::Symmetric {
                    users: *users,
                    matrix: next,
                    lambda: symmetric_lambda_step(lambda, power, noise),
                    step: step + 1,
                })
            }
            Self::TwoUser { .. } => Err(Error::Domain("expected a symmetric state".into())),
        }
    }

    pub fn advance_two_user(&self, p1: f64, p2: f64, noise: f64) -> Result<Self> {
        match self {
            Self::TwoUser { rho, step } => Ok(Self::TwoUser {
                rho: two_user_rho_step(*rho, p1, p2, noise),
                step: step + 1,
            }),
            Self::Symmetric { .. } => Err(Error::Domain("expected a two-user state".into())),
        }
    }
}

/// Output of [`encode_step`]: what goes on the air and what the receiver and
/// transmitters need once `Y_n` is fed back.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodeStep {
    pub transmit: Vec<f64>,
    pub coefficients: Vec<Coefficients>,
    pub next_state: CorrelationState,
}

/// One encoding step: forms `α_n^{(m)} X_n^{(m)}` for every user and
/// advances the deterministic state. Symbols themselves are advanced with
/// [`advance_symbols`] after the channel output is known.
pub fn encode_step(
    symbols: &[EncoderSymbol],
    state: &CorrelationState,
    alpha: &[f64],
    powers: &PowerProfile,
) -> Result<EncodeStep> {
    let m = state.users();
    if symbols.len() != m || alpha.len() != m || powers.num_users() != m {
        return Err(Error::Dimension {
            expected: m,
            actual: symbols.len(),
        });
    }
    let noise = powers.noise_variance();
    let next_state = match state {
        CorrelationState::TwoUser { rho, .. } => {
            if alpha[0] != 1.0 || alpha[1] != sgn(*rho) {
                return Err(Error::Domain(format!(
                    "two-user scheme requires α = (1, sgn ρ), got {alpha:?}"
                )));
            }
            state.advance_two_user(powers.power(0), powers.power(1), noise)?
        }
        CorrelationState::Symmetric {
            matrix, lambda, step, users,
        } => {
            let p = powers.power(0);
            if powers.powers().iter().any(|&q| q != p) {
                return Err(Error::Domain("symmetric scheme requires equal powers".into()));
            }
            CorrelationState::Symmetric {
                users: *users,
                matrix: symmetric_corr_step(matrix, lambda[0], alpha, p, noise)?,
                lambda: symmetric_lambda_step(lambda, p, noise),
                step: step + 1,
            }
        }
    };
    let coefficients = (0..m)
        .map(|u| coefficients(state, alpha, powers.powers(), noise, u))
        .collect::<Result<Vec<_>>>()?;
    let transmit = symbols.iter().zip(alpha).map(|(s, a)| a * s.x).collect();
    Ok(EncodeStep {
        transmit,
        coefficients,
        next_state,
    })
}

pub fn advance_symbols(symbols: &mut [EncoderSymbol], y: f64, coefficients: &[Coefficients], next_powers: &[f64]) {
    for ((s, c), &p) in symbols.iter_mut().zip(coefficients).zip(next_powers) {
        *s = update_symbol(*s, y, c, p);
    }
}

/// Which coding scheme to run.
#[derive(Debug, Clone, PartialEq)]
pub enum Scheme {
    /// Single user; the symmetric scheme with `M = 1`.
    PointToPoint { power: f64 },
    /// Two users with `α_n = (1, sgn ρ_n)`. When `forced`, the receiver
    /// injects `W ~ N(0, σ_w²)` into the first feedback so that `|ρ₂| = ρ*`.
    TwoUser { p1: f64, p2: f64, forced: bool },
    /// `M` equal-power users on a Hadamard schedule. When `forced`, the
    /// first `M − 1` steps use the forcing powers `P_n`.
    Symmetric { users: usize, power: f64, forced: bool },
}

impl Scheme {
    pub fn users(&self) -> usize {
        match self {
            Self::PointToPoint { .. } => 1,
            Self::TwoUser { .. } => 2,
            Self::Symmetric { users, .. } => *users,
        }
    }

    pub fn nominal_powers(&self) -> Vec<f64> {
        match self {
            Self::PointToPoint { power } => vec![*power],
            Self::TwoUser { p1, p2, .. } => vec![*p1, *p2],
            Self::Symmetric { users, power, .. } => vec![*power; *users],
        }
    }

    pub fn is_forced(&self) -> bool {
        match self {
            Self::PointToPoint { .. } => false,
            Self::TwoUser { forced, .. } | Self::Symmetric { forced, .. } => *forced,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::PointToPoint { .. } => "point_to_point",
            Self::TwoUser { .. } => "two_user",
            Self::Symmetric { .. } => "symmetric",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let powers = self.nominal_powers();
        if let Some(p) = powers.iter().find(|p| !(p.is_finite() && **p > 0.0)) {
            return Err(Error::Config(format!("powers must be positive and finite, got {p}")));
        }
        if let Self::Symmetric { users, .. } = self {
            hadamard::for_order(*users)?;
        }
        Ok(())
    }
}

/// Deterministic state summary recorded per step.
#[derive(Debug, Clone, PartialEq)]
pub enum StateSummary {
    TwoUser { rho: f64 },
    Symmetric { lambda: Vec<f64> },
}

/// Everything about step `n` that does not depend on messages or noise.
#[derive(Debug, Clone, PartialEq)]
pub struct StepPlan {
    pub n: usize,
    pub alpha: Vec<f64>,
    /// Transmit powers at step `n`.
    pub powers: Vec<f64>,
    /// Transmit powers at step `n + 1` (the law the updated symbols follow).
    pub next_powers: Vec<f64>,
    /// Variance of the receiver's injected noise on this step's feedback.
    pub injection_variance: f64,
    pub coefficients: Vec<Coefficients>,
    pub state: StateSummary,
}

impl StepPlan {
    /// Total variance of the fed-back noise: channel plus injection.
    pub fn feedback_noise(&self, channel_noise: f64) -> f64 {
        channel_noise + self.injection_variance
    }

    /// Kernel slope `√(B / P_{n+1})` for each user.
    pub fn slopes(&self) -> Vec<f64> {
        self.coefficients
            .iter()
            .zip(&self.next_powers)
            .map(|(c, p)| (c.b / p).sqrt())
            .collect()
    }
}

/// Precomputed coefficient schedule for a scheme over a fixed horizon.
#[derive(Debug, Clone)]
pub struct Schedule {
    scheme: Scheme,
    noise_variance: f64,
    hadamard: Option<HadamardMatrix>,
    steps: Vec<StepPlan>,
    /// Powers used at each step `1..=horizon+1`.
    power_track: Vec<Vec<f64>>,
}

impl Schedule {
    pub fn build(scheme: &Scheme, horizon: usize, noise_variance: f64) -> Result<Self> {
        scheme.validate()?;
        if !(noise_variance.is_finite() && noise_variance > 0.0) {
            return Err(Error::Config(format!("noise variance must be positive, got {noise_variance}")));
        }
        match scheme {
            Scheme::PointToPoint { power } => {
                let mut s = Self::build_symmetric(1, *power, false, horizon, noise_variance)?;
                s.scheme = scheme.clone();
                Ok(s)
            }
            Scheme::TwoUser { p1, p2, forced } => Self::build_two_user(*p1, *p2, *forced, horizon, noise_variance),
            Scheme::Symmetric { users, power, forced } => {
                Self::build_symmetric(*users, *power, *forced, horizon, noise_variance)
            }
        }
    }

    fn build_two_user(p1: f64, p2: f64, forced: bool, horizon: usize, noise: f64) -> Result<Self> {
        // Scale to unit noise for the fixed-point equations.
        let sigma_w2 = if forced {
            let (n1, n2) = (p1 / noise, p2 / noise);
            let rho_star = fixedpoint::ozarow_rho_star(n1, n2)?;
            noise * fixedpoint::sigma_w_for_target(rho_star, n1, n2)?
        } else {
            0.0
        };
        let powers = vec![p1, p2];
        let mut rho = 0.0;
        let mut steps = Vec::with_capacity(horizon);
        for n in 1..=horizon {
            let injection = if n == 1 { sigma_w2 } else { 0.0 };
            let feedback = noise + injection;
            let coefficients = two_user_coefficients(rho, p1, p2, feedback)?.to_vec();
            steps.push(StepPlan {
                n,
                alpha: vec![1.0, sgn(rho)],
                powers: powers.clone(),
                next_powers: powers.clone(),
                injection_variance: injection,
                coefficients,
                state: StateSummary::TwoUser { rho },
            });
            rho = two_user_rho_step(rho, p1, p2, feedback);
        }
        Ok(Self {
            scheme: Scheme::TwoUser { p1, p2, forced },
            noise_variance: noise,
            hadamard: None,
            steps,
            power_track: vec![powers; horizon + 1],
        })
    }

    fn build_symmetric(users: usize, power: f64, forced: bool, horizon: usize, noise: f64) -> Result<Self> {
        let h = hadamard::for_order(users)?;
        let forcing: Vec<f64> = if forced && users > 1 {
            fixedpoint::forcing_powers(power / noise, users)?
                .forcing_powers
                .iter()
                .map(|p| p * noise)
                .collect()
        } else {
            Vec::new()
        };
        let power_at = |n: usize| forcing.get(n - 1).copied().unwrap_or(power);
        let power_track: Vec<Vec<f64>> = (1..=horizon + 1).map(|n| vec![power_at(n); users]).collect();
        let mut lambda = vec![1.0; users];
        let mut steps = Vec::with_capacity(horizon);
        for n in 1..=horizon {
            let p = power_at(n);
            let alpha = hadamard::column_schedule(&h, n);
            let coefficients = alpha
                .iter()
                .map(|&a| symmetric_coefficients(lambda[0], a, p, users, noise))
                .collect::<Result<Vec<_>>>()?;
            let next = symmetric_lambda_step(&lambda, p, noise);
            if let Some(bad) = next.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
                return Err(Error::StateCorruption(format!("eigenvalue {bad} at step {}", n + 1)));
            }
            steps.push(StepPlan {
                n,
                alpha,
                powers: power_track[n - 1].clone(),
                next_powers: power_track[n].clone(),
                injection_variance: 0.0,
                coefficients,
                state: StateSummary::Symmetric { lambda },
            });
            lambda = next;
        }
        Ok(Self {
            scheme: Scheme::Symmetric { users, power, forced },
            noise_variance: noise,
            hadamard: Some(h),
            steps,
            power_track,
        })
    }

    pub fn scheme(&self) -> &Scheme {
        &self.scheme
    }

    pub fn users(&self) -> usize {
        self.scheme.users()
    }

    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    pub fn hadamard(&self) -> Option<&HadamardMatrix> {
        self.hadamard.as_ref()
    }

    /// Plan for step `n` (1-indexed).
    pub fn step(&self, n: usize) -> &StepPlan {
        &self.steps[n - 1]
    }

    pub fn steps(&self) -> &[StepPlan] {
        &self.steps
    }

    /// Transmit powers at step `n`, valid for `1 ≤ n ≤ horizon + 1`.
    pub fn powers_at(&self, n: usize) -> &[f64] {
        &self.power_track[n - 1]
    }

    /// Deterministic `ρ_n^{(i,j)}` as predicted by the recursion.
    pub fn predicted_correlation(&self, n: usize, i: usize, j: usize) -> f64 {
        if i == j {
            return 1.0;
        }
        match &self.step(n).state {
            StateSummary::TwoUser { rho } => *rho,
            StateSummary::Symmetric { lambda } => {
                // R_n = (1/M) Σ_k λ_k h_k h_kᵀ over the schedule frame.
                let h = self.hadamard.as_ref().expect("symmetric schedule has a Hadamard matrix");
                let m = h.order();
                lambda
                    .iter()
                    .enumerate()
                    .map(|(k, l)| {
                        let c = hadamard::column_index(m, n + k);
                        l * (h.get(i, c) as f64) * (h.get(j, c) as f64)
                    })
                    .sum::<f64>()
                    / m as f64
            }
        }
    }

    /// `Σ_{k ≤ n} ln(slope_k)` per user, in natural log units.
    pub fn log_slope(&self, n: usize) -> Vec<f64> {
        let mut acc = vec![0.0; self.users()];
        for plan in &self.steps[..n] {
            for (a, s) in acc.iter_mut().zip(plan.slopes()) {
                *a += s.ln();
            }
        }
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn init_symbol_examples() {
        let x = init_symbol(MessagePoint::new(0.5).unwrap(), 4.0, 0);
        assert_eq!(x.x, 0.0);
        let x = init_symbol(MessagePoint::new(0.975_002_1).unwrap(), 1.0, 0);
        assert!(close(x.x, 1.96, 1e-5));
        let x = init_symbol(MessagePoint::new(0.975_002_1).unwrap(), 4.0, 0);
        assert!(close(x.x, 3.92, 2e-5));
        assert!(MessagePoint::new(0.0).is_err());
        assert!(MessagePoint::new(1.0).is_err());
    }

    #[test]
    fn coefficient_examples() {
        let s = CorrelationState::symmetric(1);
        let c = coefficients(&s, &[1.0], &[1.0], 1.0, 0).unwrap();
        assert!(close(c.a(), 0.5, 1e-15) && close(c.b(), 0.5, 1e-15));

        let s = CorrelationState::two_user();
        let c = coefficients(&s, &[1.0, 1.0], &[1.0, 1.0], 1.0, 0).unwrap();
        assert!(close(c.a(), 1.0 / 3.0, 1e-15) && close(c.b(), 2.0 / 3.0, 1e-15));
    }

    #[test]
    fn update_examples() {
        let c = Coefficients::new(0.5, 0.5, 1.0).unwrap();
        let x = EncoderSymbol { x: 1.0, user: 0 };
        let y = update_symbol(x, 1.0, &c, 1.0);
        assert!(close(y.x, 0.5 / 0.5f64.sqrt(), 1e-15));
        assert!(close(y.x, 0.707_106_78, 1e-8));
        let c = Coefficients::new(0.3, 0.4, 1.0).unwrap();
        assert_eq!(update_symbol(EncoderSymbol { x: 0.6, user: 0 }, 2.0, &c, 1.0).x, 0.0);
        let y = update_symbol(EncoderSymbol { x: 0.8, user: 0 }, 0.0, &c, 1.0);
        assert!(close(y.x, 0.8 * (1.0f64 / 0.4).sqrt(), 1e-15));
    }

    #[test]
    fn two_user_closed_form_matches_generic() {
        for &(p1, p2) in &[(1.0, 1.0), (1.0, 4.0), (2.0, 3.0), (0.3, 7.0)] {
            for &rho in &[0.0, 0.31, -0.31, 0.9, -0.75] {
                for &noise in &[1.0, 2.2] {
                    let closed = two_user_coefficients(rho, p1, p2, noise).unwrap();
                    let state = CorrelationState::TwoUser { rho, step: 1 };
                    let alpha = [1.0, sgn(rho)];
                    for m in 0..2 {
                        let g = coefficients(&state, &alpha, &[p1, p2], noise, m).unwrap();
                        assert!(close(g.a(), closed[m].a(), 1e-12));
                        assert!(close(g.b(), closed[m].b(), 1e-12));
                    }
                    let generic = generic_corr_step(&state, &alpha, &[p1, p2], noise).unwrap();
                    assert!(close(generic[1], two_user_rho_step(rho, p1, p2, noise), 1e-12));
                }
            }
        }
    }

    #[test]
    fn rho_step_examples() {
        assert!(close(two_user_rho_step(0.0, 1.0, 1.0, 1.0), -0.5, 1e-15));
        let rs = 0.311_107_817_465_981_9;
        assert!(close(two_user_rho_step(rs, 1.0, 1.0, 1.0), -rs, 1e-12));
        assert!(close(two_user_rho_step(-rs, 1.0, 1.0, 1.0), rs, 1e-12));
        assert!(close(two_user_rho_step(0.0, 1.0, 1.0, 2.2144), -0.311_10, 1e-4));
    }

    #[test]
    fn symmetric_steps() {
        let eye = vec![1.0, 0.0, 0.0, 1.0];
        let r = symmetric_corr_step(&eye, 1.0, &[1.0, 1.0], 1.0, 1.0).unwrap();
        assert!(close(r[1], -0.5, 1e-15) && close(r[2], -0.5, 1e-15));
        assert!(close(r[0], 1.0, 1e-15) && close(r[3], 1.0, 1e-15));
        assert!(close(r[1], two_user_rho_step(0.0, 1.0, 1.0, 1.0), 1e-15));
        let l = symmetric_lambda_step(&[1.0, 1.0], 1.0, 1.0);
        assert!(close(l[0], 1.5, 1e-15) && close(l[1], 0.5, 1e-15));
    }

    #[test]
    fn symmetric_closed_form_matches_generic() {
        let h = hadamard::for_order(4).unwrap();
        let mut state = CorrelationState::symmetric(4);
        for n in 1..=12 {
            let alpha = hadamard::column_schedule(&h, n);
            let powers = [1.5; 4];
            let (matrix, lambda) = match &state {
                CorrelationState::Symmetric { matrix, lambda, .. } => (matrix.clone(), lambda.clone()),
                _ => unreachable!(),
            };
            for m in 0..4 {
                let g = coefficients(&state, &alpha, &powers, 1.0, m).unwrap();
                let c = symmetric_coefficients(lambda[0], alpha[m], 1.5, 4, 1.0).unwrap();
                assert!(close(g.a(), c.a(), 1e-12) && close(g.b(), c.b(), 1e-12));
            }
            let generic = generic_corr_step(&state, &alpha, &powers, 1.0).unwrap();
            let closed = symmetric_corr_step(&matrix, lambda[0], &alpha, 1.5, 1.0).unwrap();
            for (a, b) in generic.iter().zip(&closed) {
                assert!(close(*a, *b, 1e-12));
            }
            state = state.advance_symmetric(&h, 1.5, 1.0).unwrap();
            state.validate(Some(&h)).unwrap();
            let trace: f64 = match &state {
                CorrelationState::Symmetric { lambda, .. } => lambda.iter().sum(),
                _ => unreachable!(),
            };
            assert!(close(trace, 4.0, 1e-9));
        }
    }

    #[test]
    fn corrupted_state_is_detected() {
        let bad = vec![1.0, 1.5, 1.5, 1.0];
        assert!(matches!(
            symmetric_corr_step(&bad, 2.5, &[1.0, 1.0], 1.0, 1.0),
            Err(Error::StateCorruption(_))
        ));
        let s = CorrelationState::Symmetric {
            users: 2,
            matrix: vec![1.0, 0.2, 0.2, 1.0],
            lambda: vec![1.0, 1.0],
            step: 1,
        };
        let h = hadamard::for_order(2).unwrap();
        assert!(matches!(s.validate(Some(&h)), Err(Error::StateCorruption(_))));
    }

    #[test]
    fn encode_step_two_user_signs() {
        let powers = PowerProfile::unit_noise(vec![1.0, 1.0]).unwrap();
        let state = CorrelationState::TwoUser { rho: 0.4, step: 3 };
        let symbols = [EncoderSymbol { x: 0.3, user: 0 }, EncoderSymbol { x: -1.2, user: 1 }];
        let out = encode_step(&symbols, &state, &[1.0, 1.0], &powers).unwrap();
        assert_eq!(out.transmit, vec![0.3, -1.2]);
        assert!(encode_step(&symbols, &state, &[1.0, -1.0], &powers).is_err());
        let neg = CorrelationState::TwoUser { rho: -0.4, step: 3 };
        let out = encode_step(&symbols, &neg, &[1.0, -1.0], &powers).unwrap();
        assert_eq!(out.transmit, vec![0.3, 1.2]);
        assert!(encode_step(&symbols[..1], &state, &[1.0, 1.0], &powers).is_err());
    }

    #[test]
    fn forced_two_user_alternates() {
        let sched = Schedule::build(&Scheme::TwoUser { p1: 1.0, p2: 1.0, forced: true }, 30, 1.0).unwrap();
        let rs = 0.311_107_817_465_981_9;
        for n in 2..=30 {
            let StateSummary::TwoUser { rho } = sched.step(n).state else { unreachable!() };
            let expected = if n % 2 == 0 { -rs } else { rs };
            assert!(close(rho, expected, 1e-10), "n = {n}: {rho}");
            assert_eq!(sched.step(n).alpha[1], sgn(expected));
        }
        assert!(sched.step(1).injection_variance > 1.2);
        assert_eq!(sched.step(2).injection_variance, 0.0);
    }

    #[test]
    fn symmetric_schedule_cycles_columns() {
        let sched = Schedule::build(&Scheme::Symmetric { users: 4, power: 1.0, forced: false }, 9, 1.0).unwrap();
        let h = hadamard::for_order(4).unwrap();
        for n in 1..=9 {
            assert_eq!(sched.step(n).alpha, h.column((n - 1) % 4));
        }
    }

    #[test]
    fn deterministic_state_ignores_seed() {
        let a = Schedule::build(&Scheme::Symmetric { users: 8, power: 2.0, forced: true }, 40, 1.0).unwrap();
        let b = Schedule::build(&Scheme::Symmetric { users: 8, power: 2.0, forced: true }, 40, 1.0).unwrap();
        assert_eq!(a.steps(), b.steps());
    }
}
