//! End-to-end trials of the encoder → channel → feedback → decoder loop and
//! order-independent batch statistics.
//!
//! Trial `i` of a batch with seed `s` draws everything from the noise stream
//! `(s, i)`: first the message points, then `Z_n` each step, and after `Z_1`
//! the receiver's injected `W` when the scheme uses one. Trials are grouped
//! in fixed-size chunks, chunks run in parallel, and the chunk accumulators
//! are merged in chunk order, so results do not depend on the thread count.

use rayon::prelude::*;

use crate::channel::{inject_feedback_noise, transmit, NoiseSource, PowerProfile};
use crate::decoder::{
    achieved_rate, check_success, choose_terminal_interval, decode, kernel_from_step, ComposedMap,
    TerminalInterval,
};
use crate::encoder::{advance_symbols, init_symbol, EncoderSymbol, MessagePoint, Schedule, Scheme};
use crate::error::{Error, Result};
use crate::numerics::phi;

pub const MAX_HORIZON: usize = 10_000;
pub const MAX_TRIALS: usize = 10_000_000;
/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;
const CHUNK: usize = 1024;

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub scheme: Scheme,
    pub horizon: usize,
    /// Per-user target error; a single entry applies to every user.
    pub target_error: Vec<f64>,
    pub noise_variance: f64,
    /// Leading steps for which cross-moments are accumulated.
    pub moment_steps: usize,
}

impl SimulationConfig {
    pub fn new(scheme: Scheme, horizon: usize, target_error: f64) -> Self {
        Self {
            scheme,
            horizon,
            target_error: vec![target_error],
            noise_variance: 1.0,
            moment_steps: horizon.min(64),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.scheme.validate()?;
        if self.horizon == 0 || self.horizon > MAX_HORIZON {
            return Err(Error::Config(format!("horizon must be in 1..={MAX_HORIZON}, got {}", self.horizon)));
        }
        let m = self.scheme.users();
        if self.target_error.len() != 1 && self.target_error.len() != m {
            return Err(Error::Config(format!(
                "expected 1 or {m} target errors, got {}",
                self.target_error.len()
            )));
        }
        if let Some(e) = self.target_error.iter().find(|e| !(**e > 0.0 && **e < 1.0)) {
            return Err(Error::Config(format!("target error must lie in (0, 1), got {e}")));
        }
        PowerProfile::new(self.scheme.nominal_powers(), self.noise_variance)?;
        Ok(())
    }

    pub fn target_for(&self, user: usize) -> f64 {
        if self.target_error.len() == 1 {
            self.target_error[0]
        } else {
            self.target_error[user]
        }
    }
}

/// One row of a per-step trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub n: usize,
    pub user: usize,
    pub y: f64,
    pub a: f64,
    pub b: f64,
    /// `X_n` for this user.
    pub x: f64,
    pub log_width: f64,
    pub rate_bits: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub messages: Vec<f64>,
    /// `θ ∈ Δ_n` per user.
    pub success: Vec<bool>,
    /// `X_{n+1} ∈ J₁` per user.
    pub terminal_hit: Vec<bool>,
    pub rates: Vec<f64>,
    pub log_widths: Vec<f64>,
    pub terminal_symbols: Vec<f64>,
    pub trace: Option<Vec<TraceRow>>,
}

impl TrialResult {
    pub fn decode_equivalent(&self) -> bool {
        self.success == self.terminal_hit
    }
}

/// Sample path of one trial: `x[n-1][m] = X_n^{(m)}` for `n = 1..=horizon+1`
/// and `y[n-1] = Y_n` as fed back.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialPath {
    pub x: Vec<Vec<f64>>,
    pub y: Vec<f64>,
}

/// Precomputed schedule plus terminal intervals, shared by every trial.
#[derive(Debug, Clone)]
pub struct Simulator {
    config: SimulationConfig,
    schedule: Schedule,
    terminals: Vec<TerminalInterval>,
}

impl Simulator {
    pub fn new(config: SimulationConfig) -> Result<Self> {
        config.validate()?;
        let schedule = Schedule::build(&config.scheme, config.horizon, config.noise_variance)?;
        let last = schedule.powers_at(config.horizon + 1);
        let terminals = (0..config.scheme.users())
            .map(|u| choose_terminal_interval(config.target_for(u), last[u]))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config,
            schedule,
            terminals,
        })
    }

    pub fn config(&self) -> &SimulationConfig {
        &self.config
    }

    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    pub fn terminal(&self, user: usize) -> &TerminalInterval {
        &self.terminals[user]
    }

    /// Runs the loop for one noise stream, reporting `(n, X_n, Y_n)` after
    /// each channel use and returning messages, final symbols and decoder maps.
    fn simulate<F>(&self, noise: &mut NoiseSource, mut observe: F) -> (Vec<MessagePoint>, Vec<EncoderSymbol>, Vec<ComposedMap>)
    where
        F: FnMut(usize, &[EncoderSymbol], f64, &[ComposedMap]),
    {
        let m = self.schedule.users();
        let first = self.schedule.powers_at(1);
        let messages: Vec<MessagePoint> = (0..m)
            .map(|_| MessagePoint::new(noise.uniform_open()).expect("open-interval uniform"))
            .collect();
        let mut symbols: Vec<EncoderSymbol> = messages
            .iter()
            .enumerate()
            .map(|(u, &theta)| init_symbol(theta, first[u], u))
            .collect();
        let mut maps = vec![ComposedMap::identity(); m];
        let mut xs = vec![0.0; m];
        let noise_var = self.schedule.noise_variance();
        for plan in self.schedule.steps() {
            for (x, s) in xs.iter_mut().zip(&symbols) {
                *x = s.x;
            }
            let mut y = transmit(&xs, &plan.alpha, noise_var, noise).expect("dimensions fixed by schedule");
            if plan.injection_variance > 0.0 {
                y = inject_feedback_noise(y, plan.injection_variance, noise).expect("non-negative variance").0;
            }
            let before = symbols.clone();
            for (u, map) in maps.iter_mut().enumerate() {
                *map = map.compose(&kernel_from_step(&plan.coefficients[u], y, plan.next_powers[u]));
            }
            advance_symbols(&mut symbols, y, &plan.coefficients, &plan.next_powers);
            observe(plan.n, &before, y, &maps);
        }
        (messages, symbols, maps)
    }

    pub fn run_trial(&self, seed: u64, trial: u64, trace: bool) -> TrialResult {
        let mut noise = NoiseSource::new(seed, trial);
        let first = self.schedule.powers_at(1).to_vec();
        let mut rows = trace.then(Vec::new);
        let (messages, symbols, maps) = self.simulate(&mut noise, |n, xs, y, maps| {
            if let Some(rows) = rows.as_mut() {
                let plan = self.schedule.step(n);
                for (u, s) in xs.iter().enumerate() {
                    let j = choose_terminal_interval(self.config.target_for(u), self.schedule.powers_at(n + 1)[u])
                        .expect("validated target");
                    let delta = decode(&maps[u], &j, first[u]);
                    rows.push(TraceRow {
                        n,
                        user: u,
                        y,
                        a: plan.coefficients[u].a(),
                        b: plan.coefficients[u].b(),
                        x: s.x,
                        log_width: delta.log_width,
                        rate_bits: achieved_rate(&delta, n),
                    });
                }
            }
        });
        let n = self.schedule.horizon();
        let mut result = TrialResult {
            messages: messages.iter().map(|m| m.get()).collect(),
            success: Vec::with_capacity(messages.len()),
            terminal_hit: Vec::with_capacity(messages.len()),
            rates: Vec::with_capacity(messages.len()),
            log_widths: Vec::with_capacity(messages.len()),
            terminal_symbols: symbols.iter().map(|s| s.x).collect(),
            trace: rows,
        };
        for u in 0..messages.len() {
            let delta = decode(&maps[u], &self.terminals[u], first[u]);
            result.success.push(check_success(messages[u], &delta));
            result.terminal_hit.push(self.terminals[u].contains(symbols[u].x));
            result.rates.push(achieved_rate(&delta, n));
            result.log_widths.push(delta.log_width);
        }
        result
    }

    pub fn sample_path(&self, seed: u64, trial: u64) -> TrialPath {
        let mut noise = NoiseSource::new(seed, trial);
        let mut x = Vec::with_capacity(self.schedule.horizon() + 1);
        let mut ys = Vec::with_capacity(self.schedule.horizon());
        let (_, last, _) = self.simulate(&mut noise, |_, xs, y, _| {
            x.push(xs.iter().map(|s| s.x).collect());
            ys.push(y);
        });
        x.push(last.iter().map(|s| s.x).collect());
        TrialPath { x, y: ys }
    }

    pub fn run_batch(&self, trials: usize, seed: u64) -> Result<BatchStats> {
        if trials == 0 || trials > MAX_TRIALS {
            return Err(Error::Config(format!("trials must be in 1..={MAX_TRIALS}, got {trials}")));
        }
        let chunks = trials.div_ceil(CHUNK);
        let partials: Vec<Accumulator> = (0..chunks)
            .into_par_iter()
            .map(|c| {
                let mut acc = Accumulator::new(self);
                let start = c * CHUNK;
                let end = (start + CHUNK).min(trials);
                for t in start..end {
                    acc.add_trial(self, seed, t as u64);
                }
                acc
            })
            .collect();
        let mut total = Accumulator::new(self);
        for p in &partials {
            total.merge(p);
        }
        Ok(total.finish(self))
    }
}

pub fn run_trial(config: SimulationConfig, seed: u64) -> Result<TrialResult> {
    Ok(Simulator::new(config)?.run_trial(seed, 0, false))
}

pub fn run_batch(config: SimulationConfig, trials: usize, seed: u64) -> Result<BatchStats> {
    Simulator::new(config)?.run_batch(trials, seed)
}

#[derive(Debug, Clone)]
struct Accumulator {
    users: usize,
    trials: u64,
    errors: Vec<u64>,
    mismatches: Vec<u64>,
    rate_sum: Vec<f64>,
    // per step × user
    sum_x: Vec<f64>,
    sum_x2: Vec<f64>,
    // per moment step × user × user
    cross: Vec<f64>,
    // per user: Σ s_i and Σ s_i² of per-trial time-averaged power
    avg_power_sum: Vec<f64>,
    avg_power_sq: Vec<f64>,
}

impl Accumulator {
    fn new(sim: &Simulator) -> Self {
        let m = sim.schedule.users();
        let n = sim.schedule.horizon();
        let k = sim.config.moment_steps.min(n);
        Self {
            users: m,
            trials: 0,
            errors: vec![0; m],
            mismatches: vec![0; m],
            rate_sum: vec![0.0; m],
            sum_x: vec![0.0; n * m],
            sum_x2: vec![0.0; n * m],
            cross: vec![0.0; k * m * m],
            avg_power_sum: vec![0.0; m],
            avg_power_sq: vec![0.0; m],
        }
    }

    fn add_trial(&mut self, sim: &Simulator, seed: u64, trial: u64) {
        let m = self.users;
        let k = self.cross.len() / (m * m);
        let horizon = sim.schedule.horizon();
        let mut noise = NoiseSource::new(seed, trial);
        let mut power = vec![0.0; m];
        let first = sim.schedule.powers_at(1).to_vec();
        let (messages, symbols, maps) = sim.simulate(&mut noise, |n, xs, _, _| {
            let base = (n - 1) * m;
            for (u, s) in xs.iter().enumerate() {
                self.sum_x[base + u] += s.x;
                self.sum_x2[base + u] += s.x * s.x;
                power[u] += s.x * s.x;
            }
            if n <= k {
                let cb = (n - 1) * m * m;
                for i in 0..m {
                    for j in i..m {
                        self.cross[cb + i * m + j] += xs[i].x * xs[j].x;
                    }
                }
            }
        });
        for u in 0..m {
            let delta = decode(&maps[u], &sim.terminals[u], first[u]);
            let ok = check_success(messages[u], &delta);
            let hit = sim.terminals[u].contains(symbols[u].x);
            self.errors[u] += u64::from(!ok);
            self.mismatches[u] += u64::from(ok != hit);
            self.rate_sum[u] += achieved_rate(&delta, horizon);
            let s = power[u] / horizon as f64;
            self.avg_power_sum[u] += s;
            self.avg_power_sq[u] += s * s;
        }
        self.trials += 1;
    }

    fn merge(&mut self, other: &Accumulator) {
        self.trials += other.trials;
        let add_u = |a: &mut Vec<u64>, b: &Vec<u64>| a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        let add_f = |a: &mut Vec<f64>, b: &Vec<f64>| a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        add_u(&mut self.errors, &other.errors);
        add_u(&mut self.mismatches, &other.mismatches);
        add_f(&mut self.rate_sum, &other.rate_sum);
        add_f(&mut self.sum_x, &other.sum_x);
        add_f(&mut self.sum_x2, &other.sum_x2);
        add_f(&mut self.cross, &other.cross);
        add_f(&mut self.avg_power_sum, &other.avg_power_sum);
        add_f(&mut self.avg_power_sq, &other.avg_power_sq);
    }

    fn finish(self, sim: &Simulator) -> BatchStats {
        let m = self.users;
        let n = self.trials as f64;
        let horizon = sim.schedule.horizon();
        let k = self.cross.len() / (m * m);
        let users = (0..m)
            .map(|u| {
                let target = sim.config.target_for(u);
                let (lo, hi) = wilson_interval(self.errors[u], self.trials, Z95);
                let mean_avg = self.avg_power_sum[u] / n;
                let var_avg = (self.avg_power_sq[u] / n - mean_avg * mean_avg).max(0.0) * n / (n - 1.0).max(1.0);
                UserStats {
                    target_error: target,
                    errors: self.errors[u],
                    error_rate: self.errors[u] as f64 / n,
                    wilson_lo: lo,
                    wilson_hi: hi,
                    decode_mismatches: self.mismatches[u],
                    mean_rate_bits: self.rate_sum[u] / n,
                    time_average_power: mean_avg,
                    time_average_power_se: (var_avg / n).sqrt(),
                }
            })
            .collect();
        let steps = (0..horizon)
            .map(|s| {
                let moments = (0..m)
                    .map(|u| {
                        let mean = self.sum_x[s * m + u] / n;
                        let power = self.sum_x2[s * m + u] / n;
                        SymbolMoments {
                            mean,
                            variance: (power - mean * mean) * n / (n - 1.0).max(1.0),
                            power,
                        }
                    })
                    .collect::<Vec<_>>();
                let correlation = (s < k).then(|| {
                    let mut c = vec![1.0; m * m];
                    for i in 0..m {
                        for j in (i + 1)..m {
                            let exy = self.cross[s * m * m + i * m + j] / n;
                            let cov = exy - moments[i].mean * moments[j].mean;
                            let sd = ((moments[i].power - moments[i].mean.powi(2))
                                * (moments[j].power - moments[j].mean.powi(2)))
                            .sqrt();
                            c[i * m + j] = cov / sd;
                            c[j * m + i] = cov / sd;
                        }
                    }
                    c
                });
                StepStats {
                    n: s + 1,
                    moments,
                    correlation,
                }
            })
            .collect();
        BatchStats {
            trials: self.trials,
            users,
            steps,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserStats {
    pub target_error: f64,
    pub errors: u64,
    pub error_rate: f64,
    pub wilson_lo: f64,
    pub wilson_hi: f64,
    /// Trials where message-space success disagreed with terminal membership.
    pub decode_mismatches: u64,
    pub mean_rate_bits: f64,
    /// Mean over trials of `(1/n) Σ_k x_k²`.
    pub time_average_power: f64,
    pub time_average_power_se: f64,
}

impl UserStats {
    pub fn target_in_band(&self) -> bool {
        self.wilson_lo <= self.target_error && self.target_error <= self.wilson_hi
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymbolMoments {
    pub mean: f64,
    pub variance: f64,
    /// Empirical `E[x²]`.
    pub power: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepStats {
    pub n: usize,
    pub moments: Vec<SymbolMoments>,
    /// Row-major `M × M` sample correlation, for the leading moment steps.
    pub correlation: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub trials: u64,
    pub users: Vec<UserStats>,
    pub steps: Vec<StepStats>,
}

impl BatchStats {
    pub fn total_mismatches(&self) -> u64 {
        self.users.iter().map(|u| u.decode_mismatches).sum()
    }
}

/// Wilson score interval for `k` successes out of `n`.
pub fn wilson_interval(k: u64, n: u64, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let nf = n as f64;
    let p = k as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let center = (p + z2 / (2.0 * nf)) / denom;
    let half = z / denom * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt();
    ((center - half).max(0.0), (center + half).min(1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserPowerReport {
    /// Largest `|empirical − scheduled| / σ` over steps, `σ = P_n √(2/N)`.
    pub worst_step_z: f64,
    pub per_step_ok: bool,
    pub time_average: f64,
    pub nominal: f64,
    pub time_average_band: f64,
    pub time_average_ok: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerReport {
    pub users: Vec<UserPowerReport>,
}

impl PowerReport {
    pub fn all_ok(&self) -> bool {
        self.users.iter().all(|u| u.per_step_ok && u.time_average_ok)
    }
}

/// Compares empirical per-step power with the schedule (3σ) and the
/// time-averaged power with the nominal budget (one-sided, 3σ).
pub fn verify_power_constraint(stats: &BatchStats, schedule: &Schedule) -> PowerReport {
    let n = stats.trials as f64;
    let nominal = schedule.scheme().nominal_powers();
    let users = (0..nominal.len())
        .map(|u| {
            let mut worst: f64 = 0.0;
            for step in &stats.steps {
                let p = schedule.powers_at(step.n)[u];
                let sigma = p * (2.0 / n).sqrt();
                worst = worst.max((step.moments[u].power - p).abs() / sigma);
            }
            let user = &stats.users[u];
            let band = 3.0 * user.time_average_power_se;
            UserPowerReport {
                worst_step_z: worst,
                per_step_ok: worst <= 3.0,
                time_average: user.time_average_power,
                nominal: nominal[u],
                time_average_band: band,
                time_average_ok: user.time_average_power <= nominal[u] + band,
            }
        })
        .collect();
    PowerReport { users }
}

/// One-sample Kolmogorov–Smirnov statistic against `N(0, 1)`. Sorts in place.
pub fn ks_statistic(samples: &mut [f64]) -> f64 {
    samples.sort_by(f64::total_cmp);
    let n = samples.len() as f64;
    samples
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = phi(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

/// Asymptotic 1% critical value of the KS statistic.
pub fn ks_critical_1pct(n: usize) -> f64 {
    1.627_6 / (n as f64).sqrt()
}
