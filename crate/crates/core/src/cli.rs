//! Command-line front end: flat `key = value` configuration, experiment
//! orchestration and CSV/JSON emission.
//!
//! Configuration keys (all optional, defaults in brackets):
//!
//! ```text
//! scheme            point_to_point | two_user | symmetric   [point_to_point]
//! users             number of users M                        [scheme default]
//! power             scalar, or comma-separated per user     [1]
//! noise_variance    channel noise N                          [1]
//! horizon           block length n                           [50]
//! trials            Monte Carlo trials                       [10000]
//! target_error      scalar, or comma-separated per user     [0.05]
//! seed              u64                                      [0]
//! forced            true | false                             [true]
//! trace             true | false                             [false]
//! out_dir           output directory                         [none]
//! assert_error_band true | false                             [false]
//! assert_power      true | false                             [false]
//! ```
//!
//! Lines starting with `#` and blank lines are ignored.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::encoder::Scheme;
use crate::error::{Error, Result};
use crate::fixedpoint;
use crate::montecarlo::{verify_power_constraint, wilson_interval, SimulationConfig, Simulator, Z95};
use crate::rates;

pub const CSV_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchemeKind {
    PointToPoint,
    TwoUser,
    Symmetric,
}

impl SchemeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::PointToPoint => "point_to_point",
            Self::TwoUser => "two_user",
            Self::Symmetric => "symmetric",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "point_to_point" => Ok(Self::PointToPoint),
            "two_user" => Ok(Self::TwoUser),
            "symmetric" => Ok(Self::Symmetric),
            other => Err(Error::Config(format!("unknown scheme '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub scheme: SchemeKind,
    pub users: Option<usize>,
    pub power: Vec<f64>,
    pub noise_variance: f64,
    pub horizon: usize,
    pub trials: usize,
    pub target_error: Vec<f64>,
    pub seed: u64,
    pub forced: bool,
    pub trace: bool,
    pub out_dir: Option<String>,
    pub assert_error_band: bool,
    pub assert_power: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scheme: SchemeKind::PointToPoint,
            users: None,
            power: vec![1.0],
            noise_variance: 1.0,
            horizon: 50,
            trials: 10_000,
            target_error: vec![0.05],
            seed: 0,
            forced: true,
            trace: false,
            out_dir: None,
            assert_error_band: false,
            assert_power: false,
        }
    }
}

fn parse_f64_list(key: &str, v: &str) -> Result<Vec<f64>> {
    let out = v
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("{key}: '{}' is not a number", s.trim())))
        })
        .collect::<Result<Vec<_>>>()?;
    if out.is_empty() {
        return Err(Error::Config(format!("{key}: empty list")));
    }
    Ok(out)
}

fn parse_scalar<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("{key}: cannot parse '{v}'")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got '{v}'"))),
    }
}

fn join(xs: &[f64]) -> String {
    xs.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "scheme" => cfg.scheme = SchemeKind::parse(value)?,
                "users" => cfg.users = Some(parse_scalar(key, value)?),
                "power" => cfg.power = parse_f64_list(key, value)?,
                "noise_variance" => cfg.noise_variance = parse_scalar(key, value)?,
                "horizon" => cfg.horizon = parse_scalar(key, value)?,
                "trials" => cfg.trials = parse_scalar(key, value)?,
                "target_error" => cfg.target_error = parse_f64_list(key, value)?,
                "seed" => cfg.seed = parse_scalar(key, value)?,
                "forced" => cfg.forced = parse_bool(key, value)?,
                "trace" => cfg.trace = parse_bool(key, value)?,
                "out_dir" => cfg.out_dir = (!value.is_empty()).then(|| value.to_string()),
                "assert_error_band" => cfg.assert_error_band = parse_bool(key, value)?,
                "assert_power" => cfg.assert_power = parse_bool(key, value)?,
                other => return Err(Error::Config(format!("line {}: unknown key '{other}'", i + 1))),
            }
        }
        Ok(cfg)
    }

    pub fn emit(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "scheme = {}", self.scheme.as_str());
        if let Some(m) = self.users {
            let _ = writeln!(s, "users = {m}");
        }
        let _ = writeln!(s, "power = {}", join(&self.power));
        let _ = writeln!(s, "noise_variance = {:?}", self.noise_variance);
        let _ = writeln!(s, "horizon = {}", self.horizon);
        let _ = writeln!(s, "trials = {}", self.trials);
        let _ = writeln!(s, "target_error = {}", join(&self.target_error));
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "forced = {}", self.forced);
        let _ = writeln!(s, "trace = {}", self.trace);
        if let Some(d) = &self.out_dir {
            let _ = writeln!(s, "out_dir = {d}");
        }
        let _ = writeln!(s, "assert_error_band = {}", self.assert_error_band);
        let _ = writeln!(s, "assert_power = {}", self.assert_power);
        s
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn user_count(&self) -> usize {
        match self.scheme {
            SchemeKind::PointToPoint => 1,
            SchemeKind::TwoUser => 2,
            SchemeKind::Symmetric => self.users.unwrap_or(2),
        }
    }

    /// Checks scheme-specific constraints and builds the scheme.
    pub fn to_scheme(&self) -> Result<Scheme> {
        let m = self.user_count();
        if let Some(u) = self.users {
            if u != m {
                return Err(Error::Config(format!("{} requires users = {m}, got {u}", self.scheme.as_str())));
            }
        }
        if self.power.len() != 1 && self.power.len() != m {
            return Err(Error::Config(format!("expected 1 or {m} powers, got {}", self.power.len())));
        }
        if let Some(p) = self.power.iter().find(|p| !(p.is_finite() && **p > 0.0)) {
            return Err(Error::Config(format!("power must be positive, got {p}")));
        }
        if !(self.noise_variance.is_finite() && self.noise_variance > 0.0) {
            return Err(Error::Config(format!("noise_variance must be positive, got {}", self.noise_variance)));
        }
        if let Some(e) = self.target_error.iter().find(|e| !(**e > 0.0 && **e < 1.0)) {
            return Err(Error::Config(format!("target_error must lie in (0, 1), got {e}")));
        }
        if self.horizon == 0 || self.trials == 0 {
            return Err(Error::Config("horizon and trials must be positive".into()));
        }
        let p = |i: usize| self.power[if self.power.len() == 1 { 0 } else { i }];
        let scheme = match self.scheme {
            SchemeKind::PointToPoint => Scheme::PointToPoint { power: p(0) },
            SchemeKind::TwoUser => Scheme::TwoUser {
                p1: p(0),
                p2: p(1),
                forced: self.forced,
            },
            SchemeKind::Symmetric => {
                if (0..m).any(|i| p(i) != p(0)) {
                    return Err(Error::Config("symmetric scheme requires equal powers".into()));
                }
                Scheme::Symmetric {
                    users: m,
                    power: p(0),
                    forced: self.forced,
                }
            }
        };
        scheme.validate().map_err(|e| match e {
            Error::Config(_) => e,
            other => Error::Config(other.to_string()),
        })?;
        Ok(scheme)
    }

    pub fn simulation(&self) -> Result<SimulationConfig> {
        let mut sim = SimulationConfig::new(self.to_scheme()?, self.horizon, self.target_error[0]);
        sim.target_error = self.target_error.clone();
        sim.noise_variance = self.noise_variance;
        sim.validate()?;
        Ok(sim)
    }
}

/// Formats with 12 significant digits.
pub fn fmt12(x: f64) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    if x == 0.0 {
        return "0".to_string();
    }
    let exp = x.abs().log10().floor() as i32;
    if (-5..12).contains(&exp) {
        let decimals = (11 - exp).max(0) as usize;
        let s = format!("{x:.decimals$}");
        let s = if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        };
        // rounding may carry into a new digit; re-round through scientific form
        if s.trim_start_matches('-').replace('.', "").trim_start_matches('0').len() > 12 {
            return fmt12(s.parse().unwrap_or(x));
        }
        s
    } else {
        let s = format!("{x:.11e}");
        let (mant, e) = s.split_once('e').unwrap_or((&s, "0"));
        let mant = if mant.contains('.') {
            mant.trim_end_matches('0').trim_end_matches('.')
        } else {
            mant
        };
        format!("{mant}e{e}")
    }
}

fn round12(x: f64) -> f64 {
    fmt12(x).parse().unwrap_or(x)
}

fn csv_header(kind: &str, columns: &[&str]) -> String {
    format!("# posterior-mac {kind} v{CSV_VERSION}\n{}\n", columns.join(","))
}

#[derive(Debug, Serialize)]
pub struct FixedPointSummary {
    pub scheme: &'static str,
    pub users: usize,
    pub power: f64,
    pub rho_star: Option<f64>,
    pub sigma_w2: Option<f64>,
    pub rho_residual: Option<f64>,
    pub lambda_star: Option<f64>,
    pub lambda_residual: Option<f64>,
    pub forcing_powers: Vec<f64>,
}

pub fn cmd_fixed_point(cfg: &ExperimentConfig) -> Result<FixedPointSummary> {
    let scheme = cfg.to_scheme()?;
    let n = cfg.noise_variance;
    let mut s = FixedPointSummary {
        scheme: scheme.name(),
        users: scheme.users(),
        power: round12(scheme.nominal_powers()[0]),
        rho_star: None,
        sigma_w2: None,
        rho_residual: None,
        lambda_star: None,
        lambda_residual: None,
        forcing_powers: Vec::new(),
    };
    match scheme {
        Scheme::PointToPoint { .. } => {
            s.lambda_star = Some(1.0);
            s.lambda_residual = Some(0.0);
        }
        Scheme::TwoUser { p1, p2, .. } => {
            let fp = fixedpoint::two_user_fixed_point(p1 / n, p2 / n)?;
            s.rho_star = Some(round12(fp.rho_star));
            s.sigma_w2 = Some(round12(fp.sigma_w2 * n));
            s.rho_residual = Some(round12(fp.residual));
        }
        Scheme::Symmetric { users, power, .. } => {
            let fp = fixedpoint::forcing_powers(power / n, users)?;
            s.lambda_star = Some(round12(fp.lambda_star));
            s.lambda_residual = Some(round12(fp.residual));
            s.forcing_powers = fp.forcing_powers.iter().map(|p| round12(p * n)).collect();
        }
    }
    Ok(s)
}

pub fn cmd_rates(cfg: &ExperimentConfig) -> Result<String> {
    let scheme = cfg.to_scheme()?;
    let n = cfg.noise_variance;
    let normalized = match scheme {
        Scheme::PointToPoint { power } => Scheme::PointToPoint { power: power / n },
        Scheme::TwoUser { p1, p2, forced } => Scheme::TwoUser {
            p1: p1 / n,
            p2: p2 / n,
            forced,
        },
        Scheme::Symmetric { users, power, forced } => Scheme::Symmetric {
            users,
            power: power / n,
            forced,
        },
    };
    let pred = rates::predict(&normalized)?;
    let mut out = csv_header("rates", &["scheme", "user", "R_star_bits", "sum_rate_bits", "contraction_r"]);
    for (u, (r, c)) in pred.per_user.iter().zip(&pred.contraction).enumerate() {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            pred.scheme,
            u + 1,
            fmt12(*r),
            fmt12(pred.sum_rate),
            fmt12(*c)
        );
    }
    Ok(out)
}

pub fn trace_csv(sim: &Simulator, seed: u64) -> String {
    let r = sim.run_trial(seed, 0, true);
    let mut out = csv_header("trace", &["n", "user", "Y", "A", "B", "X", "log_width", "rate_bits"]);
    for row in r.trace.unwrap_or_default() {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            row.n,
            row.user + 1,
            fmt12(row.y),
            fmt12(row.a),
            fmt12(row.b),
            fmt12(row.x),
            fmt12(row.log_width),
            fmt12(row.rate_bits)
        );
    }
    out
}

#[derive(Debug, Serialize)]
pub struct SimulationSummary {
    pub scheme: &'static str,
    pub users: usize,
    pub horizon: usize,
    pub trials: u64,
    pub seed: u64,
    pub target_error: f64,
    pub empirical_error: f64,
    pub wilson_lo: f64,
    pub wilson_hi: f64,
    pub max_user_error: f64,
    pub mean_rate_bits: f64,
    pub predicted_rate_bits: f64,
    pub decode_mismatches: u64,
    pub error_band_ok: bool,
    pub power_ok: bool,
    pub passed: bool,
}

pub struct SimulationOutput {
    pub summary: SimulationSummary,
    pub users_csv: String,
    pub steps_csv: String,
    pub trace_csv: Option<String>,
}

pub fn cmd_simulate(cfg: &ExperimentConfig) -> Result<SimulationOutput> {
    let sim = Simulator::new(cfg.simulation()?)?;
    let stats = sim.run_batch(cfg.trials, cfg.seed)?;
    let power = verify_power_constraint(&stats, sim.schedule());
    let m = stats.users.len();

    let mut users_csv = csv_header(
        "batch_users",
        &[
            "user",
            "target_error",
            "errors",
            "error_rate",
            "wilson_lo",
            "wilson_hi",
            "decode_mismatches",
            "mean_rate_bits",
            "time_average_power",
            "worst_step_power_z",
        ],
    );
    for (u, s) in stats.users.iter().enumerate() {
        let _ = writeln!(
            users_csv,
            "{},{},{},{},{},{},{},{},{},{}",
            u + 1,
            fmt12(s.target_error),
            s.errors,
            fmt12(s.error_rate),
            fmt12(s.wilson_lo),
            fmt12(s.wilson_hi),
            s.decode_mismatches,
            fmt12(s.mean_rate_bits),
            fmt12(s.time_average_power),
            fmt12(power.users[u].worst_step_z)
        );
    }

    let mut steps_csv = csv_header("batch_steps", &["n", "user", "mean", "variance", "power", "corr_with_user1"]);
    for step in &stats.steps {
        for (u, mo) in step.moments.iter().enumerate() {
            let corr = step
                .correlation
                .as_ref()
                .map(|c| fmt12(c[u]))
                .unwrap_or_default();
            let _ = writeln!(
                steps_csv,
                "{},{},{},{},{},{}",
                step.n,
                u + 1,
                fmt12(mo.mean),
                fmt12(mo.variance),
                fmt12(mo.power),
                corr
            );
        }
    }

    let errors: u64 = stats.users.iter().map(|u| u.errors).sum();
    let pooled = stats.trials * m as u64;
    let (lo, hi) = wilson_interval(errors, pooled, Z95);
    let mismatches = stats.total_mismatches();
    let band_ok = stats.users.iter().all(|u| u.target_in_band());
    let power_ok = power.all_ok();
    let passed = mismatches == 0 && (!cfg.assert_error_band || band_ok) && (!cfg.assert_power || power_ok);
    let predicted = rates::predict(sim.schedule().scheme())
        .map(|p| p.per_user[0])
        .unwrap_or(f64::NAN);

    let summary = SimulationSummary {
        scheme: sim.schedule().scheme().name(),
        users: m,
        horizon: cfg.horizon,
        trials: stats.trials,
        seed: cfg.seed,
        target_error: round12(cfg.target_error[0]),
        empirical_error: round12(errors as f64 / pooled as f64),
        wilson_lo: round12(lo),
        wilson_hi: round12(hi),
        max_user_error: round12(stats.users.iter().map(|u| u.error_rate).fold(0.0, f64::max)),
        mean_rate_bits: round12(stats.users.iter().map(|u| u.mean_rate_bits).sum::<f64>() / m as f64),
        predicted_rate_bits: round12(predicted),
        decode_mismatches: mismatches,
        error_band_ok: band_ok,
        power_ok,
        passed,
    };
    Ok(SimulationOutput {
        summary,
        users_csv,
        steps_csv,
        trace_csv: cfg.trace.then(|| trace_csv(&sim, cfg.seed)),
    })
}

#[derive(Debug, Parser)]
#[command(name = "posterior-mac", version, about = "Posterior-matching feedback coding over the Gaussian MAC")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Configuration file in key = value format.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, value_name = "U64")]
    pub seed: Option<u64>,
    /// Output directory; overrides out_dir.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Worker threads (defaults to available parallelism).
    #[arg(long, value_name = "N")]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fixed points, injection variance and forcing powers (JSON).
    FixedPoint(CommonArgs),
    /// Predicted per-user and sum rates (CSV).
    Rates(CommonArgs),
    /// Monte Carlo batch (CSV files plus JSON summary).
    Simulate(CommonArgs),
    /// Per-step trace of a single trial (CSV).
    Trace(CommonArgs),
}

fn load_config(args: &CommonArgs) -> Result<(ExperimentConfig, Option<PathBuf>)> {
    let mut cfg = match &args.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let out = args.out.clone().or_else(|| cfg.out_dir.as_ref().map(PathBuf::from));
    Ok((cfg, out))
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Config(format!("{}: {e}", dir.display())))?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| Error::Internal(format!("{}: {e}", path.display())))
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    serde_json::to_string_pretty(v)
        .map(|s| s + "\n")
        .map_err(|e| Error::Internal(e.to_string()))
}

/// Runs a command and returns what it printed on stdout and whether every
/// configured assertion held.
pub fn execute(command: &Command) -> Result<(String, bool)> {
    let args = match command {
        Command::FixedPoint(a) | Command::Rates(a) | Command::Simulate(a) | Command::Trace(a) => a,
    };
    let (cfg, out) = load_config(args)?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = args.threads {
        if t == 0 {
            return Err(Error::Config("--threads must be positive".into()));
        }
        builder = builder.num_threads(t);
    }
    let pool = builder.build().map_err(|e| Error::Internal(e.to_string()))?;
    pool.install(|| match command {
        Command::FixedPoint(_) => {
            let json = to_json(&cmd_fixed_point(&cfg)?)?;
            if let Some(dir) = &out {
                write_file(dir, "fixed_point.json", &json)?;
            }
            Ok((json, true))
        }
        Command::Rates(_) => {
            let csv = cmd_rates(&cfg)?;
            if let Some(dir) = &out {
                write_file(dir, "rates.csv", &csv)?;
            }
            Ok((csv, true))
        }
        Command::Simulate(_) => {
            let r = cmd_simulate(&cfg)?;
            let json = to_json(&r.summary)?;
            if let Some(dir) = &out {
                write_file(dir, "batch_users.csv", &r.users_csv)?;
                write_file(dir, "batch_steps.csv", &r.steps_csv)?;
                write_file(dir, "summary.json", &json)?;
                if let Some(t) = &r.trace_csv {
                    write_file(dir, "trace.csv", t)?;
                }
            }
            Ok((json, r.summary.passed))
        }
        Command::Trace(_) => {
            let sim = Simulator::new(cfg.simulation()?)?;
            let csv = trace_csv(&sim, cfg.seed);
            if let Some(dir) = &out {
                write_file(dir, "trace.csv", &csv)?;
            }
            Ok((csv, true))
        }
    })
}

/// Exit status: 0 success, 1 assertion failure or runtime error, 2 configuration error.
pub fn exit_code(result: &Result<(String, bool)>) -> ExitCode {
    match result {
        Ok((_, true)) => ExitCode::SUCCESS,
        Ok((_, false)) => ExitCode::from(1),
        Err(Error::Config(_) | Error::Domain(_) | Error::Dimension { .. } | Error::Size(_)) => ExitCode::from(2),
        Err(_) => ExitCode::from(1),
    }
}
