//! Memoryless real AWGN multiple-access channel with noiseless feedback.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::error::{Error, Result};
use crate::numerics::inv_cdf_unchecked;

/// Per-user power budgets and the channel noise variance.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerProfile {
    powers: Vec<f64>,
    noise_variance: f64,
}

impl PowerProfile {
    pub fn new(powers: Vec<f64>, noise_variance: f64) -> Result<Self> {
        if powers.is_empty() {
            return Err(Error::Config("at least one user is required".into()));
        }
        if let Some(p) = powers.iter().find(|p| !(p.is_finite() && **p > 0.0)) {
            return Err(Error::Config(format!("powers must be positive and finite, got {p}")));
        }
        if !(noise_variance.is_finite() && noise_variance > 0.0) {
            return Err(Error::Config(format!(
                "noise variance must be positive, got {noise_variance}"
            )));
        }
        Ok(Self {
            powers,
            noise_variance,
        })
    }

    /// Unit noise variance, the normalization every closed form assumes.
    pub fn unit_noise(powers: Vec<f64>) -> Result<Self> {
        Self::new(powers, 1.0)
    }

    pub fn symmetric(users: usize, power: f64) -> Result<Self> {
        Self::unit_noise(vec![power; users])
    }

    pub fn num_users(&self) -> usize {
        self.powers.len()
    }

    pub fn powers(&self) -> &[f64] {
        &self.powers
    }

    pub fn power(&self, user: usize) -> f64 {
        self.powers[user]
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }
}

/// Reproducible Gaussian stream keyed by `(seed, stream)`.
///
/// Uniforms come from ChaCha8 in counter mode; normals are produced by the
/// inverse-CDF transform so that every variate is a pure function of its
/// position in the stream.
#[derive(Debug, Clone)]
pub struct NoiseSource {
    seed: u64,
    stream: u64,
    rng: ChaCha8Rng,
}

impl NoiseSource {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { seed, stream, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Uniform on the open interval (0, 1), on a 2⁻⁵³ grid offset by half a step.
    pub fn uniform_open(&mut self) -> f64 {
        const SCALE: f64 = 1.0 / (1u64 << 53) as f64;
        ((self.rng.next_u64() >> 11) as f64 + 0.5) * SCALE
    }

    pub fn standard_normal(&mut self) -> f64 {
        inv_cdf_unchecked(self.uniform_open())
    }

    /// `N(0, variance)`; a zero variance returns exactly zero without
    /// consuming the stream.
    pub fn gaussian(&mut self, variance: f64) -> f64 {
        if variance == 0.0 {
            0.0
        } else {
            variance.sqrt() * self.standard_normal()
        }
    }
}

/// `Y = Σ_m α_m x_m + Z` with `Z ~ N(0, noise_variance)`.
///
/// `noise_variance = 0` is accepted here as a deterministic-channel hook.
pub fn transmit(x: &[f64], alpha: &[f64], noise_variance: f64, noise: &mut NoiseSource) -> Result<f64> {
    if x.len() != alpha.len() {
        return Err(Error::Dimension {
            expected: x.len(),
            actual: alpha.len(),
        });
    }
    if !(noise_variance >= 0.0) {
        return Err(Error::Domain(format!("negative noise variance {noise_variance}")));
    }
    let signal: f64 = x.iter().zip(alpha).map(|(x, a)| a * x).sum();
    Ok(signal + noise.gaussian(noise_variance))
}

/// Receiver-side injection before the first feedback: `Ỹ = y + W`, `W ~ N(0, σ_w²)`.
/// Returns `(Ỹ, W)`.
pub fn inject_feedback_noise(y: f64, sigma_w2: f64, noise: &mut NoiseSource) -> Result<(f64, f64)> {
    if !(sigma_w2 >= 0.0) {
        return Err(Error::Domain(format!("negative injection variance {sigma_w2}")));
    }
    let w = noise.gaussian(sigma_w2);
    Ok((y + w, w))
}
