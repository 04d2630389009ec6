//! Rayleigh-fading uplink with superposition coding and successive decoding.
//!
//! L messages share one transmission at power fractions ν_1..ν_L. The
//! receiver decodes strongest-first, cancelling each decoded message, so
//! message j survives iff the unit-mean exponential fading draw χ clears
//!
//!   x_j = (1/γ̄) / (ν_j/u′ − Σ_{j'>j} ν_{j'}),
//!
//! and layer l is decoded iff χ ≥ u_l = max_{j≤l} x_j. With χ ~ Exp(1) the
//! layer-l success probability is exactly exp(−u_l).
//!
//! Note: the per-message thresholds keep ν_j (not a fixed ν_l) in the
//! numerator position of each max argument; that is the standard successive
//! interference cancellation outage chain, and it is what makes the joint
//! decoding event a simple prefix test.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uplink configuration: mean SNR (linear) and the code-rate threshold
/// u′ = 2^(u/W) − 1.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ChannelConfig {
    pub mean_snr: f64,
    pub u_prime: f64,
}

impl ChannelConfig {
    pub fn new(mean_snr: f64, u_prime: f64) -> Result<Self> {
        let cfg = Self { mean_snr, u_prime };
        cfg.validate()?;
        Ok(cfg)
    }

    /// From an average SNR in dB.
    pub fn from_snr_db(snr_db: f64, u_prime: f64) -> Result<Self> {
        Self::new(10f64.powf(snr_db / 10.0), u_prime)
    }

    /// From the path-loss ingredients: γ̄ = P·d^(−β) / σ².
    pub fn from_path_loss(
        power_watts: f64,
        distance_m: f64,
        path_loss_exp: f64,
        noise_watts: f64,
        u_prime: f64,
    ) -> Result<Self> {
        if path_loss_exp < 2.0 {
            return Err(Error::Config(format!(
                "path loss exponent must be >= 2, got {path_loss_exp}"
            )));
        }
        if power_watts <= 0.0 || distance_m <= 0.0 || noise_watts <= 0.0 {
            return Err(Error::Config(
                "power, distance and noise must be positive".into(),
            ));
        }
        Self::new(
            power_watts * distance_m.powf(-path_loss_exp) / noise_watts,
            u_prime,
        )
    }

    /// u′ derived from a code rate (bits/sec) and bandwidth (Hz).
    pub fn from_code_rate(snr_db: f64, code_rate: f64, bandwidth: f64) -> Result<Self> {
        if bandwidth <= 0.0 || code_rate <= 0.0 {
            return Err(Error::Config(
                "code_rate and bandwidth must be positive".into(),
            ));
        }
        Self::from_snr_db(snr_db, 2f64.powf(code_rate / bandwidth) - 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mean_snr > 0.0) || !self.mean_snr.is_finite() {
            return Err(Error::Config(format!(
                "mean SNR must be positive and finite, got {}",
                self.mean_snr
            )));
        }
        if !(self.u_prime > 0.0) || !self.u_prime.is_finite() {
            return Err(Error::Config(format!(
                "u_prime must be positive and finite, got {}",
                self.u_prime
            )));
        }
        Ok(())
    }
}

/// Power split ν over the L superposed messages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerAllocation {
    pub nu: Vec<f64>,
}

impl PowerAllocation {
    pub fn new(nu: Vec<f64>) -> Result<Self> {
        if nu.is_empty() {
            return Err(Error::Config("power allocation must not be empty".into()));
        }
        if nu.iter().any(|&v| v < 0.0) {
            return Err(Error::Config("power fractions must be nonnegative".into()));
        }
        let total: f64 = nu.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "power fractions must sum to 1 within 1e-9, got {total}"
            )));
        }
        Ok(Self { nu })
    }

    pub fn levels(&self) -> usize {
        self.nu.len()
    }

    /// Check ν_j/u′ > Σ_{j'>j} ν_{j'} for every message, which keeps all
    /// successive-decoding thresholds finite and positive.
    pub fn check_feasible(&self, cfg: &ChannelConfig) -> Result<()> {
        let mut suffix = 0.0;
        for j in (0..self.nu.len()).rev() {
            if self.nu[j] / cfg.u_prime - suffix <= 0.0 {
                return Err(Error::Infeasible {
                    index: j + 1,
                    detail: format!(
                        "nu[{}] = {} must exceed u' * (later sum {})",
                        j + 1,
                        self.nu[j],
                        suffix
                    ),
                });
            }
            suffix += self.nu[j];
        }
        Ok(())
    }
}

/// One device's fading draw and the decoded prefix it permits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeOutcome {
    pub chi: f64,
    /// Deepest decoded layer m: the decoded set is exactly {1..m}.
    pub decoded_depth: usize,
}

impl DecodeOutcome {
    /// Whether layer `l` (1-based) was decoded.
    pub fn decodes(&self, l: usize) -> bool {
        l >= 1 && l <= self.decoded_depth
    }
}

/// Layer decode thresholds u_l = max_{j≤l} x_j; nondecreasing in l.
pub fn decode_thresholds(nu: &PowerAllocation, cfg: &ChannelConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    nu.check_feasible(cfg)?;
    let levels = nu.levels();
    let mut suffix = vec![0.0; levels];
    for j in (0..levels.saturating_sub(1)).rev() {
        suffix[j] = suffix[j + 1] + nu.nu[j + 1];
    }
    let mut thresholds = Vec::with_capacity(levels);
    let mut running_max = 0.0f64;
    for j in 0..levels {
        let x = (1.0 / cfg.mean_snr) / (nu.nu[j] / cfg.u_prime - suffix[j]);
        running_max = running_max.max(x);
        thresholds.push(running_max);
    }
    Ok(thresholds)
}

/// Closed-form layer success probabilities p_l = exp(−u_l) for χ ~ Exp(1);
/// nonincreasing, each in (0,1].
pub fn closed_form_p(nu: &PowerAllocation, cfg: &ChannelConfig) -> Result<Vec<f64>> {
    Ok(decode_thresholds(nu, cfg)?
        .into_iter()
        .map(|u| (-u).exp())
        .collect())
}

/// Unit-mean exponential fading draw via inverse CDF.
pub fn sample_fading<R: Rng>(rng: &mut R) -> f64 {
    let u: f64 = rng.random();
    -(1.0 - u).ln()
}

/// Outcome for a given fading draw against precomputed thresholds.
pub fn decode_with_fading(chi: f64, thresholds: &[f64]) -> DecodeOutcome {
    let decoded_depth = thresholds.iter().take_while(|&&u| chi >= u).count();
    DecodeOutcome { chi, decoded_depth }
}

/// Draw one block-fading coefficient per device and decode.
pub fn sample_decode<R: Rng>(
    rng: &mut R,
    nu: &PowerAllocation,
    cfg: &ChannelConfig,
    devices: usize,
) -> Result<Vec<DecodeOutcome>> {
    let thresholds = decode_thresholds(nu, cfg)?;
    Ok((0..devices)
        .map(|_| decode_with_fading(sample_fading(rng), &thresholds))
        .collect())
}
