//! Seeded synthetic traffic with daily and weekly seasonality.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::TimeSeries;

/// 2024-01-01T00:00:00Z
pub const DEFAULT_START: i64 = 1_704_067_200;
pub const INTERVAL_SECS: i64 = 300;
pub const STEPS_PER_DAY: usize = 288;
pub const STEPS_PER_WEEK: usize = 2016;
pub const SOURCE_LENGTH: usize = 8563;
pub const TARGET_LENGTHS: [usize; 4] = [363, 369, 358, 365];

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid synth config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub length: usize,
    pub base_level: f64,
    pub daily_amp: f64,
    pub weekly_amp: f64,
    pub trend_per_step: f64,
    pub noise_sd: f64,
    /// Per-step probability of a spike.
    pub spike_rate: f64,
    /// A spike multiplies the value by `1 + spike_scale·U(0,1)`.
    pub spike_scale: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            length: SOURCE_LENGTH,
            base_level: 100.0,
            daily_amp: 40.0,
            weekly_amp: 15.0,
            trend_per_step: 0.001,
            noise_sd: 3.0,
            spike_rate: 0.002,
            spike_scale: 0.5,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::Config(m.to_string()));
        if self.length == 0 {
            return bad("length must be at least 1");
        }
        if !(self.noise_sd >= 0.0) {
            return bad("noise_sd must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.spike_rate) {
            return bad("spike_rate must lie in [0, 1]");
        }
        let all = [
            self.base_level,
            self.daily_amp,
            self.weekly_amp,
            self.trend_per_step,
            self.noise_sd,
            self.spike_scale,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return bad("every parameter must be finite");
        }
        Ok(())
    }

    /// Noise-free level at step `t`.
    pub fn seasonal(&self, t: usize) -> f64 {
        let t = t as f64;
        self.base_level
            + self.trend_per_step * t
            + self.daily_amp * (2.0 * PI * t / STEPS_PER_DAY as f64).sin()
            + self.weekly_amp * (2.0 * PI * t / STEPS_PER_WEEK as f64).sin()
    }
}

pub fn generate(name: &str, cfg: &SynthConfig) -> Result<TimeSeries, SynthError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, cfg.noise_sd).map_err(|e| SynthError::Config(e.to_string()))?;
    let values = (0..cfg.length)
        .map(|t| {
            let mut v = cfg.seasonal(t) + noise.sample(&mut rng);
            if rng.random_bool(cfg.spike_rate) {
                v *= 1.0 + cfg.spike_scale * rng.random::<f64>();
            }
            v.max(0.0)
        })
        .collect();
    Ok(TimeSeries::new(name, DEFAULT_START, INTERVAL_SECS, values))
}

/// Dataset name for family member `i`: `A` is the source, then `B`, `C`, ...
pub fn family_name(i: usize) -> String {
    let mut n = i;
    let mut s = Vec::new();
    loop {
        s.push(b'A' + (n % 26) as u8);
        if n < 26 {
            break;
        }
        n = n / 26 - 1;
    }
    s.reverse();
    String::from_utf8(s).expect("ASCII")
}

#[derive(Debug, Clone)]
pub struct Family {
    pub source: TimeSeries,
    pub targets: Vec<TimeSeries>,
}

/// Per-target configs: same periods, base level and amplitudes scaled by
/// factors in [0.7, 1.3], noise by [0.8, 1.5], lengths cycling through
/// [`TARGET_LENGTHS`].
pub fn target_configs(source: &SynthConfig, n_targets: usize, variation_seed: u64) -> Vec<SynthConfig> {
    let mut rng = ChaCha8Rng::seed_from_u64(variation_seed);
    (0..n_targets)
        .map(|i| SynthConfig {
            seed: rng.random(),
            length: TARGET_LENGTHS[i % TARGET_LENGTHS.len()],
            base_level: source.base_level * rng.random_range(0.7..1.3),
            daily_amp: source.daily_amp * rng.random_range(0.7..1.3),
            weekly_amp: source.weekly_amp * rng.random_range(0.7..1.3),
            trend_per_step: source.trend_per_step,
            noise_sd: source.noise_sd * rng.random_range(0.8..1.5),
            spike_rate: source.spike_rate,
            spike_scale: source.spike_scale,
        })
        .collect()
}

pub fn make_family(
    source_cfg: &SynthConfig,
    n_targets: usize,
    variation_seed: u64,
) -> Result<Family, SynthError> {
    if n_targets == 0 {
        return Err(SynthError::Config("n_targets must be at least 1".into()));
    }
    let source = generate(&family_name(0), source_cfg)?;
    let targets = target_configs(source_cfg, n_targets, variation_seed)
        .iter()
        .enumerate()
        .map(|(i, cfg)| generate(&family_name(i + 1), cfg))
        .collect::<Result<_, _>>()?;
    Ok(Family { source, targets })
}
