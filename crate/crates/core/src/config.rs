//! Run configuration shared by every CLI subcommand, read from JSON.
//!
//! Every section is optional and falls back to its defaults; unknown keys
//! are rejected.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::ingest::{ScenarioConfig, DEFAULT_TRAIN_FRACTION, DEFAULT_WINDOW_BINS};
use crate::mpc::MpcConfig;
use crate::synth::SynthConfig;
use crate::sysid::{FitConfig, DEFAULT_HIGH_PERCENTILE, DEFAULT_LOW_PERCENTILE};
use crate::types::DEFAULT_BIN_MINUTES;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub bin_minutes: u32,
    pub window_bins: usize,
    pub train_fraction: f64,
    /// Residual percentiles used for the noise bounds.
    pub noise_percentiles: (u8, u8),
    pub fit: FitConfig,
    pub mpc: MpcConfig,
    pub eval: EvalConfig,
    pub scenario: ScenarioConfig,
    pub synth: SynthConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            bin_minutes: DEFAULT_BIN_MINUTES,
            window_bins: DEFAULT_WINDOW_BINS,
            train_fraction: DEFAULT_TRAIN_FRACTION,
            noise_percentiles: (DEFAULT_LOW_PERCENTILE, DEFAULT_HIGH_PERCENTILE),
            fit: FitConfig::default(),
            mpc: MpcConfig::default(),
            eval: EvalConfig::default(),
            scenario: ScenarioConfig::default(),
            synth: SynthConfig::default(),
        }
    }
}

impl RunConfig {
    /// Parses and validates.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::param(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.bin_minutes == 0 {
            return Err(Error::param("bin_minutes must be positive"));
        }
        if self.window_bins == 0 {
            return Err(Error::param("window_bins must be positive"));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return Err(Error::param(format!(
                "train_fraction must lie in (0, 1], got {}",
                self.train_fraction
            )));
        }
        let (lo, hi) = self.noise_percentiles;
        if !(1..=99).contains(&lo) || !(1..=99).contains(&hi) || lo >= hi {
            return Err(Error::param(format!(
                "noise percentiles must satisfy 1 <= low < high <= 99, got ({lo}, {hi})"
            )));
        }
        self.fit.validate()?;
        self.mpc.validate()?;
        self.eval.validate()?;
        self.scenario.validate()?;
        self.synth.validate()?;
        if self.synth.bin_minutes != self.bin_minutes {
            return Err(Error::param("synth.bin_minutes must equal bin_minutes"));
        }
        Ok(())
    }
}
