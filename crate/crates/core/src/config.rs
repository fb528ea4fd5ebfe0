//! Run configuration for the command-line pipeline.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::agents::TrainConfig;
use crate::battery_env::BatteryParams;
use crate::correction::{ConstraintConfig, DistillConfig, GridSpec};
use crate::error::{Error, Result};
use crate::eval::SocCarry;
use crate::market_data::{RbcThresholds, SynthConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Price CSV used when a subcommand gets no `--prices`.
    pub prices: Option<PathBuf>,
    /// Directory receiving CSV tables.
    pub output_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths { prices: None, output_dir: PathBuf::from("out") }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub initial_soc: f64,
    pub soc_carry: SocCarry,
    pub histogram_bin_width: f64,
    /// Fixed thresholds for the rule-based controller; quartiles of the
    /// training days when absent.
    pub rbc_thresholds: Option<RbcThresholds>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { initial_soc: 0.5, soc_carry: SocCarry::Reset, histogram_bin_width: 10.0, rbc_thresholds: None }
    }
}

/// Everything a pipeline run needs. The top-level `seed` drives training,
/// distillation and synthetic data; the nested seed fields are overwritten.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub battery: BatteryParams,
    pub train: TrainConfig,
    pub constraints: ConstraintConfig,
    pub distill: DistillConfig,
    pub heatmap: GridSpec,
    pub evaluation: EvalConfig,
    pub synth: SynthConfig,
    pub paths: Paths,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let c: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let c: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    /// Reads TOML, or JSON when the file name ends in `.json`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
            Self::from_json_str(&text)
        } else {
            Self::from_toml_str(&text)
        }
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.battery.validate()?;
        self.train.validate()?;
        self.constraints.validate()?;
        self.distill.validate()?;
        self.heatmap.validate()?;
        if !self.battery.valid_soc(self.evaluation.initial_soc) {
            return Err(Error::Config(format!("initial soc {} out of range", self.evaluation.initial_soc)));
        }
        if !(self.evaluation.histogram_bin_width > 0.0) {
            return Err(Error::Config("histogram bin width must be positive".into()));
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { seed: self.seed, initial_soc: self.evaluation.initial_soc, ..self.train.clone() }
    }

    pub fn distill_config(&self) -> DistillConfig {
        DistillConfig { seed: self.seed, initial_soc: self.evaluation.initial_soc, ..self.distill.clone() }
    }
}

/// Reads a state grid from TOML, or JSON when the file name ends in `.json`.
pub fn load_grid(path: impl AsRef<Path>) -> Result<GridSpec> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let grid: GridSpec = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?
    } else {
        toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?
    };
    grid.validate()?;
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_full_scale_setup() {
        let c = RunConfig::default();
        assert_eq!(c.train.gamma, 0.999);
        assert_eq!(c.train.tau, 0.1);
        assert_eq!(c.train.buffer_capacity, 1_000_000);
        assert_eq!(c.train.minibatch, 16_384);
        assert_eq!(c.train.episodes, 50_000);
        assert_eq!(c.train.hidden_layers, vec![256, 128]);
        assert_eq!(c.train.learning_rate, 5e-4);
        assert_eq!(c.train.atoms.count, 51);
        assert_eq!(c.distill.epochs, 600);
        assert_eq!(c.distill.learning_rate, 1e-3);
        assert_eq!(c.distill.hidden_layers, vec![64, 32]);
        assert_eq!(c.constraints.omega, 1e-4);
        assert_eq!((c.constraints.price_lower, c.constraints.price_upper), (-500.0, 1500.0));
        assert_eq!((c.battery.capacity_mwh, c.battery.p_max_mw, c.battery.step_minutes), (8.0, 4.0, 2));
    }

    #[test]
    fn toml_and_json_round_trip() {
        let c = RunConfig::default();
        let text = c.to_toml_string().unwrap();
        assert_eq!(RunConfig::from_toml_str(&text).unwrap(), c);
        let json = serde_json::to_string(&c).unwrap();
        assert_eq!(RunConfig::from_json_str(&json).unwrap(), c);
    }

    #[test]
    fn partial_and_bad_files() {
        let c = RunConfig::from_toml_str("seed = 7\n[train]\nepisodes = 10\n").unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.train.episodes, 10);
        assert_eq!(c.train.gamma, 0.999);
        assert!(RunConfig::from_toml_str("[train]\nepisodez = 10\n").is_err());
        assert!(RunConfig::from_toml_str("[constraints]\nmargin = 0.5\n").is_err());
    }
}
