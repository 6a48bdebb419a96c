use std::path::{Path, PathBuf};

use help_core::devicesim::PoolConfig;
use help_core::metalearn::{EvalConfig, MetaTrainConfig};
use help_core::nas::EvolutionConfig;
use help_core::predictor::ModelConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Everything a run needs, read from one TOML file. Command-line flags
/// override individual fields afterwards.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Root seed; every stream of the run derives from it.
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    pub devices: DevicesSection,
    pub reference: ReferenceSection,
    /// `space` is taken from the device pool.
    pub model: ModelConfig,
    pub train: MetaTrainConfig,
    pub eval: EvalConfig,
    pub eval_targets: EvalTargets,
    pub search: SearchSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DevicesSection {
    pub count: usize,
    /// Measured architectures per device in the latency table.
    pub samples: usize,
    /// Existing pool (JSON) instead of generating one.
    pub pool_file: Option<PathBuf>,
    /// Existing latency table (CSV or JSON lines).
    pub table_file: Option<PathBuf>,
    pub generator: PoolConfig,
}

impl Default for DevicesSection {
    fn default() -> Self {
        Self {
            count: 18,
            samples: 900,
            pool_file: None,
            table_file: None,
            generator: PoolConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReferenceSection {
    pub count: usize,
    pub seed: u64,
    /// JSON-lines architecture file overriding the sampled set.
    pub file: Option<PathBuf>,
}

impl Default for ReferenceSection {
    fn default() -> Self {
        Self {
            count: 10,
            seed: 0,
            file: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalTargets {
    /// Devices to evaluate; empty means every held-out device of the pool.
    pub device_ids: Vec<String>,
    /// Support sizes evaluated in turn; empty means `eval.n_samples` only.
    pub sample_sweep: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSection {
    pub device_id: Option<String>,
    /// Absolute constraints in milliseconds.
    pub constraints_ms: Vec<f64>,
    /// Constraints as percentiles of the device's true latency over the
    /// space, used when `constraints_ms` is empty.
    pub percentiles: Vec<f64>,
    /// JSON-lines accuracy table; the synthetic generator is used without one.
    pub accuracy_file: Option<PathBuf>,
    pub accuracy_seed: u64,
    pub n_samples: usize,
    pub evolution: EvolutionConfig,
}

impl Default for SearchSection {
    fn default() -> Self {
        Self {
            device_id: None,
            constraints_ms: Vec::new(),
            percentiles: vec![20.0, 50.0, 80.0],
            accuracy_file: None,
            accuracy_seed: 0,
            n_samples: 10,
            evolution: EvolutionConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self, CliError> {
        let cfg: Self =
            toml::from_str(text).map_err(|e| CliError::Validation(format!("{origin}: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Validation(format!("{}: {e}", p.display())))?;
                Self::parse(&text, &p.display().to_string())
            }
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.devices.generator.validate()?;
        if self.devices.count < 2 {
            return Err(CliError::Validation(
                "devices.count must be at least 2".into(),
            ));
        }
        if self.reference.count == 0 {
            return Err(CliError::Validation(
                "reference.count must be at least 1".into(),
            ));
        }
        self.train.validate()?;
        self.eval.validate()?;
        if self.eval_targets.sample_sweep.contains(&0) {
            return Err(CliError::Validation(
                "eval_targets.sample_sweep entries must be positive".into(),
            ));
        }
        if let Some(p) = self
            .search
            .percentiles
            .iter()
            .find(|p| !(0.0..=100.0).contains(*p))
        {
            return Err(CliError::Validation(format!(
                "search.percentiles: {p} is outside [0, 100]"
            )));
        }
        if let Some(c) = self.search.constraints_ms.iter().find(|c| !c.is_finite()) {
            return Err(CliError::Validation(format!(
                "search.constraints_ms: {c} is not finite"
            )));
        }
        Ok(())
    }

    /// Precedence: `--out`, then `out_dir`, then `HELP_LAT_OUT`, then `help-lat-out`.
    pub fn resolve_out_dir(&self, flag: Option<&Path>) -> PathBuf {
        flag.map(Path::to_path_buf)
            .or_else(|| self.out_dir.clone())
            .or_else(|| std::env::var_os("HELP_LAT_OUT").map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("help-lat-out"))
    }

    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serialization")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = ExperimentConfig::parse("", "t").unwrap();
        assert_eq!(cfg, ExperimentConfig::default());
        assert_eq!(cfg.devices.count, 18);
        assert_eq!(cfg.train.episodes, 2000);
    }

    #[test]
    fn unknown_keys_are_rejected_with_their_name() {
        let err = ExperimentConfig::parse("[train]\nepisodez = 3\n", "t").unwrap_err();
        assert!(err.to_string().contains("episodez"), "{err}");
        assert_eq!(err.exit_code(), 2);
        let err = ExperimentConfig::parse("[devices.generator]\narchetypes = [\"tpu\"]\n", "t")
            .unwrap_err();
        assert!(err.to_string().contains("tpu"), "{err}");
    }

    #[test]
    fn nested_sections_parse() {
        let text = "seed = 4\n[devices]\ncount = 4\nsamples = 20\n[train]\nepisodes = 5\n[eval]\nn_samples = 5\nbaselines = [\"flops\"]\n";
        let cfg = ExperimentConfig::parse(text, "t").unwrap();
        assert_eq!(cfg.seed, 4);
        assert_eq!(cfg.devices.samples, 20);
        assert_eq!(cfg.eval.n_samples, 5);
        assert_eq!(cfg.eval.baselines, vec!["flops".to_string()]);
    }

    #[test]
    fn invalid_values_fail_validation() {
        assert!(ExperimentConfig::parse("[eval]\nbaselines = [\"oracle\"]\n", "t").is_err());
        assert!(ExperimentConfig::parse("[search]\npercentiles = [120.0]\n", "t").is_err());
    }
}
