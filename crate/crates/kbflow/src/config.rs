use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

/// Environment variable overriding the configured master seed.
pub const SEED_ENV: &str = "KBFLOW_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    ScalarRiccatiOracle,
    AreSolve,
    RegionScan,
    ObserverRun,
    KbDiffusionConsistency,
    BracketCheck,
    ChaosRate,
    UniformTime,
    Contraction,
    EntropyDecay,
    TraceBound,
    MetricsSelftest,
}

impl Experiment {
    pub const ALL: [Experiment; 12] = [
        Self::ScalarRiccatiOracle,
        Self::AreSolve,
        Self::RegionScan,
        Self::ObserverRun,
        Self::KbDiffusionConsistency,
        Self::BracketCheck,
        Self::ChaosRate,
        Self::UniformTime,
        Self::Contraction,
        Self::EntropyDecay,
        Self::TraceBound,
        Self::MetricsSelftest,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::ScalarRiccatiOracle => "scalar-riccati-oracle",
            Self::AreSolve => "are-solve",
            Self::RegionScan => "region-scan",
            Self::ObserverRun => "observer-run",
            Self::KbDiffusionConsistency => "kb-diffusion-consistency",
            Self::BracketCheck => "bracket-check",
            Self::ChaosRate => "chaos-rate",
            Self::UniformTime => "uniform-time",
            Self::Contraction => "contraction",
            Self::EntropyDecay => "entropy-decay",
            Self::TraceBound => "trace-bound",
            Self::MetricsSelftest => "metrics-selftest",
        }
    }

    /// Whether the experiment reads a model file.
    pub fn needs_model(self) -> bool {
        !matches!(
            self,
            Self::ScalarRiccatiOracle | Self::TraceBound | Self::MetricsSelftest
        )
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    /// Model file; see [`ExperimentConfig::load`] for relative paths.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<PathBuf>,
    pub dt: f64,
    pub horizon: f64,
    #[serde(default)]
    pub particle_counts: Vec<usize>,
    pub replicas: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text).context("invalid experiment config")?;
        config.validate()?;
        Ok(config)
    }

    /// Reads a config; relative model and output paths are taken from the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        let mut config = Self::from_json(&text).with_context(|| format!("in {}", path.display()))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        for p in [&mut config.model, &mut config.out_dir].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            bail!("dt must be positive, got {}", self.dt);
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            bail!("horizon must be positive, got {}", self.horizon);
        }
        if self.replicas == 0 {
            bail!("replicas must be at least 1");
        }
        if self.particle_counts.contains(&0) {
            bail!("particle counts must be positive");
        }
        if self.experiment.needs_model() && self.model.is_none() {
            bail!("experiment {} needs a model file", self.experiment);
        }
        Ok(())
    }

    /// `KBFLOW_SEED` overrides the file, an explicit seed overrides both.
    pub fn apply_seed_overrides(&mut self, cli_seed: Option<u64>) -> Result<()> {
        if let Ok(text) = std::env::var(SEED_ENV) {
            self.seed = text
                .trim()
                .parse()
                .with_context(|| format!("{SEED_ENV} must be a non-negative integer, got {text:?}"))?;
        }
        if let Some(seed) = cli_seed {
            self.seed = seed;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"{"experiment":"chaos-rate","model":"m.json","dt":0.01,"horizon":10,
        "particle_counts":[8,16],"replicas":4,"seed":3}"#;

    #[test]
    fn parses_and_round_trips() {
        let c = ExperimentConfig::from_json(BASE).unwrap();
        assert_eq!(c.experiment, Experiment::ChaosRate);
        assert_eq!(c.particle_counts, vec![8, 16]);
        let again = ExperimentConfig::from_json(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(c, again);
    }

    #[test]
    fn rejects_unknown_fields_and_bad_values() {
        assert!(ExperimentConfig::from_json(&BASE.replace("\"seed\":3", "\"seed\":3,\"extra\":1")).is_err());
        assert!(ExperimentConfig::from_json(&BASE.replace("\"dt\":0.01", "\"dt\":0")).is_err());
        assert!(ExperimentConfig::from_json(&BASE.replace("\"horizon\":10", "\"horizon\":-1")).is_err());
        assert!(ExperimentConfig::from_json(&BASE.replace("\"replicas\":4", "\"replicas\":0")).is_err());
        assert!(ExperimentConfig::from_json(&BASE.replace("chaos-rate", "no-such-thing")).is_err());
        assert!(ExperimentConfig::from_json(&BASE.replace("\"model\":\"m.json\",", "")).is_err());
    }

    #[test]
    fn model_free_experiments_need_no_model() {
        let text = r#"{"experiment":"metrics-selftest","dt":1,"horizon":1,"replicas":1,"seed":0}"#;
        assert!(ExperimentConfig::from_json(text).is_ok());
    }

    #[test]
    fn names_match_serde() {
        for e in Experiment::ALL {
            assert_eq!(serde_json::to_string(&e).unwrap(), format!("\"{}\"", e.name()));
        }
    }
}
