//! TOML run configuration.

use std::path::{Path, PathBuf};

use antigenic_core::corpus::{ThresholdConfig, DEFAULT_CENSORED_FLOOR};
use antigenic_core::eval::{ExperimentConfig, SupervisionRatio};
use antigenic_core::features::PairCombine;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Input and output locations. Relative paths resolve against the
/// directory holding the config file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub sequences: Option<PathBuf>,
    pub titres: Option<PathBuf>,
    pub embeddings: Vec<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSection {
    pub censored_floor: f64,
    pub threshold: ThresholdConfig,
    pub combine: PairCombine,
}

impl Default for CorpusSection {
    fn default() -> Self {
        Self {
            censored_floor: DEFAULT_CENSORED_FLOOR,
            threshold: ThresholdConfig::default(),
            combine: PairCombine::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub paths: Paths,
    pub corpus: CorpusSection,
    pub experiment: ExperimentConfig,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub ratios: Option<Vec<f64>>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// Read `path`, resolving relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let paths = &mut cfg.paths;
        paths.sequences.as_mut().map(fix);
        paths.titres.as_mut().map(fix);
        paths.out.as_mut().map(fix);
        paths.embeddings.iter_mut().for_each(fix);
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<(), CliError> {
        if let Some(seed) = o.seed {
            self.experiment.seed = seed;
        }
        if let Some(out) = &o.out {
            self.paths.out = Some(out.clone());
        }
        if let Some(ratios) = &o.ratios {
            self.experiment.ratios = ratios
                .iter()
                .map(|&r| SupervisionRatio::try_from(r).map_err(|e| CliError::Config(format!("--ratios: {e}"))))
                .collect::<Result<_, _>>()?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if !(self.corpus.censored_floor > 0.0) {
            return Err(CliError::Config("corpus.censored_floor must be positive".into()));
        }
        self.corpus.threshold.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.experiment.validate().map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn out_dir(&self) -> PathBuf {
        self.paths.out.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    pub fn require<'a>(&self, p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path, CliError> {
        p.as_deref().ok_or_else(|| CliError::Config(format!("paths.{key} is not set")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_toml("[paths]\nsequence = \"a.fasta\"\n").is_err());
        assert!(RunConfig::from_toml("[experiment]\nseeds = 3\n").is_err());
        assert!(RunConfig::from_toml("bogus = 1\n").is_err());
    }

    #[test]
    fn ratio_override() {
        let mut cfg = RunConfig::default();
        cfg.apply(&Overrides {
            ratios: Some(vec![0.25]),
            ..Default::default()
        })
        .unwrap();
        assert_eq!(cfg.experiment.ratios, vec![SupervisionRatio::Quarter]);
        assert!(cfg
            .apply(&Overrides {
                ratios: Some(vec![0.3]),
                ..Default::default()
            })
            .is_err());
    }
}
