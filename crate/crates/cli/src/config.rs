use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tdreg::evaluate::CvSpec;
use tdreg::features::FeatureConfig;
use tdreg::fit::{Family, FitConfig, ModelKind};
use tdreg::ingest::{ColumnSchema, RecordSchema};
use tdreg::synth::{SynthConfig, COVARIATES};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputConfig {
    /// Minute-level activity CSV.
    pub minutes: PathBuf,
    /// One row per subject: id, outcome, covariates.
    pub subjects: PathBuf,
    /// Minutes per epoch the panel is averaged to before feature
    /// construction; 1 keeps minute resolution.
    pub epoch_width: usize,
    pub schema: ColumnSchema,
    pub subject_column: String,
    pub outcome_column: String,
    pub covariates: Vec<String>,
}

impl Default for InputConfig {
    fn default() -> Self {
        Self {
            minutes: PathBuf::from("minutes.csv"),
            subjects: PathBuf::from("subjects.csv"),
            epoch_width: 1,
            schema: ColumnSchema::canonical(),
            subject_column: "subject_id".into(),
            outcome_column: "outcome".into(),
            covariates: COVARIATES.iter().map(|c| c.0.to_string()).collect(),
        }
    }
}

/// Everything a pipeline run depends on. The top-level `seed` is copied into
/// the fit, cross-validation and synthesis settings when resolved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Worker threads; 0 uses every core.
    pub threads: usize,
    pub family: Family,
    pub models: Vec<ModelKind>,
    pub input: InputConfig,
    pub features: FeatureConfig,
    pub fit: FitConfig,
    pub cv: CvSpec,
    pub synth: SynthConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("out"),
            threads: 0,
            family: Family::Logit,
            models: ModelKind::ALL.to_vec(),
            input: InputConfig::default(),
            features: FeatureConfig::default(),
            fit: FitConfig::default(),
            cv: CvSpec::default(),
            synth: SynthConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Applies `key=value` overrides, where `key` is a dotted path such as
    /// `fit.k_t` and `value` is a TOML value (bare words are read as strings).
    pub fn with_overrides(self, overrides: &[String]) -> Result<Self, CliError> {
        if overrides.is_empty() {
            return Ok(self);
        }
        let mut doc = toml::Value::try_from(&self).map_err(|e| CliError::Config(e.to_string()))?;
        for o in overrides {
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("override `{o}` is not key=value")))?;
            let value = parse_value(raw.trim());
            set_path(&mut doc, key.trim(), value)?;
        }
        doc.try_into().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))
    }

    /// Propagates the master seed and shared settings, then validates.
    pub fn resolve(mut self) -> Result<Self, CliError> {
        self.fit.seed = self.seed;
        self.cv.seed = self.seed;
        self.synth.seed = self.seed;
        self.synth.family = self.family;
        self.synth.features = self.features.clone();
        self.fit.l_moment_orders = self.features.l_moment_orders;
        self.features.validate()?;
        self.fit.validate()?;
        self.synth.validate()?;
        if self.cv.folds < 2 || self.cv.repeats < 1 {
            return Err(CliError::Config("cv needs folds >= 2 and repeats >= 1".into()));
        }
        if self.input.epoch_width == 0 || 1440 % self.input.epoch_width != 0 {
            return Err(CliError::Config(format!(
                "epoch_width {} does not divide 1440",
                self.input.epoch_width
            )));
        }
        if self.input.epoch_width != 1 && self.input.epoch_width != self.features.t_stride {
            return Err(CliError::Config(format!(
                "epoch_width must be 1 or equal to features.t_stride ({})",
                self.features.t_stride
            )));
        }
        if self.models.is_empty() {
            return Err(CliError::Config("no models requested".into()));
        }
        Ok(self)
    }

    pub fn record_schema(&self) -> RecordSchema {
        RecordSchema {
            subject: self.input.subject_column.clone(),
            outcome: self.input.outcome_column.clone(),
            covariates: self.input.covariates.clone(),
            binary: self.family == Family::Logit,
        }
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    /// SHA-256 of the resolved configuration in TOML form, excluding the
    /// output directory and thread count, which do not affect results.
    pub fn hash(&self) -> Result<String, CliError> {
        let canonical = Self {
            output_dir: PathBuf::new(),
            threads: 0,
            ..self.clone()
        };
        let digest = Sha256::digest(canonical.to_toml()?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_path(doc: &mut toml::Value, key: &str, value: toml::Value) -> Result<(), CliError> {
    let mut cur = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let table = cur
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("`{key}`: `{part}` is not inside a table")))?;
        if i + 1 == parts.len() {
            table.insert(part.to_string(), value);
            return Ok(());
        }
        cur = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    Err(CliError::Config("empty override key".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = PipelineConfig::default();
        let text = cfg.to_toml().unwrap();
        assert_eq!(PipelineConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn overrides_reach_nested_fields() {
        let cfg = PipelineConfig::default()
            .with_overrides(&["fit.k_t=8".into(), "cv.repeats=3".into(), "family=identity".into()])
            .unwrap();
        assert_eq!(cfg.fit.k_t, 8);
        assert_eq!(cfg.cv.repeats, 3);
        assert_eq!(cfg.family, Family::Identity);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(PipelineConfig::from_toml("sed = 3").is_err());
        assert!(PipelineConfig::default().with_overrides(&["fit.nope=1".into()]).is_err());
    }

    #[test]
    fn seed_propagates_and_changes_hash() {
        let a = PipelineConfig { seed: 7, ..Default::default() }.resolve().unwrap();
        assert_eq!((a.fit.seed, a.cv.seed, a.synth.seed), (7, 7, 7));
        let b = PipelineConfig { seed: 8, ..Default::default() }.resolve().unwrap();
        assert_ne!(a.hash().unwrap(), b.hash().unwrap());
        let moved = PipelineConfig { output_dir: "elsewhere".into(), threads: 3, ..a.clone() };
        assert_eq!(a.hash().unwrap(), moved.hash().unwrap());
    }
}
