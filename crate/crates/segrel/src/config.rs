//! Run configuration: one TOML file merged with `--set key.path=value` overrides.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use segrel_core::decode::DecodeConfig;
use segrel_core::model::ModelConfig;
use segrel_core::train::TrainConfig;

use crate::error::{io_error, CliError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn name(self) -> &'static str {
        match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Dataset identifier written into reports.
    pub name: String,
    pub lowercase: bool,
    /// Minimum corpus frequency for a vocabulary entry.
    pub min_freq: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig { name: "unnamed".to_string(), lowercase: true, min_freq: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub precision: Precision,
    pub output_dir: String,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub decode: DecodeConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            precision: Precision::F32,
            output_dir: "runs/default".to_string(),
            data: DataConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            decode: DecodeConfig::default(),
        }
    }
}

impl RunConfig {
    /// Reads `path` (or starts from defaults), applies the overrides in order and
    /// validates the result.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut table = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(io_error(p))?;
                text.parse::<toml::Table>().map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        Self::from_table(table)
    }

    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let table = text.parse::<toml::Table>().map_err(|e| CliError::Config(e.to_string()))?;
        Self::from_table(table)
    }

    fn from_table(table: toml::Table) -> Result<Self, CliError> {
        let config: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.to_string().trim_end().to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Same config with further overrides applied.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self, CliError> {
        let mut table = toml::Table::try_from(self).map_err(|e| CliError::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        Self::from_table(table)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.model.validate()?;
        self.train.validate()?;
        self.decode.validate()?;
        if self.data.min_freq == 0 {
            return Err(CliError::Config("data.min_freq must be at least 1".to_string()));
        }
        Ok(())
    }

    /// The merged configuration as TOML, printed at startup and stored in
    /// checkpoint headers.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        hex::encode(digest)[..16].to_string()
    }
}

/// Applies `a.b.c=value`. The value is read as a TOML literal, falling back to a
/// bare string.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<(), CliError> {
    let (path, raw) =
        spec.split_once('=').ok_or_else(|| CliError::Config(format!("override `{spec}` is not key=value")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(CliError::Config(format!("override `{spec}` has an empty key")));
    }
    let raw = raw.trim();
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let (last, parents) = keys.split_last().expect("non-empty path");
    let mut node = table;
    for k in parents {
        let entry = node.entry(k.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = match entry {
            toml::Value::Table(t) => t,
            _ => return Err(CliError::Config(format!("override `{spec}`: `{k}` is not a table"))),
        };
    }
    node.insert(last.to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
        assert_eq!(c.hash().len(), 16);
    }

    #[test]
    fn overrides_take_precedence() {
        let c = RunConfig::load(None, &["model.d_model=64".into(), "seed=9".into(), "decode.strategy=beam".into()])
            .unwrap();
        assert_eq!(c.model.d_model, 64);
        assert_eq!(c.seed, 9);
        assert_eq!(c.decode.strategy, segrel_core::decode::Strategy::Beam);
        assert_ne!(c.hash(), RunConfig::default().hash());
        let again = c.with_overrides(&["seed=0".into(), "model.d_model=128".into(), "decode.strategy=greedy".into()]);
        assert_eq!(again.unwrap().hash(), RunConfig::default().hash());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::load(None, &["model.width=3".into()]).unwrap_err();
        assert!(matches!(err, CliError::Config(ref m) if m.contains("width")), "{err}");
        let err = RunConfig::from_toml("colour = 1").unwrap_err();
        assert!(err.to_string().starts_with("config error:"));
        assert!(RunConfig::load(None, &["novalue".into()]).is_err());
        assert!(RunConfig::load(None, &["seed.x=1".into()]).is_err());
    }

    #[test]
    fn invalid_values_are_config_errors() {
        let err = RunConfig::load(None, &["model.heads=3".into()]).unwrap_err();
        assert_eq!(err.category(), "config");
        let err = RunConfig::load(None, &["train.steps=0".into()]).unwrap_err();
        assert_eq!(err.category(), "config");
    }
}
