//! Experiment configuration: TOML file schema, defaults, validation, and
//! dotted-key overrides so any CLI flag can replace a config value.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use crate::acquisition::AcquisitionFn;
use crate::error::{Error, Result};
use crate::mc::McMode;
use crate::oracle::OracleConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetSection {
    pub hidden: Vec<usize>,
    pub dropout: f64,
}

impl Default for NetSection {
    fn default() -> Self {
        NetSection { hidden: vec![32], dropout: 0.1 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// "blobs" or "csv"
    pub kind: String,
    pub path: Option<PathBuf>,
    pub classes: usize,
    pub per_class: usize,
    pub separation: f64,
    pub dim: usize,
    pub group_size: usize,
    /// Labelled fraction of the training part.
    pub labelled_fraction: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            kind: "blobs".into(),
            path: None,
            classes: 3,
            per_class: 60,
            separation: 2.0,
            dim: 2,
            group_size: 3,
            labelled_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcquisitionSection {
    pub function: AcquisitionFn,
    pub mode: McMode,
    /// MC sample count T.
    pub samples: usize,
    pub tracking: bool,
    /// Scoring interval in epochs.
    pub dt: u64,
    /// Acquisition epoch stride.
    pub stride: u64,
    /// Acquired fraction b of the remaining unlabelled pool.
    pub fraction: f64,
    /// Input-perturbation noise std; relative to the dataset feature std
    /// unless `sigma_absolute`.
    pub sigma: f64,
    pub sigma_absolute: bool,
    /// Covariance ridge for the Gaussian consistency score.
    pub ridge: f64,
    /// Integrate the whole score history instead of resetting after each
    /// acquisition.
    pub full_history: bool,
}

impl Default for AcquisitionSection {
    fn default() -> Self {
        AcquisitionSection {
            function: AcquisitionFn::Bald,
            mode: McMode::Mcd,
            samples: 20,
            tracking: false,
            dt: 1,
            stride: 5,
            fraction: 0.02,
            sigma: 0.25,
            sigma_absolute: false,
            ridge: 1e-6,
            full_history: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub epochs: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub net: NetSection,
    pub data: DataSection,
    pub acquisition: AcquisitionSection,
    pub oracle: OracleConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            epochs: 30,
            batch_size: 32,
            learning_rate: 1e-4,
            net: NetSection::default(),
            data: DataSection::default(),
            acquisition: AcquisitionSection::default(),
            oracle: OracleConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("{e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Apply a `section.key=value` override by patching the TOML document.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (key, value) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override '{kv}' is not KEY=VALUE")))?;
        let mut doc: toml::Value =
            toml::from_str(&self.to_toml()).map_err(|e| Error::Config(e.to_string()))?;
        let mut cur = &mut doc;
        let parts: Vec<&str> = key.split('.').collect();
        for p in &parts[..parts.len() - 1] {
            cur = cur
                .get_mut(p)
                .ok_or_else(|| Error::Config(format!("unknown config section '{p}'")))?;
        }
        let leaf = parts.last().expect("non-empty key");
        let table = cur
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("'{key}' does not address a table entry")))?;
        let old = table
            .get(*leaf)
            .ok_or_else(|| Error::Config(format!("unknown config key '{key}'")))?;
        let parsed = match old {
            toml::Value::Integer(_) => toml::Value::Integer(
                value.parse().map_err(|_| Error::Config(format!("'{value}' is not an integer")))?,
            ),
            toml::Value::Float(_) => toml::Value::Float(
                value.parse().map_err(|_| Error::Config(format!("'{value}' is not a float")))?,
            ),
            toml::Value::Boolean(_) => toml::Value::Boolean(
                value.parse().map_err(|_| Error::Config(format!("'{value}' is not a bool")))?,
            ),
            toml::Value::String(_) => toml::Value::String(value.to_string()),
            toml::Value::Array(_) => toml::Value::Array(
                value
                    .split(',')
                    .filter(|v| !v.trim().is_empty())
                    .map(|v| {
                        v.trim()
                            .parse::<i64>()
                            .map(toml::Value::Integer)
                            .or_else(|_| v.trim().parse::<f64>().map(toml::Value::Float))
                            .map_err(|_| Error::Config(format!("'{v}' is not a number")))
                    })
                    .collect::<Result<_>>()?,
            ),
            other => {
                return Err(Error::Config(format!(
                    "cannot override '{key}' of type {}",
                    other.type_str()
                )))
            }
        };
        table.insert(leaf.to_string(), parsed);
        let patched: ExperimentConfig =
            doc.try_into().map_err(|e| Error::Config(format!("{e}")))?;
        patched.validate()?;
        *self = patched;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let a = &self.acquisition;
        if a.samples == 0 {
            return Err(Error::Config("acquisition.samples must be >= 1".into()));
        }
        if !(a.fraction > 0.0 && a.fraction <= 1.0) {
            return Err(Error::Config(format!("acquisition.fraction {} outside (0,1]", a.fraction)));
        }
        if a.dt == 0 || a.stride < a.dt {
            return Err(Error::Config(format!(
                "need stride >= dt >= 1, got stride={} dt={}",
                a.stride, a.dt
            )));
        }
        if !a.stride.is_multiple_of(a.dt) {
            return Err(Error::Config(format!(
                "stride {} must be a multiple of dt {}",
                a.stride, a.dt
            )));
        }
        if a.sigma < 0.0 {
            return Err(Error::Config(format!("acquisition.sigma {} must be >= 0", a.sigma)));
        }
        if a.ridge <= 0.0 {
            return Err(Error::Config(format!("acquisition.ridge {} must be > 0", a.ridge)));
        }
        if a.function.needs_paired_outputs() != (a.mode == McMode::Balc) {
            return Err(Error::Config(format!(
                "acquisition function {} requires mode {}",
                a.function,
                if a.function.needs_paired_outputs() { "balc" } else { "mcd or mcp" }
            )));
        }
        if !(self.data.labelled_fraction > 0.0 && self.data.labelled_fraction < 1.0) {
            return Err(Error::Config(format!(
                "data.labelled_fraction {} outside (0,1)",
                self.data.labelled_fraction
            )));
        }
        match self.data.kind.as_str() {
            "blobs" => {}
            "csv" => {
                if self.data.path.is_none() {
                    return Err(Error::Config("data.kind = \"csv\" needs data.path".into()));
                }
            }
            other => return Err(Error::Config(format!("unknown data.kind '{other}'"))),
        }
        if !(0.0..1.0).contains(&self.net.dropout) {
            return Err(Error::Config(format!("net.dropout {} outside [0,1)", self.net.dropout)));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch_size and epochs must be >= 1".into()));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::Config(format!("learning_rate {} must be > 0", self.learning_rate)));
        }
        self.oracle.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::Strategy;

    #[test]
    fn defaults_are_valid_and_match_reference_values() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.acquisition.samples, 20);
        assert_eq!(cfg.acquisition.stride, 5);
        assert_eq!(cfg.acquisition.dt, 1);
        assert_eq!(cfg.acquisition.fraction, 0.02);
        assert_eq!(cfg.oracle.s, 0.15);
        assert_eq!(cfg.oracle.w, 0.9);
        assert_eq!(cfg.oracle.k, 5.0);
    }

    #[test]
    fn toml_round_trip() {
        let cfg = ExperimentConfig::default();
        let back = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back.to_toml(), cfg.to_toml());
    }

    #[test]
    fn overrides_patch_nested_keys() {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_override("seed=42").unwrap();
        cfg.apply_override("oracle.gamma=0.8").unwrap();
        cfg.apply_override("oracle.strategy=soqal").unwrap();
        cfg.apply_override("acquisition.tracking=true").unwrap();
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.oracle.gamma, 0.8);
        assert_eq!(cfg.oracle.strategy, Strategy::Soqal);
        assert!(cfg.acquisition.tracking);
        assert!(cfg.apply_override("no.such.key=1").is_err());
        assert!(cfg.apply_override("oracle.gamma=2.0").is_err());
    }

    #[test]
    fn mismatched_function_and_mode_rejected() {
        let mut cfg = ExperimentConfig::default();
        cfg.acquisition.function = AcquisitionFn::BalcKld;
        assert!(cfg.validate().is_err());
        cfg.acquisition.mode = McMode::Balc;
        cfg.validate().unwrap();
    }

    #[test]
    fn malformed_toml_reports_location() {
        let err = ExperimentConfig::from_toml("epochs = \"many\"").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line"), "error should be line-anchored: {msg}");
    }
}
