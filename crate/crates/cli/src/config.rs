//! Flat JSON fit configuration: every hyperparameter plus the run settings.

use crate::error::{CliError, Result};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};
use std::path::Path;
use zinmf_core::model::DrawFields;
use zinmf_core::{HyperParameters, RunConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSettings {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub chains: usize,
    pub prune: bool,
    /// Fit the single-cluster, no-zero-inflation baseline instead.
    pub degenerate: bool,
    pub store_h: bool,
    pub store_theta: bool,
    pub audit_every_sweep: bool,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            iterations: 2000,
            burn_in: 1000,
            thin: 1,
            seed: 1,
            chains: 1,
            prune: false,
            degenerate: false,
            store_h: false,
            store_theta: false,
            audit_every_sweep: false,
        }
    }
}

const RUN_KEYS: [&str; 10] = [
    "iterations",
    "burn_in",
    "thin",
    "seed",
    "chains",
    "prune",
    "degenerate",
    "store_h",
    "store_theta",
    "audit_every_sweep",
];

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FitConfig {
    pub hyper: HyperParameters,
    pub run: RunSettings,
}

impl FitConfig {
    /// Splits one flat object between run settings and hyperparameters; any key
    /// known to neither is rejected.
    pub fn from_value(value: Value) -> std::result::Result<Self, String> {
        let Value::Object(map) = value else {
            return Err("expected a JSON object".into());
        };
        let (run, hyper): (Map<String, Value>, Map<String, Value>) =
            map.into_iter().partition(|(k, _)| RUN_KEYS.contains(&k.as_str()));
        let run = serde_json::from_value(Value::Object(run)).map_err(|e| e.to_string())?;
        let hyper = serde_json::from_value(Value::Object(hyper)).map_err(|e| e.to_string())?;
        Ok(Self { hyper, run })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let config_error = |message: String| CliError::Config { path: path.to_owned(), message };
        let text = std::fs::read_to_string(path).map_err(|e| config_error(e.to_string()))?;
        let value: Value = serde_json::from_str(&text).map_err(|e| config_error(e.to_string()))?;
        Self::from_value(value).map_err(config_error)
    }

    pub fn to_value(&self) -> Value {
        let mut map = match serde_json::to_value(&self.hyper).expect("serializable") {
            Value::Object(m) => m,
            _ => unreachable!(),
        };
        if let Value::Object(run) = serde_json::to_value(&self.run).expect("serializable") {
            map.extend(run);
        }
        Value::Object(map)
    }

    /// SHA-256 of the key-sorted compact JSON form.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(&self.to_value()).expect("serializable");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        let err = |message: String| CliError::Usage(message);
        self.hyper.validate().map_err(|e| err(e.to_string()))?;
        if self.run.chains == 0 {
            return Err(err("chains must be at least 1".into()));
        }
        self.run_config(0).validate().map_err(|e| err(e.to_string()))
    }

    pub fn run_config(&self, chain_id: u64) -> RunConfig {
        let mut config = RunConfig::new(self.run.iterations, self.run.burn_in, self.run.thin, self.run.seed, chain_id);
        config.prune = self.run.prune;
        config.degenerate = self.run.degenerate;
        config.audit_every_sweep = self.run.audit_every_sweep;
        config.store = DrawFields { h: self.run.store_h, theta: self.run.store_theta, ..DrawFields::default() };
        config.config_hash = self.hash();
        config
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn flat_keys_split_between_sections() {
        let c = FitConfig::from_value(json!({"beta_w": 10.0, "L_star": 3, "iterations": 50, "burn_in": 10})).unwrap();
        assert_eq!(c.hyper.beta_w, 10.0);
        assert_eq!(c.hyper.truncation, 3);
        assert_eq!(c.run.iterations, 50);
        assert_eq!(c.run.thin, 1);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(FitConfig::from_value(json!({"iteratons": 50})).is_err());
        assert!(FitConfig::from_value(json!({"alpha": 1.0})).is_err());
    }

    #[test]
    fn echo_round_trips_and_hash_is_stable() {
        let c = FitConfig::from_value(json!({"seed": 9, "c": 4.0})).unwrap();
        let back = FitConfig::from_value(c.to_value()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        let other = FitConfig::from_value(json!({"seed": 10, "c": 4.0})).unwrap();
        assert_ne!(other.hash(), c.hash());
    }
}
