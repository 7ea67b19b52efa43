//! Run configuration, read from JSON.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Baseline, ModelSpec};

/// Region length used when the label range is the default `[0, 100]`.
pub const DEFAULT_REGION_LENGTH: f64 = 25.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub branching: usize,
    pub depth: usize,
    pub label_min: f64,
    pub label_max: f64,
    /// Required unless the label range is `[0, 100]`.
    pub region_length: Option<f64>,
    pub lambda: f64,
    pub lr_head: f64,
    pub lr_backbone: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub hidden_widths: Vec<usize>,
    pub feature_dim: usize,
    pub baseline: Baseline,
    pub normalize_reg_loss: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            branching: 3,
            depth: 5,
            label_min: 0.0,
            label_max: 100.0,
            region_length: None,
            lambda: crate::mixture::DEFAULT_LAMBDA,
            lr_head: 1e-4,
            lr_backbone: 1e-4,
            batch_size: 64,
            epochs: 60,
            seed: 0,
            hidden_widths: vec![64, 64],
            feature_dim: 32,
            baseline: Baseline::Bridge,
            normalize_reg_loss: false,
        }
    }
}

impl RunConfig {
    pub const KEYS: [&'static str; 15] = [
        "branching",
        "depth",
        "label_min",
        "label_max",
        "region_length",
        "lambda",
        "lr_head",
        "lr_backbone",
        "batch_size",
        "epochs",
        "seed",
        "hidden_widths",
        "feature_dim",
        "baseline",
        "normalize_reg_loss",
    ];

    /// Parses a JSON object. Keys not listed in [`RunConfig::KEYS`] are
    /// rejected, all of them in one error; missing keys take their defaults.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let obj = value
            .as_object()
            .ok_or_else(|| Error::Config("config must be a JSON object".into()))?;
        let unknown: Vec<&str> = obj
            .keys()
            .map(String::as_str)
            .filter(|k| !Self::KEYS.contains(k))
            .collect();
        if !unknown.is_empty() {
            return Err(Error::Config(format!("unknown keys: {}", unknown.join(", "))));
        }
        let config: RunConfig =
            serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn region_length(&self) -> Result<f64> {
        match self.region_length {
            Some(l) => Ok(l),
            None if self.label_min == 0.0 && self.label_max == 100.0 => Ok(DEFAULT_REGION_LENGTH),
            None => Err(Error::Config(
                "region_length is required when the label range is not [0, 100]".into(),
            )),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.branching < 2 {
            bad.push("branching");
        }
        if self.depth < 1 {
            bad.push("depth");
        }
        if !(self.label_max > self.label_min) || !self.label_min.is_finite() || !self.label_max.is_finite() {
            bad.push("label_min/label_max");
        }
        if self.region_length.is_some_and(|l| !(l > 0.0 && l.is_finite())) {
            bad.push("region_length");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            bad.push("lambda");
        }
        if !(self.lr_head > 0.0) {
            bad.push("lr_head");
        }
        if !(self.lr_backbone > 0.0) {
            bad.push("lr_backbone");
        }
        if self.batch_size == 0 {
            bad.push("batch_size");
        }
        if self.feature_dim == 0 {
            bad.push("feature_dim");
        }
        if self.hidden_widths.contains(&0) {
            bad.push("hidden_widths");
        }
        if !bad.is_empty() {
            return Err(Error::Config(format!("invalid values for: {}", bad.join(", "))));
        }
        self.region_length()?;
        Ok(())
    }

    /// Copy with `region_length` made explicit.
    pub fn resolved(&self) -> Result<Self> {
        Ok(RunConfig {
            region_length: Some(self.region_length()?),
            ..self.clone()
        })
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        self.validate()?;
        Ok(ModelSpec {
            baseline: self.baseline,
            branching: self.branching,
            depth: self.depth,
            label_min: self.label_min,
            label_max: self.label_max,
            region_length: self.region_length()?,
            lambda: self.lambda,
            hidden_widths: self.hidden_widths.clone(),
            feature_dim: self.feature_dim,
            normalize_reg_loss: self.normalize_reg_loss,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = RunConfig::from_json_str("{}").unwrap();
        assert_eq!((c.branching, c.depth), (3, 5));
        assert_eq!(c.lambda, 0.001);
        assert_eq!(c.lr_head, 1e-4);
        assert_eq!((c.batch_size, c.epochs), (64, 60));
        assert_eq!(c.region_length().unwrap(), 25.0);
        let json = serde_json::to_value(c.resolved().unwrap()).unwrap();
        assert_eq!(json["lambda"], 0.001);
        assert_eq!(json["region_length"], 25.0);
    }

    #[test]
    fn unknown_keys_are_all_listed() {
        let err = RunConfig::from_json_str(r#"{"depth": 3, "lamda": 0.1, "epoch": 2}"#).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("lamda") && msg.contains("epoch"), "{msg}");
    }

    #[test]
    fn region_length_required_off_default_range() {
        let err = RunConfig::from_json_str(r#"{"label_max": 10}"#).unwrap_err();
        assert!(err.to_string().contains("region_length"));
        let c = RunConfig::from_json_str(r#"{"label_max": 10, "region_length": 2.5}"#).unwrap();
        assert_eq!(c.region_length().unwrap(), 2.5);
    }

    #[test]
    fn invalid_values_rejected() {
        let err = RunConfig::from_json_str(r#"{"branching": 1, "batch_size": 0}"#).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("branching") && msg.contains("batch_size"), "{msg}");
        assert!(RunConfig::from_json_str(r#"{"baseline": "forest"}"#).is_err());
        assert!(RunConfig::from_json_str("[1, 2]").is_err());
    }
}
