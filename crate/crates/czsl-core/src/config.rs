//! Run configuration: one JSON document that pins down an experiment.
//!
//! Feature and attribute widths always come from the dataset, so the model
//! section only carries optional overrides for the free architecture knobs.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::continual::{AblationFlags, TrainConfig};
use crate::error::{Error, Result};
use crate::model::{ClassId, ModelConfig};

/// Optional architecture overrides; `None` keeps the width-derived default.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelOverrides {
    pub d_z: Option<usize>,
    pub hidden_g: Option<usize>,
    pub hidden_d: Option<usize>,
    pub temperature: Option<f64>,
}

/// Which classes to follow in the per-task similarity trace, and how many
/// nearest projections to record for each. An empty class list means the
/// default probe: the lowest class id that starts in the unseen role.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraceConfig {
    pub top_k: usize,
    pub classes: Vec<ClassId>,
}

impl Default for TraceConfig {
    fn default() -> Self {
        TraceConfig { top_k: 3, classes: Vec::new() }
    }
}

/// Everything an experiment run depends on besides the dataset and the
/// task schedule. The master seed lives in `train.seed`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelOverrides,
    pub train: TrainConfig,
    pub ablation: AblationFlags,
    pub trace: TraceConfig,
}

impl RunConfig {
    /// Materializes the architecture for a dataset's widths.
    pub fn model_config(&self, d_x: usize, d_a: usize) -> ModelConfig {
        let mut mc = ModelConfig::new(d_x, d_a);
        if let Some(v) = self.model.d_z {
            mc.d_z = v;
        }
        if let Some(v) = self.model.hidden_g {
            mc.hidden_g = v;
        }
        if let Some(v) = self.model.hidden_d {
            mc.hidden_d = v;
        }
        if let Some(v) = self.model.temperature {
            mc.temperature = v;
        }
        mc
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.trace.top_k == 0 {
            return Err(Error::validation("trace.top_k", "must be positive"));
        }
        for (field, v) in [
            ("model.d_z", self.model.d_z),
            ("model.hidden_g", self.model.hidden_g),
            ("model.hidden_d", self.model.hidden_d),
        ] {
            if v == Some(0) {
                return Err(Error::validation(field, "must be positive when set"));
            }
        }
        if let Some(temp) = self.model.temperature {
            if !(temp.is_finite() && temp > 0.0) {
                return Err(Error::validation("model.temperature", "must be positive and finite"));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_and_validate() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let text = serde_json::to_string(&cfg).unwrap();
        let back = RunConfig::from_json(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn empty_object_means_all_defaults() {
        let cfg = RunConfig::from_json("{}").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.train.epochs, 50);
        assert_eq!(cfg.trace.top_k, 3);
        assert!(cfg.ablation.replay);
    }

    #[test]
    fn overrides_replace_width_derived_defaults() {
        let cfg = RunConfig::from_json(
            r#"{"model": {"d_z": 5, "hidden_g": 12, "temperature": 2.5}}"#,
        )
        .unwrap();
        let mc = cfg.model_config(10, 6);
        assert_eq!(mc.d_z, 5);
        assert_eq!(mc.hidden_g, 12);
        assert_eq!(mc.hidden_d, 40);
        assert_eq!(mc.temperature, 2.5);
        let plain = RunConfig::default().model_config(10, 6);
        assert_eq!(plain.d_z, 6);
        assert_eq!(plain.hidden_g, 40);
        assert_eq!(plain.temperature, 10.0);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(RunConfig::from_json(r#"{"modle": {}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"trace": {"top_k": 0}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"model": {"temperature": -1.0}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"train": {"batch_size": 0}}"#).is_err());
    }
}
