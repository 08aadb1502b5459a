//! JSON run configuration. Every field is optional; unknown keys are errors.

use std::fs;
use std::path::Path;

use maskrnn_core::data::SuiteConfig;
use maskrnn_core::metrics::MetricsConfig;
use maskrnn_core::pipeline::{AblationConfig, ModelConfig, Stage, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds data generation, initialization and every training stage.
    pub seed: u64,
    /// Worker threads for per-object and per-sequence work.
    pub threads: usize,
    pub model: ModelConfig,
    pub static_stage: TrainConfig,
    pub recurrent_stage: TrainConfig,
    pub online_stage: TrainConfig,
    pub metrics: MetricsConfig,
    pub suite: SuiteConfig,
    pub ablation: AblationConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            threads: 1,
            model: ModelConfig::default(),
            static_stage: TrainConfig::desk(Stage::Static),
            recurrent_stage: TrainConfig::desk(Stage::Recurrent),
            online_stage: TrainConfig::desk(Stage::Online),
            metrics: MetricsConfig::default(),
            suite: SuiteConfig::default(),
            ablation: AblationConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read(path).map_err(|e| Error::io(path, e))?;
        let value: serde_json::Value = serde_json::from_slice(&text).map_err(|e| Error::json(path, e))?;
        Self::from_value(value).map_err(|e| Error::json(path, e))
    }

    /// Overlay `value` key by key onto the defaults, so a partial nested
    /// object keeps the run defaults for the keys it leaves out.
    pub fn from_value(value: serde_json::Value) -> serde_json::Result<Self> {
        let mut base = serde_json::to_value(Self::default())?;
        merge(&mut base, value);
        serde_json::from_value(base)
    }

    /// Apply command-line overrides and propagate the seed to the stages.
    pub fn with_overrides(mut self, seed: Option<u64>, threads: Option<usize>) -> Self {
        if let Some(s) = seed {
            self.seed = s;
        }
        if let Some(t) = threads {
            self.threads = t;
        }
        self.threads = self.threads.max(1);
        for st in [&mut self.static_stage, &mut self.recurrent_stage, &mut self.online_stage] {
            st.seed = self.seed;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.static_stage.validate()?;
        self.recurrent_stage.validate()?;
        self.online_stage.validate()?;
        self.metrics.validate()?;
        Ok(())
    }
}

fn merge(base: &mut serde_json::Value, over: serde_json::Value) {
    match (base, over) {
        (serde_json::Value::Object(b), serde_json::Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_the_default() {
        let c = RunConfig::from_value(serde_json::json!({})).unwrap();
        assert_eq!(c, RunConfig::default());
    }

    #[test]
    fn partial_stages_keep_run_defaults() {
        let c = RunConfig::from_value(serde_json::json!({"static_stage": {"epochs": 1}})).unwrap();
        assert_eq!(c.static_stage.epochs, 1);
        assert_eq!(c.static_stage.learning_rate, RunConfig::default().static_stage.learning_rate);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_value(serde_json::json!({"sede": 1})).is_err());
        assert!(RunConfig::from_value(serde_json::json!({"model": {"toggles": {"rnnn": true}}})).is_err());
    }

    #[test]
    fn echo_round_trips() {
        let c = RunConfig::default().with_overrides(Some(7), Some(2));
        let back: RunConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.online_stage.seed, 7);
    }
}
