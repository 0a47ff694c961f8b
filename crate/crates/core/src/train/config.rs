use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::analysis::MetricOptions;
use crate::error::{Error, Result};
use crate::models::ModelConfig;

pub const DEFAULT_SEEDS: [u64; 5] = [1111, 1112, 1113, 1114, 1115];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// L2 penalty folded into the gradient.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    #[default]
    L1,
}

/// Everything a training run needs besides the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub dataset_name: String,
    pub optimizer: AdamConfig,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a valid-MAE improvement before stopping.
    pub patience: usize,
    pub seeds: Vec<u64>,
    pub loss: LossKind,
    /// Global gradient-norm clip; `None` disables clipping.
    pub grad_clip: Option<f64>,
    pub metrics: MetricOptions,
    /// Wall-clock timestamps in epoch records. Off by default so that
    /// histories are byte-reproducible.
    pub record_timestamps: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            dataset_name: "dataset".into(),
            optimizer: AdamConfig::default(),
            batch_size: 32,
            max_epochs: 40,
            patience: 8,
            seeds: DEFAULT_SEEDS.to_vec(),
            loss: LossKind::L1,
            grad_clip: Some(5.0),
            metrics: MetricOptions::default(),
            record_timestamps: false,
        }
    }
}

/// Default regression config for a registered model. The dataset name only
/// labels the run.
pub fn get_config_regression(model_name: &str, dataset_name: &str) -> Result<TrainConfig> {
    Ok(TrainConfig {
        model: ModelConfig::for_model(model_name)?,
        dataset_name: dataset_name.to_string(),
        ..TrainConfig::default()
    })
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate_hyperparameters()?;
        let opt = &self.optimizer;
        if !(opt.lr.is_finite() && opt.lr > 0.0) {
            return Err(Error::Config(format!("optimizer.lr must be > 0, got {}", opt.lr)));
        }
        if !(0.0..1.0).contains(&opt.beta1) || !(0.0..1.0).contains(&opt.beta2) {
            return Err(Error::Config("adam betas must lie in [0, 1)".into()));
        }
        if !(opt.eps > 0.0) || !(opt.weight_decay >= 0.0) {
            return Err(Error::Config("adam eps must be > 0 and weight_decay >= 0".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be >= 1".into()));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config("batch_size and max_epochs must be >= 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must not be empty".into()));
        }
        if let Some(c) = self.grad_clip {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::Config(format!("grad_clip must be > 0, got {c}")));
            }
        }
        Ok(())
    }

    /// Reads a (possibly partial) JSON config; absent keys keep defaults.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: TrainConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve(root: &Value, key: &str) -> Option<Vec<String>> {
        let parts: Vec<String> = key.split('.').map(str::to_string).collect();
        // Bare keys fall through to the model and optimizer sections, so
        // `post_fusion_dim` and `lr` work without a prefix.
        for prefix in [None, Some("model"), Some("optimizer")] {
            let path: Vec<String> = prefix.map(str::to_string).into_iter().chain(parts.iter().cloned()).collect();
            if path.iter().try_fold(root, |node, k| node.get(k)).is_some() {
                return Some(path);
            }
        }
        None
    }

    pub fn get(&self, key: &str) -> Option<Value> {
        let root = serde_json::to_value(self).ok()?;
        let path = Self::resolve(&root, key)?;
        path.iter().try_fold(&root, |node, k| node.get(k)).cloned()
    }

    /// Overrides one dotted key. `raw` is parsed as JSON, falling back to a
    /// plain string.
    pub fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        let mut root = serde_json::to_value(&*self)?;
        let path = Self::resolve(&root, key).ok_or_else(|| Error::Config(format!("unknown config key '{key}'")))?;
        let value: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        let slot = path
            .iter()
            .try_fold(&mut root, |node, k| node.get_mut(k))
            .expect("resolved path exists");
        *slot = value;
        let updated: TrainConfig =
            serde_json::from_value(root).map_err(|e| Error::Config(format!("{key}={raw}: {e}")))?;
        updated.validate()?;
        *self = updated;
        Ok(())
    }

    /// Applies `key=value` overrides in order.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override '{o}' is not key=value")))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }
}
