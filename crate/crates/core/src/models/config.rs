use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ModelKind;
use crate::bundle::{FeatureBundle, Modality};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDims {
    pub feature_dim: usize,
    pub max_len: usize,
}

/// Architecture hyperparameters. Unused fields are ignored by models that
/// do not need them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub model_name: String,
    /// Per-modality input shapes; filled from the bundle when empty.
    pub inputs: BTreeMap<Modality, InputDims>,
    /// Encoder width per modality.
    pub hidden: BTreeMap<Modality, usize>,
    pub post_fusion_dim: usize,
    pub lmf_rank: usize,
    pub mfn_mem_dim: usize,
    pub mfn_attn_hidden: usize,
    pub ef_lstm_hidden: usize,
    pub attn_dim: usize,
    pub attn_heads: usize,
    pub attn_layers: usize,
    pub misa_hidden: usize,
    pub lambda_sim: f64,
    pub lambda_orth: f64,
    pub lambda_recon: f64,
    /// Weight of the unimodal auxiliary losses when multi-task heads are on.
    pub lambda_uni: f64,
    pub multitask: bool,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            model_name: "lf_dnn".into(),
            inputs: BTreeMap::new(),
            hidden: [(Modality::Text, 32), (Modality::Audio, 16), (Modality::Vision, 16)].into(),
            post_fusion_dim: 32,
            lmf_rank: 4,
            mfn_mem_dim: 64,
            mfn_attn_hidden: 32,
            ef_lstm_hidden: 32,
            attn_dim: 32,
            attn_heads: 2,
            attn_layers: 1,
            misa_hidden: 32,
            lambda_sim: 0.1,
            lambda_orth: 0.1,
            lambda_recon: 0.1,
            lambda_uni: 0.5,
            multitask: false,
            dropout: 0.1,
            seed: 1111,
        }
    }
}

impl ModelConfig {
    pub fn for_model(name: &str) -> Result<Self> {
        let (_, multitask) = ModelKind::parse(name)?;
        Ok(ModelConfig {
            model_name: name.to_string(),
            multitask,
            ..ModelConfig::default()
        })
    }

    /// Copies the input shapes of every bundle modality.
    pub fn bind_inputs(&mut self, bundle: &FeatureBundle) {
        self.inputs = bundle
            .blocks
            .iter()
            .map(|(&m, b)| {
                (
                    m,
                    InputDims {
                        feature_dim: b.feature_dim,
                        max_len: b.max_len,
                    },
                )
            })
            .collect();
    }

    pub fn modalities(&self) -> Vec<Modality> {
        self.inputs.keys().copied().collect()
    }

    pub fn hidden_dim(&self, m: Modality) -> Result<usize> {
        self.hidden
            .get(&m)
            .copied()
            .ok_or_else(|| Error::Config(format!("missing hyperparameter hidden.{m}")))
    }

    /// Full check including the bound input shapes.
    pub fn validate(&self) -> Result<()> {
        self.validate_hyperparameters()?;
        if self.inputs.is_empty() {
            return Err(Error::Config("missing hyperparameter: input dims (no modalities)".into()));
        }
        for (m, d) in &self.inputs {
            if d.feature_dim == 0 || d.max_len == 0 {
                return Err(Error::Config(format!("input dims for {m} must be positive")));
            }
            if self.hidden_dim(*m)? == 0 {
                return Err(Error::Config(format!("hidden.{m} must be positive")));
            }
        }
        Ok(())
    }

    /// Checks everything except the input shapes, which are bound from the
    /// bundle at training time.
    pub fn validate_hyperparameters(&self) -> Result<()> {
        ModelKind::parse(&self.model_name)?;
        let positive = [
            ("post_fusion_dim", self.post_fusion_dim),
            ("lmf_rank", self.lmf_rank),
            ("mfn_mem_dim", self.mfn_mem_dim),
            ("mfn_attn_hidden", self.mfn_attn_hidden),
            ("ef_lstm_hidden", self.ef_lstm_hidden),
            ("attn_dim", self.attn_dim),
            ("attn_heads", self.attn_heads),
            ("attn_layers", self.attn_layers),
            ("misa_hidden", self.misa_hidden),
        ];
        if let Some((k, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{k} must be positive")));
        }
        if self.attn_dim % self.attn_heads != 0 {
            return Err(Error::Config(format!(
                "attn_dim {} is not divisible by attn_heads {}",
                self.attn_dim, self.attn_heads
            )));
        }
        for (k, v) in [
            ("lambda_sim", self.lambda_sim),
            ("lambda_orth", self.lambda_orth),
            ("lambda_recon", self.lambda_recon),
            ("lambda_uni", self.lambda_uni),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{k} must be a finite non-negative weight, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}
