use std::collections::BTreeMap;

use msa_autodiff::{ParamSet, Tape, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::config::TrainConfig;
use crate::analysis::{compute_metrics_lenient, MetricOptions, PartialMetrics};
use crate::bundle::{FeatureBundle, Modality, Split};
use crate::error::{Error, Result};
use crate::models::{build_model, Batch, Model};

/// Stream offset separating the shuffle/dropout RNG from parameter init.
const DATA_STREAM: u64 = 0x7472_6169_6e5f_7273;

/// One line of `history.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid: PartialMetrics,
    pub timestamp: Option<String>,
}

/// Predictions and intermediate representations over one split.
#[derive(Clone, Debug, PartialEq)]
pub struct Representations {
    pub ids: Vec<String>,
    pub labels: Vec<f64>,
    pub preds: Vec<f64>,
    /// `[N, d_f]`.
    pub fusion: Tensor<f32>,
    pub uni: BTreeMap<Modality, Tensor<f32>>,
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub seed: u64,
    /// 1-based epoch whose parameters were restored.
    pub best_epoch: usize,
    pub test: PartialMetrics,
    pub history: Vec<EpochRecord>,
    pub reps: Representations,
    /// Model with the best-epoch parameters.
    pub model: Model<f32>,
    /// The config as run (model seed set to `seed`).
    pub config: TrainConfig,
}

/// Valid-MAE early stopping.
#[derive(Clone, Debug)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<(usize, f64)>,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping { patience, best: None }
    }

    /// Records an epoch's MAE; true when it strictly improves on the best.
    pub fn observe(&mut self, epoch: usize, mae: f64) -> bool {
        let improved = match self.best {
            None => true,
            Some((_, best)) => mae < best,
        };
        if improved {
            self.best = Some((epoch, mae));
        }
        improved
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best.map(|(e, _)| e)
    }

    pub fn should_stop(&self, epoch: usize) -> bool {
        self.best.is_some_and(|(best, _)| epoch - best >= self.patience)
    }
}

/// Eval-mode predictions over `indices`, processed in chunks.
pub fn predict_indices(model: &Model<f32>, bundle: &FeatureBundle, indices: &[usize], batch_size: usize) -> Result<Representations> {
    if indices.is_empty() {
        return Err(Error::Validation("no samples to predict".into()));
    }
    let mut preds = Vec::with_capacity(indices.len());
    let mut fusion = Vec::new();
    let mut fusion_dim = 0;
    let mut uni: BTreeMap<Modality, (usize, Vec<f32>)> = BTreeMap::new();
    for chunk in indices.chunks(batch_size.max(1)) {
        let batch: Batch<f32> = Batch::from_bundle(bundle, chunk)?;
        let out = model.forward(&batch)?;
        preds.extend(out.pred.iter().map(|&p| p as f64));
        fusion_dim = out.fusion_rep.shape()[1];
        fusion.extend_from_slice(out.fusion_rep.data());
        for (m, t) in out.uni_reps {
            let e = uni.entry(m).or_insert((t.shape()[1], Vec::new()));
            e.1.extend_from_slice(t.data());
        }
    }
    let n = indices.len();
    let samples = bundle.samples();
    Ok(Representations {
        ids: indices.iter().map(|&i| samples[i].id.clone()).collect(),
        labels: indices.iter().map(|&i| samples[i].label_m).collect(),
        preds,
        fusion: Tensor::new([n, fusion_dim], fusion)?,
        uni: uni
            .into_iter()
            .map(|(m, (d, data))| Ok((m, Tensor::new([n, d], data)?)))
            .collect::<Result<_>>()?,
    })
}

pub fn evaluate_indices(
    model: &Model<f32>,
    bundle: &FeatureBundle,
    indices: &[usize],
    batch_size: usize,
    opts: &MetricOptions,
) -> Result<(Representations, PartialMetrics)> {
    let reps = predict_indices(model, bundle, indices, batch_size)?;
    let metrics = compute_metrics_lenient(&reps.preds, &reps.labels, opts)?;
    Ok((reps, metrics))
}

fn split_indices(bundle: &FeatureBundle, split: Split) -> Result<Vec<usize>> {
    let idx = bundle.indices_of(split);
    if idx.is_empty() {
        return Err(Error::EmptySplit(split));
    }
    Ok(idx)
}

fn first_non_finite(params: &ParamSet<f32>, grads: bool) -> Option<String> {
    params
        .ids()
        .find(|&id| {
            let t = if grads { params.grad(id) } else { params.value(id) };
            t.data().iter().any(|v| !v.is_finite())
        })
        .map(|id| params.name(id).to_string())
}

/// Trains one seed: Adam on the L1 task loss (plus model regularizers),
/// valid-MAE early stopping, best-epoch restore, test evaluation.
pub fn train_run(config: &TrainConfig, bundle: &FeatureBundle, seed: u64) -> Result<RunResult> {
    config.validate()?;
    let train_idx = split_indices(bundle, Split::Train)?;
    let valid_idx = split_indices(bundle, Split::Valid)?;
    let test_idx = split_indices(bundle, Split::Test)?;

    let mut config = config.clone();
    config.model.seed = seed;
    config.model.bind_inputs(bundle);
    let mut model: Model<f32> = build_model(&config.model)?;
    let mut adam = Adam::new(config.optimizer.clone(), model.params());
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ DATA_STREAM);
    let mut stopper = EarlyStopping::new(config.patience);
    let mut best_params = model.params().clone();
    let mut history = Vec::new();
    let mut order = train_idx.clone();

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Batch<f32> = Batch::from_bundle(bundle, chunk)?;
            let mut tape = Tape::new();
            let bound = tape.bind(model.params());
            let loss = model.loss(&mut tape, &bound, &batch, true, &mut rng)?;
            let value = tape.value(loss).item().unwrap_or(f32::NAN);
            model.params_mut().zero_grads();
            tape.backward(loss, model.params_mut())?;
            if !value.is_finite() {
                let param = first_non_finite(model.params(), true).unwrap_or_else(|| "loss".into());
                return Err(Error::Diverged {
                    epoch,
                    param,
                    detail: format!("training loss became {value}"),
                });
            }
            if let Some(param) = first_non_finite(model.params(), true) {
                return Err(Error::Diverged {
                    epoch,
                    param,
                    detail: "non-finite gradient".into(),
                });
            }
            if let Some(max) = config.grad_clip {
                model.params_mut().clip_grad_norm(max as f32);
            }
            adam.step(model.params_mut());
            if let Some(param) = first_non_finite(model.params(), false) {
                return Err(Error::Diverged {
                    epoch,
                    param,
                    detail: "non-finite parameter after update".into(),
                });
            }
            loss_sum += value as f64 * chunk.len() as f64;
        }
        let (_, valid) = evaluate_indices(&model, bundle, &valid_idx, config.batch_size, &config.metrics)?;
        history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / order.len() as f64,
            valid,
            timestamp: config
                .record_timestamps
                .then(|| chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)),
        });
        log::debug!(
            "{} seed {seed} epoch {epoch}: train loss {:.4}, valid mae {:.4}",
            config.model.model_name,
            loss_sum / order.len() as f64,
            valid.mae
        );
        if stopper.observe(epoch, valid.mae) {
            best_params = model.params().clone();
        }
        if stopper.should_stop(epoch) {
            break;
        }
    }
    *model.params_mut() = best_params;
    model.params_mut().zero_grads();
    let (reps, test) = evaluate_indices(&model, bundle, &test_idx, config.batch_size, &config.metrics)?;
    Ok(RunResult {
        seed,
        best_epoch: stopper.best_epoch().expect("at least one epoch ran"),
        test,
        history,
        reps,
        model,
        config,
    })
}
