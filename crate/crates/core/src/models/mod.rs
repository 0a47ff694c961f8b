//! Fusion model zoo running on padded multimodal batches.

mod batch;
mod checkpoint;
mod config;
mod ef_lstm;
mod layers;
mod lf_dnn;
mod lmf;
mod mfn;
mod misa;
mod mult;
mod tfn;

pub use batch::{Batch, ModalityInput};
pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MANIFEST, CHECKPOINT_PARAMS};
pub use config::{InputDims, ModelConfig};
pub use lmf::LmfExpansion;

use std::collections::BTreeMap;

use msa_autodiff::nn::Linear;
use msa_autodiff::{Bound, ParamSet, Real, Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bundle::Modality;
use crate::error::{Error, Result};
use layers::Ctx;

/// Implemented architectures.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ModelKind {
    LfDnn,
    EfLstm,
    Tfn,
    Lmf,
    Mfn,
    Mult,
    Misa,
}

impl ModelKind {
    pub const ALL: [ModelKind; 7] = [
        ModelKind::LfDnn,
        ModelKind::EfLstm,
        ModelKind::Tfn,
        ModelKind::Lmf,
        ModelKind::Mfn,
        ModelKind::Mult,
        ModelKind::Misa,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::LfDnn => "lf_dnn",
            ModelKind::EfLstm => "ef_lstm",
            ModelKind::Tfn => "tfn",
            ModelKind::Lmf => "lmf",
            ModelKind::Mfn => "mfn",
            ModelKind::Mult => "mult",
            ModelKind::Misa => "misa",
        }
    }

    /// Resolves a registry name to an architecture and whether it carries
    /// unimodal multi-task heads.
    pub fn parse(name: &str) -> Result<(ModelKind, bool)> {
        let key = name.trim().to_ascii_lowercase().replace('-', "_");
        Ok(match key.as_str() {
            "lf_dnn" => (ModelKind::LfDnn, false),
            "ef_lstm" => (ModelKind::EfLstm, false),
            "tfn" => (ModelKind::Tfn, false),
            "lmf" => (ModelKind::Lmf, false),
            "mfn" => (ModelKind::Mfn, false),
            "mult" | "mult_lite" => (ModelKind::Mult, false),
            "misa" | "misa_lite" => (ModelKind::Misa, false),
            "mlf_dnn" => (ModelKind::LfDnn, true),
            "mtfn" => (ModelKind::Tfn, true),
            "mlmf" => (ModelKind::Lmf, true),
            "bert_mag" | "mag_bert" => {
                return Err(Error::NotImplemented(format!("{key} requires pretrained backbone")))
            }
            "self_mm" => {
                return Err(Error::NotImplemented(format!(
                    "{key} requires pretrained backbone (and label generation)"
                )))
            }
            "graph_mfn" | "mfm" => {
                return Err(Error::NotImplemented(format!("{key} is outside the implemented model zoo")))
            }
            _ => return Err(Error::UnknownModel(name.to_string())),
        })
    }
}

/// Registry names accepted by [`build_model`].
pub const MODEL_NAMES: &[&str] = &[
    "lf_dnn", "ef_lstm", "tfn", "lmf", "mfn", "mult", "misa", "mlf_dnn", "mtfn", "mlmf",
];

/// TFN/LMF fusion axis order: audio, vision, text.
pub(crate) fn fusion_order(mods: &[Modality]) -> Vec<Modality> {
    [Modality::Audio, Modality::Vision, Modality::Text]
        .into_iter()
        .filter(|m| mods.contains(m))
        .collect()
}

/// Tape handles produced by one forward pass.
pub(crate) struct Forward {
    pub pred: Var,
    pub fusion: Var,
    pub uni: BTreeMap<Modality, Var>,
    pub aux_preds: BTreeMap<Modality, Var>,
    /// Model-specific regularizer, already weighted.
    pub aux_loss: Option<Var>,
    pub aux_terms: Vec<(&'static str, Var)>,
}

impl Forward {
    fn new(pred: Var, fusion: Var, uni: BTreeMap<Modality, Var>) -> Self {
        Forward {
            pred,
            fusion,
            uni,
            aux_preds: BTreeMap::new(),
            aux_loss: None,
            aux_terms: Vec::new(),
        }
    }
}

/// Forward-pass results copied off the tape.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelOutput<F> {
    pub pred: Vec<F>,
    /// `[B, d_f]`.
    pub fusion_rep: Tensor<F>,
    pub uni_reps: BTreeMap<Modality, Tensor<F>>,
    pub aux_preds: BTreeMap<Modality, Vec<F>>,
    /// Unweighted auxiliary loss terms (MISA).
    pub aux_losses: BTreeMap<String, F>,
}

#[derive(Clone, Debug)]
enum Arch {
    LfDnn(lf_dnn::LfDnn),
    EfLstm(ef_lstm::EfLstm),
    Tfn(tfn::Tfn),
    Lmf(lmf::Lmf),
    Mfn(mfn::Mfn),
    Mult(mult::Mult),
    Misa(misa::Misa),
}

#[derive(Clone, Debug)]
struct AuxHeads {
    heads: BTreeMap<Modality, Linear>,
    lambda: f64,
}

/// A fusion architecture with its parameters.
#[derive(Clone, Debug)]
pub struct Model<F> {
    config: ModelConfig,
    kind: ModelKind,
    params: ParamSet<F>,
    arch: Arch,
    aux: Option<AuxHeads>,
}

/// Builds a model with parameters drawn from `config.seed`.
pub fn build_model<F: Real>(config: &ModelConfig) -> Result<Model<F>> {
    config.validate()?;
    let (kind, registry_multitask) = ModelKind::parse(&config.model_name)?;
    let mut params = ParamSet::new();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let arch = match kind {
        ModelKind::LfDnn => Arch::LfDnn(lf_dnn::LfDnn::new(&mut params, config, &mut rng)?),
        ModelKind::EfLstm => Arch::EfLstm(ef_lstm::EfLstm::new(&mut params, config, &mut rng)?),
        ModelKind::Tfn => Arch::Tfn(tfn::Tfn::new(&mut params, config, &mut rng)?),
        ModelKind::Lmf => Arch::Lmf(lmf::Lmf::new(&mut params, config, &mut rng)?),
        ModelKind::Mfn => Arch::Mfn(mfn::Mfn::new(&mut params, config, &mut rng)?),
        ModelKind::Mult => Arch::Mult(mult::Mult::new(&mut params, config, &mut rng)?),
        ModelKind::Misa => Arch::Misa(misa::Misa::new(&mut params, config, &mut rng)?),
    };
    let mut model = Model {
        config: config.clone(),
        kind,
        params,
        arch,
        aux: None,
    };
    if registry_multitask || config.multitask {
        model = multitask_wrap(model, config.lambda_uni)?;
    }
    Ok(model)
}

/// Adds one linear head per modality on top of the unimodal
/// representations; training then adds `lambda_uni * sum_m L1(aux_m, y_m)`.
pub fn multitask_wrap<F: Real>(mut model: Model<F>, lambda_uni: f64) -> Result<Model<F>> {
    if !(lambda_uni.is_finite() && lambda_uni >= 0.0) {
        return Err(Error::Config(format!("lambda_uni must be non-negative, got {lambda_uni}")));
    }
    if model.aux.is_some() {
        return Err(Error::Config(format!("{} already has multi-task heads", model.config.model_name)));
    }
    let dims = model.uni_dims().ok_or_else(|| {
        Error::Config(format!(
            "{} exposes no unimodal representations to attach heads to",
            model.kind.name()
        ))
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(model.config.seed ^ 0x6d75_6c74_6974_736b);
    let mut heads = BTreeMap::new();
    for (m, d) in dims {
        let name = format!("{}.aux.{m}", model.kind.name());
        heads.insert(m, Linear::new(&mut model.params, &name, d, 1, &mut rng)?);
    }
    model.aux = Some(AuxHeads {
        heads,
        lambda: lambda_uni,
    });
    model.config.multitask = true;
    model.config.lambda_uni = lambda_uni;
    Ok(model)
}

/// The full fusion tensor an LMF model's factors represent.
pub fn lmf_full_tensor_expand<F: Real>(model: &Model<F>) -> Result<LmfExpansion<F>> {
    match &model.arch {
        Arch::Lmf(l) => Ok(l.expand(&model.params)),
        _ => Err(Error::Validation(format!(
            "lmf_full_tensor_expand needs an lmf model, got {}",
            model.kind.name()
        ))),
    }
}

/// Eval-mode forward pass.
pub fn model_forward<F: Real>(model: &Model<F>, batch: &Batch<F>) -> Result<ModelOutput<F>> {
    model.forward(batch)
}

impl<F: Real> Model<F> {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn name(&self) -> &str {
        &self.config.model_name
    }

    pub fn params(&self) -> &ParamSet<F> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<F> {
        &mut self.params
    }

    pub fn is_multitask(&self) -> bool {
        self.aux.is_some()
    }

    /// Overwrites a parameter by name.
    pub fn set_param(&mut self, name: &str, value: Tensor<F>) -> Result<()> {
        let id = self
            .params
            .id(name)
            .ok_or_else(|| Error::Validation(format!("no parameter named '{name}'")))?;
        Ok(self.params.set_value(id, value)?)
    }

    /// Same architecture in another precision.
    pub fn cast<G: Real>(&self) -> Model<G> {
        Model {
            config: self.config.clone(),
            kind: self.kind,
            params: self.params.cast(),
            arch: self.arch.clone(),
            aux: self.aux.clone(),
        }
    }

    fn uni_dims(&self) -> Option<BTreeMap<Modality, usize>> {
        match &self.arch {
            Arch::LfDnn(a) => Some(a.uni_dims()),
            Arch::Tfn(a) => Some(a.uni_dims()),
            Arch::Lmf(a) => Some(a.uni_dims()),
            Arch::Mfn(a) => Some(a.uni_dims()),
            Arch::Misa(a) => Some(a.uni_dims()),
            Arch::EfLstm(_) | Arch::Mult(_) => None,
        }
    }

    fn check_batch(&self, batch: &Batch<F>) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::Shape("empty batch".into()));
        }
        for (m, dims) in &self.config.inputs {
            let input = batch.input(*m)?;
            if input.feature_dim() != dims.feature_dim || input.batch_size() != batch.len() {
                return Err(Error::Shape(format!(
                    "{m} input is {:?}, model expects [{}, T, {}]",
                    input.data.shape(),
                    batch.len(),
                    dims.feature_dim
                )));
            }
        }
        if let Some(extra) = batch.inputs.keys().find(|m| !self.config.inputs.contains_key(m)) {
            return Err(Error::Shape(format!("model was not built for {extra} input")));
        }
        Ok(())
    }

    pub(crate) fn forward_vars(
        &self,
        tape: &mut Tape<F>,
        bound: &Bound,
        batch: &Batch<F>,
        train: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Forward> {
        self.check_batch(batch)?;
        let mut cx = Ctx {
            tape,
            bound,
            train,
            rng,
            dropout: F::from_f64_lossy(self.config.dropout),
        };
        let mut fwd = match &self.arch {
            Arch::LfDnn(a) => a.forward(&mut cx, batch)?,
            Arch::EfLstm(a) => a.forward(&mut cx, batch)?,
            Arch::Tfn(a) => a.forward(&mut cx, batch)?,
            Arch::Lmf(a) => a.forward(&mut cx, batch)?,
            Arch::Mfn(a) => a.forward(&mut cx, batch)?,
            Arch::Mult(a) => a.forward(&mut cx, batch)?,
            Arch::Misa(a) => a.forward(&mut cx, batch)?,
        };
        if let Some(aux) = &self.aux {
            for (m, head) in &aux.heads {
                let u = fwd.uni[m];
                let y = cx.linear(head, u)?;
                let y = cx.tape.reshape(y, [batch.len()])?;
                fwd.aux_preds.insert(*m, y);
            }
        }
        Ok(fwd)
    }

    /// Task L1 loss plus any model regularizer and multi-task terms.
    pub(crate) fn loss_on(&self, tape: &mut Tape<F>, batch: &Batch<F>, fwd: &Forward) -> Result<Var> {
        let target = tape.constant(Tensor::new([batch.len()], batch.labels.clone())?);
        let mut loss = tape.l1_loss(fwd.pred, target)?;
        if let Some(aux) = fwd.aux_loss {
            loss = tape.add(loss, aux)?;
        }
        if let Some(heads) = &self.aux {
            let mut terms = Vec::new();
            for (m, &y) in &fwd.aux_preds {
                let labels = batch.uni_labels.get(m).ok_or_else(|| {
                    Error::Validation(format!(
                        "multi-task model {} needs unimodal labels (label_{}) for every sample",
                        self.config.model_name,
                        m.short()
                    ))
                })?;
                let t = tape.constant(Tensor::new([batch.len()], labels.clone())?);
                terms.push(tape.l1_loss(y, t)?);
            }
            let mut uni = terms[0];
            for &t in &terms[1..] {
                uni = tape.add(uni, t)?;
            }
            let uni = tape.scale(uni, F::from_f64_lossy(heads.lambda));
            loss = tape.add(loss, uni)?;
        }
        Ok(loss)
    }

    /// Records a full training objective on `tape`.
    pub fn loss(
        &self,
        tape: &mut Tape<F>,
        bound: &Bound,
        batch: &Batch<F>,
        train: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Var> {
        let fwd = self.forward_vars(tape, bound, batch, train, rng)?;
        self.loss_on(tape, batch, &fwd)
    }

    /// Eval-mode forward pass (dropout off, no gradient record).
    pub fn forward(&self, batch: &Batch<F>) -> Result<ModelOutput<F>> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        self.run(batch, false, &mut rng)
    }

    /// Forward pass with dropout active.
    pub fn forward_train(&self, batch: &Batch<F>, rng: &mut ChaCha8Rng) -> Result<ModelOutput<F>> {
        self.run(batch, true, rng)
    }

    fn run(&self, batch: &Batch<F>, train: bool, rng: &mut ChaCha8Rng) -> Result<ModelOutput<F>> {
        let mut tape = Tape::no_grad();
        let bound = tape.bind(&self.params);
        let fwd = self.forward_vars(&mut tape, &bound, batch, train, rng)?;
        let pred = tape.value(fwd.pred).data().to_vec();
        if let Some(i) = pred.iter().position(|p| !p.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite prediction for sample '{}'",
                batch.ids.get(i).map_or("?", String::as_str)
            )));
        }
        Ok(ModelOutput {
            pred,
            fusion_rep: tape.value(fwd.fusion).clone(),
            uni_reps: fwd.uni.iter().map(|(&m, &v)| (m, tape.value(v).clone())).collect(),
            aux_preds: fwd
                .aux_preds
                .iter()
                .map(|(&m, &v)| (m, tape.value(v).data().to_vec()))
                .collect(),
            aux_losses: fwd
                .aux_terms
                .iter()
                .map(|(k, v)| (k.to_string(), tape.value(*v).item().unwrap_or_else(F::zero)))
                .collect(),
        })
    }
}
