//! Generalization testing: feature-space perturbations that simulate noisy
//! and missing modalities, and per-instance-type evaluation reports.

mod perturb;
mod tagged;

pub use perturb::{
    add_feature_noise, drop_modality, perturb_bundle, substitute_unk_frames, substitute_unk_tokens,
    synthesize_variants, PerturbationKind, PerturbationSpec,
};
pub use tagged::{
    evaluate_tagged, render_tagged_table, tagged_report_from_predictions, AvgConvention, RowScore, TaggedEvalOptions,
    TaggedEvalReport, TaggedRow,
};
