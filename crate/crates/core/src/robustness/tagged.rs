use std::collections::BTreeMap;
use std::fmt::Write as _;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::perturb::{synthesize_variants, PerturbationSpec};
use crate::analysis::{classification_metrics, MetricOptions, ReportFormat};
use crate::bundle::{FeatureBundle, InstanceType, Scenario, Split};
use crate::error::{Error, Result};
use crate::models::Model;
use crate::train::predict_indices;

/// How the Avg row combines the type rows.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AvgConvention {
    /// Metrics over the pooled samples of all type rows.
    #[default]
    SampleWeighted,
    /// Unweighted mean of the available type rows.
    TypeMean,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RowScore {
    pub acc2: f64,
    pub f1: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaggedRow {
    pub count: usize,
    /// `None` when the row has no samples.
    pub score: Option<RowScore>,
}

/// Acc-2 / F1 per instance type (and scenario), with both Avg conventions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaggedEvalReport {
    pub types: BTreeMap<InstanceType, TaggedRow>,
    pub scenarios: BTreeMap<Scenario, TaggedRow>,
    pub avg_sample_weighted: Option<RowScore>,
    pub avg_type_mean: Option<RowScore>,
    pub n: usize,
    /// Samples without a type tag; they are counted as common.
    pub untagged: usize,
}

impl TaggedEvalReport {
    pub fn avg(&self, convention: AvgConvention) -> Option<RowScore> {
        match convention {
            AvgConvention::SampleWeighted => self.avg_sample_weighted,
            AvgConvention::TypeMean => self.avg_type_mean,
        }
    }

    pub fn row(&self, t: InstanceType) -> TaggedRow {
        self.types.get(&t).copied().unwrap_or(TaggedRow { count: 0, score: None })
    }
}

fn score(preds: &[f64], labels: &[f64], opts: &MetricOptions) -> Result<Option<RowScore>> {
    if preds.is_empty() {
        return Ok(None);
    }
    let m = classification_metrics(preds, labels, opts)?;
    Ok(Some(RowScore { acc2: m.acc2, f1: m.f1 }))
}

/// Builds the report from per-sample predictions and tags.
pub fn tagged_report_from_predictions(
    preds: &[f64],
    labels: &[f64],
    types: &[Option<InstanceType>],
    scenarios: &[Option<Scenario>],
    opts: &MetricOptions,
) -> Result<TaggedEvalReport> {
    let n = preds.len();
    if labels.len() != n || types.len() != n || scenarios.len() != n {
        return Err(Error::Validation("predictions, labels and tags differ in length".into()));
    }
    if n == 0 {
        return Err(Error::Validation("no samples to evaluate".into()));
    }
    let untagged = types.iter().filter(|t| t.is_none()).count();
    let resolved: Vec<InstanceType> = types.iter().map(|t| t.unwrap_or(InstanceType::Common)).collect();
    let subset = |keep: &dyn Fn(usize) -> bool| -> (Vec<f64>, Vec<f64>) {
        (0..n).filter(|&i| keep(i)).map(|i| (preds[i], labels[i])).unzip()
    };
    let mut rows = BTreeMap::new();
    for t in InstanceType::ALL {
        let (p, l) = subset(&|i| resolved[i] == t);
        rows.insert(
            t,
            TaggedRow {
                count: p.len(),
                score: score(&p, &l, opts)?,
            },
        );
    }
    let mut scenario_rows = BTreeMap::new();
    for s in Scenario::ALL {
        let (p, l) = subset(&|i| scenarios[i] == Some(s));
        if !p.is_empty() {
            scenario_rows.insert(
                s,
                TaggedRow {
                    count: p.len(),
                    score: score(&p, &l, opts)?,
                },
            );
        }
    }
    let present: Vec<RowScore> = rows.values().filter_map(|r| r.score).collect();
    let avg_type_mean = (!present.is_empty()).then(|| RowScore {
        acc2: present.iter().map(|r| r.acc2).sum::<f64>() / present.len() as f64,
        f1: present.iter().map(|r| r.f1).sum::<f64>() / present.len() as f64,
    });
    Ok(TaggedEvalReport {
        types: rows,
        scenarios: scenario_rows,
        avg_sample_weighted: score(preds, labels, opts)?,
        avg_type_mean,
        n,
        untagged,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaggedEvalOptions {
    /// Restrict evaluation to one split; all samples when `None`.
    pub split: Option<Split>,
    pub batch_size: usize,
    pub metrics: MetricOptions,
}

impl Default for TaggedEvalOptions {
    fn default() -> Self {
        TaggedEvalOptions {
            split: Some(Split::Test),
            batch_size: 64,
            metrics: MetricOptions::default(),
        }
    }
}

struct Tagged {
    preds: Vec<f64>,
    labels: Vec<f64>,
    types: Vec<Option<InstanceType>>,
    scenarios: Vec<Option<Scenario>>,
}

impl Tagged {
    fn extend(&mut self, model: &Model<f32>, bundle: &FeatureBundle, indices: &[usize], batch: usize) -> Result<()> {
        let reps = predict_indices(model, bundle, indices, batch)?;
        self.preds.extend(reps.preds);
        self.labels.extend(reps.labels);
        for &i in indices {
            let s = &bundle.samples()[i];
            self.types.push(s.instance_type);
            self.scenarios.push(s.scenario);
        }
        Ok(())
    }
}

/// Evaluates `model` per instance type. Each perturbation adds a perturbed copy
/// of every clean (not noise/missing-tagged) sample, tagged with its type.
pub fn evaluate_tagged(
    model: &Model<f32>,
    bundle: &FeatureBundle,
    specs: &[PerturbationSpec],
    opts: &TaggedEvalOptions,
) -> Result<TaggedEvalReport> {
    let indices: Vec<usize> = match opts.split {
        Some(split) => bundle.indices_of(split),
        None => (0..bundle.len()).collect(),
    };
    if indices.is_empty() {
        return Err(match opts.split {
            Some(split) => Error::EmptySplit(split),
            None => Error::Validation("bundle has no samples".into()),
        });
    }
    let mut tagged = Tagged {
        preds: Vec::new(),
        labels: Vec::new(),
        types: Vec::new(),
        scenarios: Vec::new(),
    };
    tagged.extend(model, bundle, &indices, opts.batch_size)?;
    if !specs.is_empty() {
        let clean: Vec<usize> = indices
            .iter()
            .copied()
            .filter(|&i| {
                !matches!(
                    bundle.samples()[i].instance_type,
                    Some(InstanceType::Noise | InstanceType::Missing)
                )
            })
            .collect();
        if clean.is_empty() {
            return Err(Error::Validation("no clean samples to synthesize perturbed variants from".into()));
        }
        let variants = synthesize_variants(bundle, &clean, specs)?;
        let added: Vec<usize> = (clean.len()..variants.len()).collect();
        tagged.extend(model, &variants, &added, opts.batch_size)?;
    }
    tagged_report_from_predictions(&tagged.preds, &tagged.labels, &tagged.types, &tagged.scenarios, &opts.metrics)
}

fn cell(score: Option<RowScore>) -> String {
    match score {
        Some(s) => format!("{:.1} / {:.1}", s.acc2 * 100.0, s.f1 * 100.0),
        None => "n/a".into(),
    }
}

fn split_cell(score: Option<RowScore>) -> [String; 2] {
    match score {
        Some(s) => [format!("{:.1}", s.acc2 * 100.0), format!("{:.1}", s.f1 * 100.0)],
        None => ["n/a".into(), "n/a".into()],
    }
}

/// Row labels and per-model scores in table order.
fn table_rows(reports: &IndexMap<String, TaggedEvalReport>) -> Vec<(String, Vec<Option<RowScore>>)> {
    let mut rows = Vec::new();
    for t in InstanceType::ALL {
        rows.push((t.title().to_string(), reports.values().map(|r| r.row(t).score).collect()));
    }
    rows.push(("Avg".into(), reports.values().map(|r| r.avg_sample_weighted).collect()));
    rows.push(("Avg (type mean)".into(), reports.values().map(|r| r.avg_type_mean).collect()));
    for s in Scenario::ALL {
        if reports.values().any(|r| r.scenarios.contains_key(&s)) {
            rows.push((
                s.name().to_string(),
                reports.values().map(|r| r.scenarios.get(&s).and_then(|row| row.score)).collect(),
            ));
        }
    }
    rows
}

/// Generalization table: Acc-2 / F1 per model for Easy, Common, Difficult,
/// Noise, Missing, both Avg conventions and any scenario rows.
pub fn render_tagged_table(reports: &IndexMap<String, TaggedEvalReport>, format: ReportFormat) -> Result<String> {
    if reports.is_empty() {
        return Err(Error::Validation("no tagged reports to render".into()));
    }
    let rows = table_rows(reports);
    let mut out = String::new();
    match format {
        ReportFormat::Markdown => {
            out.push_str("| Types |");
            for name in reports.keys() {
                let _ = write!(out, " {name} |");
            }
            out.push_str("\n| |");
            for _ in reports {
                out.push_str(" Acc-2 / F1 |");
            }
            out.push_str("\n|---|");
            for _ in reports {
                out.push_str("---|");
            }
            out.push('\n');
            for (label, scores) in &rows {
                let _ = write!(out, "| {label} |");
                for s in scores {
                    let _ = write!(out, " {} |", cell(*s));
                }
                out.push('\n');
            }
            let has_gap = reports.values().any(|r| r.types.values().any(|row| row.score.is_none()));
            if has_gap {
                out.push_str("\nn/a: no samples of this type; excluded from both Avg rows.\n");
            }
            out.push_str("\nAvg: pooled over all samples. Avg (type mean): unweighted mean of the type rows.\n");
        }
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            let mut header = vec!["type".to_string()];
            for name in reports.keys() {
                header.push(format!("{name} Acc-2"));
                header.push(format!("{name} F1"));
            }
            w.write_record(&header).map_err(|e| Error::Validation(e.to_string()))?;
            for (label, scores) in &rows {
                let mut rec = vec![label.clone()];
                for s in scores {
                    rec.extend(split_cell(*s));
                }
                w.write_record(&rec).map_err(|e| Error::Validation(e.to_string()))?;
            }
            let bytes = w.into_inner().map_err(|e| Error::Validation(e.to_string()))?;
            out = String::from_utf8(bytes).expect("csv output is utf-8");
        }
        ReportFormat::Json => {
            out = serde_json::to_string_pretty(reports)? + "\n";
        }
    }
    Ok(out)
}
