use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Deserialize;

use super::{
    ingest_feature_csv, mfcc, read_wav, stft, text_embed_lookup, tokenize, utterance_stats,
    Extractor, ExtractorConfig, FeatureMatrix, Window,
};
use crate::bundle::{FeatureBundle, Manifest, Modality, ModalityBlock, SampleMeta, Split};
use crate::error::{Error, Result};

/// One row of the label CSV.
#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
pub struct LabelRow {
    pub id: String,
    pub split: String,
    pub label_m: f64,
    #[serde(default)]
    pub label_t: Option<f64>,
    #[serde(default)]
    pub label_a: Option<f64>,
    #[serde(default)]
    pub label_v: Option<f64>,
    #[serde(default)]
    pub scenario: Option<String>,
    #[serde(default)]
    pub instance_type: Option<String>,
    /// Inline transcript.
    #[serde(default)]
    pub text: Option<String>,
    #[serde(default)]
    pub text_path: Option<String>,
    #[serde(default)]
    pub audio_path: Option<String>,
    #[serde(default)]
    pub vision_path: Option<String>,
}

fn nonempty(s: &Option<String>) -> Option<&str> {
    s.as_deref().map(str::trim).filter(|s| !s.is_empty())
}

impl LabelRow {
    fn meta(&self) -> Result<SampleMeta> {
        let mut m = SampleMeta::new(self.id.clone(), self.split.parse::<Split>()?, self.label_m);
        m.label_t = self.label_t;
        m.label_a = self.label_a;
        m.label_v = self.label_v;
        m.scenario = nonempty(&self.scenario).map(str::parse).transpose()?;
        m.instance_type = nonempty(&self.instance_type).map(str::parse).transpose()?;
        Ok(m)
    }

    /// A test-split row for one unlabelled sample.
    pub fn unlabelled(id: impl Into<String>) -> Self {
        LabelRow {
            id: id.into(),
            split: Split::Test.to_string(),
            ..LabelRow::default()
        }
    }

    fn has_input(&self, m: Modality) -> bool {
        self.path(m).is_some() || (m == Modality::Text && nonempty(&self.text).is_some())
    }

    fn path(&self, m: Modality) -> Option<&str> {
        let p = match m {
            Modality::Text => &self.text_path,
            Modality::Audio => &self.audio_path,
            Modality::Vision => &self.vision_path,
        };
        p.as_deref().map(str::trim).filter(|s| !s.is_empty())
    }
}

pub fn read_label_csv(path: &Path) -> Result<Vec<LabelRow>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::Headers)
        .from_path(path)
        .map_err(|e| Error::parse(path, e.to_string()))?;
    let mut rows = Vec::new();
    for (i, rec) in rdr.deserialize::<LabelRow>().enumerate() {
        let row = rec.map_err(|e| Error::parse(path, format!("row {}: {e}", i + 1)))?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::parse(path, "label file has no rows"));
    }
    Ok(rows)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FailurePolicy {
    /// Any failed sample aborts the run.
    Strict,
    /// Failed samples are dropped (and logged) while their share stays at or
    /// below the fraction.
    Lenient { max_failure_fraction: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetOptions {
    pub dataset_name: String,
    pub label_range: (f64, f64),
    pub policy: FailurePolicy,
}

impl Default for DatasetOptions {
    fn default() -> Self {
        DatasetOptions {
            dataset_name: "dataset".into(),
            label_range: (-3.0, 3.0),
            policy: FailurePolicy::Strict,
        }
    }
}

impl Extractor {
    fn apply(&self, m: Modality, row: &LabelRow, base: &Path) -> Result<FeatureMatrix> {
        let input = |what: &str| -> Result<PathBuf> {
            row.path(m)
                .map(|p| base.join(p))
                .ok_or_else(|| Error::Validation(format!("no {m}_path given ({what} input)")))
        };
        match self {
            Extractor::Stft {
                n_fft,
                hop,
                log,
                sample_rate,
            } => {
                let wave = read_wav(&input("wav")?)?;
                check_rate(wave.sample_rate, *sample_rate)?;
                let mut spec = stft(&wave, *n_fft, *hop, Window::Hann)?.to_matrix();
                if *log {
                    spec.data.iter_mut().for_each(|x| *x = x.ln_1p());
                }
                Ok(spec)
            }
            Extractor::Mfcc {
                n_fft,
                hop,
                n_mels,
                n_mfcc,
                sample_rate,
                stats,
            } => {
                let wave = read_wav(&input("wav")?)?;
                check_rate(wave.sample_rate, *sample_rate)?;
                let seq = mfcc(&wave, *n_fft, *hop, *n_mels, *n_mfcc)?;
                if *stats {
                    let v = utterance_stats(&seq)?;
                    FeatureMatrix::new(1, v.len(), v)
                } else {
                    Ok(seq)
                }
            }
            Extractor::Embedding { table } => {
                let text = match (&row.text, row.path(m)) {
                    (Some(t), _) if !t.trim().is_empty() => t.clone(),
                    (_, Some(p)) => {
                        let p = base.join(p);
                        std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?
                    }
                    _ => return Err(Error::Validation("no text or text_path given".into())),
                };
                text_embed_lookup(&tokenize(&text), table)
            }
            Extractor::Ingest { columns } => ingest_feature_csv(&input("csv")?, columns),
        }
    }
}

fn check_rate(got: u32, want: u32) -> Result<()> {
    if got != want {
        return Err(Error::Validation(format!(
            "sample rate {got} Hz does not match the configured {want} Hz (resampling is not supported)"
        )));
    }
    Ok(())
}

/// Runs the configured extractor for every modality of every labelled
/// sample and assembles a validated bundle, rows in label-file order.
pub fn run_dataset(
    dataset_dir: &Path,
    configs: &[ExtractorConfig],
    label_file: &Path,
    options: &DatasetOptions,
) -> Result<FeatureBundle> {
    if configs.is_empty() {
        return Err(Error::Config("no extractor configured".into()));
    }
    let mut extractors: BTreeMap<Modality, Extractor> = BTreeMap::new();
    for c in configs {
        if extractors.insert(c.modality, c.resolve(dataset_dir)?).is_some() {
            return Err(Error::Config(format!("more than one extractor for {}", c.modality)));
        }
    }
    let rows = read_label_csv(label_file)?;
    let metas = rows
        .iter()
        .map(|r| r.meta().map_err(|e| Error::parse(label_file, format!("sample '{}': {e}", r.id))))
        .collect::<Result<Vec<_>>>()?;

    let outcomes: Vec<Result<BTreeMap<Modality, FeatureMatrix>>> = crate::worker_pool().install(|| {
        rows.par_iter()
            .map(|row| {
                extractors
                    .iter()
                    .map(|(&m, ex)| {
                        ex.apply(m, row, dataset_dir)
                            .map(|f| (m, f))
                            .map_err(|e| Error::Validation(format!("{m}: {e}")))
                    })
                    .collect()
            })
            .collect()
    });

    let mut dims: BTreeMap<Modality, usize> = BTreeMap::new();
    let mut failures = Vec::new();
    let mut kept = Vec::new();
    for ((meta, outcome), row) in metas.into_iter().zip(outcomes).zip(&rows) {
        let feats = match outcome {
            Ok(f) => f,
            Err(e) => {
                failures.push((row.id.clone(), e.to_string()));
                continue;
            }
        };
        let mismatch = feats.iter().find_map(|(m, f)| {
            let d = *dims.entry(*m).or_insert(f.cols);
            (d != f.cols).then(|| format!("{m}: feature dim {} differs from {d}", f.cols))
        });
        match mismatch {
            Some(msg) => failures.push((row.id.clone(), msg)),
            None => kept.push((meta, feats)),
        }
    }

    let total = rows.len();
    if !failures.is_empty() {
        let tolerated = match options.policy {
            FailurePolicy::Strict => false,
            FailurePolicy::Lenient { max_failure_fraction } => {
                failures.len() as f64 <= max_failure_fraction * total as f64 && !kept.is_empty()
            }
        };
        if !tolerated {
            return Err(Error::Extraction { failures });
        }
        for (id, why) in &failures {
            log::warn!("dropping sample '{id}': {why}");
        }
    }

    let mut blocks = BTreeMap::new();
    for (&m, &d) in &dims {
        let seqs: Vec<(usize, Vec<f32>)> = kept
            .iter()
            .map(|(_, f)| (f[&m].rows, f[&m].to_f32()))
            .collect();
        blocks.insert(m, ModalityBlock::from_sequences(d, None, &seqs)?);
    }
    FeatureBundle::new(
        Manifest {
            dataset_name: options.dataset_name.clone(),
            label_range: options.label_range,
            samples: kept.into_iter().map(|(m, _)| m).collect(),
        },
        blocks,
    )
}

/// Runs the configured extractors on a single sample. Modalities for which
/// `row` names no input are left out of the result.
pub fn extract_sample(
    configs: &[ExtractorConfig],
    base_dir: &Path,
    row: &LabelRow,
) -> Result<BTreeMap<Modality, FeatureMatrix>> {
    let mut out = BTreeMap::new();
    for c in configs.iter().filter(|c| row.has_input(c.modality)) {
        let ex = c.resolve(base_dir)?;
        let f = ex.apply(c.modality, row, base_dir)?;
        if out.insert(c.modality, f).is_some() {
            return Err(Error::Config(format!("more than one extractor for {}", c.modality)));
        }
    }
    Ok(out)
}

/// Wraps one sample's features as a single-row test bundle shaped for a
/// model. Modalities in `feature_dims` without features become missing.
pub fn sample_bundle(
    id: &str,
    features: &BTreeMap<Modality, FeatureMatrix>,
    feature_dims: &BTreeMap<Modality, usize>,
) -> Result<FeatureBundle> {
    let mut meta = SampleMeta::new(id, Split::Test, 0.0);
    let mut blocks = BTreeMap::new();
    for (&m, &d) in feature_dims {
        let block = match features.get(&m) {
            Some(f) if f.cols != d => {
                return Err(Error::Shape(format!("{m} features have dim {}, the model expects {d}", f.cols)))
            }
            Some(f) if f.rows > 0 => ModalityBlock::from_sequences(d, None, &[(f.rows, f.to_f32())])?,
            _ => {
                meta.missing.push(m);
                ModalityBlock::new(d, 1, vec![0.0; d], vec![1])?
            }
        };
        blocks.insert(m, block);
    }
    if let Some(m) = features.keys().find(|m| !feature_dims.contains_key(m)) {
        log::warn!("ignoring {m} features: the model has no {m} input");
    }
    FeatureBundle::new(
        Manifest {
            dataset_name: "sample".into(),
            label_range: (-1.0, 1.0),
            samples: vec![meta],
        },
        blocks,
    )
}
