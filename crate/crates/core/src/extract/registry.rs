use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{ColumnSelection, EmbeddingTable};
use crate::bundle::Modality;
use crate::error::{Error, Result};

/// One extractor invocation: which registry kind to run for a modality and
/// its parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtractorConfig {
    pub modality: Modality,
    pub kind: String,
    #[serde(default)]
    pub params: BTreeMap<String, Value>,
}

impl ExtractorConfig {
    pub fn new(modality: Modality, kind: &str) -> Self {
        ExtractorConfig {
            modality,
            kind: kind.to_string(),
            params: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.params.insert(key.to_string(), value.into());
        self
    }

    /// Validates the parameters and loads any resources; relative paths are
    /// taken relative to `base_dir`.
    pub fn resolve(&self, base_dir: &Path) -> Result<Extractor> {
        let entry = registry()
            .iter()
            .find(|e| e.modality == self.modality && e.kind == self.kind)
            .ok_or_else(|| {
                let known: Vec<&str> = registry()
                    .iter()
                    .filter(|e| e.modality == self.modality)
                    .map(|e| e.kind)
                    .collect();
                Error::Config(format!(
                    "unknown {} extractor kind '{}' (known: {})",
                    self.modality,
                    self.kind,
                    known.join(", ")
                ))
            })?;
        if let Some(bad) = self.params.keys().find(|k| !entry.params.contains(&k.as_str())) {
            return Err(Error::Config(format!(
                "parameter '{bad}' is not accepted by {} extractor '{}' (accepted: {})",
                self.modality,
                self.kind,
                entry.params.join(", ")
            )));
        }
        let p = Params(&self.params, &self.kind);
        Ok(match self.kind.as_str() {
            "stft" => Extractor::Stft {
                n_fft: p.usize_or("n_fft", 512)?,
                hop: p.usize_or("hop", 160)?,
                log: p.bool_or("log", true)?,
                sample_rate: p.usize_or("sample_rate", 16000)? as u32,
            },
            "mfcc" | "mfcc_stats" => Extractor::Mfcc {
                n_fft: p.usize_or("n_fft", 512)?,
                hop: p.usize_or("hop", 160)?,
                n_mels: p.usize_or("n_mels", 40)?,
                n_mfcc: p.usize_or("n_mfcc", 20)?,
                sample_rate: p.usize_or("sample_rate", 16000)? as u32,
                stats: self.kind == "mfcc_stats",
            },
            "embedding" => {
                let table = p.str("table")?.ok_or_else(|| {
                    Error::Config("embedding extractor requires a 'table' path".into())
                })?;
                let path = base_dir.join(table);
                Extractor::Embedding {
                    table: Arc::new(EmbeddingTable::load(&path)?),
                }
            }
            "ingest" => {
                let prefixes = p.str_list("prefixes")?;
                let names = p.str_list("columns")?;
                let columns = match (prefixes, names) {
                    (Some(_), Some(_)) => {
                        return Err(Error::Config(
                            "ingest accepts either 'prefixes' or 'columns', not both".into(),
                        ))
                    }
                    (Some(p), None) => ColumnSelection::Prefixes(p),
                    (None, Some(n)) => ColumnSelection::Names(n),
                    (None, None) => ColumnSelection::All,
                };
                Extractor::Ingest { columns }
            }
            other => unreachable!("registry kind {other} without resolver"),
        })
    }
}

struct Params<'a>(&'a BTreeMap<String, Value>, &'a str);

impl Params<'_> {
    fn err(&self, key: &str, want: &str) -> Error {
        Error::Config(format!("{} parameter '{key}' must be {want}", self.1))
    }

    fn usize_or(&self, key: &str, default: usize) -> Result<usize> {
        match self.0.get(key) {
            None => Ok(default),
            Some(v) => v
                .as_u64()
                .filter(|&x| x > 0)
                .map(|x| x as usize)
                .ok_or_else(|| self.err(key, "a positive integer")),
        }
    }

    fn bool_or(&self, key: &str, default: bool) -> Result<bool> {
        match self.0.get(key) {
            None => Ok(default),
            Some(v) => v.as_bool().ok_or_else(|| self.err(key, "a boolean")),
        }
    }

    fn str(&self, key: &str) -> Result<Option<&str>> {
        match self.0.get(key) {
            None => Ok(None),
            Some(v) => v.as_str().map(Some).ok_or_else(|| self.err(key, "a string")),
        }
    }

    fn str_list(&self, key: &str) -> Result<Option<Vec<String>>> {
        match self.0.get(key) {
            None => Ok(None),
            Some(Value::Array(items)) if !items.is_empty() => items
                .iter()
                .map(|x| x.as_str().map(str::to_string).ok_or_else(|| self.err(key, "a list of strings")))
                .collect::<Result<Vec<_>>>()
                .map(Some),
            Some(_) => Err(self.err(key, "a non-empty list of strings")),
        }
    }
}

/// A validated extractor.
#[derive(Clone, Debug)]
pub enum Extractor {
    /// WAV -> magnitude spectrogram frames (`ln(1 + |X|)` when `log`).
    Stft {
        n_fft: usize,
        hop: usize,
        log: bool,
        sample_rate: u32,
    },
    /// WAV -> MFCC frames, or a single row of their utterance statistics.
    Mfcc {
        n_fft: usize,
        hop: usize,
        n_mels: usize,
        n_mfcc: usize,
        sample_rate: u32,
        stats: bool,
    },
    /// Token list -> static word vectors.
    Embedding { table: Arc<EmbeddingTable> },
    /// Precomputed per-frame features from a CSV.
    Ingest { columns: ColumnSelection },
}

#[derive(Clone, Copy, Debug)]
pub struct RegistryEntry {
    pub modality: Modality,
    pub kind: &'static str,
    pub params: &'static [&'static str],
    pub description: &'static str,
}

const FRAME_PARAMS: &[&str] = &["n_fft", "hop", "n_mels", "n_mfcc", "sample_rate"];
const INGEST_PARAMS: &[&str] = &["prefixes", "columns"];

static REGISTRY: &[RegistryEntry] = &[
    RegistryEntry {
        modality: Modality::Audio,
        kind: "stft",
        params: &["n_fft", "hop", "log", "sample_rate"],
        description: "Hann-windowed STFT magnitudes",
    },
    RegistryEntry {
        modality: Modality::Audio,
        kind: "mfcc",
        params: FRAME_PARAMS,
        description: "frame-level MFCC (HTK mel, orthonormal DCT-II)",
    },
    RegistryEntry {
        modality: Modality::Audio,
        kind: "mfcc_stats",
        params: FRAME_PARAMS,
        description: "utterance mean/std/min/max of MFCC frames",
    },
    RegistryEntry {
        modality: Modality::Audio,
        kind: "ingest",
        params: INGEST_PARAMS,
        description: "precomputed acoustic features (eGeMAPS, wav2vec2.0, ...) from CSV",
    },
    RegistryEntry {
        modality: Modality::Text,
        kind: "embedding",
        params: &["table"],
        description: "static embedding table lookup (GloVe-style)",
    },
    RegistryEntry {
        modality: Modality::Text,
        kind: "ingest",
        params: INGEST_PARAMS,
        description: "precomputed token features (BERT, RoBERTa, ...) from CSV",
    },
    RegistryEntry {
        modality: Modality::Vision,
        kind: "ingest",
        params: INGEST_PARAMS,
        description: "facial landmark / action unit CSV",
    },
];

pub fn registry() -> &'static [RegistryEntry] {
    REGISTRY
}

/// Maps the benchmark feature codes `T1..T3`, `A1..A3`, `V1..V3` to
/// extractor configs. Codes backed by external backbones become ingestion of
/// their precomputed output. `T2` still needs a `table` parameter.
pub fn feature_code(code: &str) -> Result<ExtractorConfig> {
    let prefixes = |p: &[&str]| Value::from(p.iter().map(|s| Value::from(*s)).collect::<Vec<_>>());
    Ok(match code.trim().to_ascii_uppercase().as_str() {
        "T1" | "T3" => ExtractorConfig::new(Modality::Text, "ingest"),
        "T2" => ExtractorConfig::new(Modality::Text, "embedding"),
        "A1" | "A3" => ExtractorConfig::new(Modality::Audio, "ingest"),
        "A2" => ExtractorConfig::new(Modality::Audio, "mfcc").with("n_mfcc", 20),
        "V1" => ExtractorConfig::new(Modality::Vision, "ingest").with("prefixes", prefixes(&["AU"])),
        "V2" => ExtractorConfig::new(Modality::Vision, "ingest").with("prefixes", prefixes(&["x_", "y_"])),
        "V3" => ExtractorConfig::new(Modality::Vision, "ingest")
            .with("prefixes", prefixes(&["x_", "y_", "AU"])),
        other => return Err(Error::Config(format!("unknown feature code '{other}'"))),
    })
}
