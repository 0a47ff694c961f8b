use std::collections::HashMap;
use std::path::Path;

use super::FeatureMatrix;
use crate::error::{Error, Result};

pub const UNK_TOKEN: &str = "<unk>";

/// Static word vectors of a fixed dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: HashMap<String, Vec<f32>>,
}

impl EmbeddingTable {
    pub fn from_entries(entries: impl IntoIterator<Item = (String, Vec<f32>)>) -> Result<Self> {
        let mut dim = None;
        let mut vectors = HashMap::new();
        for (token, v) in entries {
            let d = *dim.get_or_insert(v.len());
            if v.len() != d || d == 0 {
                return Err(Error::Validation(format!(
                    "embedding for '{token}' has dim {}, expected {d}",
                    v.len()
                )));
            }
            if vectors.insert(token.clone(), v).is_some() {
                return Err(Error::Validation(format!("token '{token}' defined twice")));
            }
        }
        if !vectors.contains_key(UNK_TOKEN) {
            return Err(Error::Validation(format!(
                "embedding table lacks the reserved token {UNK_TOKEN}"
            )));
        }
        Ok(EmbeddingTable {
            dim: dim.unwrap_or(0),
            vectors,
        })
    }

    /// Parses `token v1 v2 ...` lines; blank lines are skipped.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let mut parts = line.split_whitespace();
            let Some(token) = parts.next() else { continue };
            let v = parts
                .map(|p| p.parse::<f32>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::parse(origin, format!("line {}: {e}", lineno + 1)))?;
            entries.push((token.to_string(), v));
        }
        Self::from_entries(entries)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.vectors.contains_key(token)
    }

    /// Vector for `token` (exact, then lowercased), else the unk vector.
    pub fn get(&self, token: &str) -> &[f32] {
        self.vectors
            .get(token)
            .or_else(|| self.vectors.get(&token.to_lowercase()))
            .unwrap_or_else(|| &self.vectors[UNK_TOKEN])
    }
}

/// Whitespace tokenization with surrounding punctuation stripped.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| w.trim_matches(|c: char| c.is_ascii_punctuation() && c != '<' && c != '>'))
        .filter(|w| !w.is_empty())
        .map(str::to_string)
        .collect()
}

/// One embedding row per token.
pub fn text_embed_lookup<S: AsRef<str>>(tokens: &[S], table: &EmbeddingTable) -> Result<FeatureMatrix> {
    if tokens.is_empty() {
        return Err(Error::Validation("empty token list".into()));
    }
    let data = tokens
        .iter()
        .flat_map(|t| table.get(t.as_ref()).iter().map(|&x| x as f64))
        .collect();
    FeatureMatrix::new(tokens.len(), table.dim(), data)
}
