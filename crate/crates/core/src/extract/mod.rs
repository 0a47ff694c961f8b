//! Reference feature extraction: audio DSP, utterance statistics, embedding
//! lookup, CSV ingestion of precomputed features, and whole-dataset runs.

mod dataset;
mod registry;
mod spectral;
mod stats;
mod text;
mod visual;
mod wav;

pub use dataset::{extract_sample, read_label_csv, run_dataset, sample_bundle, DatasetOptions, FailurePolicy, LabelRow};
pub use registry::{feature_code, registry, Extractor, ExtractorConfig, RegistryEntry};
pub use spectral::{
    dct_matrix, frame_count, hann_window, hz_to_mel, mel_filterbank, mel_to_hz, mfcc, stft,
    Spectrogram, Window, LOG_EPSILON,
};
pub use stats::utterance_stats;
pub use text::{text_embed_lookup, tokenize, EmbeddingTable, UNK_TOKEN};
pub use visual::{ingest_feature_csv, ingest_visual_csv, ColumnSelection};
pub use wav::{read_wav, write_wav, WaveBuffer};

use crate::error::{Error, Result};

/// Row-major `rows x cols` matrix; one row per frame.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "matrix data has {} values, expected {rows} x {cols}",
                data.len()
            )));
        }
        Ok(FeatureMatrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().position(|r| r.len() != cols) {
            return Err(Error::Shape(format!(
                "row {bad} has {} columns, expected {cols}",
                rows[bad].len()
            )));
        }
        Ok(FeatureMatrix {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.data.iter().map(|&x| x as f32).collect()
    }
}
