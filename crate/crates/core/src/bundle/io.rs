use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FeatureBundle, InstanceType, Manifest, Modality, ModalityBlock, SampleMeta, Scenario, Split};
use crate::binfmt::{self, Header, RecordError};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Serialize, Deserialize)]
struct ManifestFile {
    dataset_name: String,
    label_range: [f64; 2],
    modalities: Vec<ModalityEntry>,
    samples: Vec<SampleEntry>,
}

#[derive(Serialize, Deserialize)]
struct ModalityEntry {
    name: Modality,
    feature_dim: usize,
    max_len: usize,
}

#[derive(Serialize, Deserialize)]
struct SampleEntry {
    id: String,
    split: Split,
    label_m: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label_t: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label_a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label_v: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    scenario: Option<Scenario>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    instance_type: Option<InstanceType>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    missing_modalities: Vec<Modality>,
    lengths: BTreeMap<Modality, usize>,
}

fn bin_name(m: Modality) -> String {
    format!("{}.bin", m.name())
}

/// Writes `manifest.json` and one `<modality>.bin` per block into the
/// directory `path`, creating it if needed.
pub fn write_bundle(bundle: &FeatureBundle, path: &Path) -> Result<()> {
    bundle.validate()?;
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))?;
    let file = ManifestFile {
        dataset_name: bundle.manifest.dataset_name.clone(),
        label_range: [bundle.manifest.label_range.0, bundle.manifest.label_range.1],
        modalities: bundle
            .blocks
            .iter()
            .map(|(&name, b)| ModalityEntry {
                name,
                feature_dim: b.feature_dim,
                max_len: b.max_len,
            })
            .collect(),
        samples: bundle
            .manifest
            .samples
            .iter()
            .enumerate()
            .map(|(i, s)| SampleEntry {
                id: s.id.clone(),
                split: s.split,
                label_m: s.label_m,
                label_t: s.label_t,
                label_a: s.label_a,
                label_v: s.label_v,
                scenario: s.scenario,
                instance_type: s.instance_type,
                missing_modalities: s.missing.clone(),
                lengths: bundle.blocks.iter().map(|(&m, b)| (m, b.lengths[i])).collect(),
            })
            .collect(),
    };
    let manifest_path = path.join(MANIFEST_FILE);
    let mut json = serde_json::to_string_pretty(&file)?;
    json.push('\n');
    fs::write(&manifest_path, json).map_err(|e| Error::io(&manifest_path, e))?;
    for (&m, b) in &bundle.blocks {
        let p = path.join(bin_name(m));
        let f = File::create(&p).map_err(|e| Error::io(&p, e))?;
        let mut w = BufWriter::new(f);
        let header = Header {
            n: b.num_samples(),
            t: b.max_len,
            d: b.feature_dim,
        };
        binfmt::write_record(&mut w, header, &b.data)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}

/// Reads and validates a bundle directory written by [`write_bundle`].
pub fn read_bundle(path: &Path) -> Result<FeatureBundle> {
    let manifest_path = path.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let file: ManifestFile = serde_json::from_str(&text)
        .map_err(|e| Error::parse(&manifest_path, format!("malformed manifest: {e}")))?;
    if file.modalities.is_empty() {
        return Err(Error::parse(&manifest_path, "manifest lists no modalities"));
    }
    let n = file.samples.len();
    let mut blocks = BTreeMap::new();
    for entry in &file.modalities {
        if blocks.contains_key(&entry.name) {
            return Err(Error::parse(
                &manifest_path,
                format!("modality {} listed twice", entry.name),
            ));
        }
        let mut lengths = Vec::with_capacity(n);
        for s in &file.samples {
            let len = s.lengths.get(&entry.name).copied().ok_or_else(|| {
                Error::parse(
                    &manifest_path,
                    format!("sample '{}' has no {} length", s.id, entry.name),
                )
            })?;
            lengths.push(len);
        }
        let bin = path.join(bin_name(entry.name));
        let f = File::open(&bin).map_err(|e| Error::io(&bin, e))?;
        let mut r = BufReader::new(f);
        let header = binfmt::read_header(&mut r).map_err(|e| record_error(&bin, e))?;
        let expected = Header {
            n,
            t: entry.max_len,
            d: entry.feature_dim,
        };
        if header != expected {
            return Err(Error::Shape(format!(
                "{}: header declares N={}, T={}, d={} but the manifest declares N={}, T={}, d={}",
                bin.display(),
                header.n,
                header.t,
                header.d,
                expected.n,
                expected.t,
                expected.d
            )));
        }
        let data = binfmt::read_payload(&mut r, header).map_err(|e| record_error(&bin, e))?;
        let mut rest = [0u8; 1];
        if r.read(&mut rest).map_err(|e| Error::io(&bin, e))? != 0 {
            return Err(Error::Shape(format!(
                "{}: trailing bytes after {}x{}x{} payload",
                bin.display(),
                header.n,
                header.t,
                header.d
            )));
        }
        blocks.insert(
            entry.name,
            ModalityBlock::new(entry.feature_dim, entry.max_len, data, lengths)?,
        );
    }
    let samples = file
        .samples
        .into_iter()
        .map(|s| SampleMeta {
            id: s.id,
            split: s.split,
            label_m: s.label_m,
            label_t: s.label_t,
            label_a: s.label_a,
            label_v: s.label_v,
            scenario: s.scenario,
            instance_type: s.instance_type,
            missing: s.missing_modalities,
        })
        .collect();
    FeatureBundle::new(
        Manifest {
            dataset_name: file.dataset_name,
            label_range: (file.label_range[0], file.label_range[1]),
            samples,
        },
        blocks,
    )
}

fn record_error(path: &Path, e: RecordError) -> Error {
    match e {
        RecordError::Io(e) => Error::io(path, e),
        RecordError::Format(msg) => Error::parse(path, msg),
    }
}
