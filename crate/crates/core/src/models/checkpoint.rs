use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use msa_autodiff::Tensor;
use serde::{Deserialize, Serialize};

use super::{build_model, Model, ModelConfig};
use crate::binfmt::{self, Header, RecordError};
use crate::error::{Error, Result};

pub const CHECKPOINT_MANIFEST: &str = "manifest.json";
pub const CHECKPOINT_PARAMS: &str = "params.bin";

#[derive(Serialize, Deserialize)]
struct CheckpointManifest {
    model_name: String,
    seed: u64,
    config: ModelConfig,
    params: Vec<ParamEntry>,
}

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

/// Pads a rank <= 3 shape to the `N x T x d` record layout.
fn record_header(shape: &[usize]) -> Option<Header> {
    let (n, t, d) = match *shape {
        [] => (1, 1, 1),
        [d] => (1, 1, d),
        [t, d] => (1, t, d),
        [n, t, d] => (n, t, d),
        _ => return None,
    };
    Some(Header { n, t, d })
}

/// Writes `manifest.json` and `params.bin` (one array record per
/// parameter, in registration order) into `dir`.
pub fn save_checkpoint(model: &Model<f32>, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let params = model.params();
    let manifest = CheckpointManifest {
        model_name: model.config().model_name.clone(),
        seed: model.config().seed,
        config: model.config().clone(),
        params: params
            .iter()
            .map(|(_, name, t)| ParamEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let mpath = dir.join(CHECKPOINT_MANIFEST);
    let mut json = serde_json::to_string_pretty(&manifest)?;
    json.push('\n');
    fs::write(&mpath, json).map_err(|e| Error::io(&mpath, e))?;
    let ppath = dir.join(CHECKPOINT_PARAMS);
    let f = File::create(&ppath).map_err(|e| Error::io(&ppath, e))?;
    let mut w = BufWriter::new(f);
    for (_, name, t) in params.iter() {
        let header = record_header(t.shape())
            .ok_or_else(|| Error::Shape(format!("parameter {name} has rank > 3")))?;
        binfmt::write_record(&mut w, header, t.data()).map_err(|e| Error::io(&ppath, e))?;
    }
    w.flush().map_err(|e| Error::io(&ppath, e))
}

/// Rebuilds the model from its stored config and loads the stored values.
pub fn load_checkpoint(dir: &Path) -> Result<Model<f32>> {
    let mpath = dir.join(CHECKPOINT_MANIFEST);
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: CheckpointManifest = serde_json::from_str(&text)
        .map_err(|e| Error::parse(&mpath, format!("malformed checkpoint manifest: {e}")))?;
    let mut model: Model<f32> = build_model(&manifest.config)?;
    if model.params().len() != manifest.params.len() {
        return Err(Error::parse(
            &mpath,
            format!(
                "checkpoint lists {} parameters but {} has {}",
                manifest.params.len(),
                manifest.model_name,
                model.params().len()
            ),
        ));
    }
    let ppath = dir.join(CHECKPOINT_PARAMS);
    let f = File::open(&ppath).map_err(|e| Error::io(&ppath, e))?;
    let mut r = BufReader::new(f);
    let rec_err = |e: RecordError| match e {
        RecordError::Io(e) => Error::io(&ppath, e),
        RecordError::Format(m) => Error::parse(&ppath, m),
    };
    for entry in &manifest.params {
        let id = model
            .params()
            .id(&entry.name)
            .ok_or_else(|| Error::parse(&mpath, format!("unknown parameter '{}'", entry.name)))?;
        let expected = model.params().value(id).shape().to_vec();
        if expected != entry.shape {
            return Err(Error::Shape(format!(
                "parameter {} is {:?} in the checkpoint but {:?} in the model",
                entry.name, entry.shape, expected
            )));
        }
        let header = binfmt::read_header(&mut r).map_err(rec_err)?;
        if Some(header) != record_header(&entry.shape) {
            return Err(Error::Shape(format!(
                "record for {} has shape {}x{}x{}, expected {:?}",
                entry.name, header.n, header.t, header.d, entry.shape
            )));
        }
        let data = binfmt::read_payload(&mut r, header).map_err(rec_err)?;
        if let Some(bad) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::Validation(format!(
                "parameter {} has a non-finite value at index {bad}",
                entry.name
            )));
        }
        model.params_mut().set_value(id, Tensor::new(entry.shape.clone(), data)?)?;
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(|e| Error::io(&ppath, e))? != 0 {
        return Err(Error::parse(&ppath, "trailing bytes after the last parameter"));
    }
    Ok(model)
}
