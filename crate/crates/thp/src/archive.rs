//! Model directories: `params.bin` holds every parameter as little-endian
//! `f64` in store order, `manifest.json` the shapes, offsets and configs.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thp_core::model::{ModelConfig, Thp};
use thp_core::train::TrainConfig;
use thp_core::Tensor;

use crate::error::{io_err, Result, ThpError};

pub const PARAMS_FILE: &str = "params.bin";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const LOSS_LOG_FILE: &str = "loss_log.jsonl";
const FORMAT: &str = "thp-model";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    /// Offset into `params.bin`, in `f64` elements.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    pub train: TrainConfig,
    /// Mean inter-event gap of the training data (density prediction horizon).
    pub mean_gap: f64,
    pub best_epoch: usize,
    pub best_dev_per_event_ll: Option<f64>,
    pub params: Vec<ParamEntry>,
}

impl Manifest {
    pub fn new(model: &Thp, train: TrainConfig, mean_gap: f64, best_epoch: usize, best_dev: Option<f64>) -> Self {
        let mut offset = 0;
        let params = model
            .store
            .iter()
            .map(|(name, t)| {
                let e = ParamEntry {
                    name: name.to_string(),
                    rows: t.rows(),
                    cols: t.cols(),
                    offset,
                };
                offset += t.len();
                e
            })
            .collect();
        Manifest {
            format: FORMAT.into(),
            version: VERSION,
            config: model.config.clone(),
            train,
            mean_gap,
            best_epoch,
            best_dev_per_event_ll: best_dev,
            params,
        }
    }
}

pub fn encode_params(model: &Thp) -> Vec<u8> {
    let mut out = Vec::with_capacity(model.store.num_scalars() * 8);
    for t in model.store.tensors() {
        for x in t.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

/// Writes `params.bin` and `manifest.json` into `dir`, creating it.
pub fn save_model(dir: &Path, model: &Thp, manifest: &Manifest) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let p = dir.join(PARAMS_FILE);
    fs::write(&p, encode_params(model)).map_err(io_err(&p))?;
    let m = dir.join(MANIFEST_FILE);
    let mut json = serde_json::to_string_pretty(manifest).expect("manifest serialises");
    json.push('\n');
    fs::write(&m, json).map_err(io_err(&m))
}

pub fn load_model(dir: &Path) -> Result<(Thp, Manifest)> {
    let bad = |message: String| ThpError::Archive {
        path: dir.to_path_buf(),
        message,
    };
    let m = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&m).map_err(io_err(&m))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| bad(format!("manifest: {e}")))?;
    if manifest.format != FORMAT || manifest.version != VERSION {
        return Err(bad(format!(
            "unsupported format {} version {}",
            manifest.format, manifest.version
        )));
    }
    let p = dir.join(PARAMS_FILE);
    let bytes = fs::read(&p).map_err(io_err(&p))?;
    if bytes.len() % 8 != 0 {
        return Err(bad(format!("{PARAMS_FILE} length {} is not a multiple of 8", bytes.len())));
    }
    let values: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let mut tensors = Vec::with_capacity(manifest.params.len());
    for e in &manifest.params {
        let end = e.offset + e.rows * e.cols;
        let slice = values
            .get(e.offset..end)
            .ok_or_else(|| bad(format!("parameter {} runs past the end of {PARAMS_FILE}", e.name)))?;
        tensors.push((e.name.as_str(), Tensor::from_vec(e.rows, e.cols, slice.to_vec())?));
    }
    let expected: usize = manifest.params.iter().map(|e| e.rows * e.cols).sum();
    if expected != values.len() {
        return Err(bad(format!("{PARAMS_FILE} holds {} values, manifest {expected}", values.len())));
    }
    let mut model = Thp::new(manifest.config.clone(), 0).map_err(|e| bad(e.to_string()))?;
    model.load_params(tensors).map_err(|e| bad(e.to_string()))?;
    Ok((model, manifest))
}
