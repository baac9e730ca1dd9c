//! Checkpoint directories:
//!
//! - `manifest.txt`: one `name<TAB>offset<TAB>dtype<TAB>shape` line per tensor
//!   (shape as comma-separated dims), sorted by name;
//! - `tensors.bin`: the tensor containers concatenated in manifest order;
//! - `config.json`: model configuration, preprocessing and class names.

use std::collections::BTreeMap;
use std::fs;
use std::io::Cursor;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, SCKansformer};
use crate::nn::Module;
use crate::tensor::{DType, Tensor};
use crate::train::{Normalizer, Preprocess};

pub const MANIFEST: &str = "manifest.txt";
pub const TENSORS: &str = "tensors.bin";
pub const CONFIG: &str = "config.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub preprocess: Preprocess,
    pub normalizer: Normalizer,
    pub class_names: Vec<String>,
}

/// Writes a state dict as manifest + tensor blob.
pub fn write_tensors(dir: &Path, state: &BTreeMap<String, Tensor>, dtype: DType) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = String::new();
    let mut blob = Vec::new();
    for (name, t) in state {
        if name.contains(['\t', '\n']) {
            return Err(Error::Config(format!("tensor name {name:?} contains a separator")));
        }
        let shape: Vec<String> = t.shape().iter().map(usize::to_string).collect();
        manifest.push_str(&format!("{name}\t{}\t{}\t{}\n", blob.len(), dtype.name(), shape.join(",")));
        t.write_to(&mut blob, dtype).map_err(|e| Error::io(dir, e))?;
    }
    let m = dir.join(MANIFEST);
    fs::write(&m, manifest).map_err(|e| Error::io(&m, e))?;
    let b = dir.join(TENSORS);
    fs::write(&b, blob).map_err(|e| Error::io(&b, e))
}

/// Reads and cross-checks manifest and blob.
pub fn read_tensors(dir: &Path) -> Result<BTreeMap<String, Tensor>> {
    let mpath = dir.join(MANIFEST);
    let bpath = dir.join(TENSORS);
    let manifest = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let blob = fs::read(&bpath).map_err(|e| Error::io(&bpath, e))?;
    let bad = |line: usize, reason: String| Error::Format {
        path: mpath.clone(),
        reason: format!("line {line}: {reason}"),
    };
    let mut out = BTreeMap::new();
    for (i, line) in manifest.lines().enumerate().filter(|(_, l)| !l.is_empty()) {
        let fields: Vec<&str> = line.split('\t').collect();
        let [name, offset, dtype, shape] = fields[..] else {
            return Err(bad(i + 1, "expected 4 tab-separated fields".into()));
        };
        let offset: usize = offset.parse().map_err(|_| bad(i + 1, format!("bad offset {offset:?}")))?;
        let dtype = DType::from_name(dtype).ok_or_else(|| bad(i + 1, format!("unknown dtype {dtype:?}")))?;
        let shape: Vec<usize> = if shape.is_empty() {
            Vec::new()
        } else {
            shape
                .split(',')
                .map(|d| d.parse().map_err(|_| bad(i + 1, format!("bad shape {shape:?}"))))
                .collect::<Result<_>>()?
        };
        if offset > blob.len() {
            return Err(bad(i + 1, format!("offset {offset} beyond blob of {} bytes", blob.len())));
        }
        let (t, stored) = Tensor::read_from(&mut Cursor::new(&blob[offset..])).map_err(|reason| Error::Format {
            path: bpath.clone(),
            reason: format!("tensor {name}: {reason}"),
        })?;
        if stored != dtype || t.shape() != shape.as_slice() {
            return Err(bad(i + 1, format!("tensor {name} does not match its container header")));
        }
        out.insert(name.to_string(), t);
    }
    Ok(out)
}

pub fn save(dir: &Path, model: &SCKansformer, meta: &CheckpointMeta) -> Result<()> {
    write_tensors(dir, &model.state_dict(), DType::F64)?;
    let path = dir.join(CONFIG);
    fs::write(&path, serde_json::to_string_pretty(meta)? + "\n").map_err(|e| Error::io(&path, e))
}

pub fn read_meta(dir: &Path) -> Result<CheckpointMeta> {
    let path = dir.join(CONFIG);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path,
        reason: e.to_string(),
    })
}

/// Rebuilds the model from `config.json` and loads every tensor strictly.
pub fn load(dir: &Path) -> Result<(SCKansformer, CheckpointMeta)> {
    let meta = read_meta(dir)?;
    let mut rng = crate::rng::substream(0, "init");
    let mut model = SCKansformer::new(&meta.model, &mut rng)?;
    model.load_state_dict(&read_tensors(dir)?)?;
    Ok((model, meta))
}
