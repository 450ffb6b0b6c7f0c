//! Checkpoint directory:
//!
//! ```text
//! <dir>/manifest.txt        key = value: model config, extra entries, one
//!                           `param.NNNN = <name> <NxCxHxW>` line per tensor
//! <dir>/params/NNNN.clct    tensor NNNN in the raw tensor format
//! ```

use std::fs;
use std::path::Path;

use super::{Model, ModelConfig};
use crate::error::{Error, Result};
use crate::kv;
use crate::tensor::{io, Scalar};

pub const MANIFEST: &str = "manifest.txt";
const FORMAT: &str = "clci-checkpoint-1";

/// Writes weights, running statistics and config. `extra` pairs are stored
/// verbatim and handed back by [`load_checkpoint`].
pub fn save_checkpoint<T: Scalar>(dir: &Path, model: &Model<T>, extra: &[(String, String)]) -> Result<()> {
    let params_dir = dir.join("params");
    fs::create_dir_all(&params_dir)?;
    let mut pairs = vec![("format".to_string(), FORMAT.to_string())];
    pairs.extend(model.config().to_pairs());
    for (k, v) in extra {
        if k.starts_with("param.") || k == "format" {
            return Err(Error::Checkpoint(format!("reserved key `{k}`")));
        }
        pairs.push((k.clone(), v.clone()));
    }
    for (id, p) in model.store.iter() {
        pairs.push((format!("param.{:04}", id.index()), format!("{} {}", p.name, p.tensor.shape())));
        io::save(&params_dir.join(format!("{:04}.clct", id.index())), &p.tensor)?;
    }
    fs::write(dir.join(MANIFEST), kv::render(pairs))?;
    Ok(())
}

/// Rebuilds the model from its manifest and checks every expected parameter
/// name and shape before reading the tensors.
pub fn load_checkpoint<T: Scalar>(dir: &Path) -> Result<(Model<T>, Vec<(String, String)>)> {
    let text = fs::read_to_string(dir.join(MANIFEST))
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", dir.join(MANIFEST).display())))?;
    let mut config = ModelConfig::default();
    let mut listed = Vec::new();
    let mut extra = Vec::new();
    let mut format = None;
    for (k, v) in kv::parse(&text)? {
        if k == "format" {
            format = Some(v);
        } else if let Some(idx) = k.strip_prefix("param.") {
            let idx: usize = kv::value(&k, idx)?;
            let (name, shape) = v
                .split_once(' ')
                .ok_or_else(|| Error::Checkpoint(format!("malformed entry `{k} = {v}`")))?;
            listed.push((idx, name.to_string(), shape.trim().to_string()));
        } else if !config.apply(&k, &v)? {
            extra.push((k, v));
        }
    }
    if format.as_deref() != Some(FORMAT) {
        return Err(Error::Checkpoint(format!("unsupported format {format:?}")));
    }
    let mut model = Model::<T>::new(config)?;
    if listed.len() != model.store.len() {
        return Err(Error::Checkpoint(format!(
            "manifest lists {} tensors, model expects {}",
            listed.len(),
            model.store.len()
        )));
    }
    listed.sort_by_key(|e| e.0);
    let ids: Vec<_> = model.store.iter().map(|(id, _)| id).collect();
    for ((idx, name, shape), id) in listed.iter().zip(ids) {
        let p = model.store.get(id);
        let expected_shape = p.tensor.shape().to_string();
        if *idx != id.index() || *name != p.name || *shape != expected_shape {
            return Err(Error::Checkpoint(format!(
                "entry {idx} is `{name}` {shape}, expected `{}` {expected_shape}",
                p.name
            )));
        }
        let t = io::load::<T>(&dir.join("params").join(format!("{idx:04}.clct")))?;
        if t.shape() != p.tensor.shape() {
            return Err(Error::Checkpoint(format!("`{name}`: file holds {}, expected {shape}", t.shape())));
        }
        model.store.set_values(id, &t)?;
    }
    Ok((model, extra))
}
