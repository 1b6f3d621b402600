//! Checkpoint directories: `spec.json`, `index.json` and one raw
//! little-endian `f32` file per parameter under `params/`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelSpec, Param};
use crate::error::{ensure, Error, Result};

pub const SPEC_FILE: &str = "spec.json";
pub const INDEX_FILE: &str = "index.json";
const PARAM_DIR: &str = "params";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct IndexEntry {
    name: String,
    shape: Vec<usize>,
    trainable: bool,
    file: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Index {
    version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    structures: Option<Vec<String>>,
    params: Vec<IndexEntry>,
}

/// A loaded checkpoint.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model,
    /// Names of the output channels, when recorded.
    pub structures: Option<Vec<String>>,
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn save_checkpoint(model: &Model, structures: Option<&[String]>, dir: &Path) -> Result<()> {
    if let Some(names) = structures {
        ensure!(
            names.len() == model.out_channels(),
            InvalidInput,
            "{} structure names for {} output channels",
            names.len(),
            model.out_channels()
        );
    }
    let pdir = dir.join(PARAM_DIR);
    fs::create_dir_all(&pdir).map_err(|e| Error::io(&pdir, e))?;
    let mut entries = Vec::with_capacity(model.params().len());
    for p in model.params() {
        let file = format!("{PARAM_DIR}/{}.f32", p.name);
        let bytes: Vec<u8> = p.value.iter().flat_map(|v| v.to_le_bytes()).collect();
        write(&dir.join(&file), &bytes)?;
        entries.push(IndexEntry {
            name: p.name.clone(),
            shape: p.shape.clone(),
            trainable: p.trainable,
            file,
        });
    }
    write(&dir.join(SPEC_FILE), &to_json(model.spec())?)?;
    let index = Index {
        version: 1,
        structures: structures.map(<[String]>::to_vec),
        params: entries,
    };
    write(&dir.join(INDEX_FILE), &to_json(&index)?)
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let spec: ModelSpec = serde_json::from_slice(&read(&dir.join(SPEC_FILE))?)?;
    let index: Index = serde_json::from_slice(&read(&dir.join(INDEX_FILE))?)?;
    ensure!(index.version == 1, InvalidInput, "unsupported checkpoint version {}", index.version);
    let mut params = Vec::with_capacity(index.params.len());
    for entry in index.params {
        let path = dir.join(&entry.file);
        let bytes = read(&path)?;
        let len: usize = entry.shape.iter().product();
        if bytes.len() != 4 * len {
            return Err(Error::Raster {
                path,
                reason: format!("dimension mismatch: {} bytes, expected {}", bytes.len(), 4 * len),
            });
        }
        params.push(Param {
            name: entry.name,
            shape: entry.shape,
            value: bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect(),
            trainable: entry.trainable,
        });
    }
    let model = Model::from_params(spec, params, 0)?;
    if let Some(names) = &index.structures {
        ensure!(
            names.len() == model.out_channels(),
            InvalidInput,
            "{} structure names for {} output channels",
            names.len(),
            model.out_channels()
        );
    }
    Ok(Checkpoint {
        model,
        structures: index.structures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Tensor;

    #[test]
    fn round_trip_preserves_outputs() {
        let spec = ModelSpec {
            input_size: (16, 16),
            out_channels: 2,
            ..ModelSpec::default()
        };
        let model = Model::build(spec, 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let names = vec!["a".to_string(), "b".to_string()];
        save_checkpoint(&model, Some(&names), dir.path()).unwrap();
        let loaded = load_checkpoint(dir.path()).unwrap();
        assert_eq!(loaded.structures, Some(names));
        assert_eq!(loaded.model.params(), model.params());
        let x = Tensor::from_vec([1, 1, 16, 16], (0..256).map(|i| i as f32 / 256.0).collect()).unwrap();
        assert_eq!(loaded.model.predict(&x).unwrap(), model.predict(&x).unwrap());
    }

    #[test]
    fn truncated_parameter_file_fails() {
        let model = Model::build(ModelSpec { input_size: (16, 16), ..ModelSpec::default() }, 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(&model, None, dir.path()).unwrap();
        fs::write(dir.path().join("params/head.bias.f32"), [0u8; 2]).unwrap();
        assert!(matches!(load_checkpoint(dir.path()), Err(Error::Raster { .. })));
        assert!(save_checkpoint(&model, Some(&["a".into(), "b".into()]), dir.path()).is_err());
    }
}
