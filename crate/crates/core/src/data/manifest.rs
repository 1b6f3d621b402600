//! On-disk dataset layout: `manifest.json` plus raw little-endian rasters.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{Dataset, SliceSample, Split};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const RASTER_DIR: &str = "rasters";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    version: u32,
    #[serde(default)]
    name: String,
    structures: Vec<String>,
    image_size: [usize; 2],
    samples: Vec<ManifestSample>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestSample {
    patient_id: String,
    slice_index: usize,
    split: Split,
    image: String,
    masks: Vec<Option<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pseudo: Option<Vec<bool>>,
}

fn image_path(s: &SliceSample) -> String {
    format!("{RASTER_DIR}/{}_{:04}.f32", s.patient_id, s.slice_index)
}

fn mask_path(s: &SliceSample, k: usize) -> String {
    format!("{RASTER_DIR}/{}_{:04}_s{k}.u8", s.patient_id, s.slice_index)
}

/// Writes `dataset` under `dir`, creating it if needed.
pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    dataset.validate()?;
    let rasters = dir.join(RASTER_DIR);
    fs::create_dir_all(&rasters).map_err(|e| Error::io(&rasters, e))?;
    let mut samples = Vec::with_capacity(dataset.samples.len());
    for s in &dataset.samples {
        let image = image_path(s);
        let bytes: Vec<u8> = s.image.iter().flat_map(|v| v.to_le_bytes()).collect();
        write(&dir.join(&image), &bytes)?;
        let mut masks = Vec::with_capacity(s.num_structures());
        for k in 0..s.num_structures() {
            masks.push(match s.mask(k) {
                Some(m) => {
                    let rel = mask_path(s, k);
                    write(&dir.join(&rel), &m.iter().copied().collect::<Vec<u8>>())?;
                    Some(rel)
                }
                None => None,
            });
        }
        let pseudo = s.pseudo_flags().iter().any(|&p| p).then(|| s.pseudo_flags().to_vec());
        samples.push(ManifestSample {
            patient_id: s.patient_id.clone(),
            slice_index: s.slice_index,
            split: s.split,
            image,
            masks,
            pseudo,
        });
    }
    let manifest = Manifest {
        version: VERSION,
        name: dataset.name.clone(),
        structures: dataset.structures.clone(),
        image_size: [dataset.image_size.0, dataset.image_size.1],
        samples,
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    write(&dir.join(MANIFEST_FILE), text.as_bytes())
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Resolves a dataset directory or a manifest file path to the manifest path.
pub fn manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    }
}

/// Loads a dataset from a directory (or its `manifest.json`).
pub fn load_manifest(path: &Path) -> Result<Dataset> {
    let manifest_file = manifest_path(path);
    let root = manifest_file.parent().unwrap_or(Path::new(".")).to_path_buf();
    let text = fs::read_to_string(&manifest_file).map_err(|e| Error::io(&manifest_file, e))?;
    let bad = |reason: String| Error::Manifest {
        path: manifest_file.clone(),
        reason,
    };
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
    if manifest.version != VERSION {
        return Err(bad(format!("unsupported version {}", manifest.version)));
    }
    let k = manifest.structures.len();
    let [h, w] = manifest.image_size;
    if h == 0 || w == 0 {
        return Err(bad("image_size must be positive".into()));
    }
    let mut samples = Vec::with_capacity(manifest.samples.len());
    for entry in manifest.samples {
        if entry.masks.len() != k {
            return Err(bad(format!(
                "sample {}/{} lists {} masks for {k} structures",
                entry.patient_id,
                entry.slice_index,
                entry.masks.len()
            )));
        }
        let image = read_image(&root.join(&entry.image), (h, w))?;
        let masks = entry
            .masks
            .iter()
            .map(|m| m.as_ref().map(|rel| read_mask(&root.join(rel), (h, w))).transpose())
            .collect::<Result<Vec<_>>>()?;
        let mut sample =
            SliceSample::new(entry.patient_id, entry.slice_index, entry.split, image, masks)?;
        if let Some(flags) = entry.pseudo {
            if flags.len() != k {
                return Err(bad(format!("pseudo flags of length {} for {k} structures", flags.len())));
            }
            if flags.iter().zip(sample.masks()).any(|(&p, m)| p && m.is_none()) {
                return Err(bad("pseudo flag set on a missing mask".into()));
            }
            sample.set_pseudo_flags(flags);
        }
        samples.push(sample);
    }
    Dataset::new(manifest.name, manifest.structures, (h, w), samples)
}

fn read_raw(path: &Path, expected: usize) -> Result<Vec<u8>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != expected {
        return Err(Error::Raster {
            path: path.to_path_buf(),
            reason: format!(
                "dimension mismatch: {} bytes, expected {expected}",
                bytes.len()
            ),
        });
    }
    Ok(bytes)
}

fn read_image(path: &Path, (h, w): (usize, usize)) -> Result<Array2<f32>> {
    let bytes = read_raw(path, h * w * 4)?;
    let values = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(Array2::from_shape_vec((h, w), values).expect("length checked"))
}

fn read_mask(path: &Path, (h, w): (usize, usize)) -> Result<Array2<u8>> {
    let bytes = read_raw(path, h * w)?;
    if let Some(v) = bytes.iter().find(|&&v| v > 1) {
        return Err(Error::Raster {
            path: path.to_path_buf(),
            reason: format!("mask value {v} outside {{0,1}}"),
        });
    }
    Ok(Array2::from_shape_vec((h, w), bytes).expect("length checked"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, ShapeKind, SplitCounts, SynthConfig};

    fn config() -> SynthConfig {
        SynthConfig {
            image_size: 16,
            patients: SplitCounts {
                train: 3,
                validation: 1,
                test: 1,
            },
            slices_per_patient: 2,
            structures: vec![ShapeKind::Disk, ShapeKind::Ring],
            availability_rate: vec![1.0, 0.5],
            ..SynthConfig::default()
        }
    }

    fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
        let mut files: Vec<_> = fs::read_dir(dir.join(RASTER_DIR))
            .unwrap()
            .map(|e| e.unwrap().path())
            .chain([dir.join(MANIFEST_FILE)])
            .map(|p| (p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()))
            .collect();
        files.sort();
        files
    }

    #[test]
    fn round_trip_and_byte_identical_reruns() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let generated = generate_synthetic(&config(), a.path()).unwrap();
        generate_synthetic(&config(), b.path()).unwrap();
        assert_eq!(snapshot(a.path()), snapshot(b.path()));
        assert_eq!(load_manifest(a.path()).unwrap(), generated);
    }

    #[test]
    fn null_mask_path_is_unavailable() {
        let dir = tempfile::tempdir().unwrap();
        let d = generate_synthetic(&config(), dir.path()).unwrap();
        let text = fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(
            text.matches("null").count(),
            d.samples.iter().filter(|s| !s.is_available(1)).count()
        );
        let loaded = load_manifest(&dir.path().join(MANIFEST_FILE)).unwrap();
        for s in &loaded.samples {
            assert_eq!(s.availability()[1] == 1, s.mask(1).is_some());
        }
    }

    #[test]
    fn mismatched_mask_dimensions_fail() {
        let dir = tempfile::tempdir().unwrap();
        generate_synthetic(&config(), dir.path()).unwrap();
        let mask = dir.path().join(RASTER_DIR).join("p000_0000_s0.u8");
        fs::write(&mask, vec![0u8; 8 * 8]).unwrap();
        let err = load_manifest(dir.path()).unwrap_err();
        assert!(err.to_string().contains("dimension mismatch"), "{err}");
    }

    #[test]
    fn non_binary_mask_fails() {
        let dir = tempfile::tempdir().unwrap();
        generate_synthetic(&config(), dir.path()).unwrap();
        let mask = dir.path().join(RASTER_DIR).join("p000_0000_s0.u8");
        fs::write(&mask, vec![3u8; 16 * 16]).unwrap();
        assert!(matches!(load_manifest(dir.path()), Err(Error::Raster { .. })));
    }

    #[test]
    fn schema_violations_and_duplicates_fail() {
        let dir = tempfile::tempdir().unwrap();
        generate_synthetic(&config(), dir.path()).unwrap();
        let path = dir.path().join(MANIFEST_FILE);
        let original = fs::read_to_string(&path).unwrap();

        fs::write(&path, original.replace("\"version\": 1", "\"version\": 2")).unwrap();
        assert!(matches!(load_manifest(dir.path()), Err(Error::Manifest { .. })));

        fs::write(&path, original.replace("\"split\": \"train\"", "\"split\": \"dev\"")).unwrap();
        assert!(matches!(load_manifest(dir.path()), Err(Error::Manifest { .. })));

        let mut value: serde_json::Value = serde_json::from_str(&original).unwrap();
        let first = value["samples"][0].clone();
        value["samples"].as_array_mut().unwrap().push(first);
        fs::write(&path, serde_json::to_string(&value).unwrap()).unwrap();
        assert!(matches!(load_manifest(dir.path()), Err(Error::Dataset(_))));
    }
}
