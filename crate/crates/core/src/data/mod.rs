//! Datasets of annotated 2-D slices.
//!
//! A [`SliceSample`] carries one image plus up to `K` structure masks. A mask
//! that was never drawn is simply absent, and its availability flag is derived
//! from that absence so the two can never disagree.

mod manifest;
mod preprocess;
mod synth;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

pub use manifest::{load_manifest, manifest_path, save_dataset, MANIFEST_FILE, RASTER_DIR};
pub use preprocess::{downsample, downsample_mask, preprocess_ct, DownsampleKind};
pub use synth::{generate_synthetic, generate_synthetic_in_memory, ShapeKind, SplitCounts, SynthConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidInput(format!("unknown split {other:?}"))),
        }
    }
}

/// One image slice with its (possibly missing) structure annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceSample {
    pub patient_id: String,
    pub slice_index: usize,
    pub split: Split,
    pub image: Array2<f32>,
    masks: Vec<Option<Array2<u8>>>,
    /// Marks masks that were predicted by a teacher model rather than drawn.
    pseudo: Vec<bool>,
}

impl SliceSample {
    pub fn new(
        patient_id: impl Into<String>,
        slice_index: usize,
        split: Split,
        image: Array2<f32>,
        masks: Vec<Option<Array2<u8>>>,
    ) -> Result<Self> {
        let pseudo = vec![false; masks.len()];
        let sample = SliceSample {
            patient_id: patient_id.into(),
            slice_index,
            split,
            image,
            masks,
            pseudo,
        };
        sample.validate()?;
        Ok(sample)
    }

    fn validate(&self) -> Result<()> {
        let dim = self.image.dim();
        for (k, mask) in self.masks.iter().enumerate() {
            if let Some(mask) = mask {
                ensure!(
                    mask.dim() == dim,
                    Shape,
                    "mask {k} of {}/{} is {:?}, image is {:?}",
                    self.patient_id,
                    self.slice_index,
                    mask.dim(),
                    dim
                );
                ensure!(
                    mask.iter().all(|&v| v <= 1),
                    InvalidInput,
                    "mask {k} of {}/{} has values outside {{0,1}}",
                    self.patient_id,
                    self.slice_index
                );
            }
        }
        Ok(())
    }

    pub fn num_structures(&self) -> usize {
        self.masks.len()
    }

    pub fn mask(&self, k: usize) -> Option<&Array2<u8>> {
        self.masks[k].as_ref()
    }

    pub fn masks(&self) -> &[Option<Array2<u8>>] {
        &self.masks
    }

    pub fn is_available(&self, k: usize) -> bool {
        self.masks[k].is_some()
    }

    /// The `w` vector: 1 where a mask is present.
    pub fn availability(&self) -> Vec<u8> {
        self.masks.iter().map(|m| m.is_some() as u8).collect()
    }

    pub fn is_pseudo(&self, k: usize) -> bool {
        self.pseudo[k]
    }

    pub fn pseudo_flags(&self) -> &[bool] {
        &self.pseudo
    }

    /// Fills a missing slot with a predicted mask and flags it as pseudo.
    pub fn set_pseudo_mask(&mut self, k: usize, mask: Array2<u8>) -> Result<()> {
        ensure!(
            self.masks[k].is_none(),
            InvalidInput,
            "structure {k} of {}/{} is already annotated",
            self.patient_id,
            self.slice_index
        );
        self.masks[k] = Some(mask);
        self.pseudo[k] = true;
        if let Err(e) = self.validate() {
            self.masks[k] = None;
            self.pseudo[k] = false;
            return Err(e);
        }
        Ok(())
    }

    pub(crate) fn set_pseudo_flags(&mut self, flags: Vec<bool>) {
        debug_assert_eq!(flags.len(), self.masks.len());
        self.pseudo = flags;
    }

    /// Keeps only the listed structures, in the given order.
    pub fn select(&self, structures: &[usize]) -> SliceSample {
        SliceSample {
            patient_id: self.patient_id.clone(),
            slice_index: self.slice_index,
            split: self.split,
            image: self.image.clone(),
            masks: structures.iter().map(|&k| self.masks[k].clone()).collect(),
            pseudo: structures.iter().map(|&k| self.pseudo[k]).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub structures: Vec<String>,
    /// `(height, width)` shared by every raster.
    pub image_size: (usize, usize),
    pub samples: Vec<SliceSample>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        structures: Vec<String>,
        image_size: (usize, usize),
        samples: Vec<SliceSample>,
    ) -> Result<Self> {
        let dataset = Dataset {
            name: name.into(),
            structures,
            image_size,
            samples,
        };
        dataset.validate()?;
        Ok(dataset)
    }

    /// Checks the cross-sample invariants.
    pub fn validate(&self) -> Result<()> {
        let k = self.structures.len();
        ensure!(k >= 1, Dataset, "at least one structure is required");
        let unique: HashSet<&str> = self.structures.iter().map(String::as_str).collect();
        ensure!(unique.len() == k, Dataset, "duplicate structure names");
        let mut split_of: HashMap<&str, Split> = HashMap::new();
        let mut seen: HashSet<(&str, usize)> = HashSet::new();
        for s in &self.samples {
            ensure!(
                s.num_structures() == k,
                Dataset,
                "sample {}/{} has {} structures, expected {k}",
                s.patient_id,
                s.slice_index,
                s.num_structures()
            );
            ensure!(
                s.image.dim() == self.image_size,
                Shape,
                "image of {}/{} is {:?}, dataset is {:?}",
                s.patient_id,
                s.slice_index,
                s.image.dim(),
                self.image_size
            );
            s.validate()?;
            ensure!(
                seen.insert((s.patient_id.as_str(), s.slice_index)),
                Dataset,
                "duplicate sample {}/{}",
                s.patient_id,
                s.slice_index
            );
            match split_of.insert(s.patient_id.as_str(), s.split) {
                Some(prev) if prev != s.split => {
                    return Err(Error::Dataset(format!(
                        "patient {} appears in both {prev} and {}",
                        s.patient_id, s.split
                    )))
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn num_structures(&self) -> usize {
        self.structures.len()
    }

    pub fn structure_index(&self, name: &str) -> Option<usize> {
        self.structures.iter().position(|s| s == name)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &SliceSample> {
        self.samples.iter().filter(move |s| s.split == split)
    }

    /// Patient ids of a split in order of first appearance.
    pub fn patients(&self, split: Split) -> Vec<&str> {
        let mut seen = HashSet::new();
        self.split(split)
            .map(|s| s.patient_id.as_str())
            .filter(|p| seen.insert(*p))
            .collect()
    }

    /// Restricts the dataset to a subset of structures.
    pub fn select_structures(&self, structures: &[usize]) -> Dataset {
        Dataset {
            name: self.name.clone(),
            structures: structures.iter().map(|&k| self.structures[k].clone()).collect(),
            image_size: self.image_size,
            samples: self.samples.iter().map(|s| s.select(structures)).collect(),
        }
    }

    /// The data a single-structure model sees: structure `k` only, and only the
    /// slices where it is annotated.
    pub fn single_structure(&self, k: usize) -> Dataset {
        Dataset {
            name: format!("{}:{}", self.name, self.structures[k]),
            structures: vec![self.structures[k].clone()],
            image_size: self.image_size,
            samples: self
                .samples
                .iter()
                .filter(|s| s.is_available(k))
                .map(|s| s.select(&[k]))
                .collect(),
        }
    }

    /// Per split and structure: `(patients with any annotated slice, annotated slices)`.
    pub fn availability_counts(&self) -> BTreeMap<Split, Vec<(usize, usize)>> {
        let k = self.num_structures();
        let mut out = BTreeMap::new();
        for split in Split::ALL {
            let mut patients: Vec<HashSet<&str>> = vec![HashSet::new(); k];
            let mut slices = vec![0usize; k];
            for s in self.split(split) {
                for (j, m) in s.masks().iter().enumerate() {
                    if m.is_some() {
                        patients[j].insert(s.patient_id.as_str());
                        slices[j] += 1;
                    }
                }
            }
            out.insert(
                split,
                patients.iter().map(HashSet::len).zip(slices).collect(),
            );
        }
        out
    }

    pub fn count_pseudo(&self) -> usize {
        self.samples
            .iter()
            .map(|s| s.pseudo_flags().iter().filter(|&&p| p).count())
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn sample(patient: &str, slice: usize, split: Split) -> SliceSample {
        SliceSample::new(
            patient,
            slice,
            split,
            Array2::zeros((2, 2)),
            vec![Some(array![[1, 0], [0, 0]]), None],
        )
        .unwrap()
    }

    #[test]
    fn availability_follows_masks() {
        let s = sample("a", 0, Split::Train);
        assert_eq!(s.availability(), vec![1, 0]);
    }

    #[test]
    fn rejects_non_binary_and_mismatched_masks() {
        let bad = SliceSample::new(
            "a",
            0,
            Split::Train,
            Array2::zeros((2, 2)),
            vec![Some(array![[2, 0], [0, 0]])],
        );
        assert!(bad.is_err());
        let bad = SliceSample::new(
            "a",
            0,
            Split::Train,
            Array2::zeros((2, 2)),
            vec![Some(Array2::zeros((3, 2)))],
        );
        assert!(matches!(bad, Err(Error::Shape(_))));
    }

    #[test]
    fn patient_in_two_splits_is_rejected() {
        let names = vec!["x".to_string(), "y".to_string()];
        let samples = vec![sample("a", 0, Split::Train), sample("a", 1, Split::Test)];
        assert!(Dataset::new("d", names, (2, 2), samples).is_err());
    }

    #[test]
    fn duplicate_slice_is_rejected() {
        let names = vec!["x".to_string(), "y".to_string()];
        let samples = vec![sample("a", 0, Split::Train), sample("a", 0, Split::Train)];
        assert!(Dataset::new("d", names, (2, 2), samples).is_err());
    }

    #[test]
    fn single_structure_view_drops_unannotated_slices() {
        let names = vec!["x".to_string(), "y".to_string()];
        let samples = vec![sample("a", 0, Split::Train), sample("b", 0, Split::Test)];
        let d = Dataset::new("d", names, (2, 2), samples).unwrap();
        assert_eq!(d.single_structure(0).samples.len(), 2);
        assert_eq!(d.single_structure(1).samples.len(), 0);
        assert_eq!(d.single_structure(1).structures, vec!["y".to_string()]);
    }

    #[test]
    fn pseudo_mask_fills_missing_slot_once() {
        let mut s = sample("a", 0, Split::Train);
        s.set_pseudo_mask(1, Array2::ones((2, 2))).unwrap();
        assert!(s.is_pseudo(1) && s.is_available(1));
        assert!(s.set_pseudo_mask(1, Array2::ones((2, 2))).is_err());
        assert!(s.set_pseudo_mask(0, Array2::ones((2, 2))).is_err());
    }
}
