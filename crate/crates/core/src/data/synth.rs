//! Synthetic "organ" datasets.
//!
//! Each structure is a simple shape placed around a fixed anchor (so position is
//! informative, as anatomy is) whose size varies smoothly along the slice axis.
//! Intensity is Gaussian background noise plus a per-patient offset inside each
//! structure; overlapping structures add their offsets.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{save_dataset, Dataset, SliceSample, Split};
use crate::error::{ensure, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Disk,
    Ellipse,
    Ring,
    /// A disk enclosing the preceding structure, like an organ and the larger
    /// region that contains it.
    Nested,
}

impl ShapeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ShapeKind::Disk => "disk",
            ShapeKind::Ellipse => "ellipse",
            ShapeKind::Ring => "ring",
            ShapeKind::Nested => "nested",
        }
    }
}

impl fmt::Display for ShapeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ShapeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "disk" => Ok(ShapeKind::Disk),
            "ellipse" => Ok(ShapeKind::Ellipse),
            "ring" => Ok(ShapeKind::Ring),
            "nested" => Ok(ShapeKind::Nested),
            other => Err(Error::InvalidConfig(format!("unknown shape {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

impl SplitCounts {
    pub fn total(&self) -> usize {
        self.train + self.validation + self.test
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub name: String,
    pub image_size: usize,
    pub patients: SplitCounts,
    pub slices_per_patient: usize,
    pub structures: Vec<ShapeKind>,
    /// Probability that a patient has structure `k` annotated at all.
    pub availability_rate: Vec<f64>,
    /// Probability that an annotated patient's slice loses its mask for `k`.
    /// Empty means no dropout.
    #[serde(default)]
    pub per_slice_dropout: Vec<f64>,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            name: "synthetic".into(),
            image_size: 64,
            patients: SplitCounts {
                train: 30,
                validation: 10,
                test: 10,
            },
            slices_per_patient: 8,
            structures: vec![ShapeKind::Disk, ShapeKind::Ellipse, ShapeKind::Ring],
            availability_rate: vec![1.0, 0.6, 0.6],
            per_slice_dropout: Vec::new(),
            noise_std: 0.05,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let k = self.structures.len();
        ensure!(k >= 1, InvalidConfig, "structure list is empty");
        ensure!(self.patients.total() > 0, InvalidConfig, "zero patients");
        ensure!(self.patients.train > 0, InvalidConfig, "no training patients");
        ensure!(self.slices_per_patient > 0, InvalidConfig, "zero slices per patient");
        ensure!(self.image_size >= 16, InvalidConfig, "image size must be >= 16");
        ensure!(
            self.noise_std.is_finite() && self.noise_std >= 0.0,
            InvalidConfig,
            "noise_std must be >= 0"
        );
        ensure!(
            self.availability_rate.len() == k,
            InvalidConfig,
            "{} availability rates for {k} structures",
            self.availability_rate.len()
        );
        ensure!(
            self.per_slice_dropout.is_empty() || self.per_slice_dropout.len() == k,
            InvalidConfig,
            "{} per-slice dropout rates for {k} structures",
            self.per_slice_dropout.len()
        );
        for &r in self.availability_rate.iter().chain(&self.per_slice_dropout) {
            ensure!(
                (0.0..=1.0).contains(&r),
                InvalidConfig,
                "rate {r} is outside [0, 1]"
            );
        }
        ensure!(
            self.availability_rate.contains(&1.0),
            InvalidConfig,
            "at least one structure must be available for every patient"
        );
        Ok(())
    }

    /// Structure names: the shape name, suffixed when a shape repeats.
    pub fn structure_names(&self) -> Vec<String> {
        self.structures
            .iter()
            .enumerate()
            .map(|(k, s)| {
                let earlier = self.structures[..k].iter().filter(|&t| t == s).count();
                if earlier == 0 {
                    s.to_string()
                } else {
                    format!("{s}_{}", earlier + 1)
                }
            })
            .collect()
    }

    fn dropout(&self, k: usize) -> f64 {
        self.per_slice_dropout.get(k).copied().unwrap_or(0.0)
    }
}

/// Per-patient draw for one structure.
struct StructureDraw {
    available: bool,
    offset: f32,
    center: (f64, f64),
    radius: f64,
    angle: f64,
    first_slice: usize,
    last_slice: usize,
}

/// Where a structure sits on one slice; used by a following nested structure.
#[derive(Clone, Copy)]
struct Placement {
    center: (f64, f64),
    extent: f64,
}

/// Generates the dataset and writes it to `out_dir`.
pub fn generate_synthetic(config: &SynthConfig, out_dir: &Path) -> Result<Dataset> {
    let dataset = generate_synthetic_in_memory(config)?;
    save_dataset(&dataset, out_dir)?;
    Ok(dataset)
}

pub fn generate_synthetic_in_memory(config: &SynthConfig) -> Result<Dataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let size = config.image_size;
    let scale = size as f64 / 64.0;
    let noise = Normal::new(0.0f64, config.noise_std)
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;

    let anchored: Vec<usize> = config
        .structures
        .iter()
        .enumerate()
        .filter(|&(k, s)| *s != ShapeKind::Nested || k == 0)
        .map(|(k, _)| k)
        .collect();
    let anchors: Vec<Option<(f64, f64)>> = (0..config.structures.len())
        .map(|k| {
            anchored.iter().position(|&a| a == k).map(|a| {
                let half = size as f64 / 2.0;
                if anchored.len() == 1 {
                    return (half, half);
                }
                let theta = 2.0 * PI * a as f64 / anchored.len() as f64 + PI / 6.0;
                let r = 0.22 * size as f64;
                (half + r * theta.cos(), half + r * theta.sin())
            })
        })
        .collect();

    let splits = [
        (Split::Train, config.patients.train),
        (Split::Validation, config.patients.validation),
        (Split::Test, config.patients.test),
    ];
    let slices = config.slices_per_patient;
    let mut samples = Vec::with_capacity(config.patients.total() * slices);
    let mut patient_no = 0usize;
    for (split, count) in splits {
        for _ in 0..count {
            let patient_id = format!("p{patient_no:03}");
            patient_no += 1;
            let draws: Vec<StructureDraw> = (0..config.structures.len())
                .map(|k| {
                    let anchor = anchors[k].unwrap_or((0.0, 0.0));
                    let margin = slices / 4;
                    StructureDraw {
                        available: rng.gen::<f64>() < config.availability_rate[k],
                        offset: rng.gen_range(0.1..0.4),
                        center: (
                            anchor.0 + rng.gen_range(-3.0..3.0) * scale,
                            anchor.1 + rng.gen_range(-3.0..3.0) * scale,
                        ),
                        radius: rng.gen_range(6.0..9.0) * scale,
                        angle: rng.gen_range(0.0..PI),
                        first_slice: rng.gen_range(0..=margin),
                        last_slice: slices - 1 - rng.gen_range(0..=margin),
                    }
                })
                .collect();

            for j in 0..slices {
                let mut image = Array2::<f32>::zeros((size, size));
                image.iter_mut().for_each(|v| *v = noise.sample(&mut rng) as f32);
                let mut masks = Vec::with_capacity(draws.len());
                let mut previous: Option<Placement> = None;
                for (k, draw) in draws.iter().enumerate() {
                    let kind = config.structures[k];
                    let nested_in = (kind == ShapeKind::Nested && k > 0).then_some(previous);
                    let (mask, placement) = rasterize(kind, draw, nested_in, j, size);
                    previous = placement;
                    image.zip_mut_with(&mask, |v, &m| {
                        if m == 1 {
                            *v += draw.offset;
                        }
                    });
                    let dropped = rng.gen::<f64>() < config.dropout(k);
                    masks.push((draw.available && !dropped).then_some(mask));
                }
                samples.push(SliceSample::new(patient_id.clone(), j, split, image, masks)?);
            }
        }
    }
    Dataset::new(config.name.clone(), config.structure_names(), (size, size), samples)
}

fn rasterize(
    kind: ShapeKind,
    draw: &StructureDraw,
    nested_in: Option<Option<Placement>>,
    slice: usize,
    size: usize,
) -> (Array2<u8>, Option<Placement>) {
    let mut mask = Array2::<u8>::zeros((size, size));
    let radius = {
        let (first, last) = (draw.first_slice, draw.last_slice);
        if nested_in.is_none() && (slice < first || slice > last) {
            return (mask, None);
        }
        let span = (last - first + 1) as f64;
        let t = (slice.clamp(first, last) - first) as f64 + 0.5;
        draw.radius * (0.55 + 0.45 * (PI * t / span).sin())
    };
    let (center, extent) = match kind {
        // enclosing region follows the structure it contains
        ShapeKind::Nested => match nested_in {
            Some(Some(p)) => (p.center, 1.3 * p.extent),
            Some(None) => return (mask, None),
            None => (draw.center, radius),
        },
        ShapeKind::Disk => (draw.center, radius),
        ShapeKind::Ellipse => (draw.center, 1.35 * radius),
        ShapeKind::Ring => (draw.center, 1.15 * radius),
    };
    let (cos, sin) = (draw.angle.cos(), draw.angle.sin());
    for ((y, x), m) in mask.indexed_iter_mut() {
        let dx = x as f64 - center.0;
        let dy = y as f64 - center.1;
        let inside = match kind {
            ShapeKind::Disk | ShapeKind::Nested => dx * dx + dy * dy <= extent * extent,
            ShapeKind::Ellipse => {
                let u = (dx * cos + dy * sin) / (1.35 * radius);
                let v = (-dx * sin + dy * cos) / (0.75 * radius);
                u * u + v * v <= 1.0
            }
            ShapeKind::Ring => {
                let d2 = dx * dx + dy * dy;
                d2 <= extent * extent && d2 >= (0.5 * extent).powi(2)
            }
        };
        *m = inside as u8;
    }
    (mask, Some(Placement { center, extent }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(structures: Vec<ShapeKind>, rates: Vec<f64>) -> SynthConfig {
        SynthConfig {
            image_size: 32,
            patients: SplitCounts {
                train: 4,
                validation: 2,
                test: 2,
            },
            slices_per_patient: 4,
            structures,
            availability_rate: rates,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn same_seed_same_dataset() {
        let cfg = small(vec![ShapeKind::Disk, ShapeKind::Ring], vec![1.0, 0.5]);
        assert_eq!(
            generate_synthetic_in_memory(&cfg).unwrap(),
            generate_synthetic_in_memory(&cfg).unwrap()
        );
    }

    #[test]
    fn zero_rate_means_never_available() {
        let cfg = small(vec![ShapeKind::Disk, ShapeKind::Ellipse], vec![1.0, 0.0]);
        let d = generate_synthetic_in_memory(&cfg).unwrap();
        assert!(d.samples.iter().all(|s| s.availability() == vec![1, 0]));
    }

    #[test]
    fn half_rate_over_hundred_patients() {
        let mut cfg = small(vec![ShapeKind::Disk, ShapeKind::Ellipse], vec![1.0, 0.5]);
        cfg.patients = SplitCounts {
            train: 100,
            validation: 0,
            test: 0,
        };
        cfg.slices_per_patient = 2;
        let d = generate_synthetic_in_memory(&cfg).unwrap();
        let flags: Vec<u8> = d.samples.iter().map(|s| s.availability()[1]).collect();
        let frac = flags.iter().map(|&f| f as f64).sum::<f64>() / flags.len() as f64;
        assert!((0.35..=0.65).contains(&frac), "fraction {frac}");
        // all-or-nothing per patient
        for pair in flags.chunks(2) {
            assert_eq!(pair[0], pair[1]);
        }
    }

    #[test]
    fn per_slice_dropout_removes_some_slices() {
        let mut cfg = small(vec![ShapeKind::Disk, ShapeKind::Ring], vec![1.0, 1.0]);
        cfg.per_slice_dropout = vec![0.0, 0.5];
        let d = generate_synthetic_in_memory(&cfg).unwrap();
        let available = d.samples.iter().filter(|s| s.is_available(1)).count();
        assert!(available > 0 && available < d.samples.len());
        assert!(d.samples.iter().all(|s| s.is_available(0)));
    }

    #[test]
    fn nested_contains_previous() {
        let cfg = small(vec![ShapeKind::Ellipse, ShapeKind::Nested], vec![1.0, 1.0]);
        let d = generate_synthetic_in_memory(&cfg).unwrap();
        for s in &d.samples {
            let inner = s.mask(0).unwrap();
            let outer = s.mask(1).unwrap();
            assert!(inner.iter().zip(outer.iter()).all(|(&i, &o)| i <= o));
        }
    }

    #[test]
    fn invalid_configs() {
        let mut cfg = small(vec![], vec![]);
        assert!(generate_synthetic_in_memory(&cfg).is_err());
        cfg = small(vec![ShapeKind::Disk], vec![1.2]);
        assert!(generate_synthetic_in_memory(&cfg).is_err());
        cfg = small(vec![ShapeKind::Disk, ShapeKind::Ring], vec![0.5, 0.5]);
        assert!(generate_synthetic_in_memory(&cfg).is_err());
        cfg = small(vec![ShapeKind::Disk], vec![1.0]);
        cfg.patients = SplitCounts {
            train: 0,
            validation: 0,
            test: 0,
        };
        assert!(generate_synthetic_in_memory(&cfg).is_err());
    }

    #[test]
    fn repeated_shapes_get_suffixes() {
        let cfg = small(vec![ShapeKind::Disk, ShapeKind::Disk], vec![1.0, 1.0]);
        assert_eq!(cfg.structure_names(), vec!["disk", "disk_2"]);
    }
}
