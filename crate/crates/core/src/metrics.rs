//! Overlap and surface-distance metrics for binary segmentations.
//!
//! Surface distances use the in-plane 4-connected boundary of each slice and an
//! exact Euclidean distance transform of the opposite boundary, so they scale to
//! whole patient volumes. Metrics that are undefined for an input (an empty
//! boundary, or an empty prediction for RAVD) return `None` and are counted as
//! excluded when aggregating.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Split};
use crate::error::{ensure, Error, Result};

/// A stack of binary slices with per-axis spacing `(slice, row, column)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryVolume {
    shape: (usize, usize, usize),
    spacing: [f64; 3],
    voxels: Vec<u8>,
}

impl BinaryVolume {
    pub fn new(shape: (usize, usize, usize), voxels: Vec<u8>) -> Result<Self> {
        ensure!(
            voxels.len() == shape.0 * shape.1 * shape.2,
            Shape,
            "{} voxels for shape {shape:?}",
            voxels.len()
        );
        ensure!(voxels.iter().all(|&v| v <= 1), InvalidInput, "volume is not binary");
        Ok(BinaryVolume {
            shape,
            spacing: [1.0; 3],
            voxels,
        })
    }

    pub fn from_grid(grid: &Array2<u8>) -> Result<Self> {
        let (h, w) = grid.dim();
        BinaryVolume::new((1, h, w), grid.iter().copied().collect())
    }

    pub fn from_slices<'a>(slices: impl IntoIterator<Item = &'a Array2<u8>>) -> Result<Self> {
        let mut dims = None;
        let mut voxels = Vec::new();
        let mut count = 0;
        for s in slices {
            match dims {
                None => dims = Some(s.dim()),
                Some(d) => ensure!(d == s.dim(), Shape, "slices differ in size"),
            }
            voxels.extend(s.iter().copied());
            count += 1;
        }
        let (h, w) = dims.unwrap_or((0, 0));
        BinaryVolume::new((count, h, w), voxels)
    }

    pub fn with_spacing(mut self, spacing: [f64; 3]) -> Result<Self> {
        ensure!(
            spacing.iter().all(|&s| s > 0.0 && s.is_finite()),
            InvalidInput,
            "spacing must be positive"
        );
        self.spacing = spacing;
        Ok(self)
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.shape
    }

    pub fn volume(&self) -> usize {
        self.voxels.iter().filter(|&&v| v == 1).count()
    }

    pub fn voxels(&self) -> &[u8] {
        &self.voxels
    }

    fn same_shape(&self, other: &BinaryVolume) -> Result<()> {
        ensure!(
            self.shape == other.shape,
            Shape,
            "volumes are {:?} and {:?}",
            self.shape,
            other.shape
        );
        ensure!(self.spacing == other.spacing, Shape, "volumes differ in spacing");
        Ok(())
    }

    fn boundary_flags(&self) -> Vec<bool> {
        let (d, h, w) = self.shape;
        let at = |z: usize, y: usize, x: usize| self.voxels[(z * h + y) * w + x] == 1;
        let mut out = vec![false; self.voxels.len()];
        for z in 0..d {
            for y in 0..h {
                for x in 0..w {
                    if !at(z, y, x) {
                        continue;
                    }
                    let interior = y > 0
                        && y + 1 < h
                        && x > 0
                        && x + 1 < w
                        && at(z, y - 1, x)
                        && at(z, y + 1, x)
                        && at(z, y, x - 1)
                        && at(z, y, x + 1);
                    out[(z * h + y) * w + x] = !interior;
                }
            }
        }
        out
    }

    fn coords(&self, index: usize) -> [f64; 3] {
        let (_, h, w) = self.shape;
        let z = index / (h * w);
        let y = (index / w) % h;
        let x = index % w;
        [
            z as f64 * self.spacing[0],
            y as f64 * self.spacing[1],
            x as f64 * self.spacing[2],
        ]
    }
}

/// Foreground voxels with at least one in-plane 4-neighbour in the background
/// (outside the grid counts as background), in spacing-scaled coordinates.
pub fn boundary(v: &BinaryVolume) -> Vec<[f64; 3]> {
    v.boundary_flags()
        .iter()
        .enumerate()
        .filter(|(_, &b)| b)
        .map(|(i, _)| v.coords(i))
        .collect()
}

/// Dice coefficient; two empty volumes score 1.
pub fn dsc(truth: &BinaryVolume, pred: &BinaryVolume) -> Result<f64> {
    truth.same_shape(pred)?;
    let inter = truth
        .voxels
        .iter()
        .zip(&pred.voxels)
        .filter(|(&a, &b)| a == 1 && b == 1)
        .count();
    let total = truth.volume() + pred.volume();
    Ok(if total == 0 {
        1.0
    } else {
        2.0 * inter as f64 / total as f64
    })
}

/// Squared distance from every voxel to the nearest set flag, honouring spacing.
fn squared_distance_transform(flags: &[bool], shape: (usize, usize, usize), spacing: [f64; 3]) -> Vec<f64> {
    let (d, h, w) = shape;
    let mut f: Vec<f64> = flags.iter().map(|&b| if b { 0.0 } else { f64::INFINITY }).collect();
    let rows = (0..d * h).map(|zy| zy * w);
    transform_lines(&mut f, rows, w, 1, spacing[2]);
    let cols = (0..d * w).map(|zx| (zx / w) * h * w + zx % w);
    transform_lines(&mut f, cols, h, w, spacing[1]);
    let depth = 0..h * w;
    transform_lines(&mut f, depth, d, h * w, spacing[0]);
    f
}

fn transform_lines(f: &mut [f64], starts: impl Iterator<Item = usize>, len: usize, stride: usize, step: f64) {
    let mut line = Vec::with_capacity(len);
    let mut out = Vec::with_capacity(len);
    for start in starts {
        line.clear();
        line.extend((0..len).map(|i| f[start + i * stride]));
        lower_envelope(&line, step, &mut out);
        for (i, v) in out.iter().enumerate() {
            f[start + i * stride] = *v;
        }
    }
}

/// One-dimensional squared distance transform by the lower envelope of parabolas.
fn lower_envelope(f: &[f64], step: f64, out: &mut Vec<f64>) {
    out.clear();
    out.resize(f.len(), f64::INFINITY);
    let pos = |q: usize| q as f64 * step;
    let cross = |a: usize, b: usize| {
        ((f[b] + pos(b) * pos(b)) - (f[a] + pos(a) * pos(a))) / (2.0 * (pos(b) - pos(a)))
    };
    // hull[k] owns the interval starting at bounds[k]
    let mut hull: Vec<usize> = Vec::new();
    let mut bounds: Vec<f64> = Vec::new();
    for q in (0..f.len()).filter(|&q| f[q].is_finite()) {
        loop {
            match hull.last() {
                None => {
                    hull.push(q);
                    bounds.push(f64::NEG_INFINITY);
                    break;
                }
                Some(&top) => {
                    let s = cross(top, q);
                    if s <= *bounds.last().unwrap() {
                        hull.pop();
                        bounds.pop();
                    } else {
                        hull.push(q);
                        bounds.push(s);
                        break;
                    }
                }
            }
        }
    }
    if hull.is_empty() {
        return;
    }
    let mut k = 0;
    for (p, o) in out.iter_mut().enumerate() {
        let x = pos(p);
        while k + 1 < hull.len() && bounds[k + 1] < x {
            k += 1;
        }
        let dx = x - pos(hull[k]);
        *o = dx * dx + f[hull[k]];
    }
}

/// For each boundary voxel of `from`, the distance to the nearest boundary voxel of `to`.
fn directed_distances(from: &BinaryVolume, to: &BinaryVolume) -> Option<Vec<f64>> {
    let from_flags = from.boundary_flags();
    let to_flags = to.boundary_flags();
    if !from_flags.iter().any(|&b| b) || !to_flags.iter().any(|&b| b) {
        return None;
    }
    let field = squared_distance_transform(&to_flags, to.shape, to.spacing);
    Some(
        from_flags
            .iter()
            .zip(&field)
            .filter(|(&b, _)| b)
            .map(|(_, &d2)| d2.sqrt())
            .collect(),
    )
}

/// Percentile with linear interpolation between closest ranks.
pub fn percentile(values: &mut [f64], q: f64) -> f64 {
    assert!(!values.is_empty());
    values.sort_by(|a, b| a.total_cmp(b));
    let rank = q / 100.0 * (values.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    values[lo] + (values[hi] - values[lo]) * (rank - lo as f64)
}

/// Symmetric 95th-percentile Hausdorff distance; `None` if either boundary is empty.
pub fn hd95(truth: &BinaryVolume, pred: &BinaryVolume) -> Result<Option<f64>> {
    truth.same_shape(pred)?;
    let (Some(mut ab), Some(mut ba)) = (directed_distances(truth, pred), directed_distances(pred, truth))
    else {
        return Ok(None);
    };
    Ok(Some(percentile(&mut ab, 95.0).max(percentile(&mut ba, 95.0))))
}

/// Average symmetric surface distance; `None` if either boundary is empty.
pub fn assd(truth: &BinaryVolume, pred: &BinaryVolume) -> Result<Option<f64>> {
    truth.same_shape(pred)?;
    let (Some(ab), Some(ba)) = (directed_distances(truth, pred), directed_distances(pred, truth)) else {
        return Ok(None);
    };
    let total: f64 = ab.iter().sum::<f64>() + ba.iter().sum::<f64>();
    Ok(Some(total / (ab.len() + ba.len()) as f64))
}

/// Signed relative volume difference in percent, `100 (|I| - |Î|) / |Î|`.
///
/// Positive when the prediction is smaller than the truth. `None` for an empty prediction.
pub fn ravd_signed(truth: &BinaryVolume, pred: &BinaryVolume) -> Result<Option<f64>> {
    truth.same_shape(pred)?;
    let p = pred.volume();
    if p == 0 {
        return Ok(None);
    }
    Ok(Some(100.0 * (truth.volume() as f64 - p as f64) / p as f64))
}

/// Probability maps per `(patient, slice)`, one per structure.
pub type SlicePredictions = HashMap<(String, usize), Vec<Array2<f32>>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Dsc,
    Hd95,
    Ravd,
    Assd,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Dsc, Metric::Hd95, Metric::Ravd, Metric::Assd];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Dsc => "dsc",
            Metric::Hd95 => "hd95",
            Metric::Ravd => "ravd",
            Metric::Assd => "assd",
        }
    }

    pub fn higher_is_better(self) -> bool {
        self == Metric::Dsc
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.as_str() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::InvalidInput(format!("unknown metric {s:?}")))
    }
}

/// Metric values of one structure on one patient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseMetrics {
    pub structure: String,
    pub patient: String,
    pub dsc: f64,
    pub hd95: Option<f64>,
    pub ravd: Option<f64>,
    pub assd: Option<f64>,
}

impl CaseMetrics {
    pub fn get(&self, metric: Metric) -> Option<f64> {
        match metric {
            Metric::Dsc => Some(self.dsc),
            Metric::Hd95 => self.hd95,
            Metric::Ravd => self.ravd,
            Metric::Assd => self.assd,
        }
    }

    fn complete(&self) -> bool {
        self.hd95.is_some() && self.ravd.is_some() && self.assd.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    /// Sample standard deviation over `sqrt(n)`; NaN below two values.
    pub se: f64,
    pub n: usize,
}

impl MetricSummary {
    pub fn from_values(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return MetricSummary {
                mean: f64::NAN,
                se: f64::NAN,
                n,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let se = if n < 2 {
            f64::NAN
        } else {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        };
        MetricSummary { mean, se, n }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StructureSummary {
    pub structure: String,
    pub metrics: BTreeMap<Metric, MetricSummary>,
    /// Cases where every metric is defined.
    pub n_included: usize,
    /// Cases where at least one metric hit its undefined sentinel.
    pub n_excluded: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub structures: Vec<StructureSummary>,
    pub cases: Vec<CaseMetrics>,
}

#[derive(Serialize)]
struct SummaryRow<'a> {
    structure: &'a str,
    dsc_mean: Option<f64>,
    dsc_se: Option<f64>,
    hd95_mean: Option<f64>,
    hd95_se: Option<f64>,
    ravd_mean: Option<f64>,
    ravd_se: Option<f64>,
    assd_mean: Option<f64>,
    assd_se: Option<f64>,
    n_included: usize,
    n_excluded: usize,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

impl EvalReport {
    /// Aggregates per-case values by structure, keeping the order of first appearance.
    pub fn from_cases(cases: Vec<CaseMetrics>) -> Self {
        let mut order: Vec<String> = Vec::new();
        for c in &cases {
            if !order.contains(&c.structure) {
                order.push(c.structure.clone());
            }
        }
        let structures = order
            .into_iter()
            .map(|name| {
                let mine: Vec<&CaseMetrics> = cases.iter().filter(|c| c.structure == name).collect();
                let metrics = Metric::ALL
                    .into_iter()
                    .map(|m| {
                        let values: Vec<f64> = mine.iter().filter_map(|c| c.get(m)).collect();
                        (m, MetricSummary::from_values(&values))
                    })
                    .collect();
                let n_excluded = mine.iter().filter(|c| !c.complete()).count();
                StructureSummary {
                    structure: name,
                    metrics,
                    n_included: mine.len() - n_excluded,
                    n_excluded,
                }
            })
            .collect();
        EvalReport { structures, cases }
    }

    pub fn structure(&self, name: &str) -> Option<&StructureSummary> {
        self.structures.iter().find(|s| s.structure == name)
    }

    pub fn mean(&self, name: &str, metric: Metric) -> Option<f64> {
        self.structure(name).map(|s| s.metrics[&metric].mean)
    }

    /// Mean DSC averaged over structures.
    pub fn mean_dsc(&self) -> f64 {
        let v: Vec<f64> = self.structures.iter().map(|s| s.metrics[&Metric::Dsc].mean).collect();
        v.iter().sum::<f64>() / v.len().max(1) as f64
    }

    /// One row per structure with mean/SE columns for each metric.
    pub fn write_summary_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for s in &self.structures {
            let m = |k: Metric| &s.metrics[&k];
            w.serialize(SummaryRow {
                structure: &s.structure,
                dsc_mean: finite(m(Metric::Dsc).mean),
                dsc_se: finite(m(Metric::Dsc).se),
                hd95_mean: finite(m(Metric::Hd95).mean),
                hd95_se: finite(m(Metric::Hd95).se),
                ravd_mean: finite(m(Metric::Ravd).mean),
                ravd_se: finite(m(Metric::Ravd).se),
                assd_mean: finite(m(Metric::Assd).mean),
                assd_se: finite(m(Metric::Assd).se),
                n_included: s.n_included,
                n_excluded: s.n_excluded,
            })?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    /// Per-case values; undefined metrics are empty cells.
    pub fn write_cases_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for c in &self.cases {
            w.serialize(c)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    pub fn save(&self, summary: &Path, cases: &Path) -> Result<()> {
        let f = std::fs::File::create(summary).map_err(|e| Error::io(summary, e))?;
        self.write_summary_csv(f)?;
        let f = std::fs::File::create(cases).map_err(|e| Error::io(cases, e))?;
        self.write_cases_csv(f)
    }

    pub fn read_cases_csv(path: &Path) -> Result<Vec<CaseMetrics>> {
        let mut r = csv::Reader::from_path(path)?;
        r.deserialize().map(|row| row.map_err(Error::from)).collect()
    }
}

/// Evaluates binarized predictions on one split, one case per patient and structure.
///
/// Each case stacks the patient's slices on which the structure is annotated.
pub fn evaluate(
    dataset: &Dataset,
    split: Split,
    predictions: &SlicePredictions,
    threshold: f32,
) -> Result<EvalReport> {
    let k = dataset.num_structures();
    let mut by_patient: Vec<(&str, Vec<&crate::data::SliceSample>)> = Vec::new();
    for s in dataset.split(split) {
        match by_patient.iter_mut().find(|(p, _)| *p == s.patient_id) {
            Some((_, v)) => v.push(s),
            None => by_patient.push((s.patient_id.as_str(), vec![s])),
        }
    }
    let mut cases = Vec::new();
    for (structure_idx, structure) in dataset.structures.iter().enumerate() {
        for (patient, slices) in &by_patient {
            let mut truths = Vec::new();
            let mut preds = Vec::new();
            for s in slices.iter().filter(|s| s.is_available(structure_idx)) {
                let p = predictions
                    .get(&(s.patient_id.clone(), s.slice_index))
                    .ok_or_else(|| {
                        Error::InvalidInput(format!(
                            "no prediction for {}/{}",
                            s.patient_id, s.slice_index
                        ))
                    })?;
                ensure!(p.len() == k, Shape, "{} prediction maps for {k} structures", p.len());
                let map = &p[structure_idx];
                ensure!(map.dim() == s.image.dim(), Shape, "prediction map has wrong size");
                truths.push(s.mask(structure_idx).expect("filtered on availability").clone());
                preds.push(map.mapv(|v| (v >= threshold) as u8));
            }
            if truths.is_empty() {
                continue;
            }
            let truth = BinaryVolume::from_slices(&truths)?;
            let pred = BinaryVolume::from_slices(&preds)?;
            cases.push(CaseMetrics {
                structure: structure.clone(),
                patient: patient.to_string(),
                dsc: dsc(&truth, &pred)?,
                hd95: hd95(&truth, &pred)?,
                ravd: ravd_signed(&truth, &pred)?,
                assd: assd(&truth, &pred)?,
            });
        }
    }
    Ok(EvalReport::from_cases(cases))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn vol(rows: &[&[u8]]) -> BinaryVolume {
        let h = rows.len();
        let w = rows[0].len();
        BinaryVolume::new((1, h, w), rows.iter().flat_map(|r| r.iter().copied()).collect()).unwrap()
    }

    fn point(h: usize, w: usize, y: usize, x: usize) -> BinaryVolume {
        let mut v = vec![0; h * w];
        v[y * w + x] = 1;
        BinaryVolume::new((1, h, w), v).unwrap()
    }

    fn brute_directed(a: &[[f64; 3]], b: &[[f64; 3]]) -> Vec<f64> {
        a.iter()
            .map(|p| {
                b.iter()
                    .map(|q| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt())
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    }

    fn random_mask(rng: &mut ChaCha8Rng, h: usize, w: usize) -> BinaryVolume {
        // a couple of rectangles plus salt noise
        let mut v = vec![0u8; h * w];
        for _ in 0..rng.gen_range(1..3) {
            let (y0, x0) = (rng.gen_range(0..h), rng.gen_range(0..w));
            let (y1, x1) = (rng.gen_range(y0..h), rng.gen_range(x0..w));
            for y in y0..=y1 {
                for x in x0..=x1 {
                    v[y * w + x] = 1;
                }
            }
        }
        for c in v.iter_mut() {
            if rng.gen_bool(0.05) {
                *c ^= 1;
            }
        }
        BinaryVolume::new((1, h, w), v).unwrap()
    }

    #[test]
    fn dsc_examples() {
        let e = vol(&[&[0, 0]]);
        assert_eq!(dsc(&e, &e).unwrap(), 1.0);
        let a = vol(&[&[1, 1]]);
        assert_eq!(dsc(&a, &a).unwrap(), 1.0);
        assert_abs_diff_eq!(dsc(&a, &vol(&[&[1, 0]])).unwrap(), 2.0 / 3.0, epsilon = 1e-9);
        assert!(dsc(&a, &vol(&[&[1], &[0]])).is_err());
    }

    #[test]
    fn boundary_examples() {
        assert!(boundary(&vol(&[&[0, 0], &[0, 0]])).is_empty());
        assert_eq!(boundary(&point(5, 5, 2, 3)), vec![[0.0, 2.0, 3.0]]);
        let mut square = vec![0u8; 25];
        for y in 1..4 {
            for x in 1..4 {
                square[y * 5 + x] = 1;
            }
        }
        let b = boundary(&BinaryVolume::new((1, 5, 5), square).unwrap());
        assert_eq!(b.len(), 8);
        assert!(!b.contains(&[0.0, 2.0, 2.0]));
    }

    #[test]
    fn surface_distance_examples() {
        let a = point(5, 5, 0, 0);
        let b = point(5, 5, 3, 4);
        assert_eq!(hd95(&a, &b).unwrap(), Some(5.0));
        assert_eq!(hd95(&a, &a).unwrap(), Some(0.0));
        assert_eq!(assd(&a, &a).unwrap(), Some(0.0));
        assert_eq!(assd(&point(3, 3, 0, 0), &point(3, 3, 0, 2)).unwrap(), Some(2.0));
        let empty = BinaryVolume::new((1, 5, 5), vec![0; 25]).unwrap();
        assert_eq!(hd95(&empty, &b).unwrap(), None);
        assert_eq!(assd(&b, &empty).unwrap(), None);
    }

    #[test]
    fn anisotropic_spacing_scales_distances() {
        let a = point(5, 5, 0, 0).with_spacing([1.0, 2.0, 0.5]).unwrap();
        let b = point(5, 5, 3, 4).with_spacing([1.0, 2.0, 0.5]).unwrap();
        assert_abs_diff_eq!(hd95(&a, &b).unwrap().unwrap(), (36.0f64 + 4.0).sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn ravd_examples() {
        let mut t = vec![0u8; 200];
        t[..110].fill(1);
        let mut p = vec![0u8; 200];
        p[50..150].fill(1);
        let t = BinaryVolume::new((1, 10, 20), t).unwrap();
        let p = BinaryVolume::new((1, 10, 20), p).unwrap();
        assert_eq!(ravd_signed(&t, &p).unwrap(), Some(10.0));
        assert_eq!(ravd_signed(&p, &p).unwrap(), Some(0.0));
        let empty = BinaryVolume::new((1, 10, 20), vec![0; 200]).unwrap();
        assert_eq!(ravd_signed(&t, &empty).unwrap(), None);
    }

    #[test]
    fn percentile_interpolates() {
        let mut v = vec![3.0, 1.0, 2.0, 4.0];
        assert_abs_diff_eq!(percentile(&mut v, 50.0), 2.5);
        assert_abs_diff_eq!(percentile(&mut v, 95.0), 3.85, epsilon = 1e-12);
    }

    #[test]
    fn matches_all_pairs_oracle_on_stacked_volumes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let slices_a: Vec<Array2<u8>> = (0..3)
                .map(|_| Array2::from_shape_fn((9, 11), |_| rng.gen_bool(0.3) as u8))
                .collect();
            let slices_b: Vec<Array2<u8>> = (0..3)
                .map(|_| Array2::from_shape_fn((9, 11), |_| rng.gen_bool(0.3) as u8))
                .collect();
            let a = BinaryVolume::from_slices(&slices_a).unwrap().with_spacing([2.5, 0.7, 1.1]).unwrap();
            let b = BinaryVolume::from_slices(&slices_b).unwrap().with_spacing([2.5, 0.7, 1.1]).unwrap();
            let (ba, bb) = (boundary(&a), boundary(&b));
            let mut ab = brute_directed(&ba, &bb);
            let mut bab = brute_directed(&bb, &ba);
            let total = (ab.iter().sum::<f64>() + bab.iter().sum::<f64>()) / (ab.len() + bab.len()) as f64;
            let h = percentile(&mut ab, 95.0).max(percentile(&mut bab, 95.0));
            assert_abs_diff_eq!(hd95(&a, &b).unwrap().unwrap(), h, epsilon = 1e-9);
            assert_abs_diff_eq!(assd(&a, &b).unwrap().unwrap(), total, epsilon = 1e-9);
        }
    }

    #[test]
    fn evaluate_perfect_and_empty_predictions() {
        let m = array![[0u8, 1, 1], [0, 1, 1], [0, 0, 0]];
        let samples = (0..2)
            .map(|j| {
                crate::data::SliceSample::new("p", j, Split::Test, Array2::zeros((3, 3)), vec![Some(m.clone())])
                    .unwrap()
            })
            .collect();
        let d = Dataset::new("d", vec!["s".into()], (3, 3), samples).unwrap();
        let perfect: SlicePredictions = (0..2)
            .map(|j| (("p".to_string(), j), vec![m.mapv(f32::from)]))
            .collect();
        let r = evaluate(&d, Split::Test, &perfect, 0.5).unwrap();
        let s = r.structure("s").unwrap();
        assert_eq!(s.metrics[&Metric::Dsc].mean, 1.0);
        assert_eq!(s.metrics[&Metric::Hd95].mean, 0.0);
        assert_eq!(s.metrics[&Metric::Ravd].mean, 0.0);
        assert_eq!(s.metrics[&Metric::Assd].mean, 0.0);
        assert_eq!((s.n_included, s.n_excluded), (1, 0));

        let background: SlicePredictions = (0..2)
            .map(|j| (("p".to_string(), j), vec![Array2::zeros((3, 3))]))
            .collect();
        let r = evaluate(&d, Split::Test, &background, 0.5).unwrap();
        let s = r.structure("s").unwrap();
        assert_eq!(s.metrics[&Metric::Dsc].mean, 0.0);
        assert_eq!(s.metrics[&Metric::Hd95].n, 0);
        assert_eq!((s.n_included, s.n_excluded), (0, 1));

        let mut gap = perfect.clone();
        gap.remove(&("p".to_string(), 1));
        assert!(evaluate(&d, Split::Test, &gap, 0.5).is_err());
    }

    #[test]
    fn aggregation_matches_hand_computation() {
        let case = |p: &str, dsc: f64, hd: Option<f64>| CaseMetrics {
            structure: "s".into(),
            patient: p.into(),
            dsc,
            hd95: hd,
            ravd: Some(0.0),
            assd: hd,
        };
        let r = EvalReport::from_cases(vec![
            case("a", 0.9, Some(1.0)),
            case("b", 0.7, Some(3.0)),
            case("c", 0.8, None),
        ]);
        let s = r.structure("s").unwrap();
        // mean 0.8, sample sd 0.1, se 0.1/sqrt(3)
        assert_abs_diff_eq!(s.metrics[&Metric::Dsc].mean, 0.8, epsilon = 1e-12);
        assert_abs_diff_eq!(s.metrics[&Metric::Dsc].se, 0.1 / 3f64.sqrt(), epsilon = 1e-12);
        // hd95 over a, b: mean 2, sd sqrt(2), se 1
        assert_abs_diff_eq!(s.metrics[&Metric::Hd95].mean, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.metrics[&Metric::Hd95].se, 1.0, epsilon = 1e-12);
        assert_eq!((s.n_included, s.n_excluded), (2, 1));

        let mut buf = Vec::new();
        r.write_summary_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("structure,dsc_mean,dsc_se,hd95_mean"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn symmetric_bounded_and_translation_invariant(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_mask(&mut rng, 12, 12);
            let b = random_mask(&mut rng, 12, 12);
            prop_assert_eq!(dsc(&a, &b).unwrap(), dsc(&b, &a).unwrap());
            prop_assert_eq!(hd95(&a, &b).unwrap(), hd95(&b, &a).unwrap());
            let (ab, ba) = (assd(&a, &b).unwrap(), assd(&b, &a).unwrap());
            if let (Some(x), Some(y)) = (ab, ba) {
                prop_assert!((x - y).abs() < 1e-12);
            }
            if let Some(h) = hd95(&a, &b).unwrap() {
                let exact = brute_directed(&boundary(&a), &boundary(&b))
                    .into_iter()
                    .chain(brute_directed(&boundary(&b), &boundary(&a)))
                    .fold(0.0, f64::max);
                prop_assert!(h <= exact + 1e-12);
            }
            // embed both in a larger grid at an offset
            let shift = |v: &BinaryVolume, dy: usize, dx: usize| {
                let mut out = vec![0u8; 20 * 20];
                for y in 0..12 {
                    for x in 0..12 {
                        out[(y + dy) * 20 + x + dx] = v.voxels()[y * 12 + x];
                    }
                }
                BinaryVolume::new((1, 20, 20), out).unwrap()
            };
            let (sa, sb) = (shift(&a, 3, 5), shift(&b, 3, 5));
            let (ta, tb) = (shift(&a, 7, 1), shift(&b, 7, 1));
            prop_assert_eq!(dsc(&sa, &sb).unwrap(), dsc(&ta, &tb).unwrap());
            prop_assert_eq!(hd95(&sa, &sb).unwrap(), hd95(&ta, &tb).unwrap());
            prop_assert_eq!(assd(&sa, &sb).unwrap(), assd(&ta, &tb).unwrap());
            prop_assert_eq!(ravd_signed(&sa, &sb).unwrap(), ravd_signed(&ta, &tb).unwrap());
        }
    }
}
