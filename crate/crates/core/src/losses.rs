//! Segmentation losses over availability-masked mini-batches.
//!
//! All losses are evaluated in `f64` on flattened grids: `truth` is a binary
//! mask and `pred` a probability map of the same length. Every loss also has a
//! gradient with respect to `pred`, which is what the network backpropagates.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

/// Smallest applied class weight.
pub const WEIGHT_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CeMode {
    /// Pixel-mean binary cross-entropy.
    Binary,
    /// `-Σ I·log(Î)` with no background term.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weighting {
    None,
    /// Classes weighted by their running voxel frequency.
    Voxel,
    /// Classes weighted by their running fraction of positive slices.
    Slice,
}

/// How a bias-corrected class frequency becomes the weight applied to its loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightTransform {
    /// Weight = frequency; frequent classes dominate.
    Identity,
    /// Weight = smallest observed frequency / frequency; rare classes dominate.
    Inverse,
    /// Weight = 1 - frequency.
    Complement,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Dice share of the combined loss.
    pub alpha: f64,
    pub epsilon: f64,
    pub ce_mode: CeMode,
    pub weighting: Weighting,
    pub weight_transform: WeightTransform,
    /// Decay of the running class statistics.
    pub beta: f64,
    pub prob_clamp: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            alpha: 0.5,
            epsilon: 1e-5,
            ce_mode: CeMode::Binary,
            weighting: Weighting::None,
            weight_transform: WeightTransform::Inverse,
            beta: 0.99,
            prob_clamp: 1e-7,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            (0.0..=1.0).contains(&self.alpha),
            InvalidConfig,
            "alpha {} is outside [0, 1]",
            self.alpha
        );
        ensure!(self.epsilon > 0.0, InvalidConfig, "epsilon must be > 0");
        ensure!(
            self.beta > 0.0 && self.beta < 1.0,
            InvalidConfig,
            "beta {} is outside (0, 1)",
            self.beta
        );
        ensure!(
            self.prob_clamp >= 0.0 && self.prob_clamp < 0.5,
            InvalidConfig,
            "prob_clamp must be in [0, 0.5)"
        );
        Ok(())
    }
}

fn check_pair(truth: &[u8], pred: &[f64]) -> Result<()> {
    ensure!(
        truth.len() == pred.len(),
        Shape,
        "truth has {} pixels, prediction {}",
        truth.len(),
        pred.len()
    );
    Ok(())
}

/// Soft Dice loss `-(2 Σ I·Î + ε) / (Σ I + Σ Î + ε)`, in `[-1, 0)`; two empty grids give -1.
pub fn soft_dsc_loss(truth: &[u8], pred: &[f64], epsilon: f64) -> Result<f64> {
    check_pair(truth, pred)?;
    ensure!(epsilon > 0.0, InvalidConfig, "epsilon must be > 0");
    Ok(dsc_term(truth, pred, epsilon, None))
}

/// Accumulates `scale · ∂L/∂Î` into `grad` when given.
fn dsc_term(truth: &[u8], pred: &[f64], epsilon: f64, grad: Option<(&mut [f64], f64)>) -> f64 {
    let (mut inter, mut sum_t, mut sum_p) = (0.0, 0.0, 0.0);
    for (&t, &p) in truth.iter().zip(pred) {
        let t = f64::from(t);
        inter += t * p;
        sum_t += t;
        sum_p += p;
    }
    let num = -(2.0 * inter + epsilon);
    let den = sum_t + sum_p + epsilon;
    if let Some((grad, scale)) = grad {
        let q = num / (den * den);
        for ((g, &t), _) in grad.iter_mut().zip(truth).zip(pred) {
            *g += scale * (-2.0 * f64::from(t) / den - q);
        }
    }
    num / den
}

/// Cross-entropy with predictions clamped into `[clamp, 1 - clamp]`.
pub fn ce_loss(truth: &[u8], pred: &[f64], mode: CeMode, clamp: f64) -> Result<f64> {
    check_pair(truth, pred)?;
    Ok(ce_term(truth, pred, mode, clamp, None))
}

fn ce_term(
    truth: &[u8],
    pred: &[f64],
    mode: CeMode,
    clamp: f64,
    mut grad: Option<(&mut [f64], f64)>,
) -> f64 {
    let (lo, hi) = (clamp, 1.0 - clamp);
    let n = truth.len().max(1) as f64;
    let mut total = 0.0;
    for (l, (&t, &p)) in truth.iter().zip(pred).enumerate() {
        let inside = p > lo && p < hi;
        let pc = p.clamp(lo, hi);
        let d = match mode {
            CeMode::Literal => {
                if t == 1 {
                    total -= pc.ln();
                    -1.0 / pc
                } else {
                    0.0
                }
            }
            CeMode::Binary => {
                if t == 1 {
                    total -= pc.ln();
                    -1.0 / (pc * n)
                } else {
                    total -= (1.0 - pc).ln();
                    1.0 / ((1.0 - pc) * n)
                }
            }
        };
        if let Some((g, scale)) = grad.as_mut() {
            if inside {
                g[l] += *scale * d;
            }
        }
    }
    match mode {
        CeMode::Literal => total,
        CeMode::Binary => total / n,
    }
}

/// `α · L_DSC + (1 - α) · L_CE`.
pub fn combined_loss(truth: &[u8], pred: &[f64], config: &LossConfig) -> Result<f64> {
    check_pair(truth, pred)?;
    config.validate()?;
    Ok(combined_term(truth, pred, config, None))
}

/// Combined loss and its gradient with respect to `pred`.
pub fn combined_loss_grad(truth: &[u8], pred: &[f64], config: &LossConfig) -> Result<(f64, Vec<f64>)> {
    check_pair(truth, pred)?;
    config.validate()?;
    let mut grad = vec![0.0; pred.len()];
    let value = combined_term(truth, pred, config, Some((&mut grad, 1.0)));
    Ok((value, grad))
}

fn combined_term(
    truth: &[u8],
    pred: &[f64],
    config: &LossConfig,
    grad: Option<(&mut [f64], f64)>,
) -> f64 {
    let a = config.alpha;
    match grad {
        Some((g, scale)) => {
            let d = dsc_term(truth, pred, config.epsilon, Some((&mut *g, scale * a)));
            let c = ce_term(
                truth,
                pred,
                config.ce_mode,
                config.prob_clamp,
                Some((g, scale * (1.0 - a))),
            );
            a * d + (1.0 - a) * c
        }
        None => {
            a * dsc_term(truth, pred, config.epsilon, None)
                + (1.0 - a) * ce_term(truth, pred, config.ce_mode, config.prob_clamp, None)
        }
    }
}

/// Network outputs and available annotations for one mini-batch.
///
/// Predictions are laid out `[slice][structure][pixel]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchPrediction {
    /// `(patient, slice)` of each batch entry.
    pub indices: Vec<(String, usize)>,
    pub structures: usize,
    pub pixels: usize,
    preds: Vec<f64>,
    truths: Vec<Option<Vec<u8>>>,
}

impl BatchPrediction {
    /// `truths[i * structures + k]` is `None` where the annotation is missing.
    pub fn new(
        indices: Vec<(String, usize)>,
        structures: usize,
        pixels: usize,
        preds: Vec<f64>,
        truths: Vec<Option<Vec<u8>>>,
    ) -> Result<Self> {
        let n = indices.len();
        ensure!(structures >= 1, Shape, "batch needs at least one structure");
        ensure!(
            preds.len() == n * structures * pixels,
            Shape,
            "{} prediction values for {n}x{structures}x{pixels}",
            preds.len()
        );
        ensure!(
            truths.len() == n * structures,
            Shape,
            "{} truth slots for {n}x{structures}",
            truths.len()
        );
        for t in truths.iter().flatten() {
            ensure!(t.len() == pixels, Shape, "truth of {} pixels, expected {pixels}", t.len());
            ensure!(t.iter().all(|&v| v <= 1), InvalidInput, "truth is not binary");
        }
        ensure!(
            preds.iter().all(|p| (0.0..=1.0).contains(p)),
            InvalidInput,
            "predictions must lie in [0, 1]"
        );
        Ok(BatchPrediction {
            indices,
            structures,
            pixels,
            preds,
            truths,
        })
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn pred(&self, i: usize, k: usize) -> &[f64] {
        let at = (i * self.structures + k) * self.pixels;
        &self.preds[at..at + self.pixels]
    }

    pub fn truth(&self, i: usize, k: usize) -> Option<&[u8]> {
        self.truths[i * self.structures + k].as_deref()
    }

    pub fn available(&self, i: usize, k: usize) -> bool {
        self.truths[i * self.structures + k].is_some()
    }

    pub fn preds(&self) -> &[f64] {
        &self.preds
    }

    /// Number of available annotations of each structure.
    pub fn counts(&self) -> Vec<usize> {
        (0..self.structures)
            .map(|k| (0..self.len()).filter(|&i| self.available(i, k)).count())
            .collect()
    }

    /// Fraction of positive pixels over the available masks of each structure.
    pub fn voxel_frequencies(&self) -> Vec<Option<f64>> {
        (0..self.structures)
            .map(|k| {
                let (mut pos, mut total) = (0usize, 0usize);
                for i in 0..self.len() {
                    if let Some(t) = self.truth(i, k) {
                        pos += t.iter().filter(|&&v| v == 1).count();
                        total += t.len();
                    }
                }
                (total > 0).then(|| pos as f64 / total as f64)
            })
            .collect()
    }

    /// Fraction of available masks of each structure that are non-empty.
    pub fn positive_slice_fractions(&self) -> Vec<Option<f64>> {
        (0..self.structures)
            .map(|k| {
                let (mut pos, mut total) = (0usize, 0usize);
                for i in 0..self.len() {
                    if let Some(t) = self.truth(i, k) {
                        pos += usize::from(t.contains(&1));
                        total += 1;
                    }
                }
                (total > 0).then(|| pos as f64 / total as f64)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    /// `∂value/∂pred`, same layout as the batch predictions.
    pub grad: Vec<f64>,
    /// Set when no annotation in the batch was available; value and gradient are zero.
    pub no_supervision: bool,
}

/// Availability-masked mean of the combined loss over a batch.
pub fn data_adaptive_loss(batch: &BatchPrediction, config: &LossConfig) -> Result<LossOutput> {
    weighted_loss(batch, &vec![1.0; batch.structures], config)
}

/// `Σ_k c_k Σ_i w_ik L_ik / Σ_k c_k Σ_i w_ik` for fixed class weights `c`.
pub fn weighted_loss(
    batch: &BatchPrediction,
    class_weights: &[f64],
    config: &LossConfig,
) -> Result<LossOutput> {
    config.validate()?;
    ensure!(
        class_weights.len() == batch.structures,
        Shape,
        "{} class weights for {} structures",
        class_weights.len(),
        batch.structures
    );
    let counts = batch.counts();
    let denom: f64 = counts
        .iter()
        .zip(class_weights)
        .map(|(&c, &w)| c as f64 * w)
        .sum();
    let mut grad = vec![0.0; batch.preds.len()];
    if denom <= 0.0 {
        return Ok(LossOutput {
            value: 0.0,
            grad,
            no_supervision: true,
        });
    }
    let mut total = 0.0;
    for i in 0..batch.len() {
        for (k, &cw) in class_weights.iter().enumerate() {
            let Some(truth) = batch.truth(i, k) else { continue };
            let at = (i * batch.structures + k) * batch.pixels;
            let g = &mut grad[at..at + batch.pixels];
            total += cw * combined_term(truth, batch.pred(i, k), config, Some((g, cw / denom)));
        }
    }
    Ok(LossOutput {
        value: total / denom,
        grad,
        no_supervision: false,
    })
}

/// Bias-corrected exponentially weighted class statistics.
///
/// Each class keeps its own step count so that a class never observed is not
/// pulled toward zero by the bias correction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassWeightState {
    pub raw: Vec<f64>,
    pub steps: Vec<u64>,
    pub beta: f64,
}

impl ClassWeightState {
    pub fn new(structures: usize, beta: f64) -> Self {
        ClassWeightState {
            raw: vec![0.0; structures],
            steps: vec![0; structures],
            beta,
        }
    }

    /// Folds in one observation per class (`None` leaves that class untouched)
    /// and returns the corrected statistics.
    pub fn update(&mut self, observation: &[Option<f64>]) -> Result<Vec<f64>> {
        ensure!(
            observation.len() == self.raw.len(),
            Shape,
            "{} observations for {} classes",
            observation.len(),
            self.raw.len()
        );
        if let Some(bad) = observation.iter().flatten().find(|o| !(0.0..=1.0).contains(*o)) {
            return Err(Error::InvalidInput(format!("observation {bad} is outside [0, 1]")));
        }
        for (k, obs) in observation.iter().enumerate() {
            if let Some(o) = obs {
                self.raw[k] = self.beta * self.raw[k] + (1.0 - self.beta) * o;
                self.steps[k] += 1;
            }
        }
        Ok(self.corrected())
    }

    /// `raw / (1 - β^step)`, floored at [`WEIGHT_FLOOR`]; classes never observed read 1.
    pub fn corrected(&self) -> Vec<f64> {
        self.raw
            .iter()
            .zip(&self.steps)
            .map(|(&r, &s)| {
                if s == 0 {
                    1.0
                } else {
                    let c = r / (1.0 - self.beta.powi(s.min(i32::MAX as u64) as i32));
                    c.clamp(WEIGHT_FLOOR, 1.0)
                }
            })
            .collect()
    }

    /// Corrected statistics mapped through `transform`.
    pub fn applied(&self, transform: WeightTransform) -> Vec<f64> {
        let corrected = self.corrected();
        match transform {
            WeightTransform::Identity => corrected,
            WeightTransform::Inverse => {
                let min = corrected
                    .iter()
                    .zip(&self.steps)
                    .filter(|(_, &s)| s > 0)
                    .map(|(&c, _)| c)
                    .fold(f64::INFINITY, f64::min);
                corrected
                    .iter()
                    .zip(&self.steps)
                    .map(|(&c, &s)| if s > 0 { min / c } else { 1.0 })
                    .collect()
            }
            WeightTransform::Complement => corrected
                .iter()
                .zip(&self.steps)
                .map(|(&c, &s)| if s > 0 { (1.0 - c).max(WEIGHT_FLOOR) } else { 1.0 })
                .collect(),
        }
    }
}

/// Updates `state` with this batch's voxel frequencies, then applies the
/// resulting class weights.
pub fn voxel_weighted_loss(
    batch: &BatchPrediction,
    state: &mut ClassWeightState,
    config: &LossConfig,
) -> Result<LossOutput> {
    state.update(&batch.voxel_frequencies())?;
    weighted_loss(batch, &state.applied(config.weight_transform), config)
}

/// Like [`voxel_weighted_loss`] with the fraction of positive slices as the statistic.
pub fn slice_weighted_loss(
    batch: &BatchPrediction,
    state: &mut ClassWeightState,
    config: &LossConfig,
) -> Result<LossOutput> {
    state.update(&batch.positive_slice_fractions())?;
    weighted_loss(batch, &state.applied(config.weight_transform), config)
}

/// Dispatches on `config.weighting`. `state` is only touched by weighted modes.
pub fn configured_loss(
    batch: &BatchPrediction,
    state: &mut ClassWeightState,
    config: &LossConfig,
) -> Result<LossOutput> {
    match config.weighting {
        Weighting::None => data_adaptive_loss(batch, config),
        Weighting::Voxel => voxel_weighted_loss(batch, state, config),
        Weighting::Slice => slice_weighted_loss(batch, state, config),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const LN2: f64 = std::f64::consts::LN_2;

    fn literal(alpha: f64) -> LossConfig {
        LossConfig {
            alpha,
            ce_mode: CeMode::Literal,
            ..LossConfig::default()
        }
    }

    #[test]
    fn soft_dsc_examples() {
        assert_abs_diff_eq!(soft_dsc_loss(&[1, 0], &[1.0, 0.0], 1e-5).unwrap(), -1.0, epsilon = 1e-5);
        assert_eq!(soft_dsc_loss(&[0, 0], &[0.0, 0.0], 1e-5).unwrap(), -1.0);
        // -(2 + 1e-5) / (3 + 1e-5), computed independently
        let v = soft_dsc_loss(&[1, 1, 0, 0], &[1.0, 0.0, 0.0, 0.0], 1e-5).unwrap();
        assert_abs_diff_eq!(v, -0.666667778, epsilon = 1e-6);
        assert!(soft_dsc_loss(&[1], &[1.0, 0.0], 1e-5).is_err());
        assert!(soft_dsc_loss(&[1], &[1.0], 0.0).is_err());
    }

    #[test]
    fn ce_examples() {
        assert_abs_diff_eq!(ce_loss(&[1], &[0.5], CeMode::Literal, 1e-7).unwrap(), LN2, epsilon = 1e-6);
        assert_abs_diff_eq!(
            ce_loss(&[1, 0], &[0.5, 0.5], CeMode::Binary, 1e-7).unwrap(),
            LN2,
            epsilon = 1e-6
        );
        let perfect = ce_loss(&[1], &[1.0], CeMode::Binary, 1e-7).unwrap();
        assert!((0.0..=2e-7).contains(&perfect), "{perfect}");
    }

    #[test]
    fn combined_endpoints_and_frozen_value() {
        let (t, p) = ([1u8, 1, 0, 0], [1.0, 0.0, 0.0, 0.0]);
        let cfg = literal(1.0);
        assert_eq!(
            combined_loss(&t, &p, &cfg).unwrap(),
            soft_dsc_loss(&t, &p, cfg.epsilon).unwrap()
        );
        let cfg = literal(0.0);
        assert_eq!(
            combined_loss(&t, &p, &cfg).unwrap(),
            ce_loss(&t, &p, CeMode::Literal, cfg.prob_clamp).unwrap()
        );
        // 0.5 * (-0.666667778) + 0.5 * (-ln(1 - 1e-7) - ln(1e-7))
        assert_abs_diff_eq!(combined_loss(&t, &p, &literal(0.5)).unwrap(), 7.725713987, epsilon = 1e-4);
    }

    fn batch(w: &[&[bool]], pixels: usize, seed: u64) -> BatchPrediction {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = w[0].len();
        let n = w.len();
        let preds = (0..n * k * pixels).map(|_| rng.gen_range(0.01..0.99)).collect();
        let truths = w
            .iter()
            .flat_map(|row| row.iter().copied())
            .map(|a| a.then(|| (0..pixels).map(|_| rng.gen_range(0..=1u8)).collect()))
            .collect();
        let idx = (0..n).map(|i| ("p".to_string(), i)).collect();
        BatchPrediction::new(idx, k, pixels, preds, truths).unwrap()
    }

    #[test]
    fn adaptive_normalizes_by_available_count() {
        let cfg = LossConfig::default();
        let b = batch(&[&[true, false], &[true, true]], 6, 1);
        let l = |i, k| combined_loss(b.truth(i, k).unwrap(), b.pred(i, k), &cfg).unwrap();
        let expected = (l(0, 0) + l(1, 0) + l(1, 1)) / 3.0;
        assert_abs_diff_eq!(data_adaptive_loss(&b, &cfg).unwrap().value, expected, epsilon = 1e-12);
    }

    #[test]
    fn no_supervision_batch() {
        let b = batch(&[&[false, false]], 4, 2);
        let out = data_adaptive_loss(&b, &LossConfig::default()).unwrap();
        assert!(out.no_supervision);
        assert_eq!(out.value, 0.0);
        assert!(out.grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn ewa_examples() {
        let mut s = ClassWeightState::new(1, 0.9);
        let c = s.update(&[Some(1.0)]).unwrap();
        assert_abs_diff_eq!(s.raw[0], 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(c[0], 1.0, epsilon = 1e-12);
        let c = s.update(&[Some(1.0)]).unwrap();
        assert_abs_diff_eq!(s.raw[0], 0.19, epsilon = 1e-15);
        assert_abs_diff_eq!(c[0], 1.0, epsilon = 1e-12);
        assert_eq!(s.steps, vec![2]);

        let mut s = ClassWeightState::new(1, 0.9);
        assert_eq!(s.update(&[Some(0.0)]).unwrap(), vec![WEIGHT_FLOOR]);
        assert!(s.update(&[Some(1.5)]).is_err());
    }

    #[test]
    fn unobserved_class_is_never_updated() {
        let cfg = LossConfig {
            weighting: Weighting::Voxel,
            ..LossConfig::default()
        };
        let mut state = ClassWeightState::new(2, cfg.beta);
        for seed in 0..5 {
            let b = batch(&[&[true, false], &[true, false]], 4, seed);
            voxel_weighted_loss(&b, &mut state, &cfg).unwrap();
        }
        assert_eq!(state.steps, vec![5, 0]);
        assert_eq!(state.raw[1], 0.0);
    }

    #[test]
    fn slice_observation_counts_positive_masks() {
        let truths = vec![Some(vec![0, 0]), Some(vec![0, 1])];
        let b = BatchPrediction::new(
            vec![("a".into(), 0), ("a".into(), 1)],
            1,
            2,
            vec![0.5; 4],
            truths,
        )
        .unwrap();
        assert_eq!(b.positive_slice_fractions(), vec![Some(0.5)]);
        let all = batch(&[&[true], &[true]], 3, 0);
        let frac = BatchPrediction::new(
            all.indices.clone(),
            1,
            3,
            all.preds().to_vec(),
            vec![Some(vec![1, 0, 0]), Some(vec![0, 0, 1])],
        )
        .unwrap()
        .positive_slice_fractions();
        assert_eq!(frac, vec![Some(1.0)]);
    }

    #[test]
    fn weight_transforms() {
        let mut s = ClassWeightState::new(3, 0.5);
        s.update(&[Some(0.5), Some(0.25), None]).unwrap();
        assert_eq!(s.applied(WeightTransform::Identity), vec![0.5, 0.25, 1.0]);
        assert_eq!(s.applied(WeightTransform::Inverse), vec![0.5, 1.0, 1.0]);
        assert_eq!(s.applied(WeightTransform::Complement), vec![0.5, 0.75, 1.0]);
    }

    proptest! {
        #[test]
        fn dice_range_and_ce_sign(bits in prop::collection::vec(0u8..=1, 1..40), seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pred: Vec<f64> = bits.iter().map(|_| rng.gen_range(0.0..=1.0)).collect();
            let d = soft_dsc_loss(&bits, &pred, 1e-5).unwrap();
            prop_assert!((-1.0..0.0).contains(&d));
            let c = ce_loss(&bits, &pred, CeMode::Binary, 1e-7).unwrap();
            prop_assert!(c >= 0.0);
            let cfg = LossConfig { alpha: rng.gen(), ..LossConfig::default() };
            let m = combined_loss(&bits, &pred, &cfg).unwrap();
            prop_assert!(m >= d.min(c) - 1e-12 && m <= d.max(c) + 1e-12);
        }

        #[test]
        fn adaptive_invariant_under_permutation_and_empty_slices(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w: Vec<Vec<bool>> = (0..4).map(|_| (0..3).map(|_| rng.gen_bool(0.6)).collect()).collect();
            let rows: Vec<&[bool]> = w.iter().map(Vec::as_slice).collect();
            let b = batch(&rows, 5, seed);
            let cfg = LossConfig::default();
            let base = data_adaptive_loss(&b, &cfg).unwrap().value;

            // reverse slices, rotate structures
            let order: Vec<usize> = (0..b.len()).rev().collect();
            let perm = [2usize, 0, 1];
            let mut preds = Vec::new();
            let mut truths = Vec::new();
            for &i in &order {
                for &k in &perm {
                    preds.extend_from_slice(b.pred(i, k));
                    truths.push(b.truth(i, k).map(<[u8]>::to_vec));
                }
            }
            let permuted = BatchPrediction::new(b.indices.clone(), 3, 5, preds.clone(), truths.clone()).unwrap();
            let v = data_adaptive_loss(&permuted, &cfg).unwrap().value;
            prop_assert!((v - base).abs() < 1e-12);

            // an extra slice without annotations changes nothing
            preds.extend(std::iter::repeat_n(0.5, 15));
            truths.extend([None, None, None]);
            let mut idx = b.indices.clone();
            idx.push(("q".into(), 9));
            let padded = BatchPrediction::new(idx, 3, 5, preds, truths).unwrap();
            let v = data_adaptive_loss(&padded, &cfg).unwrap().value;
            prop_assert!((v - base).abs() < 1e-12);
        }
    }
}
