//! Training loop, incremental extension, teacher-student pipeline and
//! random hyper-parameter search.

mod curve;
mod hpo;
mod optim;
mod semi;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, SliceSample, Split};
use crate::error::{ensure, Result};
use crate::losses::{configured_loss, BatchPrediction, ClassWeightState, LossConfig};
use crate::metrics::SlicePredictions;
use crate::model::{Model, ModelSpec, Tensor};

pub use curve::{CurveRow, LearningCurve};
pub use hpo::{random_search, HpoParams, HpoResult, HpoSpace, HpoTrial};
pub use optim::{Optimizer, OptimizerKind};
pub use semi::{pseudo_label, train_semi, SemiOutcome};

/// Binarization threshold for validation DSC and pseudo masks.
pub const THRESHOLD: f32 = 0.5;

const PREDICT_BATCH: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    #[serde(default)]
    pub loss: LossConfig,
    pub seed: u64,
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
}

fn default_eval_every() -> usize {
    1
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: OptimizerKind::Adam,
            learning_rate: 1e-3,
            batch_size: 16,
            epochs: 20,
            loss: LossConfig::default(),
            seed: 0,
            eval_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            (1e-6..=1e-1).contains(&self.learning_rate),
            InvalidConfig,
            "learning rate {} outside [1e-6, 1e-1]",
            self.learning_rate
        );
        ensure!(
            (1..=128).contains(&self.batch_size),
            InvalidConfig,
            "batch size {} outside [1, 128]",
            self.batch_size
        );
        ensure!(
            (1..=120).contains(&self.epochs),
            InvalidConfig,
            "epochs {} outside [1, 120]",
            self.epochs
        );
        ensure!(self.eval_every >= 1, InvalidConfig, "eval_every must be at least 1");
        self.loss.validate()
    }
}

/// Stacks slice images into an `n × 1 × H × W` tensor.
pub fn image_batch(samples: &[&SliceSample]) -> Result<Tensor> {
    ensure!(!samples.is_empty(), InvalidInput, "empty batch");
    let (h, w) = samples[0].image.dim();
    let mut data = Vec::with_capacity(samples.len() * h * w);
    for s in samples {
        ensure!(s.image.dim() == (h, w), Shape, "images of different sizes in one batch");
        data.extend(s.image.iter().copied());
    }
    Tensor::from_vec([samples.len(), 1, h, w], data)
}

fn loss_batch(samples: &[&SliceSample], probs: &Tensor) -> Result<BatchPrediction> {
    let k = probs.channels();
    let indices = samples.iter().map(|s| (s.patient_id.clone(), s.slice_index)).collect();
    let preds = probs.data.iter().map(|&p| f64::from(p)).collect();
    let truths = samples
        .iter()
        .flat_map(|s| (0..k).map(move |j| s.mask(j).map(|m| m.iter().copied().collect())))
        .collect();
    BatchPrediction::new(indices, k, probs.plane(), preds, truths)
}

/// Eval-mode probability maps for the given slices, one per output channel.
pub fn predict_samples(model: &Model, samples: &[&SliceSample]) -> Result<Vec<Vec<Array2<f32>>>> {
    let (h, w) = model.spec().input_size;
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(PREDICT_BATCH) {
        let probs = model.predict(&image_batch(chunk)?)?;
        for i in 0..chunk.len() {
            out.push(
                (0..probs.channels())
                    .map(|k| Array2::from_shape_vec((h, w), probs.channel(i, k).to_vec()).expect("plane size"))
                    .collect(),
            );
        }
    }
    Ok(out)
}

/// Probability maps for every slice of a split, keyed for [`crate::metrics::evaluate`].
pub fn predict_split(model: &Model, dataset: &Dataset, split: Split) -> Result<SlicePredictions> {
    let samples: Vec<&SliceSample> = dataset.split(split).collect();
    let maps = predict_samples(model, &samples)?;
    Ok(samples
        .iter()
        .zip(maps)
        .map(|(s, m)| ((s.patient_id.clone(), s.slice_index), m))
        .collect())
}

fn slice_dsc(truth: &Array2<u8>, prob: &Array2<f32>) -> f64 {
    let (mut inter, mut t, mut p) = (0usize, 0usize, 0usize);
    for (&a, &b) in truth.iter().zip(prob.iter()) {
        let b = b >= THRESHOLD;
        t += usize::from(a);
        p += usize::from(b);
        inter += usize::from(a == 1 && b);
    }
    if t + p == 0 {
        1.0
    } else {
        2.0 * inter as f64 / (t + p) as f64
    }
}

/// Mean slice-level validation DSC per structure over annotated slices;
/// `None` for a structure without any annotated validation slice.
pub fn validation_dsc(model: &Model, dataset: &Dataset) -> Result<Vec<Option<f64>>> {
    let samples: Vec<&SliceSample> = dataset.split(Split::Validation).collect();
    let k = dataset.num_structures();
    let mut sums = vec![(0.0, 0usize); k];
    if !samples.is_empty() {
        let maps = predict_samples(model, &samples)?;
        for (s, m) in samples.iter().zip(&maps) {
            for (j, sum) in sums.iter_mut().enumerate() {
                if let Some(truth) = s.mask(j) {
                    sum.0 += slice_dsc(truth, &m[j]);
                    sum.1 += 1;
                }
            }
        }
    }
    Ok(sums.into_iter().map(|(s, n)| (n > 0).then(|| s / n as f64)).collect())
}

/// Mean of the defined entries, NaN when there are none.
pub fn mean_defined(values: &[Option<f64>]) -> f64 {
    let defined: Vec<f64> = values.iter().flatten().copied().collect();
    if defined.is_empty() {
        f64::NAN
    } else {
        defined.iter().sum::<f64>() / defined.len() as f64
    }
}

struct Session<'a> {
    config: &'a TrainConfig,
    optimizer: Optimizer,
    weights: ClassWeightState,
    shuffle: ChaCha8Rng,
}

impl<'a> Session<'a> {
    fn new(config: &'a TrainConfig, structures: usize) -> Result<Self> {
        Ok(Session {
            config,
            optimizer: Optimizer::new(config.optimizer, config.learning_rate)?,
            weights: ClassWeightState::new(structures, config.loss.beta),
            shuffle: ChaCha8Rng::seed_from_u64(config.seed),
        })
    }

    /// One step on a batch; `None` when no annotation in it was available.
    fn step(&mut self, model: &mut Model, samples: &[&SliceSample]) -> Result<Option<f64>> {
        let tape = model.forward_train(&image_batch(samples)?)?;
        let batch = loss_batch(samples, tape.probs())?;
        let out = configured_loss(&batch, &mut self.weights, &self.config.loss)?;
        if out.no_supervision {
            return Ok(None);
        }
        let dprobs = Tensor::from_vec(tape.probs().shape, out.grad.iter().map(|&g| g as f32).collect())?;
        let grads = model.backward(&tape, &dprobs)?;
        self.optimizer.step(model.params_mut(), &grads)?;
        Ok(Some(out.value))
    }

    /// Mean loss over the supervised batches of one epoch.
    fn epoch(&mut self, model: &mut Model, train: &[&SliceSample]) -> Result<Option<f64>> {
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut self.shuffle);
        let (mut total, mut count) = (0.0, 0usize);
        for chunk in order.chunks(self.config.batch_size) {
            let samples: Vec<&SliceSample> = chunk.iter().map(|&i| train[i]).collect();
            if let Some(v) = self.step(model, &samples)? {
                total += v;
                count += 1;
            }
        }
        Ok((count > 0).then(|| total / count as f64))
    }
}

fn check_fit(model: &Model, dataset: &Dataset, config: &TrainConfig) -> Result<()> {
    config.validate()?;
    dataset.validate()?;
    ensure!(
        dataset.num_structures() == model.out_channels(),
        InvalidInput,
        "dataset has {} structures, model has {} outputs",
        dataset.num_structures(),
        model.out_channels()
    );
    ensure!(
        dataset.image_size == model.spec().input_size,
        Shape,
        "dataset images are {:?}, model expects {:?}",
        dataset.image_size,
        model.spec().input_size
    );
    ensure!(dataset.split(Split::Train).next().is_some(), Dataset, "training split is empty");
    Ok(())
}

fn run_epochs(model: &mut Model, dataset: &Dataset, config: &TrainConfig, curve: &mut LearningCurve) -> Result<()> {
    let train: Vec<&SliceSample> = dataset.split(Split::Train).collect();
    let mut session = Session::new(config, dataset.num_structures())?;
    model.reseed_dropout(config.seed);
    let start = curve.last_epoch();
    for e in 1..=config.epochs {
        let loss = session.epoch(model, &train)?;
        let dsc = if e % config.eval_every == 0 || e == config.epochs {
            validation_dsc(model, dataset)?
        } else {
            vec![None; dataset.num_structures()]
        };
        curve.rows.push(CurveRow {
            epoch: start + e,
            loss,
            dsc,
        });
    }
    Ok(())
}

/// Trains `model` on the training split with the configured loss, which only
/// uses the annotations that are available.
pub fn train(mut model: Model, dataset: &Dataset, config: &TrainConfig) -> Result<(Model, LearningCurve)> {
    check_fit(&model, dataset, config)?;
    let mut curve = LearningCurve::new(dataset.structures.clone());
    run_epochs(&mut model, dataset, config, &mut curve)?;
    Ok((model, curve))
}

/// Builds a model for `dataset` with `config.seed` and trains it.
pub fn fit(spec: &ModelSpec, dataset: &Dataset, config: &TrainConfig) -> Result<(Model, LearningCurve)> {
    let spec = ModelSpec {
        out_channels: dataset.num_structures(),
        input_size: dataset.image_size,
        ..spec.clone()
    };
    train(Model::build(spec, config.seed)?, dataset, config)
}

/// A baseline single-structure model trained on the slices where structure `k` is annotated.
pub fn fit_single(spec: &ModelSpec, dataset: &Dataset, k: usize, config: &TrainConfig) -> Result<(Model, LearningCurve)> {
    ensure!(k < dataset.num_structures(), InvalidInput, "no structure {k}");
    fit(spec, &dataset.single_structure(k), config)
}

/// Extends a model trained on `old_structures` with the one structure of
/// `dataset` it does not know yet and resumes training on all of them.
///
/// The dataset's structures are reordered so that the new one is last, which
/// matches the appended output channel. `prior` is the curve of the earlier
/// training; its last epoch becomes `epoch_added`.
pub fn train_incremental(
    model: Model,
    old_structures: &[String],
    dataset: &Dataset,
    config: &TrainConfig,
    prior: Option<LearningCurve>,
) -> Result<(Model, LearningCurve)> {
    ensure!(
        old_structures.len() == model.out_channels(),
        InvalidInput,
        "{} structure names for a model with {} outputs",
        old_structures.len(),
        model.out_channels()
    );
    let mut order = Vec::with_capacity(dataset.num_structures());
    for name in old_structures {
        let k = dataset
            .structure_index(name)
            .ok_or_else(|| crate::Error::InvalidInput(format!("dataset lacks structure {name:?}")))?;
        ensure!(!order.contains(&k), InvalidInput, "structure {name:?} listed twice");
        order.push(k);
    }
    let new: Vec<usize> = (0..dataset.num_structures()).filter(|k| !order.contains(k)).collect();
    ensure!(
        new.len() == 1,
        InvalidInput,
        "incremental training adds exactly one structure, dataset has {} new",
        new.len()
    );
    order.extend(&new);
    let dataset = dataset.select_structures(&order);

    let mut curve = LearningCurve::new(dataset.structures.clone());
    if let Some(prior) = prior {
        ensure!(
            prior.structures == old_structures,
            InvalidInput,
            "prior curve covers {:?}, expected {old_structures:?}",
            prior.structures
        );
        curve.rows = prior
            .rows
            .into_iter()
            .map(|mut r| {
                r.dsc.push(None);
                r
            })
            .collect();
    }
    curve.epoch_added = Some(curve.last_epoch());

    let mut model = model.extend_output(config.seed.wrapping_add(0x9e37_79b9));
    check_fit(&model, &dataset, config)?;
    run_epochs(&mut model, &dataset, config, &mut curve)?;
    Ok((model, curve))
}
