use ndarray::Array2;

use super::{fit, fit_single, predict_samples, predict_split, LearningCurve, TrainConfig, THRESHOLD};
use crate::data::{Dataset, SliceSample, Split};
use crate::error::{ensure, Result};
use crate::losses::Weighting;
use crate::metrics::{evaluate, EvalReport};
use crate::model::{Model, ModelSpec};

/// Slots of structure `k` without annotation in the training and validation splits.
fn gaps(dataset: &Dataset, k: usize) -> Vec<usize> {
    dataset
        .samples
        .iter()
        .enumerate()
        .filter(|(_, s)| s.split != Split::Test && !s.is_available(k))
        .map(|(i, _)| i)
        .collect()
}

fn fill(dataset: &mut Dataset, k: usize, teacher: &Model) -> Result<usize> {
    ensure!(
        teacher.out_channels() == 1,
        InvalidInput,
        "teacher for {} has {} outputs",
        dataset.structures[k],
        teacher.out_channels()
    );
    let idx = gaps(dataset, k);
    if idx.is_empty() {
        return Ok(0);
    }
    let samples: Vec<&SliceSample> = idx.iter().map(|&i| &dataset.samples[i]).collect();
    let maps = predict_samples(teacher, &samples)?;
    let masks: Vec<Array2<u8>> = maps.iter().map(|m| m[0].mapv(|p| u8::from(p >= THRESHOLD))).collect();
    for (&i, mask) in idx.iter().zip(masks) {
        dataset.samples[i].set_pseudo_mask(k, mask)?;
    }
    Ok(idx.len())
}

/// Fills every missing training and validation annotation with the
/// thresholded prediction of that structure's teacher. Test slices are left
/// untouched so that evaluation only sees real annotations.
pub fn pseudo_label(teachers: &[Model], dataset: &Dataset) -> Result<Dataset> {
    ensure!(
        teachers.len() == dataset.num_structures(),
        InvalidInput,
        "{} teachers for {} structures",
        teachers.len(),
        dataset.num_structures()
    );
    let mut out = dataset.clone();
    for (k, teacher) in teachers.iter().enumerate() {
        fill(&mut out, k, teacher)?;
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct SemiOutcome {
    pub student: Model,
    pub curve: LearningCurve,
    /// Training data of the student, pseudo masks included.
    pub labelled: Dataset,
    /// Structures for which a teacher was trained.
    pub teachers: Vec<String>,
    pub report: EvalReport,
}

/// Teacher-student baseline: single-structure teachers fill the gaps, then a
/// multi-structure student trains on the completed data with the plain
/// combined loss and is evaluated on the test split.
pub fn train_semi(
    teacher_spec: &ModelSpec,
    teacher_config: &TrainConfig,
    student_spec: &ModelSpec,
    student_config: &TrainConfig,
    dataset: &Dataset,
) -> Result<SemiOutcome> {
    let mut labelled = dataset.clone();
    let mut teachers = Vec::new();
    for k in 0..dataset.num_structures() {
        if gaps(dataset, k).is_empty() {
            continue;
        }
        let (teacher, _) = fit_single(teacher_spec, dataset, k, teacher_config)?;
        fill(&mut labelled, k, &teacher)?;
        teachers.push(dataset.structures[k].clone());
    }
    let mut config = student_config.clone();
    config.loss.weighting = Weighting::None;
    let (student, curve) = fit(student_spec, &labelled, &config)?;
    let preds = predict_split(&student, dataset, Split::Test)?;
    let report = evaluate(dataset, Split::Test, &preds, THRESHOLD)?;
    Ok(SemiOutcome {
        student,
        curve,
        labelled,
        teachers,
        report,
    })
}
