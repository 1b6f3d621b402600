use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::model::{Gradients, Param};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    SgdMomentum,
    Rmsprop,
    Adam,
}

impl OptimizerKind {
    pub const ALL: [OptimizerKind; 3] = [OptimizerKind::SgdMomentum, OptimizerKind::Rmsprop, OptimizerKind::Adam];

    pub fn as_str(self) -> &'static str {
        match self {
            OptimizerKind::SgdMomentum => "sgd_momentum",
            OptimizerKind::Rmsprop => "rmsprop",
            OptimizerKind::Adam => "adam",
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sgd_momentum" | "sgd" => Ok(OptimizerKind::SgdMomentum),
            "rmsprop" | "rms" => Ok(OptimizerKind::Rmsprop),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(Error::InvalidConfig(format!("unknown optimizer {other:?}"))),
        }
    }
}

const MOMENTUM: f32 = 0.9;
const RMS_DECAY: f32 = 0.9;
const RMS_EPS: f32 = 1e-7;
const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-7;

/// Optimizer state for every trainable parameter of one model.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    learning_rate: f32,
    steps: u64,
    first: Vec<Vec<f32>>,
    second: Vec<Vec<f32>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Result<Self> {
        ensure!(
            learning_rate.is_finite() && learning_rate > 0.0,
            InvalidConfig,
            "learning rate must be positive, got {learning_rate}"
        );
        Ok(Optimizer {
            kind,
            learning_rate: learning_rate as f32,
            steps: 0,
            first: Vec::new(),
            second: Vec::new(),
        })
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn step(&mut self, params: &mut [Param], grads: &Gradients) -> Result<()> {
        ensure!(
            grads.len() == params.len(),
            Shape,
            "{} gradients for {} parameters",
            grads.len(),
            params.len()
        );
        if self.first.is_empty() {
            self.first = params.iter().map(|p| vec![0.0; p.value.len()]).collect();
            self.second = self.first.clone();
        }
        ensure!(
            self.first.iter().zip(params.iter()).all(|(s, p)| s.len() == p.value.len()),
            Shape,
            "optimizer state does not match the parameters"
        );
        self.steps += 1;
        let lr = self.learning_rate;
        let t = self.steps as i32;
        let (c1, c2) = (1.0 - ADAM_BETA1.powi(t), 1.0 - ADAM_BETA2.powi(t));
        for (i, p) in params.iter_mut().enumerate() {
            if !p.trainable {
                continue;
            }
            let g = grads.get(i);
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            match self.kind {
                OptimizerKind::SgdMomentum => {
                    for ((p, m), &g) in p.value.iter_mut().zip(m.iter_mut()).zip(g) {
                        *m = MOMENTUM * *m - lr * g;
                        *p += *m;
                    }
                }
                OptimizerKind::Rmsprop => {
                    for ((p, s), &g) in p.value.iter_mut().zip(v.iter_mut()).zip(g) {
                        *s = RMS_DECAY * *s + (1.0 - RMS_DECAY) * g * g;
                        *p -= lr * g / (*s + RMS_EPS).sqrt();
                    }
                }
                OptimizerKind::Adam => {
                    for (((p, m), v), &g) in p.value.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g) {
                        *m = (ADAM_BETA1 as f32) * *m + (1.0 - ADAM_BETA1 as f32) * g;
                        *v = (ADAM_BETA2 as f32) * *v + (1.0 - ADAM_BETA2 as f32) * g * g;
                        let mhat = f64::from(*m) / c1;
                        let vhat = f64::from(*v) / c2;
                        *p -= (f64::from(lr) * mhat / (vhat.sqrt() + ADAM_EPS)) as f32;
                    }
                }
            }
        }
        Ok(())
    }
}
