use crate::error::{ensure, Result};

/// Dense `n × c × h × w` array of `f32`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: [usize; 4],
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Tensor {
            shape,
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<f32>) -> Result<Self> {
        ensure!(
            data.len() == shape.iter().product::<usize>(),
            Shape,
            "{} values for shape {shape:?}",
            data.len()
        );
        Ok(Tensor { shape, data })
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    /// `h × w`.
    pub fn plane(&self) -> usize {
        self.shape[2] * self.shape[3]
    }

    /// Values of one batch entry, all channels.
    pub fn sample_len(&self) -> usize {
        self.shape[1] * self.plane()
    }

    pub fn sample(&self, i: usize) -> &[f32] {
        let len = self.sample_len();
        &self.data[i * len..(i + 1) * len]
    }

    pub fn channel(&self, i: usize, c: usize) -> &[f32] {
        let p = self.plane();
        let at = (i * self.shape[1] + c) * p;
        &self.data[at..at + p]
    }
}
