//! Multinomial logistic regression with per-record gradient clipping.

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

use super::data::LocalDataset;
use crate::error::{NetDpError, Result};

/// Softmax classifier: weights are `classes × (dims + 1)` with the bias in
/// the last column.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel {
    weights: DMatrix<f64>,
}

impl LogisticModel {
    pub fn zeros(classes: usize, dims: usize) -> Self {
        LogisticModel {
            weights: DMatrix::zeros(classes, dims + 1),
        }
    }

    pub fn random(classes: usize, dims: usize, scale: f64, rng: &mut ChaCha12Rng) -> Self {
        let weights = DMatrix::from_fn(classes, dims + 1, |_, _| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z
        });
        LogisticModel { weights }
    }

    pub fn from_weights(weights: DMatrix<f64>) -> Self {
        LogisticModel { weights }
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn classes(&self) -> usize {
        self.weights.nrows()
    }

    pub fn dims(&self) -> usize {
        self.weights.ncols() - 1
    }

    /// Class probabilities for one record (stable softmax).
    fn probabilities(&self, data: &LocalDataset, record: usize) -> DVector<f64> {
        let k = self.classes();
        let mut logits = DVector::<f64>::zeros(k);
        for c in 0..k {
            let mut z = self.weights[(c, self.dims())]; // bias
            for d in 0..self.dims() {
                z += self.weights[(c, d)] * data.features()[(record, d)];
            }
            logits[c] = z;
        }
        let max = logits.max();
        let mut sum = 0.0;
        for c in 0..k {
            logits[c] = (logits[c] - max).exp();
            sum += logits[c];
        }
        logits / sum
    }

    /// Mean cross-entropy loss over a dataset.
    pub fn loss(&self, data: &LocalDataset) -> f64 {
        if data.is_empty() {
            return 0.0;
        }
        let mut acc = 0.0;
        for r in 0..data.len() {
            let p = self.probabilities(data, r);
            acc -= p[data.labels()[r]].max(1e-300).ln();
        }
        acc / data.len() as f64
    }

    /// Fraction of records whose argmax class matches the label.
    pub fn accuracy(&self, data: &LocalDataset) -> f64 {
        if data.is_empty() {
            return f64::NAN;
        }
        let mut correct = 0usize;
        for r in 0..data.len() {
            let p = self.probabilities(data, r);
            let pred = p.argmax().0;
            if pred == data.labels()[r] {
                correct += 1;
            }
        }
        correct as f64 / data.len() as f64
    }

    /// Mean of per-record cross-entropy gradients, each clipped to Frobenius
    /// norm at most `clip_norm`. `clip_norm = 0` zeroes the gradient signal.
    pub fn mean_clipped_gradient(
        &self,
        data: &LocalDataset,
        clip_norm: f64,
    ) -> Result<DMatrix<f64>> {
        if data.is_empty() {
            return Err(NetDpError::Parameter("empty dataset".into()));
        }
        let k = self.classes();
        let d = self.dims();
        let mut sum = DMatrix::<f64>::zeros(k, d + 1);
        let mut record_grad = DMatrix::<f64>::zeros(k, d + 1);
        for r in 0..data.len() {
            let p = self.probabilities(data, r);
            record_grad.fill(0.0);
            for c in 0..k {
                let coeff = p[c] - if c == data.labels()[r] { 1.0 } else { 0.0 };
                for col in 0..d {
                    record_grad[(c, col)] = coeff * data.features()[(r, col)];
                }
                record_grad[(c, d)] = coeff;
            }
            let norm = record_grad.norm();
            let scale = if norm > clip_norm {
                clip_norm / norm
            } else {
                1.0
            };
            sum += &record_grad * scale;
        }
        Ok(sum / data.len() as f64)
    }

    /// `model − η · gradient`.
    pub fn stepped(&self, gradient: &DMatrix<f64>, learning_rate: f64) -> Self {
        LogisticModel {
            weights: &self.weights - gradient * learning_rate,
        }
    }

    /// Frobenius distance between two models.
    pub fn distance(&self, other: &LogisticModel) -> f64 {
        (&self.weights - &other.weights).norm()
    }
}
