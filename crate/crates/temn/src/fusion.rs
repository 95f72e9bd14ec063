//! Coupling between the memory network and the topic model.
//!
//! A single layer maps a user's memory embedding to a predicted pattern
//! distribution (ReLU then softmax), trained with cross-entropy against
//! the topic posterior. Its gradient passes through into the memory
//! embedding, which is how pattern structure shapes the POI embeddings.

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{dot, softmax, Matrix};

const LOG_FLOOR: f64 = 1e-12;

/// Weight matrix (`pi` rows by `dim_d` columns) and bias vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionParams {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl FusionParams {
    pub fn init<R: Rng>(patterns: usize, dim_d: usize, scale: f64, rng: &mut R) -> Self {
        let mut weight = Matrix::zeros(patterns, dim_d);
        for x in weight.as_mut_slice() {
            *x = rng.random_range(-scale..=scale);
        }
        let bias = (0..patterns).map(|_| rng.random_range(-scale..=scale)).collect();
        Self { weight, bias }
    }

    pub fn patterns(&self) -> usize {
        self.weight.rows()
    }
}

/// Predicted pattern distribution: `softmax(relu(W p + b))`.
pub fn forward(p_m: &[f64], params: &FusionParams) -> Result<Vec<f64>> {
    if p_m.len() != params.weight.cols() {
        return Err(Error::Domain(format!(
            "fusion input length {} does not match weight columns {}",
            p_m.len(),
            params.weight.cols()
        )));
    }
    let activations: Vec<f64> = (0..params.patterns())
        .map(|i| (dot(params.weight.row(i), p_m) + params.bias[i]).max(0.0))
        .collect();
    Ok(softmax(&activations))
}

/// Cross-entropy `-sum target_i * ln(predicted_i)` with an epsilon floor
/// inside the logarithm.
pub fn ce_loss(target: &[f64], predicted: &[f64]) -> f64 {
    debug_assert_eq!(target.len(), predicted.len());
    -target
        .iter()
        .zip(predicted)
        .map(|(t, p)| t * p.max(LOG_FLOOR).ln())
        .sum::<f64>()
}

/// Gradients for the fusion layer plus the pass-through gradient into the
/// memory embedding.
#[derive(Debug, Clone)]
pub struct FusionGradients {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl FusionGradients {
    pub fn zeros_like(params: &FusionParams) -> Self {
        Self {
            weight: Matrix::zeros(params.weight.rows(), params.weight.cols()),
            bias: vec![0.0; params.bias.len()],
        }
    }
}

/// Accumulate gradients of the cross-entropy against `target` for one
/// input, scaled by `weight`. Returns `(loss, d_loss/d_p_m * weight)`.
///
/// The ReLU subgradient at exactly zero is taken as zero.
pub fn accumulate_gradients(
    params: &FusionParams,
    p_m: &[f64],
    target: &[f64],
    weight: f64,
    grads: &mut FusionGradients,
) -> Result<(f64, Vec<f64>)> {
    if target.len() != params.patterns() {
        return Err(Error::Domain(format!(
            "target length {} does not match pattern count {}",
            target.len(),
            params.patterns()
        )));
    }
    let pi = params.patterns();
    let d = params.weight.cols();
    let pre: Vec<f64> = (0..pi)
        .map(|i| dot(params.weight.row(i), p_m) + params.bias[i])
        .collect();
    let activations: Vec<f64> = pre.iter().map(|z| z.max(0.0)).collect();
    let predicted = softmax(&activations);
    let loss = ce_loss(target, &predicted);

    // Softmax + cross-entropy collapses to (predicted - target), then the
    // ReLU gate zeroes entries with non-positive pre-activation.
    let mut d_pm = vec![0.0; d];
    for i in 0..pi {
        let gate = if pre[i] > 0.0 { 1.0 } else { 0.0 };
        let dz = (predicted[i] - target[i]) * gate;
        grads.bias[i] += weight * dz;
        let w_row = params.weight.row(i);
        let gw_row = grads.weight.row_mut(i);
        for k in 0..d {
            gw_row[k] += weight * dz * p_m[k];
            d_pm[k] += weight * dz * w_row[k];
        }
    }
    Ok((loss, d_pm))
}
