//! Gradient-descent training on the toy network plus the central-difference
//! gradient oracle used to validate the hand-written backward pass.

use alloc::vec::Vec;

use super::model::{backward, featurize, forward, loss, NetParams, TrainingSample};

/// Loss weights: `L = alpha * L_traj + beta * L_pro`.
pub const DEFAULT_ALPHA: f64 = 0.5;
pub const DEFAULT_BETA: f64 = 1.0;

#[derive(Clone, Debug, PartialEq)]
pub enum TrainError {
    /// Loss or gradient became non-finite; training aborted.
    NonFinite {
        step: usize,
    },
    EmptyDataset,
    Model(super::model::NetError),
}

impl core::fmt::Display for TrainError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            TrainError::NonFinite { step } => {
                write!(f, "non-finite loss at training step {step}")
            }
            TrainError::EmptyDataset => write!(f, "empty training dataset"),
            TrainError::Model(e) => write!(f, "model error: {e}"),
        }
    }
}

impl core::error::Error for TrainError {}

/// Training outcome: updated parameters and the per-step loss curve.
pub struct TrainOutcome {
    pub params: NetParams,
    pub loss_curve: Vec<f64>,
}

/// Evaluates `L` for one sample with the current parameters.
pub fn sample_loss(
    params: &NetParams,
    sample: &TrainingSample,
    alpha: f64,
    beta: f64,
) -> Result<f64, TrainError> {
    let neighbors: Vec<&_> = sample.neighbor_histories.iter().collect();
    let input = featurize(
        &params.dims,
        &sample.target_history,
        &neighbors,
        &sample.path_set,
    );
    let (out, _) = forward(params, &input).map_err(TrainError::Model)?;
    let l = loss(&out, input.anchor, sample, alpha, beta).map_err(TrainError::Model)?;
    Ok(l.total)
}

/// Mean loss over a dataset.
pub fn dataset_loss(
    params: &NetParams,
    dataset: &[TrainingSample],
    alpha: f64,
    beta: f64,
) -> Result<f64, TrainError> {
    if dataset.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut acc = 0.0;
    for s in dataset {
        acc += sample_loss(params, s, alpha, beta)?;
    }
    Ok(acc / dataset.len() as f64)
}

/// Plain stochastic gradient descent over the dataset (cyclic order), with
/// reverse-mode gradients through the whole network.
pub fn train_toy(
    dataset: &[TrainingSample],
    params: NetParams,
    steps: usize,
    learning_rate: f64,
) -> Result<TrainOutcome, TrainError> {
    if dataset.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut params = params;
    let mut loss_curve = Vec::with_capacity(steps);

    for step in 0..steps {
        let sample = &dataset[step % dataset.len()];
        let neighbors: Vec<&_> = sample.neighbor_histories.iter().collect();
        let input = featurize(
            &params.dims,
            &sample.target_history,
            &neighbors,
            &sample.path_set,
        );
        let (out, cache) = forward(&params, &input).map_err(TrainError::Model)?;
        let l = loss(&out, input.anchor, sample, DEFAULT_ALPHA, DEFAULT_BETA)
            .map_err(TrainError::Model)?;
        if !l.total.is_finite() {
            return Err(TrainError::NonFinite { step });
        }
        loss_curve.push(l.total);
        if learning_rate != 0.0 {
            let grads = backward(&params, &input, &cache, sample, DEFAULT_ALPHA, DEFAULT_BETA);
            params.step(&grads, learning_rate);
        }
    }
    Ok(TrainOutcome { params, loss_curve })
}

/// Central-difference gradient of the full loss with respect to every
/// parameter. Independent of the reverse-mode path: it only re-runs the
/// forward pass on perturbed parameter vectors.
pub fn numeric_gradient(
    params: &NetParams,
    sample: &TrainingSample,
    alpha: f64,
    beta: f64,
    h: f64,
) -> Result<Vec<f64>, TrainError> {
    let dims = params.dims;
    let flat = params.to_flat();
    let mut grad = Vec::with_capacity(flat.len());
    for i in 0..flat.len() {
        let mut plus = flat.clone();
        plus[i] += h;
        let lp = sample_loss(&NetParams::from_flat(dims, &plus), sample, alpha, beta)?;
        let mut minus = flat.clone();
        minus[i] -= h;
        let lm = sample_loss(&NetParams::from_flat(dims, &minus), sample, alpha, beta)?;
        grad.push((lp - lm) / (2.0 * h));
    }
    Ok(grad)
}

/// Analytic gradient in the flat layout of [`NetParams::to_flat`].
pub fn analytic_gradient(
    params: &NetParams,
    sample: &TrainingSample,
    alpha: f64,
    beta: f64,
) -> Result<Vec<f64>, TrainError> {
    let neighbors: Vec<&_> = sample.neighbor_histories.iter().collect();
    let input = featurize(
        &params.dims,
        &sample.target_history,
        &neighbors,
        &sample.path_set,
    );
    let (_, cache) = forward(params, &input).map_err(TrainError::Model)?;
    Ok(backward(params, &input, &cache, sample, alpha, beta).to_flat())
}

/// Worst floored relative error between the analytic and numeric gradients:
/// `|a - n| / max(1e-4, |a| + |n|)` per component (the floor turns the check
/// absolute, at 1e-8, for near-zero components).
pub fn gradient_check(
    params: &NetParams,
    sample: &TrainingSample,
    alpha: f64,
    beta: f64,
    h: f64,
) -> Result<f64, TrainError> {
    let analytic = analytic_gradient(params, sample, alpha, beta)?;
    let numeric = numeric_gradient(params, sample, alpha, beta, h)?;
    let mut worst = 0.0f64;
    for (a, n) in analytic.iter().zip(numeric.iter()) {
        let rel = (a - n).abs() / (a.abs() + n.abs()).max(1e-4);
        worst = worst.max(rel);
    }
    Ok(worst)
}
