use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, Partition, TaskKind};
use crate::error::{Result, SimError};
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    LinearRegression,
    SoftmaxClassifier,
    LinearSvm,
}

impl ModelKind {
    /// Number of parameters for features of width `dim` (a bias is appended
    /// per output).
    pub fn param_len(self, dim: usize, kind: TaskKind) -> usize {
        match (self, kind) {
            (ModelKind::SoftmaxClassifier, TaskKind::Classification { classes }) => {
                classes * (dim + 1)
            }
            _ => dim + 1,
        }
    }

    pub fn matches(self, kind: TaskKind) -> bool {
        matches!(
            (self, kind),
            (ModelKind::LinearRegression, TaskKind::Regression)
                | (
                    ModelKind::SoftmaxClassifier,
                    TaskKind::Classification { .. }
                )
                | (ModelKind::LinearSvm, TaskKind::BinaryMargin)
        )
    }
}

/// Local training hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearnerSpec {
    pub model_kind: ModelKind,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// L2 strength for the SVM objective; ignored by the other models.
    #[serde(default = "default_l2")]
    pub l2: f64,
}

fn default_l2() -> f64 {
    1e-4
}

impl LearnerSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(SimError::InvalidArgument(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(SimError::InvalidArgument(
                "epochs and batch size must be at least 1".into(),
            ));
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return Err(SimError::InvalidArgument(format!(
                "l2 must be >= 0, got {}",
                self.l2
            )));
        }
        Ok(())
    }

    /// `ceil(n_k / B)`.
    pub fn batches_per_epoch(&self, partition_len: usize) -> usize {
        partition_len.div_ceil(self.batch_size)
    }
}

/// Flat parameter vector stamped with the global round it derives from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub weights: Vec<f64>,
    pub version: u64,
}

impl ModelParams {
    pub fn zeros(len: usize) -> Self {
        Self {
            weights: vec![0.0; len],
            version: 0,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.is_finite())
    }
}

fn affine(w: &[f64], x: &[f64]) -> f64 {
    let (bias, coef) = w.split_last().expect("non-empty weights");
    coef.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + bias
}

/// Raw model output: a score for linear models, class logits for softmax.
pub fn predict(kind: ModelKind, weights: &[f64], x: &[f64]) -> Vec<f64> {
    match kind {
        ModelKind::LinearRegression | ModelKind::LinearSvm => vec![affine(weights, x)],
        ModelKind::SoftmaxClassifier => weights.chunks(x.len() + 1).map(|w| affine(w, x)).collect(),
    }
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

/// Mean per-sample objective and its gradient over `indices`.
///
/// Squared error `0.5 (y_hat - y)^2` for regression, multinomial
/// cross-entropy for the softmax model, and hinge loss plus
/// `0.5 * l2 * |w|^2` (bias excluded) for the SVM.
pub fn loss_and_gradient(
    spec: &LearnerSpec,
    weights: &[f64],
    data: &Dataset,
    indices: &[usize],
) -> (f64, Vec<f64>) {
    let d = data.dim();
    let mut grad = vec![0.0; weights.len()];
    let mut loss = 0.0;
    for &i in indices {
        let x = data.row(i);
        let y = data.label(i);
        match spec.model_kind {
            ModelKind::LinearRegression => {
                let r = affine(weights, x) - y;
                loss += 0.5 * r * r;
                for (g, xi) in grad.iter_mut().zip(x) {
                    *g += r * xi;
                }
                grad[d] += r;
            }
            ModelKind::LinearSvm => {
                let margin = y * affine(weights, x);
                if margin < 1.0 {
                    loss += 1.0 - margin;
                    for (g, xi) in grad.iter_mut().zip(x) {
                        *g -= y * xi;
                    }
                    grad[d] -= y;
                }
            }
            ModelKind::SoftmaxClassifier => {
                let logp = log_softmax(&predict(spec.model_kind, weights, x));
                let label = y as usize;
                loss -= logp[label];
                for (c, lp) in logp.iter().enumerate() {
                    let delta = lp.exp() - if c == label { 1.0 } else { 0.0 };
                    let g = &mut grad[c * (d + 1)..(c + 1) * (d + 1)];
                    for (gj, xj) in g.iter_mut().zip(x) {
                        *gj += delta * xj;
                    }
                    g[d] += delta;
                }
            }
        }
    }
    let scale = 1.0 / indices.len().max(1) as f64;
    loss *= scale;
    grad.iter_mut().for_each(|g| *g *= scale);
    if spec.model_kind == ModelKind::LinearSvm && spec.l2 > 0.0 {
        let coef = &weights[..d];
        loss += 0.5 * spec.l2 * coef.iter().map(|w| w * w).sum::<f64>();
        for (g, w) in grad.iter_mut().zip(coef) {
            *g += spec.l2 * w;
        }
    }
    (loss, grad)
}

/// Runs up to `spec.epochs` epochs of mini-batch gradient descent on the
/// client's partition, stopping early after `batch_budget` batches when one
/// is given (used for clients interrupted mid-round). Each epoch draws a
/// fresh batch order from `rng`; the last batch may be smaller than `B`.
///
/// Returns the number of batches processed. The version stamp is left
/// untouched.
#[allow(clippy::too_many_arguments)]
pub fn client_update<R: Rng + ?Sized>(
    client: usize,
    round: usize,
    model: &mut ModelParams,
    data: &Dataset,
    partition: &Partition,
    spec: &LearnerSpec,
    rng: &mut R,
    batch_budget: Option<usize>,
) -> Result<usize> {
    let expected = spec.model_kind.param_len(data.dim(), data.kind());
    if model.weights.len() != expected {
        return Err(SimError::DimensionMismatch {
            expected,
            got: model.weights.len(),
        });
    }
    let budget = batch_budget.unwrap_or(usize::MAX);
    let mut done = 0;
    let mut order = partition.sample_indices.clone();
    for _ in 0..spec.epochs {
        order.copy_from_slice(&partition.sample_indices);
        order.shuffle(rng);
        for batch in order.chunks(spec.batch_size) {
            if done == budget {
                return Ok(done);
            }
            let (_, grad) = loss_and_gradient(spec, &model.weights, data, batch);
            for (w, g) in model.weights.iter_mut().zip(&grad) {
                *w -= spec.learning_rate * g;
            }
            if !model.is_finite() {
                return Err(SimError::NumericDivergence { client, round });
            }
            done += 1;
        }
    }
    Ok(done)
}

/// [`client_update`] with the batch-order stream derived from
/// `(seed, client, round)`.
#[allow(clippy::too_many_arguments)]
pub fn client_update_seeded(
    client: usize,
    round: usize,
    model: &mut ModelParams,
    data: &Dataset,
    partition: &Partition,
    spec: &LearnerSpec,
    seed: u64,
    batch_budget: Option<usize>,
) -> Result<usize> {
    let mut rng = stream_rng(seed, Stream::Shuffle, &[client as u64, round as u64]);
    client_update(
        client,
        round,
        model,
        data,
        partition,
        spec,
        &mut rng,
        batch_budget,
    )
}
