use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, TaskKind};
use super::model::{loss_and_gradient, predict, LearnerSpec, ModelParams};
use crate::error::{Result, SimError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
}

/// Sign with `sign(0) = 0`.
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Per-sample accuracy term for one prediction.
pub(crate) fn accuracy_term(kind: TaskKind, y: f64, output: &[f64]) -> f64 {
    match kind {
        TaskKind::Regression => {
            let y_hat = output[0];
            let denom = y.max(y_hat);
            if denom > 0.0 {
                1.0 - (y - y_hat).abs() / denom
            } else {
                // unreachable for shifted targets; count as a full miss
                0.0
            }
        }
        TaskKind::Classification { .. } => {
            let arg = output
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
                .map(|(i, _)| i)
                .unwrap_or(0);
            if arg as f64 == y {
                1.0
            } else {
                0.0
            }
        }
        TaskKind::BinaryMargin => sign(y * output[0]).max(0.0),
    }
}

/// Mean training objective and task accuracy of `model` on `dataset`.
pub fn evaluate(model: &ModelParams, dataset: &Dataset, spec: &LearnerSpec) -> Result<Evaluation> {
    if dataset.is_empty() {
        return Err(SimError::InvalidDataset(
            "cannot evaluate on an empty dataset".into(),
        ));
    }
    if !spec.model_kind.matches(dataset.kind()) {
        return Err(SimError::InvalidArgument(format!(
            "{:?} cannot be evaluated on a {:?} dataset",
            spec.model_kind,
            dataset.kind()
        )));
    }
    let expected = spec.model_kind.param_len(dataset.dim(), dataset.kind());
    if model.weights.len() != expected {
        return Err(SimError::DimensionMismatch {
            expected,
            got: model.weights.len(),
        });
    }
    let all: Vec<usize> = (0..dataset.len()).collect();
    let (loss, _) = loss_and_gradient(spec, &model.weights, dataset, &all);
    let accuracy = all
        .iter()
        .map(|&i| {
            let out = predict(spec.model_kind, &model.weights, dataset.row(i));
            accuracy_term(dataset.kind(), dataset.label(i), &out)
        })
        .sum::<f64>()
        / dataset.len() as f64;
    Ok(Evaluation { loss, accuracy })
}
