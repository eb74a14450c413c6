//! Everything a client does between receiving and uploading a model:
//! datasets and partitions, local mini-batch gradient descent, and the
//! per-task accuracy definitions.

mod dataset;
mod eval;
mod model;

pub use dataset::{partition_dataset, Dataset, Partition, TaskKind};
pub use eval::{evaluate, Evaluation};
pub use model::{
    client_update, client_update_seeded, loss_and_gradient, predict, LearnerSpec, ModelKind,
    ModelParams,
};
