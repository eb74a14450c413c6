use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::{Table, Value};

use crate::env::{PopulationConfig, TimingConfig};
use crate::error::{Result, SimError};
use crate::learners::{LearnerSpec, ModelKind};
use crate::protocol::Protocol;

/// Environment variable that overrides `output_dir`.
pub const OUTPUT_DIR_ENV: &str = "SAFA_OUTPUT_DIR";

/// Task presets. The plain names load `data.path` when given and otherwise
/// synthesise a stand-in of the same shape; the `synthetic-*` variants always
/// synthesise from `data.samples` and `data.features`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Regression,
    Classify,
    Svm,
    SyntheticRegression,
    SyntheticClassify,
    SyntheticSvm,
}

impl Task {
    pub const ALL: [Task; 6] = [
        Task::Regression,
        Task::Classify,
        Task::Svm,
        Task::SyntheticRegression,
        Task::SyntheticClassify,
        Task::SyntheticSvm,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Regression => "regression",
            Task::Classify => "classify",
            Task::Svm => "svm",
            Task::SyntheticRegression => "synthetic-regression",
            Task::SyntheticClassify => "synthetic-classify",
            Task::SyntheticSvm => "synthetic-svm",
        }
    }

    pub fn model_kind(self) -> ModelKind {
        match self {
            Task::Regression | Task::SyntheticRegression => ModelKind::LinearRegression,
            Task::Classify | Task::SyntheticClassify => ModelKind::SoftmaxClassifier,
            Task::Svm | Task::SyntheticSvm => ModelKind::LinearSvm,
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Task::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| format!("unknown task {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FederationConfig {
    /// Number of clients `m`.
    pub clients: usize,
    /// Selection fraction `C`.
    pub selection_fraction: f64,
    /// Lag tolerance `tau`.
    pub lag_tolerance: u64,
    /// Log-normal sigma of the FedCS time estimator.
    #[serde(default)]
    pub fedcs_noise: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// CSV with a header and a `label` column.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    pub samples: usize,
    pub features: usize,
    /// Class count for synthetic classification.
    pub classes: usize,
    /// Label noise (regression, margin) or cluster spread (classification).
    pub noise: f64,
    pub test_fraction: f64,
    /// Standard deviation of partition sizes relative to their mean.
    pub partition_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub protocol: Protocol,
    pub task: Task,
    pub rounds: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub federation: FederationConfig,
    pub population: PopulationConfig,
    pub learner: LearnerSpec,
    pub timing: TimingConfig,
    pub data: DataConfig,
}

impl RunConfig {
    /// Defaults for a task, following the usual experimental setup for each.
    pub fn preset(task: Task) -> Self {
        let federation = |clients| FederationConfig {
            clients,
            selection_fraction: 0.3,
            lag_tolerance: 5,
            fedcs_noise: 0.0,
        };
        let learner = |lr, epochs, batch_size| LearnerSpec {
            model_kind: task.model_kind(),
            learning_rate: lr,
            epochs,
            batch_size,
            l2: 1e-4,
        };
        let timing = |t_lim, per_model: f64| TimingConfig {
            t_lim,
            per_model_dist_time: Some(per_model),
            ..TimingConfig::default()
        };
        let data = |samples, features, classes, noise| DataConfig {
            path: None,
            samples,
            features,
            classes,
            noise,
            test_fraction: 0.2,
            partition_std: 0.3,
        };
        let (rounds, federation, learner, timing, data) = match task {
            Task::Regression => (
                100,
                federation(5),
                learner(1e-4, 3, 5),
                timing(830.0, 0.404),
                data(506, 13, 0, 2.0),
            ),
            Task::Classify => (
                50,
                federation(100),
                learner(1e-3, 5, 40),
                timing(5600.0, 0.204),
                data(7000, 20, 10, 0.15),
            ),
            Task::Svm => (
                100,
                federation(500),
                learner(1e-2, 5, 100),
                timing(1620.0, 0.404),
                data(18648, 35, 0, 0.1),
            ),
            Task::SyntheticRegression => (
                50,
                federation(20),
                learner(1e-3, 3, 10),
                timing(830.0, 0.404),
                data(2000, 8, 0, 0.5),
            ),
            Task::SyntheticClassify => (
                50,
                federation(50),
                learner(5e-2, 2, 20),
                timing(5600.0, 0.204),
                data(3000, 10, 4, 0.2),
            ),
            Task::SyntheticSvm => (
                50,
                federation(100),
                learner(1e-2, 2, 20),
                timing(1620.0, 0.404),
                data(4000, 10, 0, 0.1),
            ),
        };
        Self {
            protocol: Protocol::Safa,
            task,
            rounds,
            seed: 1,
            output_dir: PathBuf::from("out"),
            federation,
            population: PopulationConfig::default(),
            learner,
            timing,
            data,
        }
    }

    /// Checks every field, naming the offending one.
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: String| Err(SimError::Config(format!("{field}: {why}")));
        let f = &self.federation;
        if f.clients == 0 {
            return bad("federation.clients", "must be at least 1".into());
        }
        if !(f.selection_fraction > 0.0 && f.selection_fraction <= 1.0) {
            return bad(
                "federation.selection_fraction",
                format!("must be in (0, 1], got {}", f.selection_fraction),
            );
        }
        if f.lag_tolerance == 0 {
            return bad("federation.lag_tolerance", "must be at least 1".into());
        }
        if !(f.fedcs_noise >= 0.0 && f.fedcs_noise.is_finite()) {
            return bad(
                "federation.fedcs_noise",
                format!("must be non-negative, got {}", f.fedcs_noise),
            );
        }
        if self.learner.model_kind != self.task.model_kind() {
            return bad(
                "learner.model_kind",
                format!("task {} needs {:?}", self.task, self.task.model_kind()),
            );
        }
        let d = &self.data;
        if d.path.is_none() {
            if d.samples < 2 {
                return bad("data.samples", "need at least 2 samples".into());
            }
            if d.features == 0 {
                return bad("data.features", "must be at least 1".into());
            }
            if matches!(self.task, Task::Classify | Task::SyntheticClassify) && d.classes < 2 {
                return bad("data.classes", "need at least 2 classes".into());
            }
            let train = d.samples - (d.samples as f64 * d.test_fraction).round() as usize;
            if train < f.clients {
                return bad(
                    "federation.clients",
                    format!("{} clients exceed {train} training samples", f.clients),
                );
            }
        }
        if !(d.test_fraction > 0.0 && d.test_fraction < 1.0) {
            return bad(
                "data.test_fraction",
                format!("must be in (0, 1), got {}", d.test_fraction),
            );
        }
        if !(d.noise >= 0.0 && d.noise.is_finite()) {
            return bad(
                "data.noise",
                format!("must be non-negative, got {}", d.noise),
            );
        }
        if !(d.partition_std >= 0.0 && d.partition_std.is_finite()) {
            return bad(
                "data.partition_std",
                format!("must be non-negative, got {}", d.partition_std),
            );
        }
        self.population
            .validate()
            .map_err(|e| SimError::Config(format!("population: {e}")))?;
        self.learner
            .validate()
            .map_err(|e| SimError::Config(format!("learner: {e}")))?;
        self.timing
            .validate()
            .map_err(|e| SimError::Config(format!("timing: {e}")))?;
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        load_from_str(text, &[])
    }

    /// Hex prefix of the SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        hex::encode(&digest[..8])
    }

    /// `output_dir`, unless the environment overrides it.
    pub fn resolved_output_dir(&self) -> PathBuf {
        std::env::var_os(OUTPUT_DIR_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| self.output_dir.clone())
    }
}

/// A `section.key=value` override.
#[derive(Debug, Clone, PartialEq)]
pub struct Override {
    pub path: Vec<String>,
    pub value: Value,
}

impl FromStr for Override {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        let (key, raw) = s
            .split_once('=')
            .ok_or_else(|| SimError::Config(format!("override {s:?} is not key=value")))?;
        let path: Vec<String> = key.trim().split('.').map(str::to_owned).collect();
        if path.iter().any(String::is_empty) {
            return Err(SimError::Config(format!(
                "override key {key:?} is malformed"
            )));
        }
        let raw = raw.trim();
        // Bare words such as `safa` are taken as strings.
        let value = toml::from_str::<Table>(&format!("v = {raw}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| Value::String(raw.to_owned()));
        Ok(Override { path, value })
    }
}

fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn apply(table: &mut Table, o: &Override) -> Result<()> {
    let (last, parents) = o.path.split_last().expect("non-empty path");
    let mut cur = table;
    for p in parents {
        cur = match cur
            .entry(p.clone())
            .or_insert_with(|| Value::Table(Table::new()))
        {
            Value::Table(t) => t,
            _ => return Err(SimError::Config(format!("{p} is not a section"))),
        };
    }
    // Integers given for float fields are accepted by serde; the reverse is not.
    cur.insert(last.clone(), o.value.clone());
    Ok(())
}

fn lookup_task(table: &Table) -> Result<Option<Task>> {
    match table.get("task") {
        None => Ok(None),
        Some(Value::String(s)) => s
            .parse()
            .map(Some)
            .map_err(|e: String| SimError::Config(format!("task: {e}"))),
        Some(v) => Err(SimError::Config(format!(
            "task: expected a string, got {v}"
        ))),
    }
}

/// Builds a config from TOML text plus overrides. Missing keys come from the
/// preset of the selected task (`regression` if none is named).
pub fn load_from_str(text: &str, overrides: &[Override]) -> Result<RunConfig> {
    let file: Table = toml::from_str(text).map_err(|e| SimError::Config(e.to_string()))?;
    let mut over = Table::new();
    for o in overrides {
        apply(&mut over, o)?;
    }
    let task = match lookup_task(&over)? {
        Some(t) => t,
        None => lookup_task(&file)?.unwrap_or(Task::Regression),
    };
    let mut table = Table::try_from(RunConfig::preset(task)).expect("preset serialises");
    merge(&mut table, file);
    merge(&mut table, over);
    let config: RunConfig = table
        .try_into()
        .map_err(|e: toml::de::Error| SimError::Config(e.to_string()))?;
    config.validate()?;
    Ok(config)
}

pub fn load_config(path: Option<&Path>, overrides: &[Override]) -> Result<RunConfig> {
    let text = match path {
        Some(p) => std::fs::read_to_string(p)
            .map_err(|e| SimError::Config(format!("{}: {e}", p.display())))?,
        None => String::new(),
    };
    load_from_str(&text, overrides)
}
