use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{RunConfig, Task};
use crate::env::{sample_population, RoundReport};
use crate::error::Result;
use crate::learners::{partition_dataset, Dataset, TaskKind};
use crate::metrics::sync_ratio;
use crate::protocol::{Protocol, RoundEnv, Simulation};

/// Version of the per-round CSV layout.
pub const CSV_SCHEMA: u32 = 1;

/// Aggregate figures for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub protocol: Protocol,
    pub task: Task,
    pub rounds: usize,
    pub seed: u64,
    pub config_hash: String,
    pub initial_loss: f64,
    pub initial_accuracy: f64,
    /// Best accuracy over rounds 1..=R, or the initial accuracy when R = 0.
    pub best_accuracy: f64,
    pub best_loss: f64,
    pub final_accuracy: f64,
    pub mean_round_length: f64,
    pub total_time: f64,
    pub mean_t_dist: f64,
    pub sync_ratio: f64,
    pub mean_eur: f64,
    pub version_variance: f64,
    pub futility: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub reports: Vec<RoundReport>,
    pub summary: Summary,
}

/// Output file locations of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunFiles {
    pub rounds_csv: PathBuf,
    pub summary_json: PathBuf,
}

/// Loads or synthesises the task data and returns `(train, test)`.
pub fn build_datasets(config: &RunConfig) -> Result<(Dataset, Dataset)> {
    let d = &config.data;
    let seed = config.seed;
    let synthetic = matches!(
        config.task,
        Task::SyntheticRegression | Task::SyntheticClassify | Task::SyntheticSvm
    );
    let full = match (&d.path, synthetic) {
        (Some(path), false) => {
            let kind = match config.task {
                Task::Regression => TaskKind::Regression,
                Task::Classify => TaskKind::Classification {
                    classes: d.classes.max(2),
                },
                _ => TaskKind::BinaryMargin,
            };
            Dataset::from_csv(path, kind)?
        }
        _ => match config.task {
            Task::Regression | Task::SyntheticRegression => {
                Dataset::synthetic_regression(d.samples, d.features, d.noise, seed)?
            }
            Task::Classify | Task::SyntheticClassify => {
                Dataset::synthetic_classification(d.samples, d.features, d.classes, d.noise, seed)?
            }
            Task::Svm | Task::SyntheticSvm => {
                Dataset::synthetic_margin(d.samples, d.features, d.noise, seed)?
            }
        },
    };
    full.split(d.test_fraction, seed)
}

/// Builds the initial simulation state for a validated config.
pub fn build_simulation(config: &RunConfig) -> Result<Simulation> {
    config.validate()?;
    let (train, test) = build_datasets(config)?;
    let partitions = partition_dataset(
        &train,
        config.federation.clients,
        config.data.partition_std,
        config.seed,
    )?;
    let sizes: Vec<usize> = partitions.iter().map(|p| p.len()).collect();
    let profiles = sample_population(
        &sizes,
        &config.population,
        config.timing.client_bw,
        config.seed,
    )?;
    let env = RoundEnv {
        train,
        test,
        spec: config.learner,
        timing: config.timing,
        seed: config.seed,
        fedcs_noise: config.federation.fedcs_noise,
    };
    Simulation::new(
        config.protocol,
        env,
        profiles,
        partitions,
        config.federation.lag_tolerance,
        config.federation.selection_fraction,
    )
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

pub fn summarize(config: &RunConfig, initial: (f64, f64), reports: &[RoundReport]) -> Summary {
    let (initial_loss, initial_accuracy) = initial;
    let (best_accuracy, best_loss, final_accuracy) = if reports.is_empty() {
        (initial_accuracy, initial_loss, initial_accuracy)
    } else {
        (
            reports
                .iter()
                .map(|r| r.accuracy)
                .fold(f64::NEG_INFINITY, f64::max),
            reports.iter().map(|r| r.loss).fold(f64::INFINITY, f64::min),
            reports
                .last()
                .map(|r| r.accuracy)
                .unwrap_or(initial_accuracy),
        )
    };
    let m_sync: Vec<usize> = reports.iter().map(|r| r.m_sync).collect();
    let wasted: f64 = reports.iter().map(|r| r.wasted_epochs).sum();
    let attempted: f64 = reports.iter().map(|r| r.attempted_epochs).sum();
    Summary {
        protocol: config.protocol,
        task: config.task,
        rounds: reports.len(),
        seed: config.seed,
        config_hash: config.hash(),
        initial_loss,
        initial_accuracy,
        best_accuracy,
        best_loss,
        final_accuracy,
        mean_round_length: mean(reports.iter().map(|r| r.round_length)),
        total_time: reports.iter().map(|r| r.round_length).sum(),
        mean_t_dist: mean(reports.iter().map(|r| r.t_dist)),
        sync_ratio: sync_ratio(&m_sync, config.federation.clients),
        mean_eur: mean(reports.iter().map(|r| r.eur)),
        version_variance: mean(
            reports
                .iter()
                .filter(|r| r.picked + r.undrafted > 0)
                .map(|r| r.version_variance),
        ),
        futility: if attempted > 0.0 {
            wasted / attempted
        } else {
            0.0
        },
    }
}

/// Runs every round in memory.
pub fn execute(config: &RunConfig) -> Result<RunOutcome> {
    let mut sim = build_simulation(config)?;
    let init = sim.evaluate_global()?;
    let mut reports = Vec::with_capacity(config.rounds);
    for _ in 0..config.rounds {
        reports.push(sim.step()?);
    }
    let summary = summarize(config, (init.loss, init.accuracy), &reports);
    Ok(RunOutcome { reports, summary })
}

/// Writes the per-round CSV, headed by a schema/config-hash comment line.
pub fn write_rounds_csv<W: Write>(
    out: W,
    config_hash: &str,
    reports: &[RoundReport],
) -> Result<()> {
    let mut out = out;
    writeln!(
        out,
        "# safa-sim round-report schema={CSV_SCHEMA} config_hash={config_hash}"
    )?;
    let mut w = csv::WriterBuilder::new().has_headers(true).from_writer(out);
    if reports.is_empty() {
        w.write_record(RoundReport::CSV_COLUMNS)?;
    }
    for r in reports {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_outputs(dir: &Path, outcome: &RunOutcome) -> Result<RunFiles> {
    fs::create_dir_all(dir)?;
    let files = RunFiles {
        rounds_csv: dir.join("rounds.csv"),
        summary_json: dir.join("summary.json"),
    };
    write_rounds_csv(
        fs::File::create(&files.rounds_csv)?,
        &outcome.summary.config_hash,
        &outcome.reports,
    )?;
    let mut json = serde_json::to_string_pretty(&outcome.summary)?;
    json.push('\n');
    fs::write(&files.summary_json, json)?;
    Ok(files)
}

/// Runs the experiment and writes its outputs into `dir`.
pub fn run_experiment(config: &RunConfig, dir: &Path) -> Result<(RunOutcome, RunFiles)> {
    let outcome = execute(config)?;
    let files = write_outputs(dir, &outcome)?;
    Ok((outcome, files))
}
