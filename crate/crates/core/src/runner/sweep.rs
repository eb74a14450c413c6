use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::{Table, Value};

use super::config::{load_from_str, Override, RunConfig};
use super::experiment::run_experiment;
use crate::error::{Result, SimError};
use crate::protocol::Protocol;

/// Lists of values to sweep; an empty list keeps the base value.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepAxes {
    pub protocol: Vec<Protocol>,
    pub selection_fraction: Vec<f64>,
    pub crash_prob: Vec<f64>,
    pub lag_tolerance: Vec<u64>,
    pub seed: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub base: RunConfig,
    pub axes: SweepAxes,
}

/// One point of the grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepCell {
    pub index: usize,
    pub protocol: Protocol,
    pub selection_fraction: f64,
    pub crash_prob: f64,
    pub lag_tolerance: u64,
    pub seed: u64,
    /// Seed actually used by the run.
    pub derived_seed: u64,
}

impl SweepCell {
    pub fn dir_name(&self) -> String {
        format!("cell-{:04}", self.index)
    }

    pub fn config(&self, base: &RunConfig) -> RunConfig {
        let mut c = base.clone();
        c.protocol = self.protocol;
        c.federation.selection_fraction = self.selection_fraction;
        c.population.crash_prob = self.crash_prob;
        c.federation.lag_tolerance = self.lag_tolerance;
        c.seed = self.derived_seed;
        c
    }
}

/// Seed of a cell from the master seed and its coordinates. The protocol is
/// left out so every protocol sees the same data, population and crashes.
pub fn cell_seed(master: u64, selection_fraction: f64, crash_prob: f64, lag_tolerance: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(selection_fraction.to_bits().to_le_bytes());
    h.update(crash_prob.to_bits().to_le_bytes());
    h.update(lag_tolerance.to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

impl SweepSpec {
    /// Parses a config file with an optional `[sweep]` table of axes.
    pub fn from_toml(text: &str, overrides: &[Override]) -> Result<Self> {
        let mut table: Table = toml::from_str(text).map_err(|e| SimError::Config(e.to_string()))?;
        let axes = match table.remove("sweep") {
            None => SweepAxes::default(),
            Some(v @ Value::Table(_)) => v
                .try_into()
                .map_err(|e: toml::de::Error| SimError::Config(format!("sweep: {e}")))?,
            Some(_) => return Err(SimError::Config("sweep must be a table".into())),
        };
        let base = load_from_str(
            &toml::to_string(&table).expect("table serialises"),
            overrides,
        )?;
        let spec = SweepSpec { base, axes };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        for cell in self.cells() {
            cell.config(&self.base)
                .validate()
                .map_err(|e| SimError::Config(format!("sweep cell {}: {e}", cell.index)))?;
        }
        Ok(())
    }

    /// The grid in fixed order: protocol, C, cr, tau, seed (last varies fastest).
    pub fn cells(&self) -> Vec<SweepCell> {
        fn or<T: Clone>(axis: &[T], base: T) -> Vec<T> {
            if axis.is_empty() {
                vec![base]
            } else {
                axis.to_vec()
            }
        }
        let b = &self.base;
        let protocols = or(&self.axes.protocol, b.protocol);
        let cs = or(
            &self.axes.selection_fraction,
            b.federation.selection_fraction,
        );
        let crs = or(&self.axes.crash_prob, b.population.crash_prob);
        let taus = or(&self.axes.lag_tolerance, b.federation.lag_tolerance);
        let seeds = or(&self.axes.seed, b.seed);
        let mut cells = Vec::new();
        for &protocol in &protocols {
            for &c in &cs {
                for &cr in &crs {
                    for &tau in &taus {
                        for &seed in &seeds {
                            cells.push(SweepCell {
                                index: cells.len(),
                                protocol,
                                selection_fraction: c,
                                crash_prob: cr,
                                lag_tolerance: tau,
                                seed,
                                derived_seed: cell_seed(seed, c, cr, tau),
                            });
                        }
                    }
                }
            }
        }
        cells
    }
}

/// One line of the sweep index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexRow {
    pub cell: usize,
    pub protocol: Protocol,
    pub selection_fraction: f64,
    pub crash_prob: f64,
    pub lag_tolerance: u64,
    pub seed: u64,
    pub derived_seed: u64,
    pub status: String,
    pub error: String,
    pub rounds_csv: String,
    pub summary_json: String,
}

fn run_cell(spec: &SweepSpec, cell: &SweepCell, dir: &Path) -> IndexRow {
    let cell_dir = dir.join(cell.dir_name());
    let result = run_experiment(&cell.config(&spec.base), &cell_dir);
    let rel = |p: &Path| p.strip_prefix(dir).unwrap_or(p).display().to_string();
    let (status, error, rounds_csv, summary_json) = match result {
        Ok((_, files)) => (
            "ok".into(),
            String::new(),
            rel(&files.rounds_csv),
            rel(&files.summary_json),
        ),
        Err(e) => ("failed".into(), e.to_string(), String::new(), String::new()),
    };
    IndexRow {
        cell: cell.index,
        protocol: cell.protocol,
        selection_fraction: cell.selection_fraction,
        crash_prob: cell.crash_prob,
        lag_tolerance: cell.lag_tolerance,
        seed: cell.seed,
        derived_seed: cell.derived_seed,
        status,
        error,
        rounds_csv,
        summary_json,
    }
}

/// Runs the selected cells (all when `only` is `None`) on `parallelism`
/// threads and writes `index.csv` into `dir`, ordered by cell index. A failing
/// cell is recorded in the index and does not stop the others.
pub fn run_sweep(
    spec: &SweepSpec,
    dir: &Path,
    parallelism: usize,
    only: Option<usize>,
) -> Result<(Vec<IndexRow>, PathBuf)> {
    let cells: Vec<SweepCell> = spec
        .cells()
        .into_iter()
        .filter(|c| only.is_none_or(|i| c.index == i))
        .collect();
    if let Some(i) = only {
        if cells.is_empty() {
            return Err(SimError::Config(format!("sweep has no cell {i}")));
        }
    }
    fs::create_dir_all(dir)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| SimError::InvalidArgument(e.to_string()))?;
    let mut rows: Vec<IndexRow> =
        pool.install(|| cells.par_iter().map(|c| run_cell(spec, c, dir)).collect());
    rows.sort_by_key(|r| r.cell);
    let index = dir.join(if only.is_some() {
        "index-partial.csv"
    } else {
        "index.csv"
    });
    let mut w = csv::Writer::from_path(&index)?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok((rows, index))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runner::config::Task;

    #[test]
    fn grid_shape_and_order() {
        let spec = SweepSpec {
            base: RunConfig::preset(Task::SyntheticRegression),
            axes: SweepAxes {
                protocol: vec![Protocol::Safa, Protocol::Fedavg],
                selection_fraction: vec![0.1, 0.3, 0.5, 0.7, 1.0],
                crash_prob: vec![0.1, 0.3, 0.5, 0.7],
                ..SweepAxes::default()
            },
        };
        let cells = spec.cells();
        assert_eq!(cells.len(), 40);
        assert!(cells.iter().enumerate().all(|(i, c)| c.index == i));
        assert_eq!(cells[0].protocol, Protocol::Safa);
        assert_eq!(cells[20].protocol, Protocol::Fedavg);
        // Same coordinates under another protocol share the seed.
        assert_eq!(cells[3].derived_seed, cells[23].derived_seed);
        assert_ne!(cells[3].derived_seed, cells[4].derived_seed);
    }

    #[test]
    fn seed_is_stable() {
        assert_eq!(cell_seed(1, 0.3, 0.3, 5), cell_seed(1, 0.3, 0.3, 5));
        assert_ne!(cell_seed(1, 0.3, 0.3, 5), cell_seed(2, 0.3, 0.3, 5));
    }

    #[test]
    fn parses_axes() {
        let spec = SweepSpec::from_toml(
            "task = \"synthetic-regression\"\n[sweep]\nprotocol = [\"safa\", \"local\"]\nseed = [1, 2, 3]\n",
            &[],
        )
        .unwrap();
        assert_eq!(spec.cells().len(), 6);
        assert!(SweepSpec::from_toml("[sweep]\nbogus = [1]\n", &[]).is_err());
    }
}
