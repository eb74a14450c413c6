//! Configuration, experiment orchestration, sweeps and report emission.

mod bias;
mod config;
mod experiment;
mod sweep;

pub use bias::{run_bias_analysis, write_bias_csv, BiasAnalysisConfig, BiasRow, BiasSet};
pub use config::{
    load_config, load_from_str, DataConfig, FederationConfig, Override, RunConfig, Task,
    OUTPUT_DIR_ENV,
};
pub use experiment::{
    build_datasets, build_simulation, execute, run_experiment, summarize, write_outputs,
    write_rounds_csv, RunFiles, RunOutcome, Summary, CSV_SCHEMA,
};
pub use sweep::{cell_seed, run_sweep, IndexRow, SweepAxes, SweepCell, SweepSpec};
