use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use safa_sim::runner::{
    load_config, run_bias_analysis, run_experiment, run_sweep, write_bias_csv, BiasAnalysisConfig,
    Override, RunConfig, SweepSpec, Task,
};
use safa_sim::{Result, SimError};

#[derive(Parser)]
#[command(
    name = "safa-sim",
    version,
    about = "Semi-asynchronous federated learning simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// TOML config file; missing keys come from the task preset.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set federation.selection_fraction=0.5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn overrides(&self) -> Result<Vec<Override>> {
        self.overrides.iter().map(|s| s.parse()).collect()
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write rounds.csv and summary.json.
    Run {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output directory (beats the config and the environment).
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Run a grid of experiments described by a `[sweep]` table.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Cells to run concurrently.
        #[arg(short, long, default_value_t = 1)]
        jobs: usize,
        /// Re-run a single cell by index.
        #[arg(long)]
        cell: Option<usize>,
    },
    /// Compare analytic and Monte-Carlo selection bias.
    Bias {
        /// TOML file with `trials`, `seed` and `[[sets]]`.
        #[arg(short, long)]
        config: Option<PathBuf>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// CSV destination; stdout when omitted.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Print the full default config of a task.
    ShowDefaults {
        #[arg(long, default_value = "regression")]
        task: String,
    },
    /// Check a config and print its hash.
    ValidateConfig {
        #[command(flatten)]
        config: ConfigArgs,
    },
}

fn output_dir(flag: Option<PathBuf>, config: &RunConfig) -> PathBuf {
    flag.unwrap_or_else(|| config.resolved_output_dir())
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| SimError::Config(format!("{}: {e}", path.display())))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, output } => {
            let cfg = load_config(config.config.as_deref(), &config.overrides()?)?;
            let dir = output_dir(output, &cfg);
            let (outcome, files) = run_experiment(&cfg, &dir)?;
            println!("{}", serde_json::to_string_pretty(&outcome.summary)?);
            eprintln!(
                "wrote {} and {}",
                files.rounds_csv.display(),
                files.summary_json.display()
            );
        }
        Command::Sweep {
            config,
            output,
            jobs,
            cell,
        } => {
            let text = match &config.config {
                Some(p) => read(p)?,
                None => String::new(),
            };
            let spec = SweepSpec::from_toml(&text, &config.overrides()?)?;
            let dir = output_dir(output, &spec.base);
            let (rows, index) = run_sweep(&spec, &dir, jobs, cell)?;
            let failed = rows.iter().filter(|r| r.status != "ok").count();
            eprintln!(
                "{} cells, {failed} failed; index at {}",
                rows.len(),
                index.display()
            );
            if failed > 0 {
                return Err(SimError::InvalidArgument(format!(
                    "{failed} sweep cells failed"
                )));
            }
        }
        Command::Bias {
            config,
            trials,
            seed,
            output,
        } => {
            let mut cfg = match config {
                Some(p) => BiasAnalysisConfig::from_toml(&read(&p)?)?,
                None => BiasAnalysisConfig::default(),
            };
            if let Some(t) = trials {
                if t == 0 {
                    return Err(SimError::Config("--trials must be at least 1".into()));
                }
                cfg.trials = t;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let rows = run_bias_analysis(&cfg)?;
            match output {
                Some(p) => write_bias_csv(std::fs::File::create(p)?, &rows)?,
                None => write_bias_csv(std::io::stdout().lock(), &rows)?,
            }
        }
        Command::ShowDefaults { task } => {
            let task: Task = task.parse().map_err(SimError::Config)?;
            print!("{}", RunConfig::preset(task).to_toml());
        }
        Command::ValidateConfig { config } => {
            let cfg = load_config(config.config.as_deref(), &config.overrides()?)?;
            println!("ok {}", cfg.hash());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
