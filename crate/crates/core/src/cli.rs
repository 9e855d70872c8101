//! Command-line front end. Precedence for every setting is
//! flag > environment variable > config file.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::arch::{embedding_width, parse_descriptor, parse_pair};
use crate::data::{generate_synthetic, parse_ts, serialize_ts, DatasetBundle, Difficulty, SyntheticSpec, TsData};
use crate::orchestrator::{
    is_initialized, make_controller, report, ControllerConfig, Executor, Overrides, RunConfig, RunError, RunOptions,
    CONFIG_FILE, ENV_BUDGET, ENV_ENDPOINT, ENV_SEED, ENV_WORKERS, LEDGER_FILE,
};
use crate::protocol::{scan, LedgerEvent, ReportRow, RunStatus};

pub const ENV_RUN_DIR: &str = "EXPERT_NAS_RUN_DIR";

/// Exit status for bad input (flags, config, descriptors, lock contention).
pub const EXIT_USAGE: i32 = 1;
/// Exit status for a run that could not finish.
pub const EXIT_FAILED: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "expert-nas",
    version,
    about = "Architecture search over one-vs-rest time-series experts"
)]
pub struct Cli {
    /// Run directory; falls back to `run_dir` in the config file.
    #[arg(long, global = true, env = ENV_RUN_DIR)]
    pub run_dir: Option<PathBuf>,
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true, env = ENV_SEED)]
    pub seed: Option<u64>,
    /// Parallel expert trainings; does not change results.
    #[arg(long, global = true, env = ENV_WORKERS)]
    pub workers: Option<usize>,
    /// Number of search cycles.
    #[arg(long, global = true, env = ENV_BUDGET)]
    pub budget: Option<u64>,
    /// Remote controller endpoint (`fixture:<path>`, `command:<program args>` or `fail`).
    #[arg(long, global = true, env = ENV_ENDPOINT)]
    pub endpoint: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Create a run directory from a config file.
    Init,
    /// Initialize if needed, then search until the budget is spent.
    Run,
    /// Continue an initialized run; a no-op on a finished one.
    Resume,
    /// Print report data derived from the ledger.
    Report {
        #[arg(long, value_enum, default_value_t = ReportKind::Table)]
        kind: ReportKind,
        /// Write to this file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Validation-split metrics of the configurations trained so far.
    Eval,
    /// Check an architecture descriptor and print its hash.
    ValidateDescriptor {
        /// `model.json`, or a combined descriptor when no preprocessing file is given.
        model: PathBuf,
        preprocessing: Option<PathBuf>,
        /// Also check that it compiles for `[series_len, dims]` input.
        #[arg(long, num_args = 2, value_names = ["SERIES_LEN", "DIMS"])]
        input_shape: Option<Vec<usize>>,
    },
    /// Generate a synthetic band-power dataset.
    GenSynthetic {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = DifficultyArg::Separable)]
        difficulty: DifficultyArg,
        #[arg(long, default_value_t = 500)]
        samples: usize,
        #[arg(long, default_value_t = 2)]
        modalities: usize,
        #[arg(long, default_value_t = 3)]
        classes: usize,
        #[arg(long, default_value_t = 64)]
        length: usize,
        /// Variates per modality.
        #[arg(long, default_value_t = 2)]
        dims: usize,
        #[arg(long, value_enum, default_value_t = DataFormat::Bundle)]
        format: DataFormat,
    },
    /// Parse a `.ts` file and print its shape, optionally converting it.
    ParseTs {
        file: PathBuf,
        /// Write the parsed data as a dataset bundle.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ReportKind {
    Table,
    Trajectories,
    Json,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DifficultyArg {
    Separable,
    Hard,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DataFormat {
    Bundle,
    Ts,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Run(#[from] RunError),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Run(e) if e.is_usage() => EXIT_USAGE,
            _ => EXIT_FAILED,
        }
    }
}

fn usage(msg: impl std::fmt::Display) -> CliError {
    CliError::Usage(msg.to_string())
}

impl Cli {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            workers: self.workers,
            budget: self.budget,
            endpoint: self.endpoint.clone(),
        }
    }

    fn load_config(&self) -> Result<Option<RunConfig>, CliError> {
        let Some(path) = &self.config else { return Ok(None) };
        let mut c = RunConfig::load(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        c.apply(&self.overrides());
        Ok(Some(c))
    }

    fn run_dir(&self, config: Option<&RunConfig>) -> Result<PathBuf, CliError> {
        self.run_dir
            .clone()
            .or_else(|| config.and_then(|c| c.run_dir.clone()))
            .ok_or_else(|| {
                usage(format!(
                    "no run directory: pass --run-dir, set {ENV_RUN_DIR} or set run_dir in the config"
                ))
            })
    }

    /// Executor options for an existing run. Only execution settings may
    /// differ from the pinned config; anything else is a mismatch.
    fn options(&self, dir: &Path, config: Option<&RunConfig>) -> Result<RunOptions, CliError> {
        let mut pinned =
            RunConfig::load(&dir.join(CONFIG_FILE)).map_err(|e| usage(format!("{}: {e}", dir.display())))?;
        let mut wanted = match config {
            Some(c) => c.clone(),
            None => {
                let mut c = pinned.clone();
                c.apply(&Overrides {
                    endpoint: None,
                    ..self.overrides()
                });
                c
            }
        };
        // The endpoint may move between sessions without invalidating the run.
        if let (ControllerConfig::Remote(w), ControllerConfig::Remote(p)) = (&mut wanted.controller, &pinned.controller)
        {
            w.endpoint = p.endpoint.clone();
        }
        if wanted.hash() != pinned.hash() {
            return Err(RunError::ConfigMismatch {
                found: wanted.hash(),
                pinned: pinned.hash(),
            }
            .into());
        }
        let controller = match (&self.endpoint, &mut pinned.controller) {
            (Some(e), ControllerConfig::Remote(rc)) => {
                rc.endpoint = e.clone();
                Some(make_controller(&pinned))
            }
            _ => None,
        };
        Ok(RunOptions {
            workers: self.workers,
            controller,
            ..RunOptions::default()
        })
    }
}

/// Runs one command, writing its normal output to `out`. Returns the exit
/// status on success.
pub fn execute(cli: &Cli, out: &mut dyn std::io::Write) -> Result<i32, CliError> {
    let io = |e: std::io::Error| CliError::Failed(e.to_string());
    match &cli.command {
        Command::Init => {
            let config = cli.load_config()?.ok_or_else(|| usage("init needs --config"))?;
            let dir = cli.run_dir(Some(&config))?;
            crate::orchestrator::init_run(&dir, &config, &Default::default())?;
            writeln!(out, "initialized {}", dir.display()).map_err(io)?;
            Ok(0)
        }
        Command::Run => {
            let config = cli.load_config()?;
            let dir = cli.run_dir(config.as_ref())?;
            if !is_initialized(&dir) {
                let c = config.as_ref().ok_or_else(|| {
                    usage(format!(
                        "{} is not initialized and no --config was given",
                        dir.display()
                    ))
                })?;
                crate::orchestrator::init_run(&dir, c, &Default::default())?;
            }
            let opts = cli.options(&dir, config.as_ref())?;
            finish(Executor::open(&dir, opts)?.run()?, out)
        }
        Command::Resume => {
            let config = cli.load_config()?;
            let dir = cli.run_dir(config.as_ref())?;
            if !is_initialized(&dir) {
                return Err(RunError::NotInitialized(dir).into());
            }
            let opts = cli.options(&dir, config.as_ref())?;
            finish(Executor::open(&dir, opts)?.run()?, out)
        }
        Command::Report { kind, out: file } => {
            let dir = cli.run_dir(cli.load_config()?.as_ref())?;
            let text = report_text(&dir, *kind)?;
            match file {
                Some(p) => std::fs::write(p, text).map_err(io)?,
                None => out.write_all(text.as_bytes()).map_err(io)?,
            }
            Ok(0)
        }
        Command::Eval => {
            let config = cli.load_config()?;
            let dir = cli.run_dir(config.as_ref())?;
            let opts = cli.options(&dir, config.as_ref())?;
            let rows = Executor::open(&dir, opts)?.evaluate_validation()?;
            out.write_all(rows_csv(&rows).as_bytes()).map_err(io)?;
            Ok(0)
        }
        Command::ValidateDescriptor {
            model,
            preprocessing,
            input_shape,
        } => {
            let read = |p: &Path| std::fs::read(p).map_err(|e| usage(format!("{}: {}", p.display(), e.kind())));
            let parsed = match preprocessing {
                Some(pp) => parse_pair(&read(model)?, &read(pp)?),
                None => parse_descriptor(&read(model)?),
            };
            let desc = parsed.map_err(|r| usage(format!("descriptor rejected: {r}")))?;
            if let Some(shape) = input_shape {
                let width = embedding_width(&desc, [shape[0], shape[1]])
                    .map_err(|e| usage(format!("does not compile: {e}")))?;
                writeln!(out, "embedding width {width}").map_err(io)?;
            }
            writeln!(out, "{}", desc.canonical_hash().as_str()).map_err(io)?;
            Ok(0)
        }
        Command::GenSynthetic {
            out: path,
            difficulty,
            samples,
            modalities,
            classes,
            length,
            dims,
            format,
        } => {
            let spec = SyntheticSpec {
                seed: cli.seed.unwrap_or(0),
                samples: *samples,
                modalities: *modalities,
                classes: *classes,
                series_len: *length,
                dims_per_modality: *dims,
                difficulty: match difficulty {
                    DifficultyArg::Separable => Difficulty::Separable,
                    DifficultyArg::Hard => Difficulty::Hard,
                },
            };
            let bundle = generate_synthetic(&spec).map_err(usage)?;
            let text = match format {
                DataFormat::Bundle => bundle.to_json(),
                DataFormat::Ts => serialize_ts(&TsData::from_bundle(&bundle)),
            };
            std::fs::write(path, text).map_err(io)?;
            writeln!(
                out,
                "{} samples, {} classes -> {}",
                bundle.len(),
                bundle.n_classes(),
                path.display()
            )
            .map_err(io)?;
            Ok(0)
        }
        Command::ParseTs { file, out: dest } => {
            let bytes = std::fs::read(file).map_err(|e| usage(format!("{}: {}", file.display(), e.kind())))?;
            let ts = parse_ts(&bytes).map_err(|e| usage(format!("{}: {e}", file.display())))?;
            writeln!(
                out,
                "{}: {} samples, {} dimensions, length {}, labels [{}]",
                ts.problem_name,
                ts.series.len(),
                ts.dimensions,
                ts.series_len,
                ts.label_names.join(", ")
            )
            .map_err(io)?;
            if let Some(dest) = dest {
                let bundle = DatasetBundle::from_ts(&ts, &bytes).map_err(usage)?;
                std::fs::write(dest, bundle.to_json()).map_err(io)?;
            }
            Ok(0)
        }
    }
}

fn finish(status: RunStatus, out: &mut dyn std::io::Write) -> Result<i32, CliError> {
    writeln!(out, "status {}", status.as_str()).map_err(|e| CliError::Failed(e.to_string()))?;
    Ok(status.exit_code())
}

fn rows_csv(rows: &[ReportRow]) -> String {
    let mut s = String::from("configuration,accuracy,macro_f1\n");
    for r in rows {
        s.push_str(&format!("{},{},{}\n", r.configuration.as_str(), r.accuracy, r.macro_f1));
    }
    s
}

/// Reads the ledger without repairing it, so reports never touch the run
/// directory.
pub fn report_text(dir: &Path, kind: ReportKind) -> Result<String, CliError> {
    let path = dir.join(LEDGER_FILE);
    let bytes = std::fs::read(&path).map_err(|e| usage(format!("{}: {}", path.display(), e.kind())))?;
    let records = scan(&bytes).map_err(|e| CliError::Failed(e.to_string()))?.records;
    if !records
        .iter()
        .any(|r| matches!(r.event, LedgerEvent::RunStarted { .. }))
    {
        return Err(usage(report::ReportError::EmptyLedger));
    }
    match kind {
        ReportKind::Table => report::table_csv(&records).map_err(usage),
        ReportKind::Trajectories => Ok(report::trajectories_csv(&records)),
        ReportKind::Json => report::report_json(&records).map_err(usage),
    }
}
