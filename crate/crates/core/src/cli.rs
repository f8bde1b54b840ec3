//! Command implementations behind the `hardness` binary.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use thiserror::Error;

use crate::active_loop::{run_experiment, write_aggregate_csv, ExperimentPlan};
use crate::config::{ConfigError, ExperimentConfig};
use crate::eval::{dropout_sweep, write_sweep_csv};
use crate::pipeline::FeatureBank;
use crate::report::{write_report, AGGREGATE_FILE};
use crate::seed::{self, stream};
use crate::sensor_sim::io::{sample_file_name, write_manifest, write_video, ManifestEntry};
use crate::sensor_sim::plan_dataset;
use crate::uncertainty::Strategy;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;
pub const SWEEP_FILE: &str = "sweep.csv";
pub const RUNS_DIR: &str = "runs";
pub const CONFIG_ECHO: &str = "config.txt";

#[derive(Debug, Parser)]
#[command(name = "hardness", version, about = "Active tactile hardness classification experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a press dataset and write it with a manifest.
    Generate(CommonArgs),
    /// Run active sampling for every strategy and write per-run and aggregate CSVs.
    Run(RunArgs),
    /// Train baselines across dropout rates and write sweep.csv.
    SweepDropout(CommonArgs),
    /// Summarise a results directory and plot its curves.
    Report {
        /// Results directory (holds aggregate.csv).
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Experiment config (`key = value` lines); defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides `output.dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides `seed`.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Run only this strategy (entropy, variance or random).
    #[arg(long)]
    pub strategy: Option<String>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0:#}")]
    Runtime(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

/// Loads the config and applies command-line overrides.
pub fn resolve(args: &CommonArgs) -> Result<(ExperimentConfig, PathBuf), ConfigError> {
    let mut config = match &args.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let out = args.out.clone().or_else(|| config.output_dir.clone()).unwrap_or_else(|| PathBuf::from("results"));
    Ok((config, out))
}

pub fn execute(cli: Cli) -> Result<String, CliError> {
    match cli.command {
        Command::Generate(args) => {
            let (config, out) = resolve(&args)?;
            let n = cmd_generate(&config, &out)?;
            Ok(format!("wrote {n} samples and {} to {}", crate::sensor_sim::io::MANIFEST, out.display()))
        }
        Command::Run(args) => {
            let (mut config, out) = resolve(&args.common)?;
            if let Some(name) = &args.strategy {
                let s: Strategy = name.parse().map_err(|e: crate::uncertainty::SelectionError| ConfigError::Parse {
                    key: "--strategy".into(),
                    value: name.clone(),
                    reason: e.to_string(),
                })?;
                config.strategies = vec![s];
            }
            let files = cmd_run(&config, &out)?;
            Ok(format!("wrote {} run files and {} to {}", files, AGGREGATE_FILE, out.display()))
        }
        Command::SweepDropout(args) => {
            let (config, out) = resolve(&args)?;
            cmd_sweep(&config, &out)?;
            Ok(format!("wrote {}", out.join(SWEEP_FILE).display()))
        }
        Command::Report { out } => {
            let (summary, _) = write_report(&out).map_err(anyhow::Error::from)?;
            Ok(summary)
        }
    }
}

/// Simulates the dataset and writes one file per press plus the manifest.
pub fn cmd_generate(config: &ExperimentConfig, out: &Path) -> anyhow::Result<usize> {
    let classes = config.class_set()?;
    let specs = plan_dataset(&classes, config.per_class, &config.ranges, config.seed)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let write_one = |(i, spec): (usize, &crate::sensor_sim::SampleSpec)| -> anyhow::Result<ManifestEntry> {
        let video = spec.simulate(&config.sensor)?;
        let name = sample_file_name(i);
        write_video(&out.join(&name), &video)?;
        Ok(ManifestEntry { path: name, label: spec.class.id, f_push: spec.params.f_push, v_push: spec.params.v_push, seed: spec.seed })
    };
    let entries: Vec<ManifestEntry> = if config.parallel {
        specs.par_iter().enumerate().map(write_one).collect::<anyhow::Result<_>>()?
    } else {
        specs.iter().enumerate().map(write_one).collect::<anyhow::Result<_>>()?
    };
    write_manifest(out, &entries)?;
    Ok(entries.len())
}

/// Feature bank from `data.dir` if set, otherwise simulated from the config.
pub fn load_bank(config: &ExperimentConfig) -> anyhow::Result<FeatureBank> {
    let classes = config.class_set()?;
    let bank = match &config.data_dir {
        Some(dir) => FeatureBank::from_dataset_dir(dir, &classes, &config.pipeline, config.parallel)
            .with_context(|| format!("reading dataset {}", dir.display()))?,
        None => FeatureBank::generate(
            &config.sensor,
            &config.pipeline,
            &classes,
            config.per_class,
            &config.ranges,
            config.seed,
            config.parallel,
        )?,
    };
    Ok(bank)
}

fn create_file(path: &Path) -> anyhow::Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

/// Runs the experiment and writes `runs/{strategy}_run{r}.csv` and
/// `aggregate.csv`. Returns the number of run files.
pub fn cmd_run(config: &ExperimentConfig, out: &Path) -> anyhow::Result<usize> {
    let bank = load_bank(config)?;
    let plan = ExperimentPlan {
        strategies: config.strategies.clone(),
        runs: config.runs,
        seed: seed::derive(config.seed, stream::RUN, 0),
        test_pool: config.test_pool,
        parallel: config.parallel,
    };
    let exp = run_experiment(&bank, &config.schedule, &config.learner, &plan)?;
    let runs_dir = out.join(RUNS_DIR);
    fs::create_dir_all(&runs_dir).with_context(|| format!("creating {}", runs_dir.display()))?;
    fs::write(out.join(CONFIG_ECHO), config.to_text())?;
    for rec in &exp.records {
        let mut w = create_file(&runs_dir.join(format!("{}_run{:03}.csv", rec.strategy, rec.run_id)))?;
        rec.write_csv(&mut w)?;
        w.flush()?;
    }
    let mut w = create_file(&out.join(AGGREGATE_FILE))?;
    write_aggregate_csv(&mut w, &exp.aggregate)?;
    w.flush()?;
    Ok(exp.records.len())
}

pub fn cmd_sweep(config: &ExperimentConfig, out: &Path) -> anyhow::Result<()> {
    let bank = load_bank(config)?;
    let rows = dropout_sweep(
        &bank,
        &config.sweep_rates,
        &config.schedule,
        &config.learner,
        config.sweep_runs,
        seed::derive(config.seed, stream::RUN, 1),
        config.parallel,
    )?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut w = create_file(&out.join(SWEEP_FILE))?;
    write_sweep_csv(&mut w, &rows)?;
    w.flush()?;
    Ok(())
}
