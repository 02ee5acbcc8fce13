//! `adr-bench`: runs benchmark cells, inspects target datasets and
//! aggregates results.
//!
//! Configuration is a TOML file with the tables `[protocol]`, `[trainer]`,
//! `[methods.<name>]` and `[envs.<name>]`; `adr-bench default-config` prints
//! the shipped default with every key. The key-by-key schema is documented
//! on `adr_core::config`.
//!
//! A run directory `<out>/<run-id>` holds:
//!
//! ```text
//! manifest.json   run id, versions, timestamps, one entry per invocation
//! config.toml     resolved configuration; its hash is the run id
//! records.csv     one row per curve point (records.json: same rows)
//! timings.csv     wall time per cell and method
//! datasets/ policies/ traces/
//! ```
//!
//! `run` only adds cells: a (cell, method) pair that already has records is
//! skipped. Exit codes: 0 success, 1 configuration or input error, 2 some
//! cells failed.

pub mod manifest;

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use adr_core::config::{BenchmarkConfig, Method, DEFAULT_CONFIG};
use adr_core::envs::EnvKind;
use adr_core::harness::{self, CellKey, ExportFormat, Grid, RunDir};
use adr_core::trajectory::{CollectionStrategy, Dataset};
use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};

use crate::manifest::{Invocation, RunManifest, SNAPSHOT_FILE};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_PARTIAL: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "adr-bench", version, about = "Adaptive domain randomization benchmark")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run (a filtered part of) the benchmark grid.
    Run(RunArgs),
    /// Summarize a run directory: mean and sd over seeds per curve point.
    Aggregate {
        run_dir: PathBuf,
        #[arg(long, default_value = "csv")]
        format: String,
    },
    /// Inspect or check target datasets of a run directory or a single file.
    Dataset {
        #[command(subcommand)]
        action: DatasetAction,
    },
    /// Train on the ground truth and suggest reward thresholds.
    Calibrate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        env: Vec<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print the shipped default configuration.
    DefaultConfig,
}

#[derive(Debug, clap::Args)]
pub struct RunArgs {
    /// Configuration file; the shipped default when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub method: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    pub env: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    pub setting: Vec<String>,
    /// Seeds as listed in the configuration, before the offset.
    #[arg(long, value_delimiter = ',')]
    pub seed: Vec<u64>,
    /// Offline data collection strategy, overriding the configuration.
    #[arg(long)]
    pub strategy: Option<String>,
    #[arg(long, default_value = "results")]
    pub out: PathBuf,
    /// Cells run concurrently.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Added to every configured seed, for sharding seeds across machines.
    #[arg(long, env = "ADR_BENCH_SEED_OFFSET", default_value_t = 0)]
    pub seed_offset: u64,
}

#[derive(Debug, Subcommand)]
pub enum DatasetAction {
    /// Per-trajectory counts, strategies and noise levels.
    Show { path: PathBuf },
    /// Re-check lengths, finiteness and cumulative indexing.
    Validate {
        path: PathBuf,
        /// Longest allowed trajectory; defaults to the run's trajectory_len.
        #[arg(long)]
        max_len: Option<usize>,
    },
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_ERROR
        }
    }
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::Run(args) => cmd_run(&args),
        Command::Aggregate { run_dir, format } => {
            let format = ExportFormat::from_str(&format).map_err(|e| anyhow!(e))?;
            cmd_aggregate(&run_dir, format)
        }
        Command::Dataset { action } => cmd_dataset(&action),
        Command::Calibrate { config, env, seed } => cmd_calibrate(config.as_deref(), &env, seed),
        Command::DefaultConfig => {
            print!("{DEFAULT_CONFIG}");
            Ok(EXIT_OK)
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<BenchmarkConfig> {
    Ok(match path {
        Some(p) => BenchmarkConfig::load(p)?,
        None => BenchmarkConfig::default(),
    })
}

/// Parses names and keeps them only if the configuration lists them; an
/// empty filter selects everything configured.
fn select<T>(kind: &str, given: &[String], configured: &[T]) -> Result<Vec<T>>
where
    T: FromStr<Err = String> + PartialEq + Copy + std::fmt::Display,
{
    if given.is_empty() {
        return Ok(configured.to_vec());
    }
    let mut out = Vec::new();
    for name in given {
        let v = T::from_str(name.trim()).map_err(|e| anyhow!(e))?;
        if !configured.contains(&v) {
            let listed: Vec<String> = configured.iter().map(|c| c.to_string()).collect();
            bail!("{kind} `{v}` is not in the configuration; configured: {}", listed.join(", "));
        }
        if !out.contains(&v) {
            out.push(v);
        }
    }
    Ok(out)
}

/// Configuration with command-line overrides folded in, so that the
/// snapshot alone determines the run.
fn resolve(args: &RunArgs) -> Result<BenchmarkConfig> {
    let mut config = load_config(args.config.as_deref())?;
    if let Some(s) = &args.strategy {
        config.protocol.collection_strategy = CollectionStrategy::from_str(s).map_err(|e| anyhow!(e))?;
    }
    for s in &mut config.protocol.seeds {
        *s = s
            .checked_add(args.seed_offset)
            .ok_or_else(|| anyhow!("seed {s} + offset {} overflows", args.seed_offset))?;
    }
    config.validate()?;
    Ok(config)
}

fn grid_for(args: &RunArgs, config: &BenchmarkConfig) -> Result<Grid> {
    let p = &config.protocol;
    let base: Vec<u64> = p.seeds.iter().map(|s| s - args.seed_offset).collect();
    let seeds = if args.seed.is_empty() {
        p.seeds.clone()
    } else {
        let mut out = Vec::new();
        for s in &args.seed {
            if !base.contains(s) {
                let listed: Vec<String> = base.iter().map(u64::to_string).collect();
                bail!("seed {s} is not in the configuration; configured: {}", listed.join(", "));
            }
            if !out.contains(&(s + args.seed_offset)) {
                out.push(s + args.seed_offset);
            }
        }
        out
    };
    Ok(Grid {
        envs: select("environment", &args.env, &p.environments)?,
        settings: select("setting", &args.setting, &p.settings)?,
        seeds,
        methods: select("method", &args.method, &p.methods)?,
        strategy: p.collection_strategy,
    })
}

pub fn cmd_run(args: &RunArgs) -> Result<i32> {
    let config = resolve(args)?;
    let grid = grid_for(args, &config)?;
    let run_id = config.hash();
    let dir = RunDir::new(args.out.join(&run_id));
    dir.create()?;
    manifest::write_snapshot(&dir.root, &config.to_toml())?;
    let started = manifest::now();
    let mut manifest = match RunManifest::load(&dir.root)? {
        Some(m) => m,
        None => RunManifest::new(
            run_id.clone(),
            args.config.clone(),
            args.seed_offset,
            started.clone(),
        ),
    };

    let done: BTreeSet<(CellKey, Method)> = dir
        .load_records()?
        .into_iter()
        .map(|r| {
            let key = CellKey {
                env: r.env,
                setting: r.setting,
                seed: r.seed,
            };
            (key, r.method)
        })
        .collect();
    let mut cells = Vec::new();
    let mut skipped = 0;
    for key in grid.cells() {
        let todo: Vec<Method> = grid.methods().into_iter().filter(|m| !done.contains(&(key, *m))).collect();
        if todo.is_empty() {
            skipped += 1;
        } else {
            cells.push((key, todo));
        }
    }
    log::info!(
        "run {run_id}: {} cells to run, {skipped} already present, {} jobs",
        cells.len(),
        args.jobs
    );

    let outputs = harness::run_cells(&config, &cells, grid.strategy, args.jobs)?;
    let all = dir.append(&outputs)?;
    let new_records: usize = outputs.iter().map(|o| o.records.len()).sum();
    let failed: usize = outputs
        .iter()
        .flat_map(|o| &o.records)
        .filter(|r| !r.is_ok())
        .count();
    for o in outputs.iter().filter(|o| !o.is_complete()) {
        for r in o.records.iter().filter(|r| !r.is_ok()) {
            eprintln!("{} {}: {}", o.key.tag(), r.method, r.message);
        }
    }

    manifest.finished = manifest::now();
    manifest.invocations.push(Invocation {
        started,
        finished: manifest.finished.clone(),
        methods: grid.methods().iter().map(|m| m.to_string()).collect(),
        envs: grid.envs.iter().map(|e| e.to_string()).collect(),
        settings: grid.settings.iter().map(|s| s.to_string()).collect(),
        seeds: grid.seeds.clone(),
        jobs: args.jobs,
        cells_run: cells.len(),
        cells_skipped: skipped,
        failed_records: failed,
    });
    manifest.save(&dir.root)?;

    println!("{}", dir.root.display());
    println!(
        "{} cells run, {skipped} skipped, {new_records} new records ({failed} failed), {} total",
        cells.len(),
        all.len()
    );
    Ok(if failed > 0 { EXIT_PARTIAL } else { EXIT_OK })
}

fn snapshot(dir: &Path) -> Result<Option<BenchmarkConfig>> {
    let p = dir.join(SNAPSHOT_FILE);
    if p.exists() {
        Ok(Some(BenchmarkConfig::load(&p)?))
    } else {
        Ok(None)
    }
}

pub fn cmd_aggregate(run_dir: &Path, format: ExportFormat) -> Result<i32> {
    let dir = RunDir::new(run_dir);
    let path = dir.records_csv();
    if !path.exists() {
        bail!("no records in {}: {} does not exist", run_dir.display(), path.display());
    }
    let records = harness::read_records(&path)?;
    if records.is_empty() {
        bail!("no records in {}", path.display());
    }
    let expected = match snapshot(run_dir)? {
        Some(c) => c.protocol.seeds.len(),
        None => records.iter().map(|r| r.seed).collect::<BTreeSet<_>>().len(),
    };
    let rows = harness::aggregate(&records, expected);
    let out = run_dir.join(format!("summary.{}", format.extension()));
    harness::write_summary(&rows, &out, format)?;
    for r in &rows {
        println!(
            "{:<8} {:<9} {:<10} it{}  {:>7.3} ± {:<6.3} n={}{}",
            r.method.to_string(),
            r.env.to_string(),
            r.setting.to_string(),
            r.iteration,
            r.mean,
            r.sd,
            r.n_seeds,
            if r.partial { " (partial)" } else { "" }
        );
    }
    println!("{} rows written to {}", rows.len(), out.display());
    Ok(EXIT_OK)
}

fn dataset_files(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    if !path.is_dir() {
        bail!("{} does not exist", path.display());
    }
    let sub = path.join("datasets");
    let dir = if sub.is_dir() { sub } else { path.to_path_buf() };
    let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    files.sort();
    if files.is_empty() {
        bail!("no datasets (*.jsonl) in {}", dir.display());
    }
    Ok(files)
}

pub fn cmd_dataset(action: &DatasetAction) -> Result<i32> {
    match action {
        DatasetAction::Show { path } => {
            for file in dataset_files(path)? {
                let d = Dataset::load(&file)?;
                println!(
                    "{}: {} trajectories, {} transitions",
                    file.display(),
                    d.len(),
                    d.n_transitions()
                );
                for traj in &d.trajectories {
                    let m = &traj.meta;
                    println!(
                        "  iteration {:>2}  transitions {:>3}  strategy {:<13}  noise_variance {:.1e}  seed {}  return {:.2}{}",
                        m.iteration,
                        traj.len(),
                        m.strategy.map(|s| s.to_string()).unwrap_or_else(|| "-".into()),
                        m.noise_variance,
                        m.seed,
                        traj.total_reward(),
                        if traj.diverged { "  diverged" } else { "" }
                    );
                }
            }
            Ok(EXIT_OK)
        }
        DatasetAction::Validate { path, max_len } => {
            let max_len = match max_len {
                Some(n) => *n,
                None => {
                    let root = if path.is_dir() { Some(path.as_path()) } else { None };
                    match root.map(snapshot).transpose()?.flatten() {
                        Some(c) => c.protocol.trajectory_len,
                        None => BenchmarkConfig::default().protocol.trajectory_len,
                    }
                }
            };
            let mut bad = 0;
            for file in dataset_files(path)? {
                let d = match Dataset::load(&file) {
                    Ok(d) => d,
                    Err(e) => {
                        eprintln!("{e}");
                        bad += 1;
                        continue;
                    }
                };
                let issues = d.validate(max_len);
                for i in &issues {
                    match i.line {
                        Some(l) => eprintln!("{}:{l}: {}", file.display(), i.message),
                        None => eprintln!("{}: {}", file.display(), i.message),
                    }
                }
                if issues.is_empty() {
                    println!("{}: ok ({} trajectories)", file.display(), d.len());
                } else {
                    bad += 1;
                }
            }
            Ok(if bad > 0 { EXIT_ERROR } else { EXIT_OK })
        }
    }
}

pub fn cmd_calibrate(config: Option<&Path>, envs: &[String], seed: u64) -> Result<i32> {
    let config = load_config(config)?;
    let envs: Vec<EnvKind> = if envs.is_empty() {
        EnvKind::ALL.to_vec()
    } else {
        envs.iter()
            .map(|e| EnvKind::from_str(e.trim()).map_err(|e| anyhow!(e)))
            .collect::<Result<_>>()?
    };
    for env in envs {
        let c = harness::calibrate_threshold(&config, env, seed)?;
        println!(
            "# {env}: {} generations, converged {:.1}, zero action {:.1}",
            c.generations, c.converged_return, c.zero_action_return
        );
        println!("[envs.{env}]\nreward_threshold = {:.1}\n", c.threshold);
    }
    Ok(EXIT_OK)
}
