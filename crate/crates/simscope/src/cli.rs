//! The `simscope` command line.

use std::collections::HashSet;
use std::path::PathBuf;

use clap::{Args, CommandFactory, Parser, Subcommand};
use simscope_core::collapse::Thresholds;
use simscope_core::vae::ObjectiveKind;
use simscope_core::Metric;

use crate::compare::{run_experiment_matrix, ExperimentPlan, Mode};
use crate::config::ConfigFile;
use crate::emit::{self, OutputFormat};
use crate::format::DType;
use crate::run::{diagnose_runs, train_run, RunConfig, RunDir};
use crate::synth::{synthetic_benchmark, SynthConfig, DEFAULT_N_SWEEP, DEFAULT_P};
use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "simscope", version, about = "Representational similarity of VAE layers")]
pub struct Cli {
    /// `key = value` file supplying any flag; flags on the command line win.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// CKA and Procrustes on matrices sharing 100/80/50/0% of their columns.
    SynthBench(SynthArgs),
    /// Train one VAE on the toy dataset and dump its activations.
    Train(TrainArgs),
    /// Layer-by-layer similarity grid between runs, averaged over pairs.
    Compare(CompareArgs),
    /// Posterior-collapse diagnosis of a run against a baseline run.
    Diagnose(DiagnoseArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = DEFAULT_P)]
    pub p: usize,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_N_SWEEP)]
    pub n_sweep: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// csv or json; inferred from the extension of --out by default.
    #[arg(long, value_parser = parse_format)]
    pub format: Option<OutputFormat>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// beta_vae, annealed_vae, beta_tc_vae or dip_vae_ii.
    #[arg(long, value_parser = parse_objective)]
    pub objective: ObjectiveKind,
    /// β, capacity C_max or λ, depending on the objective.
    #[arg(long)]
    pub reg: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub steps: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub latent_dim: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    /// Steps over which the annealed VAE's capacity ramps up.
    #[arg(long)]
    pub iteration_threshold: Option<u64>,
    /// Capacity weight of the annealed VAE.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Seed of the train/test split and the evaluation sample.
    #[arg(long, default_value_t = 0)]
    pub data_seed: u64,
    /// Evaluation batch size; all training rows up to 5000 by default.
    #[arg(long)]
    pub eval_examples: Option<usize>,
    /// f64 or f32 dumps.
    #[arg(long, default_value = "f64", value_parser = parse_dtype)]
    pub dtype: DType,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// epochs, regularisation or objectives.
    #[arg(long, value_parser = parse_mode)]
    pub mode: Mode,
    /// cka, procrustes or conservative.
    #[arg(long, default_value = "conservative", value_parser = parse_metric)]
    pub metric: Metric,
    /// Run directory; repeat once per seed.
    #[arg(long, required = true)]
    pub left: Vec<PathBuf>,
    /// Run directory paired by position with --left.
    #[arg(long)]
    pub right: Vec<PathBuf>,
    #[arg(long)]
    pub left_step: Option<u64>,
    #[arg(long)]
    pub right_step: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_parser = parse_format)]
    pub format: Option<OutputFormat>,
    /// Worker threads; 1 runs sequentially.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub baseline: PathBuf,
    /// Written as JSON.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = Thresholds::default().passive_kl)]
    pub passive_kl: f64,
    #[arg(long, default_value_t = Thresholds::default().mean_sampled)]
    pub mean_sampled: f64,
    #[arg(long, default_value_t = Thresholds::default().recon_factor)]
    pub recon_factor: f64,
}

fn parse_objective(s: &str) -> std::result::Result<ObjectiveKind, String> {
    s.parse().map_err(|e: simscope_core::Error| e.to_string())
}

fn parse_metric(s: &str) -> std::result::Result<Metric, String> {
    s.parse().map_err(|e: simscope_core::Error| e.to_string())
}

fn parse_mode(s: &str) -> std::result::Result<Mode, String> {
    match s.parse::<Mode>() {
        Ok(Mode::Synth) => Err("synth is run with the synth-bench command".into()),
        other => other.map_err(|e| e.to_string()),
    }
}

fn parse_format(s: &str) -> std::result::Result<OutputFormat, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_dtype(s: &str) -> std::result::Result<DType, String> {
    match s {
        "f64" => Ok(DType::F64),
        "f32" => Ok(DType::F32),
        other => Err(format!("unknown dtype `{other}`")),
    }
}

const LIST_KEYS: [&str; 2] = ["left", "right"];

fn config_path(args: &[String]) -> Option<String> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            return it.next().cloned();
        }
        if let Some(v) = a.strip_prefix("--config=") {
            return Some(v.to_string());
        }
    }
    None
}

fn long_names(cmd: &clap::Command) -> HashSet<String> {
    cmd.get_arguments().filter_map(|a| a.get_long().map(str::to_string)).collect()
}

/// Appends config-file settings for flags absent from `args`.
fn merge_config(mut args: Vec<String>) -> Result<Vec<String>> {
    let Some(path) = config_path(&args) else { return Ok(args) };
    let file = ConfigFile::load(path.as_ref())?;
    let root = Cli::command();
    let sub_name = args.iter().skip(1).find(|a| root.find_subcommand(a.as_str()).is_some()).cloned();
    let Some(sub_name) = sub_name else { return Ok(args) };
    let sub = root.find_subcommand(&sub_name).expect("subcommand exists");
    let own = long_names(sub);
    let known: HashSet<String> = root.get_subcommands().flat_map(long_names).chain(["config".to_string()]).collect();
    for (key, value) in &file.entries {
        if !known.contains(key) {
            return Err(Error::Format { path: path.clone().into(), message: format!("unknown setting `{key}`") });
        }
        if !own.contains(key) || key == "config" {
            continue;
        }
        let flag = format!("--{key}");
        if args.iter().any(|a| *a == flag || a.starts_with(&format!("{flag}="))) {
            continue;
        }
        if LIST_KEYS.contains(&key.as_str()) {
            for v in value.split(',').map(str::trim).filter(|v| !v.is_empty()) {
                args.extend([flag.clone(), v.to_string()]);
            }
        } else {
            args.extend([flag, value.clone()]);
        }
    }
    Ok(args)
}

fn output_format(explicit: Option<OutputFormat>, out: &std::path::Path) -> OutputFormat {
    explicit.unwrap_or_else(|| OutputFormat::from_path(out))
}

pub fn execute(command: Command) -> Result<String> {
    match command {
        Command::SynthBench(a) => {
            let table = synthetic_benchmark(&SynthConfig { p: a.p, n_sweep: a.n_sweep, seed: a.seed })?;
            let body = match output_format(a.format, &a.out) {
                OutputFormat::Csv => emit::synth_csv(&table),
                OutputFormat::Json => emit::json(&table),
            };
            emit::write(&a.out, &body)?;
            Ok(format!("wrote {} scores to {}", table.scores.len(), a.out.display()))
        }
        Command::Train(a) => {
            let cfg = RunConfig {
                latent_dim: a.latent_dim,
                learning_rate: a.lr,
                batch_size: a.batch_size,
                iteration_threshold: a.iteration_threshold,
                gamma: a.gamma,
                data_seed: a.data_seed,
                eval_examples: a.eval_examples,
                dtype: a.dtype,
                ..RunConfig::new(a.objective, a.reg, a.seed, a.steps)
            };
            let m = train_run(&cfg, &a.out)?;
            Ok(format!("wrote {} snapshots of {} to {}", m.snapshots.len(), m.label(), a.out.display()))
        }
        Command::Compare(a) => {
            let plan = ExperimentPlan {
                mode: a.mode,
                metric: a.metric,
                left: a.left,
                right: a.right,
                left_step: a.left_step,
                right_step: a.right_step,
                threads: a.threads,
            };
            let result = run_experiment_matrix(&plan)?;
            let body = match output_format(a.format, &a.out) {
                OutputFormat::Csv => emit::grid_csv(&result.grid),
                OutputFormat::Json => emit::json(&result),
            };
            emit::write(&a.out, &body)?;
            let (r, c) = result.grid.shape();
            Ok(format!("wrote {r}x{c} {} grid over {} pair(s) to {}", result.grid.metric, result.pairs.len(), a.out.display()))
        }
        Command::Diagnose(a) => {
            let thresholds =
                Thresholds { passive_kl: a.passive_kl, mean_sampled: a.mean_sampled, recon_factor: a.recon_factor };
            let report = diagnose_runs(&RunDir::open(&a.run)?, &RunDir::open(&a.baseline)?, &thresholds)?;
            emit::write(&a.out, &emit::json(&report))?;
            Ok(format!("{:?}", report.diagnosis.verdict).to_uppercase())
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Failures print one JSON object to stderr.
pub fn main_with_args(args: Vec<String>) -> i32 {
    let args = match merge_config(args) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("{}", e.to_json_line());
            return 1;
        }
    };
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            print!("{e}");
            return 0;
        }
        Err(e) => {
            let line = serde_json::json!({ "error": "usage", "message": e.kind().to_string(), "detail": e.to_string() });
            eprintln!("{line}");
            return 2;
        }
    };
    match execute(cli.command) {
        Ok(summary) => {
            println!("{summary}");
            0
        }
        Err(e) => {
            eprintln!("{}", e.to_json_line());
            1
        }
    }
}
