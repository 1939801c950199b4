//! `twg`: command-line driver for data validation, curriculum inspection,
//! rollouts, toy training, evaluation and reward replay.

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use twg_core::data::synthetic::SyntheticConfig;
use twg_core::data::{
    curriculum_batches, filter_label_coverage, filter_min_duration, load_samples, write_samples, CurriculumStage,
    DataError, DatasetStats, Sample,
};
use twg_core::harness::{
    emit_metrics, read_records, replay_rewards, rollout_corpus, run_eval, run_train_toy, write_records, EngineConfig,
    TrainStop,
};
use twg_core::policy::{Policy, RemotePolicy, ScriptedPolicy, ToyPolicy, ToyPolicyParams};

#[derive(Parser)]
#[command(name = "twg", version, about = "Think-with-grounding rollout engine")]
struct Cli {
    /// Engine configuration (TOML). Missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `seed` from the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides `workers` from the configuration.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a dataset file and print its statistics as JSON.
    ValidateData(ValidateArgs),
    /// Print the first batches of a curriculum stage as JSON lines.
    BuildCurriculum(CurriculumArgs),
    /// Write a synthetic needle-in-a-haystack corpus.
    Synth(SynthArgs),
    /// Roll out and score one group per sample and write the trajectory log.
    Rollout(RolloutArgs),
    /// Train the toy policy and write its parameters and a metrics table.
    TrainToy(TrainArgs),
    /// Evaluate a policy and print the report as JSON.
    Eval(EvalArgs),
    /// Recompute the rewards in a trajectory log and compare them field by field.
    ReplayRewards(ReplayArgs),
    /// Print the effective configuration as TOML.
    ShowConfig,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    data: PathBuf,
    /// Apply the duration and label-coverage filters from the configuration.
    #[arg(long)]
    filter: bool,
    /// Write the (filtered) samples here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum StageArg {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
}

#[derive(Args)]
struct CurriculumArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum)]
    stage: StageArg,
    #[arg(long, default_value_t = 1)]
    batches: usize,
    /// Overrides `grpo.batch_size`.
    #[arg(long)]
    batch_size: Option<usize>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 64)]
    n: usize,
    #[arg(long, default_value_t = 0.5)]
    labeled_fraction: f64,
    #[arg(long, default_value_t = 0.0)]
    coarse_legible_fraction: f64,
    #[arg(long, default_value_t = 0.0)]
    lookalike_prob: f64,
}

#[derive(Args)]
struct PolicyArgs {
    /// `toy`, `toy:PARAMS.json`, `scripted:SCRIPT.json`, or `remote`.
    #[arg(long, default_value = "toy")]
    policy: PolicySpec,
}

#[derive(Args)]
struct RolloutArgs {
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    policy: PolicyArgs,
    /// Trajectory log to write (JSON lines).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Overrides `train.steps`.
    #[arg(long)]
    steps: Option<usize>,
    /// Starting parameters (JSON); zeros when absent.
    #[arg(long)]
    init: Option<PathBuf>,
    #[arg(long)]
    out_params: PathBuf,
    #[arg(long)]
    metrics: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    policy: PolicyArgs,
    /// Also write the evaluated trajectories here.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct ReplayArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    log: PathBuf,
}

#[derive(Clone, Debug)]
enum PolicySpec {
    Toy(Option<PathBuf>),
    Scripted(PathBuf),
    Remote,
}

impl FromStr for PolicySpec {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once(':') {
            None if s == "toy" => Ok(PolicySpec::Toy(None)),
            None if s == "remote" => Ok(PolicySpec::Remote),
            Some(("toy", path)) => Ok(PolicySpec::Toy(Some(path.into()))),
            Some(("scripted", path)) => Ok(PolicySpec::Scripted(path.into())),
            _ => Err(format!("unknown policy {s:?}; expected toy, toy:FILE, scripted:FILE or remote")),
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn build_policy(spec: &PolicySpec, config: &EngineConfig) -> Result<Box<dyn Policy>> {
    Ok(match spec {
        PolicySpec::Toy(None) => Box::new(ToyPolicy::untrained(config.toy)?),
        PolicySpec::Toy(Some(path)) => Box::new(ToyPolicy::new(config.toy, read_json(path)?)?),
        PolicySpec::Scripted(path) => Box::new(read_json::<ScriptedPolicy>(path)?),
        PolicySpec::Remote => {
            let remote = config.remote.clone().apply_env().map_err(anyhow::Error::msg)?;
            Box::new(RemotePolicy::new(remote)?)
        }
    })
}

fn load_config(cli: &Cli) -> Result<EngineConfig> {
    let mut config = match &cli.config {
        Some(path) => EngineConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
        None => EngineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(workers) = cli.workers {
        config.workers = workers;
    }
    config.validate()?;
    Ok(config)
}

fn load(path: &Path) -> Result<Vec<Sample>> {
    match load_samples(path) {
        Ok(samples) => Ok(samples),
        Err(DataError::Invalid(diagnostics)) => {
            for d in &diagnostics {
                eprintln!("{}: {d}", path.display());
            }
            bail!("{} invalid record(s) in {}", diagnostics.len(), path.display())
        }
        Err(e) => Err(e).with_context(|| format!("loading {}", path.display())),
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        other => Ok(other?),
    }
}

fn validate_data(args: &ValidateArgs, config: &EngineConfig) -> Result<()> {
    let mut samples = load(&args.data)?;
    let total = samples.len();
    if args.filter {
        samples = filter_min_duration(samples, config.filters.min_duration_s)?;
        samples = filter_label_coverage(samples, config.filters.min_label_coverage)?;
        log::info!("{} of {total} samples pass the filters", samples.len());
    }
    if let Some(out) = &args.out {
        write_samples(out, &samples)?;
    }
    print_json(&DatasetStats::from_samples(&samples))
}

fn build_curriculum(args: &CurriculumArgs, config: &EngineConfig) -> Result<()> {
    let samples = load(&args.data)?;
    let stage = match args.stage {
        StageArg::One => config.curriculum.stage1(),
        StageArg::Two => CurriculumStage::stage2(),
    };
    let batch_size = args.batch_size.unwrap_or(config.grpo.batch_size);
    let stream = curriculum_batches(&stage, &samples, batch_size, config.seed)?;
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for batch in stream.take(args.batches) {
        let ids: Vec<&str> = batch.members.iter().map(|&i| samples[i].sample_id.as_str()).collect();
        let line = serde_json::json!({ "epoch": batch.epoch, "index": batch.index, "sample_ids": ids });
        writeln!(out, "{line}")?;
    }
    Ok(())
}

fn synth(args: &SynthArgs, config: &EngineConfig) -> Result<()> {
    let samples = SyntheticConfig {
        n_samples: args.n,
        seed: config.seed,
        labeled_fraction: args.labeled_fraction,
        coarse_legible_fraction: args.coarse_legible_fraction,
        lookalike_prob: args.lookalike_prob,
        coarse_frames: config.views.coarse_frames,
        windows: config.toy.windows,
        coarse_tokens: config.views.coarse_tokens,
        fine_tokens: config.views.fine_tokens,
        ..SyntheticConfig::default()
    }
    .generate();
    write_samples(&args.out, &samples)?;
    print_json(&DatasetStats::from_samples(&samples))
}

fn rollout(args: &RolloutArgs, config: &EngineConfig) -> Result<()> {
    let samples = load(&args.data)?;
    let policy = build_policy(&args.policy.policy, config)?;
    let records = rollout_corpus(policy.as_ref(), &samples, config)?;
    write_records(&args.out, &records)?;
    let mean = records.iter().filter_map(|r| r.reward.as_ref()).map(|b| b.total).sum::<f64>() / records.len().max(1) as f64;
    print_json(&serde_json::json!({ "trajectories": records.len(), "mean_total_reward": mean }))
}

fn train_toy(args: &TrainArgs, config: &mut EngineConfig) -> Result<()> {
    if let Some(steps) = args.steps {
        config.train.steps = steps;
    }
    let samples = load(&args.data)?;
    let init: Option<ToyPolicyParams> = args.init.as_deref().map(read_json).transpose()?;
    let outcome = run_train_toy(&samples, config, init)?;
    let mut w = BufWriter::new(File::create(&args.out_params)?);
    serde_json::to_writer_pretty(&mut w, &outcome.params)?;
    w.flush()?;
    emit_metrics(&outcome.metrics, &args.metrics)?;
    let last = outcome.metrics.last();
    print_json(&serde_json::json!({
        "stop": outcome.stop,
        "steps": outcome.metrics.len(),
        "final_mean_acc": last.map(|r| r.mean_acc),
        "final_grounded_fraction": last.map(|r| r.grounded_fraction),
    }))?;
    if let TrainStop::Stalled { step, consecutive } = outcome.stop {
        bail!("training stalled at step {step}: {consecutive} consecutive batches without reward variance");
    }
    Ok(())
}

fn eval(args: &EvalArgs, config: &EngineConfig) -> Result<()> {
    let samples = load(&args.data)?;
    let policy = build_policy(&args.policy.policy, config)?;
    let run = run_eval(policy.as_ref(), &samples, config)?;
    if let Some(path) = &args.log {
        write_records(path, &run.records)?;
    }
    print_json(&serde_json::json!({ "report": run.report, "failures": run.failures }))
}

fn replay(args: &ReplayArgs, config: &EngineConfig) -> Result<()> {
    let samples = load(&args.data)?;
    let records = read_records(&args.log)?;
    let report = replay_rewards(&records, &samples, &config.rewards)?;
    print_json(&report)?;
    if !report.all_matched() {
        bail!("{} field(s) differ from the logged rewards", report.mismatches.len());
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let mut config = load_config(&cli)?;
    match &cli.command {
        Command::ValidateData(a) => validate_data(a, &config),
        Command::BuildCurriculum(a) => build_curriculum(a, &config),
        Command::Synth(a) => synth(a, &config),
        Command::Rollout(a) => rollout(a, &config),
        Command::TrainToy(a) => train_toy(a, &mut config),
        Command::Eval(a) => eval(a, &config),
        Command::ReplayRewards(a) => replay(a, &config),
        Command::ShowConfig => {
            print!("{}", config.to_toml_string());
            Ok(())
        }
    }
}
