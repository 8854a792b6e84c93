//! `comm-rl`: dataset generation, warm-up, staged training, evaluation and
//! curve export.
//!
//! Exit codes: 0 success, 2 config or format error, 3 missing or invalid
//! input, 4 scorer backend failure.

use std::cell::RefCell;
use std::fs::{self, File, OpenOptions};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use comm_rl::checkpoint::{self, CheckpointError};
use comm_rl::config::{ConfigError, RunConfig};
use comm_rl::env::{self, Dataset, EnvError, Split};
use comm_rl::experiment::{self, Evaluation, ExperimentError};
use comm_rl::metrics::{self, MetricsError};
use comm_rl::optim::{CheckpointReason, OptimError, Stage, Trainer};
use comm_rl::policy::{PolicyError, ToyPolicy};
use serde_json::json;
use thiserror::Error;

#[derive(Parser)]
#[command(name = "comm-rl", version, about = "Step-wise reasoning reward training on synthetic audio-visual confusion tasks")]
struct Cli {
    /// TOML run configuration; defaults apply to missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed (overrides config and COMM_RL_SEED).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; for export-curves, the CSV file.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate warm-up, train and eval splits plus a manifest.
    GenData,
    /// Fit the initial policy to the warm-up demonstrations.
    Warmup,
    /// Run a training schedule.
    Train {
        #[arg(long, value_enum, default_value = "full")]
        stage: StageArg,
        /// Continue from a training checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Starting policy (default: the previous stage's output).
        #[arg(long)]
        policy: Option<PathBuf>,
    },
    /// Evaluate a policy or training checkpoint on one split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "eval")]
        split: String,
        /// Split file (default: `<out>/data/<split>.jsonl`).
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Convert a metrics stream to a CSV of per-step curves.
    ExportCurves { metrics: PathBuf },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum StageArg {
    #[value(name = "step_rr")]
    StepRr,
    #[value(name = "ans_co")]
    AnsCo,
    Full,
}

impl StageArg {
    fn label(self) -> &'static str {
        match self {
            StageArg::StepRr => "step_rr",
            StageArg::AnsCo => "ans_co",
            StageArg::Full => "full",
        }
    }

    fn keeps(self, stage: Stage) -> bool {
        match self {
            StageArg::StepRr => stage == Stage::StepRr,
            StageArg::AnsCo => stage == Stage::AnsCo,
            StageArg::Full => true,
        }
    }
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Input(String),
    #[error("scorer backend failure: {0}")]
    Backend(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Input(_) => 3,
            CliError::Backend(_) => 4,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Read { .. } => CliError::Input(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<EnvError> for CliError {
    fn from(e: EnvError) -> Self {
        match e {
            EnvError::InvalidSpec(_) => CliError::Config(e.to_string()),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<PolicyError> for CliError {
    fn from(e: PolicyError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<OptimError> for CliError {
    fn from(e: OptimError) -> Self {
        match e {
            OptimError::Scorer(s) => CliError::Backend(s.to_string()),
            OptimError::InvalidConfig(_) => CliError::Config(e.to_string()),
            OptimError::Env(env) => env.into(),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Env(e) => e.into(),
            ExperimentError::Policy(e) => e.into(),
            ExperimentError::Optim(e) => e.into(),
        }
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        match e {
            MetricsError::Malformed { .. } => CliError::Config(e.to_string()),
            other => CliError::Input(other.to_string()),
        }
    }
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Input(format!("{}: {e}", path.display()))
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    cfg.apply_env(std::env::vars())?;
    if let Some(seed) = cli.seed {
        cfg.set_seed(seed);
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

struct Layout {
    root: PathBuf,
}

impl Layout {
    fn data(&self) -> PathBuf {
        self.root.join("data")
    }
    fn split(&self, split: Split) -> PathBuf {
        self.data().join(format!("{split}.jsonl"))
    }
    fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }
    fn policy(&self, name: &str) -> PathBuf {
        self.checkpoints().join(format!("{name}.policy.json"))
    }
    fn training(&self, label: &str) -> PathBuf {
        self.checkpoints().join(format!("{label}.ckpt.json"))
    }
    fn training_at(&self, label: &str, step: usize) -> PathBuf {
        self.checkpoints().join(format!("{label}-step{step:05}.ckpt.json"))
    }
    fn metrics(&self, label: &str) -> PathBuf {
        self.root.join("metrics").join(format!("{label}.jsonl"))
    }
}

fn print_json(value: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(value).expect("JSON values serialize"));
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), CliError> {
    checkpoint::write_json(path, value).map_err(CliError::from)
}

fn cmd_gen_data(cfg: &RunConfig, layout: &Layout) -> Result<(), CliError> {
    let dataset = experiment::build_dataset(cfg)?;
    fs::create_dir_all(layout.data()).map_err(io(&layout.data()))?;
    let mut splits = serde_json::Map::new();
    for split in Split::ALL {
        let path = layout.split(split);
        let file = File::create(&path).map_err(io(&path))?;
        let mut w = BufWriter::new(file);
        env::write_split(&mut w, &dataset, split)?;
        w.flush().map_err(io(&path))?;
        let instances = dataset.split(split);
        let confused = instances.iter().filter(|i| i.confused).count();
        splits.insert(
            split.to_string(),
            json!({
                "file": format!("{split}.jsonl"),
                "count": instances.len(),
                "confused": confused,
                "confused_fraction": if instances.is_empty() { 0.0 } else { confused as f64 / instances.len() as f64 },
            }),
        );
    }
    let manifest = json!({
        "seed": cfg.seed,
        "dataset_seed": dataset.seed,
        "env": dataset.spec,
        "splits": splits,
    });
    write_json(&layout.data().join("manifest.json"), &manifest)?;
    print_json(&manifest);
    Ok(())
}

fn load_dataset(layout: &Layout) -> Result<Dataset, CliError> {
    let mut parts = Vec::new();
    for split in Split::ALL {
        let path = layout.split(split);
        let file = File::open(&path).map_err(|e| {
            CliError::Input(format!("{}: {e} (run gen-data first)", path.display()))
        })?;
        let (tag, seed, spec, instances) = env::read_split(BufReader::new(file))
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
        if tag != split {
            return Err(CliError::Input(format!("{} holds split {tag}", path.display())));
        }
        parts.push((seed, spec, instances));
    }
    let mut it = parts.into_iter();
    let (seed, spec, warmup) = it.next().expect("three splits");
    let (_, _, train) = it.next().expect("three splits");
    let (_, _, eval) = it.next().expect("three splits");
    Ok(Dataset { seed, spec, warmup, train, eval })
}

fn run_warmup(cfg: &RunConfig, layout: &Layout, dataset: &Dataset) -> Result<(ToyPolicy, Evaluation), CliError> {
    let (policy, report) = experiment::warmup(cfg, dataset)?;
    checkpoint::save_policy(&layout.policy("warmup"), &policy)?;
    let eval = experiment::evaluation("warmup", &policy, dataset, dataset.seed)?;
    write_json(
        &layout.root.join("warmup.report.json"),
        &json!({ "initial_nll": report.initial_nll, "final_nll": report.final_nll, "evaluation": eval }),
    )?;
    Ok((policy, eval))
}

fn cmd_warmup(cfg: &RunConfig, layout: &Layout) -> Result<(), CliError> {
    let dataset = load_dataset(layout)?;
    let (_, eval) = run_warmup(cfg, layout, &dataset)?;
    print_json(&serde_json::to_value(&eval.report).expect("report serializes"));
    Ok(())
}

fn load_policy_file(path: &Path) -> Result<ToyPolicy, CliError> {
    checkpoint::load_policy(path).map_err(CliError::from)
}

fn starting_policy(
    cfg: &RunConfig,
    layout: &Layout,
    dataset: &Dataset,
    stage: StageArg,
    explicit: Option<&Path>,
) -> Result<ToyPolicy, CliError> {
    if let Some(path) = explicit {
        return load_policy_file(path);
    }
    match stage {
        StageArg::Full => Ok(run_warmup(cfg, layout, dataset)?.0),
        StageArg::StepRr => load_policy_file(&layout.policy("warmup")),
        StageArg::AnsCo => {
            let after_rr = layout.policy(Stage::StepRr.as_str());
            let warmup = layout.policy("warmup");
            load_policy_file(if after_rr.exists() { &after_rr } else { &warmup })
        }
    }
}

/// Keeps the metrics records up to `step` and returns the file opened for
/// appending.
fn truncate_metrics(path: &Path, step: usize) -> Result<File, CliError> {
    let kept = match File::open(path) {
        Ok(f) => metrics::read_reports(BufReader::new(f))?
            .into_iter()
            .filter(|r| r.step <= step)
            .collect(),
        Err(_) => Vec::new(),
    };
    let mut buf = Vec::new();
    for r in &kept {
        metrics::write_report(&mut buf, r).map_err(io(path))?;
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io(dir))?;
    }
    fs::write(path, buf).map_err(io(path))?;
    OpenOptions::new().append(true).open(path).map_err(io(path))
}

fn cmd_train(
    cfg: &RunConfig,
    layout: &Layout,
    stage: StageArg,
    resume: Option<&Path>,
    policy: Option<&Path>,
) -> Result<(), CliError> {
    let dataset = load_dataset(layout)?;
    if dataset.train.is_empty() {
        return Err(EnvError::EmptySplit(Split::Train).into());
    }
    let label = stage.label();
    let metrics_path = layout.metrics(label);
    let (mut trainer, file) = match resume {
        Some(path) => {
            let ckpt = checkpoint::load_training(path)?;
            let done = ckpt.state.progress.global_step;
            (Trainer::from_state(ckpt.state)?, truncate_metrics(&metrics_path, done)?)
        }
        None => {
            let start = starting_policy(cfg, layout, &dataset, stage, policy)?;
            let mut train_cfg = cfg.train.clone();
            train_cfg.schedule.retain(|s| stage.keeps(s.stage));
            (Trainer::new(start, train_cfg)?, truncate_metrics(&metrics_path, 0)?)
        }
    };
    cfg.write_echo(&layout.root).map_err(io(&layout.root))?;

    let scorer = cfg.scorer.build();
    let writer = RefCell::new(BufWriter::new(file));
    let mut evaluations = Vec::new();
    trainer.run(
        &dataset.train,
        scorer.as_ref(),
        |r| metrics::write_report(&mut *writer.borrow_mut(), r).map_err(io(&metrics_path)),
        |t, reason| {
            writer.borrow_mut().flush().map_err(io(&metrics_path))?;
            let state = t.state();
            checkpoint::save_training(&layout.training(label), &state)?;
            checkpoint::save_training(&layout.training_at(label, state.progress.global_step), &state)?;
            if let CheckpointReason::StageEnd(i) = reason {
                let name = t.config().schedule[i].stage.as_str();
                checkpoint::save_policy(&layout.policy(name), t.policy())?;
                evaluations.push(experiment::evaluation(&format!("{i}:{name}"), t.policy(), &dataset, dataset.seed)?);
            }
            Ok::<_, CliError>(())
        },
    )?;
    writer.borrow_mut().flush().map_err(io(&metrics_path))?;
    checkpoint::save_policy(&layout.policy(label), trainer.policy())?;

    let final_eval = experiment::evaluation("final", trainer.policy(), &dataset, dataset.seed)?;
    let summary = json!({
        "stage": label,
        "steps": trainer.progress().global_step,
        "metrics": metrics_path,
        "evaluations": evaluations,
        "final": final_eval,
    });
    write_json(&layout.root.join(format!("{label}.summary.json")), &summary)?;
    print_json(&summary);
    Ok(())
}

fn cmd_eval(layout: &Layout, checkpoint: &Path, split: &str, data: Option<&Path>) -> Result<(), CliError> {
    let split: Split = split.parse().map_err(|e: EnvError| CliError::Config(e.to_string()))?;
    let policy = load_policy_file(checkpoint)?;
    let path = data.map(Path::to_path_buf).unwrap_or_else(|| layout.split(split));
    let file = File::open(&path).map_err(io(&path))?;
    let (_, seed, _, instances) =
        env::read_split(BufReader::new(file)).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let report = env::evaluate(&policy, split, &instances, seed)?;
    print_json(&serde_json::to_value(&report).expect("report serializes"));
    Ok(())
}

fn cmd_export_curves(metrics_path: &Path, out: Option<&Path>) -> Result<(), CliError> {
    let out = out.ok_or_else(|| CliError::Config("export-curves needs --out <csv file>".into()))?;
    let file = File::open(metrics_path).map_err(io(metrics_path))?;
    let reports = metrics::read_reports(BufReader::new(file))?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io(dir))?;
    }
    let csv = File::create(out).map_err(io(out))?;
    metrics::export_curves(BufWriter::new(csv), &reports)?;
    println!("{} rows written to {}", reports.len(), out.display());
    Ok(())
}

fn run(cli: &Cli) -> Result<(), CliError> {
    if let Command::ExportCurves { metrics } = &cli.command {
        return cmd_export_curves(metrics, cli.out.as_deref());
    }
    let cfg = load_config(cli)?;
    let layout = Layout { root: cfg.out_dir.clone() };
    match &cli.command {
        Command::GenData => {
            cfg.write_echo(&layout.root).map_err(io(&layout.root))?;
            cmd_gen_data(&cfg, &layout)
        }
        Command::Warmup => {
            cfg.write_echo(&layout.root).map_err(io(&layout.root))?;
            cmd_warmup(&cfg, &layout)
        }
        Command::Train { stage, resume, policy } => cmd_train(&cfg, &layout, *stage, resume.as_deref(), policy.as_deref()),
        Command::Eval { checkpoint, split, data } => cmd_eval(&layout, checkpoint, split, data.as_deref()),
        Command::ExportCurves { .. } => unreachable!("handled above"),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
