//! The `dota` command line: streaming runs, synthetic data, analysis reports
//! and the labeling HTTP API.

pub mod serve;

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use serde_json::json;

use dota_core::eval::{self, CovarianceAblation, DEFAULT_WINDOW};
use dota_core::stream_io::{self, RawRecord};
use dota_core::synth::{self, SynthConfig, SynthSpec};
use dota_core::{
    AdaptConfig, CovBackend, EmbeddingRecord, FeedbackMode, RunReport, SelectionStrategy, Session, SessionState,
};

/// A checkpoint is rewritten after this many stream positions.
pub const CHECKPOINT_EVERY: u64 = 1000;

#[derive(Debug, Parser)]
#[command(name = "dota", version, about = "Streaming test-time adaptation for zero-shot embedding classifiers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Adapt over a stream and write the per-sample report.
    Run(RunArgs),
    /// Generate a synthetic Gaussian stream with a perturbed zero-shot head.
    Synth(SynthArgs),
    /// Improvement curve, covariance ablation or selector comparison.
    Eval(EvalArgs),
    /// Run a session behind the labeling HTTP API.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Args)]
pub struct InputArgs {
    /// Embedding stream (.demb).
    #[arg(long)]
    pub stream: PathBuf,
    /// Zero-shot head (.dcls).
    #[arg(long)]
    pub classifier: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct AdaptArgs {
    #[arg(long, default_value_t = 0.002)]
    pub sigma2: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 0.01)]
    pub rho: f64,
    #[arg(long, default_value_t = 0.3)]
    pub eta: f64,
    #[arg(long, default_value_t = 0.05)]
    pub gamma: f64,
    #[arg(long, default_value_t = FeedbackMode::None)]
    pub feedback: FeedbackMode,
    #[arg(long, default_value_t = SelectionStrategy::Confidence)]
    pub strategy: SelectionStrategy,
    #[arg(long, default_value_t = CovBackend::PerClass)]
    pub cov: CovBackend,
    #[arg(long, default_value_t = 1e-3)]
    pub resp_floor: f64,
    #[arg(long, default_value_t = 1)]
    pub precision_interval: u64,
    #[arg(long, default_value_t = 0)]
    pub warmup: u64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
}

impl AdaptArgs {
    pub fn config(&self) -> AdaptConfig {
        AdaptConfig {
            sigma2: self.sigma2,
            epsilon: self.epsilon,
            rho: self.rho,
            eta: self.eta,
            gamma: self.gamma,
            cov_backend: self.cov,
            responsibility_floor: self.resp_floor,
            precision_refresh_interval: self.precision_interval,
            uncertainty_warmup: self.warmup,
            feedback_mode: self.feedback,
            strategy: self.strategy,
            seed: self.seed,
            freeze_covariance: false,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub adapt: AdaptArgs,
    /// Resume from this file when it exists; it is rewritten during and after the run.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Per-sample JSON lines followed by a summary record.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_WINDOW)]
    pub window: usize,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long, default_value_t = 16)]
    pub d: usize,
    #[arg(long, default_value_t = 5000)]
    pub n: usize,
    #[arg(long, default_value_t = 25.0)]
    pub perturb_deg: f64,
    /// Anisotropic shared covariance (isotropic otherwise).
    #[arg(long)]
    pub aniso: bool,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Writes PREFIX.demb, PREFIX.dcls and PREFIX.truth.json.
    #[arg(long)]
    pub out_prefix: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EvalKind {
    Improvement,
    AblateCov,
    Strategies,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(value_enum)]
    pub kind: EvalKind,
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub adapt: AdaptArgs,
    #[arg(long, default_value_t = DEFAULT_WINDOW)]
    pub window: usize,
    /// Feedback fractions for the selector comparison.
    #[arg(long, value_delimiter = ',', default_value = "0.05,0.15")]
    pub gammas: Vec<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub adapt: AdaptArgs,
    #[arg(long, default_value_t = 8787)]
    pub port: u16,
    /// Serve the labeling UI bundle from this directory.
    #[arg(long)]
    pub static_dir: Option<PathBuf>,
    /// Write the final report here once the stream is exhausted.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_WINDOW)]
    pub window: usize,
}

pub fn dispatch(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Run(args) => {
            let report = run(&args)?;
            println!("{}", serde_json::to_string_pretty(&report.summary)?);
        }
        Command::Synth(args) => {
            let written = synth(&args)?;
            println!("{}", serde_json::to_string_pretty(&written)?);
        }
        Command::Eval(args) => {
            let value = evaluate(&args)?;
            fs::write(&args.out, serde_json::to_vec_pretty(&value)?)
                .with_context(|| format!("writing {}", args.out.display()))?;
            info!("wrote {}", args.out.display());
        }
        Command::Serve(args) => serve::serve(&args)?,
    }
    Ok(())
}

fn reject_human(cfg: &AdaptConfig) -> anyhow::Result<()> {
    if cfg.feedback_mode == FeedbackMode::Human {
        bail!("--feedback human needs a labeler; use `dota serve`");
    }
    Ok(())
}

fn save_checkpoint(path: &Path, state: &SessionState) -> anyhow::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    stream_io::write_checkpoint_file(&tmp, state)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Opens a session, resuming from `checkpoint` when that file exists.
fn open_session(args: &RunArgs) -> anyhow::Result<Session> {
    let spec = stream_io::read_classifier(&args.input.classifier)
        .with_context(|| format!("reading {}", args.input.classifier.display()))?;
    let cfg = args.adapt.config();
    reject_human(&cfg)?;
    match &args.checkpoint {
        Some(path) if path.exists() => {
            let state = stream_io::read_checkpoint_file(path)
                .with_context(|| format!("reading checkpoint {}", path.display()))?;
            ensure!(state.spec == spec, "checkpoint {} belongs to a different classifier", path.display());
            ensure!(state.cfg == cfg, "checkpoint {} was written with a different configuration", path.display());
            info!("resuming from {} at stream position {}", path.display(), state.position);
            Ok(Session::from_state(state))
        }
        _ => Ok(Session::new(spec, cfg)?),
    }
}

pub fn run(args: &RunArgs) -> anyhow::Result<RunReport> {
    let mut session = open_session(args)?;
    let skip = session.state().position as usize;
    let records = stream_io::read_stream_for(&args.input.stream, session.spec())
        .with_context(|| format!("opening {}", args.input.stream.display()))?
        .skip(skip);
    let checkpoint = args.checkpoint.as_deref();
    let report = session.run_stream_with(records, args.window, |s, _| {
        let state = s.state();
        if let Some(path) = checkpoint {
            if state.position % CHECKPOINT_EVERY == 0 {
                if let Err(e) = save_checkpoint(path, state) {
                    warn!("checkpoint at position {} failed: {e:#}", state.position);
                }
            }
        }
    })?;
    if let Some(path) = checkpoint {
        save_checkpoint(path, session.state())?;
    }
    if let Some(path) = &args.report {
        stream_io::write_report_file(path, &report).with_context(|| format!("writing {}", path.display()))?;
        info!("wrote {}", path.display());
    }
    Ok(report)
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn synth(args: &SynthArgs) -> anyhow::Result<serde_json::Value> {
    let cfg = SynthConfig {
        k: args.k,
        dim: args.d,
        n_samples: args.n,
        perturbation_deg: args.perturb_deg,
        anisotropic: args.aniso,
        seed: args.seed,
        ..SynthConfig::default()
    };
    let spec = SynthSpec::from_config(&cfg)?;
    let out = synth::generate(&spec)?;
    let (demb, dcls, truth) = (
        with_suffix(&args.out_prefix, ".demb"),
        with_suffix(&args.out_prefix, ".dcls"),
        with_suffix(&args.out_prefix, ".truth.json"),
    );
    if let Some(dir) = demb.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    stream_io::write_stream_file(&demb, args.d as u32, &out.records)?;
    stream_io::write_classifier_file(&dcls, &out.classifier)?;
    fs::write(&truth, serde_json::to_vec_pretty(&out.truth)?)?;

    let records: Vec<EmbeddingRecord> = out.records.iter().map(RawRecord::ingest).collect::<Result<_, _>>()?;
    let bayes = synth::bayes_oracle_accuracy(&records, &out.truth)?;
    Ok(json!({
        "stream": demb,
        "classifier": dcls,
        "truth": truth,
        "n_samples": records.len(),
        "bayes_oracle_acc": bayes,
    }))
}

pub fn evaluate(args: &EvalArgs) -> anyhow::Result<serde_json::Value> {
    let cfg = args.adapt.config();
    reject_human(&cfg)?;
    let spec = stream_io::read_classifier(&args.input.classifier)?;
    let records = stream_io::read_all_records(&args.input.stream, &spec)?;
    let value = match args.kind {
        EvalKind::Improvement => {
            let report = eval::run_records(&records, &spec, &cfg, args.window)?;
            let curve = eval::improvement_curve(&report.log, args.window)?;
            json!({
                "kind": "improvement",
                "config": report.config,
                "summary": report.summary,
                "curve": curve.iter().map(|&(index, gain)| json!({"index": index, "gain": gain})).collect::<Vec<_>>(),
            })
        }
        EvalKind::AblateCov => {
            let CovarianceAblation { full, frozen, delta } =
                eval::ablate_covariance(&records, &spec, &cfg, args.window)?;
            json!({
                "kind": "ablate-cov",
                "config": full.config,
                "full": full.summary,
                "frozen": frozen.summary,
                "delta": delta,
            })
        }
        EvalKind::Strategies => {
            ensure!(
                args.gammas.iter().all(|g| (0.0..=1.0).contains(g)),
                "--gammas values must lie in [0,1]"
            );
            let all = [SelectionStrategy::Random, SelectionStrategy::Similarity, SelectionStrategy::Confidence];
            let rows = eval::compare_strategies(&records, &spec, &cfg, &all, &args.gammas)?;
            json!({ "kind": "strategies", "config": cfg, "rows": rows })
        }
    };
    Ok(value)
}
