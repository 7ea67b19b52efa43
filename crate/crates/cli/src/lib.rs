//! Subcommands of the `bridgenet` binary.
//!
//! Everything is callable in-process through [`run_with_args`], which takes
//! the argument list and output sinks and returns the exit code.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use bridgenet::checkpoint::Checkpoint;
use bridgenet::data::{self, SyntheticSpec};
use bridgenet::gradcheck::{run_gradcheck, GradCheckPlan};
use bridgenet::metrics::{self, EvalReport};
use bridgenet::train::{predict_all, EpochLog, LOSS_LOG_HEADER};
use bridgenet::{Baseline, Dataset64, RunConfig, Trainer64};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const LOSS_LOG_FILE: &str = "loss_log.csv";
pub const TRAIN_SPLIT_FILE: &str = "train.csv";
pub const TEST_SPLIT_FILE: &str = "test.csv";
pub const EVAL_REPORT_FILE: &str = "eval_report.json";
pub const CS_CURVE_FILE: &str = "cs_curve.csv";
pub const PREDICTIONS_FILE: &str = "predictions.csv";

/// Fraction of the synthetic dataset used for training.
pub const SYNTHETIC_TRAIN_FRACTION: f64 = 0.8;

#[derive(Debug, Parser)]
#[command(name = "bridgenet", version, about = "Bridge-tree gated mixture regression")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the gating topology of a configuration
    TreeInfo(TreeInfoArgs),
    /// Train a model and write checkpoint and loss log
    Train(TrainArgs),
    /// Evaluate a checkpoint on labelled data
    Eval(EvalArgs),
    /// Predict labels for feature rows
    Predict(PredictArgs),
    /// Compare analytic gradients with central finite differences
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// JSON run configuration; defaults apply for missing keys
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the configured gating architecture (bridge, tree, softmax)
    #[arg(long)]
    pub baseline: Option<Baseline>,
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct Source {
    /// CSV with a `label` column, an optional `stddev` column and features
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Use the built-in synthetic task (2000 samples, 8 features, 80/20 split)
    #[arg(long)]
    pub synthetic: bool,
}

#[derive(Debug, Args)]
pub struct TreeInfoArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub source: Source,
    /// Output directory, created if missing
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint written by `train`
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub source: Source,
    /// Directory for the report and CS curve
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// CSV of features; `label` and `stddev` columns are ignored
    #[arg(long)]
    pub data: PathBuf,
    /// Directory for predictions.csv; stdout when absent
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the leaf gating weights of every row
    #[arg(long)]
    pub gating: bool,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Config(bridgenet::Error),
    #[error("{0}")]
    Data(bridgenet::Error),
    #[error("gradient check failed: worst excess relative error {worst:e} exceeds {tolerance:e}")]
    GradCheck { worst: f64, tolerance: f64 },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 1,
            CliError::Data(_) => 2,
            CliError::GradCheck { .. } => 3,
        }
    }
}

impl From<bridgenet::Error> for CliError {
    fn from(e: bridgenet::Error) -> Self {
        match e {
            bridgenet::Error::Config(_) | bridgenet::Error::ParameterDomain(_) => CliError::Config(e),
            _ => CliError::Data(e),
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn write_out(out: &mut dyn Write, text: &str) -> CliResult {
    out.write_all(text.as_bytes())
        .map_err(|e| CliError::Data(bridgenet::Error::Io {
            path: "<stdout>".into(),
            source: e,
        }))
}

fn write_file(path: &Path, text: &str) -> CliResult {
    fs::write(path, text).map_err(|e| {
        CliError::Data(bridgenet::Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    })
}

fn create_dir(path: &Path) -> CliResult {
    fs::create_dir_all(path).map_err(|e| {
        CliError::Data(bridgenet::Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    })
}

fn to_json<T: Serialize>(value: &T) -> CliResult<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::Data(e.into()))?;
    s.push('\n');
    Ok(s)
}

/// Loads the config (or defaults) and applies command-line overrides.
pub fn resolve_config(args: &ModelArgs) -> CliResult<RunConfig> {
    let mut config = match &args.config {
        Some(path) => RunConfig::load(path).map_err(CliError::Config)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(baseline) = args.baseline {
        config.baseline = baseline;
    }
    config.validate().map_err(CliError::Config)?;
    Ok(config)
}

/// The synthetic task's train and test splits.
pub fn synthetic_splits() -> CliResult<(Dataset64, Dataset64)> {
    let spec = SyntheticSpec::default();
    let all = data::generate_synthetic(spec)?;
    Ok(data::split(&all, SYNTHETIC_TRAIN_FRACTION, spec.seed)?)
}

#[derive(Debug, Serialize)]
pub struct TreeInfo {
    pub kind: String,
    pub branching: usize,
    pub depth: usize,
    pub layer_sizes: Vec<usize>,
    pub leaves: usize,
    pub decision_nodes: usize,
    pub edges: usize,
    /// Nodes with two parents.
    pub bridge_nodes: usize,
}

pub fn tree_info(config: &RunConfig) -> CliResult<TreeInfo> {
    let topo = config.model_spec()?.topology()?;
    let bridge_nodes = (0..topo.node_count())
        .filter(|&i| {
            topo.parents(bridgenet::NodeId(i))
                .map(|p| p.len() > 1)
                .unwrap_or(false)
        })
        .count();
    Ok(TreeInfo {
        kind: topo.kind().to_string(),
        branching: topo.branching(),
        depth: topo.depth(),
        layer_sizes: topo.layer_sizes(),
        leaves: topo.leaf_count(),
        decision_nodes: topo.decision_count(),
        edges: topo.edge_count(),
        bridge_nodes,
    })
}

fn cmd_tree_info(args: TreeInfoArgs, out: &mut dyn Write) -> CliResult {
    let info = tree_info(&resolve_config(&args.model)?)?;
    let text = if args.json {
        to_json(&info)?
    } else {
        let layers: Vec<String> = info.layer_sizes.iter().map(usize::to_string).collect();
        format!(
            "kind: {}\nbranching: {}\ndepth: {}\nlayers: {}\nleaves: {}, decision: {}\nedges: {}\nbridge nodes: {}\n",
            info.kind,
            info.branching,
            info.depth,
            layers.join(" "),
            info.leaves,
            info.decision_nodes,
            info.edges,
            info.bridge_nodes
        )
    };
    write_out(out, &text)
}

#[derive(Debug, Serialize)]
struct TrainSummary {
    epochs: usize,
    samples: usize,
    initial_train_mae: f64,
    final_train_mae: f64,
    final_loss_total: f64,
    checkpoint: PathBuf,
    loss_log: PathBuf,
}

fn cmd_train(args: TrainArgs, out: &mut dyn Write) -> CliResult {
    let config = resolve_config(&args.model)?;
    create_dir(&args.out)?;
    let train = match &args.source.data {
        Some(path) => data::load_csv(path)?,
        None => {
            let (train, test) = synthetic_splits()?;
            data::save_csv(&train, args.out.join(TRAIN_SPLIT_FILE))?;
            data::save_csv(&test, args.out.join(TEST_SPLIT_FILE))?;
            train
        }
    };

    let checkpoint = args.out.join(CHECKPOINT_FILE);
    let loss_log = args.out.join(LOSS_LOG_FILE);
    let mut log_text = format!("{LOSS_LOG_HEADER}\n");
    let mut trainer = Trainer64::new(&config, &train)?;
    let logs = trainer.fit(&train, config.epochs, |tr, entry: &EpochLog| {
        log::info!(
            "epoch {}: loss_total {:.6} train_mae {:.4}",
            entry.epoch,
            entry.loss_total,
            entry.train_mae
        );
        log_text.push_str(&entry.csv_row());
        log_text.push('\n');
        fs::write(&loss_log, &log_text).map_err(|e| bridgenet::Error::Io {
            path: loss_log.clone(),
            source: e,
        })?;
        Checkpoint::from_trainer(tr).save(&checkpoint)
    })?;

    let first = logs.first().expect("fit logs the starting point");
    let last = logs.last().expect("fit logs the starting point");
    let summary = TrainSummary {
        epochs: trainer.epoch,
        samples: train.len(),
        initial_train_mae: first.train_mae,
        final_train_mae: last.train_mae,
        final_loss_total: last.loss_total,
        checkpoint,
        loss_log,
    };
    let text = if args.json {
        to_json(&summary)?
    } else {
        format!(
            "trained {} epochs on {} samples\ntrain MAE {:.4} -> {:.4}\ncheckpoint: {}\nloss log: {}\n",
            summary.epochs,
            summary.samples,
            summary.initial_train_mae,
            summary.final_train_mae,
            summary.checkpoint.display(),
            summary.loss_log.display()
        )
    };
    write_out(out, &text)
}

fn load_trainer(path: &Path) -> CliResult<Trainer64> {
    Ok(Checkpoint::load(path)?.into_trainer()?)
}

/// Evaluates a checkpointed model on labelled data.
pub fn evaluate(trainer: &Trainer64, data: &Dataset64) -> CliResult<EvalReport> {
    let preds = predict_all(&trainer.model, data)?;
    let stddevs = data.stddevs();
    Ok(metrics::evaluate(
        &preds,
        &data.labels(),
        stddevs.as_deref(),
        &metrics::default_thresholds(),
    )?)
}

fn cmd_eval(args: EvalArgs, out: &mut dyn Write) -> CliResult {
    let trainer = load_trainer(&args.checkpoint)?;
    let data = match &args.source.data {
        Some(path) => data::load_csv(path)?,
        None => synthetic_splits()?.1,
    };
    let report = evaluate(&trainer, &data)?;
    if let Some(dir) = &args.out {
        create_dir(dir)?;
        write_file(&dir.join(EVAL_REPORT_FILE), &to_json(&report)?)?;
        write_file(&dir.join(CS_CURVE_FILE), &metrics::cs_curve_csv(&report.cs_curve))?;
    }
    let text = if args.json {
        to_json(&report)?
    } else {
        let mut s = format!("samples: {}\nmae: {:.6}\n", report.samples, report.mae);
        if let Some(e) = report.eps_error {
            s.push_str(&format!("eps_error: {e:.6}\n"));
        }
        for p in report.cs_curve.iter().filter(|p| p.theta == 5.0 || p.theta == 10.0) {
            s.push_str(&format!("cs@{}: {:.4}\n", p.theta, p.cs));
        }
        s
    };
    write_out(out, &text)
}

fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

fn cmd_predict(args: PredictArgs, out: &mut dyn Write) -> CliResult {
    let trainer = load_trainer(&args.checkpoint)?;
    let model = &trainer.model;
    let rows = data::load_features::<f64>(&args.data)?;
    let mut text = String::from("prediction");
    if args.gating {
        for l in 0..model.topology().leaf_count() {
            text.push_str(&format!(",pi_{l}"));
        }
    }
    text.push('\n');
    for row in &rows {
        let o = model.forward(row, None)?;
        text.push_str(&fmt17(o.prediction));
        if args.gating {
            for &p in o.gating.as_slice() {
                text.push(',');
                text.push_str(&fmt17(p));
            }
        }
        text.push('\n');
    }
    match &args.out {
        Some(dir) => {
            create_dir(dir)?;
            write_file(&dir.join(PREDICTIONS_FILE), &text)
        }
        None => write_out(out, &text),
    }
}

fn cmd_gradcheck(args: GradcheckArgs, out: &mut dyn Write) -> CliResult {
    let config = resolve_config(&args.model)?;
    let outcome = run_gradcheck(&config, config.seed, GradCheckPlan::default())?;
    let text = if args.json {
        to_json(&outcome)?
    } else {
        let mut s = format!(
            "instances: {}\nparameters: {}\nstep: {:e}\n",
            outcome.instances, outcome.parameters, outcome.step
        );
        for t in &outcome.terms {
            s.push_str(&format!(
                "{}: checked {}, worst relative error {:.3e} (coordinate {}), excess {:.3e}\n",
                t.term,
                t.report.checked,
                t.report.worst_relative_error,
                t.report.worst_coordinate,
                t.report.worst_excess_error
            ));
        }
        s.push_str(&format!(
            "worst excess error: {:.3e} (tolerance {:e})\n{}\n",
            outcome.worst_excess_error,
            outcome.tolerance,
            if outcome.passed { "PASS" } else { "FAIL" }
        ));
        s
    };
    write_out(out, &text)?;
    if outcome.passed {
        Ok(())
    } else {
        Err(CliError::GradCheck {
            worst: outcome.worst_excess_error,
            tolerance: outcome.tolerance,
        })
    }
}

pub fn run(cli: Cli, out: &mut dyn Write) -> CliResult {
    match cli.command {
        Command::TreeInfo(a) => cmd_tree_info(a, out),
        Command::Train(a) => cmd_train(a, out),
        Command::Eval(a) => cmd_eval(a, out),
        Command::Predict(a) => cmd_predict(a, out),
        Command::Gradcheck(a) => cmd_gradcheck(a, out),
    }
}

/// Parses `args` (program name first), runs the command and returns the exit
/// code. Help and version output count as success.
pub fn run_with_args<I, S>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let rendered = e.render().to_string();
            let sink: &mut dyn Write = if code == 0 { out } else { err };
            let _ = sink.write_all(rendered.as_bytes());
            return code;
        }
    };
    match run(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_capture(args: &[&str]) -> (i32, String, String) {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let code = run_with_args(args.iter().copied(), &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn default_tree_info() {
        let (code, out, _) = run_capture(&["bridgenet", "tree-info"]);
        assert_eq!(code, 0);
        assert!(out.contains("leaves: 63, decision: 57"), "{out}");
        assert!(out.contains("layers: 1 3 7 15 31 63"), "{out}");
    }

    #[test]
    fn baseline_override() {
        let (code, out, _) = run_capture(&["bridgenet", "tree-info", "--baseline", "tree", "--json"]);
        assert_eq!(code, 0);
        let v: serde_json::Value = serde_json::from_str(&out).unwrap();
        assert_eq!(v["kind"], "tree");
        assert_eq!(v["leaves"], 64);
        assert_eq!(v["bridge_nodes"], 0);
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run_capture(&["bridgenet", "bogus"]).0, 1);
        assert_eq!(run_capture(&["bridgenet", "tree-info", "--baseline", "forest"]).0, 1);
        assert_eq!(run_capture(&["bridgenet", "train", "--out", "x"]).0, 1);
        assert_eq!(
            run_capture(&["bridgenet", "train", "--out", "x", "--synthetic", "--data", "y.csv"]).0,
            1
        );
        assert_eq!(run_capture(&["bridgenet", "--help"]).0, 0);
    }

    #[test]
    fn error_classes() {
        assert_eq!(CliError::from(bridgenet::Error::Config("x".into())).exit_code(), 1);
        assert_eq!(CliError::from(bridgenet::Error::UncoveredLabel { label: 120.0 }).exit_code(), 2);
        assert_eq!(CliError::from(bridgenet::Error::Schema("x".into())).exit_code(), 2);
        assert_eq!(
            CliError::GradCheck {
                worst: 1.0,
                tolerance: 1e-4
            }
            .exit_code(),
            3
        );
    }
}
