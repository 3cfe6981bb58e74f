//! `hlm`: generate synthetic data, train and apply the hyper label model.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use hyperlabel::adapters::{finetune, multiclass_infer, FinetuneConfig, LabeledSubset};
use hyperlabel::datagen::{gen_condind_dataset, gen_pair, CondIndConfig, GenConfig};
use hyperlabel::hlmnet::{forward, load_params, params_to_json};
use hyperlabel::io::{
    format_labels, format_matrix, format_probs, format_soft_labels, load_labels, load_matrix, load_predictions,
    parse_subset, write_atomic,
};
use hyperlabel::labelcore::majority_vote;
use hyperlabel::metrics::{evaluate, hard_predictions, Metric};
use hyperlabel::oracle::{exact_hstar, mc_hstar};
use hyperlabel::rng::StreamId;
use hyperlabel::trainer::{train_select, Progress, TrainConfig};
use hyperlabel::{Error, LabelMode, ModelParams};

const FORMATS: &str = "\
FILE FORMATS
  Label matrix (X.csv): one line per data point, values separated by ','.
    Binary mode: -1, 0 or 1 (0 = abstain). Multi-class mode: 0..=C (0 = abstain).
    Lines starting with '#' are ignored. LF or CRLF line endings. UTF-8.
  Labels (y.csv): one integer per line; -1/1 in binary mode, 1..=C in multi-class mode.
  Labeled subset: one 'index,label' pair per line; index is the 0-based row of X, label is -1 or 1.
  Predictions (probs.csv): one line per data point; a single probability of class +1
    (binary) or C comma-separated class probabilities (multi-class), printed as
    '{:.16e}' decimals (17 significant digits, round-trips f64 exactly).
  Model (*.model.json): {\"version\": 1, \"K\": layers, \"d\": width,
    \"embedding\": {\"positive\": [d], \"negative\": [d]},
    \"layers\": [{\"w_col\", \"w_row\", \"w_global\", \"w_self\": [d][d], \"f_weight\": [d][4d], \"f_bias\": [d]}; K],
    \"head\": [{\"weight\": [out][in], \"bias\": [out]}; 3]}. Matrices are lists of rows;
    numbers use shortest round-trip decimals.
  Train config: JSON object; \"preset\": \"desk\" (default) or \"paper\" selects the base, every
    other key overrides it recursively (K, d, batch_size, patience, max_iterations, num_runs,
    validation_every, master_seed, loss_smoothing, log_every, gen{...}, adam{...}, validation{...}).
    Unknown keys are rejected.
  Train output: <out>/config.json (resolved config), <out>/run_<id>/report.json,
    <out>/run_<id>/final.model.json, <out>/selected.model.json, <out>/selection.json.
    Progress is streamed to stdout as one JSON object per line.
  Oracle result: {\"estimate\": [n], \"valid_count\", \"method\": \"exact\"|\"monte_carlo\", \"samples_drawn\"}.
  Eval result (stdout): {\"metric\": \"acc\"|\"f1\", \"value\", \"n\"}.

EXIT CODES
  0  success
  1  internal error
  2  invalid command line
  3  malformed input file (CSV or JSON)
  4  file system error
  5  input violates a precondition (shape, range, mode, config)
  6  unreadable model file (version, shape or corrupt contents)
  7  problem has no answer here (no valid labeling, too sparse, enumeration cap, empty matrix,
     generator exhausted)
  8  numerical failure (non-finite values, diverged training)

Nothing is written when a command fails.";

#[derive(Parser)]
#[command(name = "hlm", version, about = "Hyper label model: label aggregation without per-dataset training")]
#[command(after_long_help = FORMATS)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic datasets (one directory per dataset)
    Gen(GenArgs),
    /// Pre-train on synthetic data and select the best run
    Train(TrainArgs),
    /// Predict soft labels with a trained model
    Infer(InferArgs),
    /// Fine-tune a model on revealed ground-truth labels
    Finetune(FinetuneArgs),
    /// Compute h*, the mean of all valid labelings (exact or Monte Carlo)
    Oracle(OracleArgs),
    /// Majority-vote soft labels
    Mv(MvArgs),
    /// Score predictions against ground truth
    Eval(EvalArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum GenKind {
    /// Uniform label matrices paired with a uniformly drawn valid labeling
    Uniform,
    /// Conditionally independent LFs with random accuracies and propensities
    Condind,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Desk,
    Paper,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, value_enum)]
    kind: GenKind,
    #[arg(long)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Shape ranges of the uniform generator
    #[arg(long, value_enum, default_value = "desk")]
    preset: Preset,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    matrix: PathBuf,
    /// Number of classes of a multi-class matrix (values 0..=C)
    #[arg(long)]
    multiclass: Option<u8>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FinetuneArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    matrix: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Adam learning rate [default: 1e-4]
    #[arg(long)]
    lr: Option<f64>,
    /// Full-batch steps [default: round(sqrt(number of labels)), at least 1]
    #[arg(long)]
    epochs: Option<usize>,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long)]
    matrix: PathBuf,
    /// Enumerate every labeling (the default)
    #[arg(long, conflicts_with = "mc")]
    exact: bool,
    /// Estimate from this many accepted uniform labelings
    #[arg(long)]
    mc: Option<usize>,
    #[arg(long, default_value_t = 0, requires = "mc")]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MvArgs {
    #[arg(long)]
    matrix: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Acc,
    F1,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    #[arg(long, value_enum)]
    metric: MetricArg,
    /// Decision threshold for single-column (binary) predictions
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    /// Positive class for F1 [default: 1]
    #[arg(long, allow_hyphen_values = true)]
    positive: Option<i8>,
}

/// Errors carry their exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Parse { .. } | Error::Json(_) => 3,
            Error::Io { .. } => 4,
            Error::Contract(_) => 5,
            Error::ModelVersion { .. } | Error::ModelShape(_) | Error::ModelCorrupt(_) => 6,
            Error::NoValidLabeling
            | Error::EnumerationCap { .. }
            | Error::TooSparse { .. }
            | Error::GenerationExhausted { .. }
            | Error::EmptyMatrix => 7,
            Error::NonFinite(_) | Error::Diverged(_) | Error::AllRunsDiverged { .. } => 8,
        };
        let mut message = e.to_string();
        if let Error::AllRunsDiverged { reports } = &e {
            if let Ok(r) = serde_json::to_string(reports) {
                message.push_str(&format!("\nrun reports: {r}"));
            }
        }
        Failure { code, message }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure { code: 5, message: message.into() }
}

type CmdResult = std::result::Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Train(a) => cmd_train(a),
        Command::Infer(a) => cmd_infer(a),
        Command::Finetune(a) => cmd_finetune(a),
        Command::Oracle(a) => cmd_oracle(a),
        Command::Mv(a) => cmd_mv(a),
        Command::Eval(a) => cmd_eval(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("hlm: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn pretty(v: &impl serde::Serialize) -> std::result::Result<String, Failure> {
    let mut s = serde_json::to_string_pretty(v).map_err(Error::from)?;
    s.push('\n');
    Ok(s)
}

/// Writes a set of files only after all of them have been produced.
fn write_all(files: &[(PathBuf, String)]) -> CmdResult {
    for (path, contents) in files {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.to_path_buf(), source: e })?;
        }
        write_atomic(path, contents.as_bytes())?;
    }
    Ok(())
}

fn cmd_gen(a: GenArgs) -> CmdResult {
    if a.count == 0 {
        return Err(usage("--count must be at least 1"));
    }
    let mut files = Vec::new();
    match a.kind {
        GenKind::Uniform => {
            let base = match a.preset {
                Preset::Desk => GenConfig::desk(),
                Preset::Paper => GenConfig::paper(),
            };
            let cfg = GenConfig { master_seed: a.seed, ..base };
            for k in 0..a.count {
                let pair = gen_pair(&cfg, StreamId::new(a.seed, k as u64))?;
                let dir = a.out.join(format!("dataset_{k}"));
                let meta = json!({
                    "kind": "uniform",
                    "lineage": pair.lineage,
                    "generator": cfg,
                    "n": pair.x.n(),
                    "m": pair.x.m(),
                    "attempts": pair.attempts,
                });
                files.push((dir.join("X.csv"), format_matrix(&pair.x)));
                files.push((dir.join("y.csv"), format_labels(&pair.y)));
                files.push((dir.join("meta.json"), pretty(&meta)?));
            }
        }
        GenKind::Condind => {
            let cfg = CondIndConfig::default();
            for (k, ds) in gen_condind_dataset(a.count, &cfg, a.seed)?.into_iter().enumerate() {
                let dir = a.out.join(format!("dataset_{k}"));
                let meta = json!({
                    "kind": "condind",
                    "lineage": ds.lineage,
                    "generator": cfg,
                    "n": ds.x.n(),
                    "m": ds.x.m(),
                    "prior": ds.prior,
                    "accuracies": ds.accuracies,
                    "propensities": ds.propensities,
                });
                files.push((dir.join("X.csv"), format_matrix(&ds.x)));
                files.push((dir.join("y.csv"), format_labels(&ds.y)));
                files.push((dir.join("meta.json"), pretty(&meta)?));
            }
        }
    }
    write_all(&files)
}

/// Recursively overlays `patch` on `base`.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn load_train_config(path: &Path) -> std::result::Result<TrainConfig, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
    let mut patch: Value = serde_json::from_str(&text).map_err(Error::from)?;
    let Value::Object(obj) = &mut patch else {
        return Err(usage("train config must be a JSON object"));
    };
    let preset = match obj.remove("preset") {
        None => Preset::Desk,
        Some(Value::String(s)) if s == "desk" => Preset::Desk,
        Some(Value::String(s)) if s == "paper" => Preset::Paper,
        Some(other) => return Err(usage(format!("unknown preset {other}"))),
    };
    let base = match preset {
        Preset::Desk => TrainConfig::desk(),
        Preset::Paper => TrainConfig::paper(),
    };
    let mut value = serde_json::to_value(base).map_err(Error::from)?;
    merge(&mut value, patch);
    let cfg: TrainConfig =
        serde_json::from_value(value).map_err(|e| usage(format!("invalid train config {}: {e}", path.display())))?;
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_train(a: TrainArgs) -> CmdResult {
    let cfg = load_train_config(&a.config)?;
    let stdout = std::sync::Mutex::new(std::io::stdout());
    let progress = |p: &Progress| {
        if let Ok(line) = serde_json::to_string(p) {
            let mut out = stdout.lock().unwrap_or_else(|e| e.into_inner());
            let _ = writeln!(out, "{line}");
        }
    };
    let selection = train_select::<f64>(&cfg, &progress)?;
    let mut files = vec![(a.out.join("config.json"), pretty(&cfg)?)];
    for (report, params) in selection.reports.iter().zip(&selection.run_params) {
        let dir = a.out.join(format!("run_{}", report.run_id));
        let mut report = report.clone();
        report.final_model = Some(format!("run_{}/final.model.json", report.run_id));
        files.push((dir.join("final.model.json"), params_to_json(params)?));
        files.push((dir.join("report.json"), pretty(&report)?));
    }
    files.push((a.out.join("selected.model.json"), params_to_json(&selection.params)?));
    let summary = json!({
        "selected_run": selection.selected_run,
        "mean_validation_accuracy": selection.reports[selection.selected_run].mean_validation_accuracy,
    });
    files.push((a.out.join("selection.json"), pretty(&summary)?));
    write_all(&files)
}

fn load_model(path: &Path) -> std::result::Result<ModelParams, Failure> {
    Ok(load_params::<f64>(path)?)
}

fn cmd_infer(a: InferArgs) -> CmdResult {
    let params = load_model(&a.model)?;
    let text = match a.multiclass {
        None => {
            let x = load_matrix(&a.matrix, LabelMode::Binary)?;
            format_probs(&forward(&params, &x)?)
        }
        Some(c) => {
            let x = load_matrix(&a.matrix, LabelMode::Multiclass(c))?;
            format_soft_labels(&multiclass_infer(&params, &x)?)
        }
    };
    write_all(&[(a.out, text)])
}

fn cmd_finetune(a: FinetuneArgs) -> CmdResult {
    let params = load_model(&a.model)?;
    let x = load_matrix(&a.matrix, LabelMode::Binary)?;
    let text = fs::read_to_string(&a.labels).map_err(|e| Error::Io { path: a.labels.clone(), source: e })?;
    let subset = LabeledSubset::new(&parse_subset(&text)?, x.n())?;
    if let Some(lr) = a.lr {
        if !(lr.is_finite() && lr > 0.0) {
            return Err(usage("--lr must be a positive number"));
        }
    }
    let tuned = finetune(&params, &x, &subset, FinetuneConfig { lr: a.lr, epochs: a.epochs })?;
    write_all(&[(a.out, params_to_json(&tuned)?)])
}

fn cmd_oracle(a: OracleArgs) -> CmdResult {
    let x = load_matrix(&a.matrix, LabelMode::Binary)?;
    let result = match a.mc {
        Some(0) => return Err(usage("--mc needs at least one sample")),
        Some(samples) => mc_hstar(&x, samples, a.seed)?,
        None => exact_hstar(&x)?,
    };
    write_all(&[(a.out, pretty(&result)?)])
}

fn cmd_mv(a: MvArgs) -> CmdResult {
    let x = load_matrix(&a.matrix, LabelMode::Binary)?;
    write_all(&[(a.out, format_probs(&majority_vote(&x)?))])
}

fn cmd_eval(a: EvalArgs) -> CmdResult {
    let rows = load_predictions(&a.pred)?;
    let width = rows.first().map_or(1, Vec::len);
    if rows.iter().any(|r| r.len() != width) {
        return Err(usage("prediction rows have different widths"));
    }
    let classes = if width == 1 {
        None
    } else {
        Some(u8::try_from(width).map_err(|_| usage("too many prediction columns"))?)
    };
    let truth = load_labels(&a.truth, classes)?;
    let pred = hard_predictions(&rows, a.threshold);
    let metric = match a.metric {
        MetricArg::Acc => Metric::Acc,
        MetricArg::F1 => Metric::F1,
    };
    let result = evaluate(&pred, truth.as_slice(), metric, a.positive.unwrap_or(1))?;
    println!("{}", serde_json::to_string(&result).map_err(Error::from)?);
    Ok(())
}
