//! `emberflow` command-line driver.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 runtime error or
//! diverged training run.

use std::fmt::Display;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use emberflow::data::{
    class_histogram, export_images, parse_fer_csv, split_label_pixel_files, synth,
    train_val_split, write_fer_csv, Dataset, SplitSpec, CLASS_NAMES,
};
use emberflow::nn::ModelConfig;
use emberflow::optim::OptimizerKind;
use emberflow::train::{
    emit_curves, evaluate, gradient_check, load_checkpoint, save_checkpoint, train_with,
    GradCheckConfig, TrainConfig,
};
use emberflow::Error;

const THREADS_VAR: &str = "EMBERFLOW_THREADS";

#[derive(Parser, Debug)]
#[command(name = "emberflow", version, about = "CNN facial expression recognition on FER2013-format data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Split a FER CSV into a labels file and a pixels file.
    Prepare(PrepareArgs),
    /// Export examples as 48x48 binary PGM images.
    Visualize(VisualizeArgs),
    /// Train the CNN and write a checkpoint and per-epoch metrics.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a FER CSV.
    Evaluate(EvaluateArgs),
    /// Compare analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Write a synthetic FER-format CSV of cartoon faces.
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
struct PrepareArgs {
    /// FER CSV with header `emotion,pixels`.
    #[arg(long)]
    input: PathBuf,
    /// Output directory (created if missing).
    #[arg(long)]
    outdir: PathBuf,
    /// File name of the labels file.
    #[arg(long, default_value = "labels.csv")]
    labels: String,
    /// File name of the pixels file.
    #[arg(long, default_value = "pixels.csv")]
    pixels: String,
}

#[derive(Args, Debug)]
struct VisualizeArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    outdir: PathBuf,
    /// Export at most this many images [default: all]
    #[arg(long)]
    limit: Option<usize>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "sgd", value_parser = parse_optimizer)]
    optimizer: OptimizerKind,
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    /// Time-based decay: lr / (1 + decay * updates). SGD only.
    #[arg(long, default_value_t = 1e-5)]
    decay: f64,
    #[arg(long, default_value_t = 128)]
    batch_size: usize,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Leading rows used for training; the rest validate.
    #[arg(long, default_value_t = 24_000)]
    train_count: usize,
    /// Keep only the first N training examples [default: all]
    #[arg(long)]
    limit_train: Option<usize>,
    /// Keep only the first N validation examples [default: all]
    #[arg(long)]
    limit_val: Option<usize>,
    #[arg(long, default_value_t = 2)]
    pool_stride: usize,
    /// Checkpoint path.
    #[arg(long)]
    out: PathBuf,
    /// Metrics CSV path.
    #[arg(long)]
    metrics: PathBuf,
    /// Accuracy curve SVG path [default: none]
    #[arg(long)]
    curves: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    input: PathBuf,
    /// Evaluate only the rows after the first N (the validation slice) [default: all rows]
    #[arg(long)]
    train_count: Option<usize>,
    /// Keep only the first N of the evaluated rows [default: all]
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long, default_value_t = 128)]
    batch_size: usize,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 1e-3)]
    tolerance: f64,
    #[arg(long, default_value_t = 10)]
    seeds: u64,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1000)]
    rows: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn parse_optimizer(s: &str) -> Result<OptimizerKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// A failed command: message plus exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Display) -> Self {
        Self {
            code: 1,
            message: message.to_string(),
        }
    }

    fn data(message: impl Display) -> Self {
        Self {
            code: 2,
            message: message.to_string(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) | Error::Usage(_) => 1,
            Error::Row { .. }
            | Error::Data(_)
            | Error::EmptyDataset
            | Error::BadMagic
            | Error::UnsupportedVersion { .. }
            | Error::Truncated(_)
            | Error::TensorShapeMismatch { .. }
            | Error::MalformedCheckpoint(_)
            | Error::Io { .. } => 2,
            Error::Shape(_)
            | Error::Geometry(_)
            | Error::DegenerateVariance(_)
            | Error::NonFiniteGradient { .. } => 3,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn configure_threads() -> CmdResult {
    let Ok(raw) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| Failure::usage(format!("{THREADS_VAR} must be a non-negative integer, got `{raw}`")))?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::usage(format!("{THREADS_VAR}: {e}")))?;
    }
    Ok(())
}

fn histogram_line(ds: &Dataset) -> String {
    let h = class_histogram(ds);
    let counts: Vec<String> = h.iter().map(usize::to_string).collect();
    let named: Vec<String> = CLASS_NAMES
        .iter()
        .zip(&h)
        .map(|(n, c)| format!("{n}={c}"))
        .collect();
    format!("histogram={} ({})", counts.join(","), named.join(" "))
}

fn prepare(a: PrepareArgs) -> CmdResult {
    let ds = parse_fer_csv(&a.input)?;
    std::fs::create_dir_all(&a.outdir).map_err(|e| Failure::data(format!("{}: {e}", a.outdir.display())))?;
    split_label_pixel_files(&ds, a.outdir.join(&a.labels), a.outdir.join(&a.pixels))?;
    println!("rows={}", ds.len());
    println!("{}", histogram_line(&ds));
    Ok(())
}

fn visualize(a: VisualizeArgs) -> CmdResult {
    let ds = parse_fer_csv(&a.input)?;
    let n = export_images(&ds, &a.outdir, a.limit)?;
    println!("written={n}");
    Ok(())
}

fn percent(v: f64) -> String {
    format!("{:.2}%", 100.0 * v)
}

fn train(a: TrainArgs) -> CmdResult {
    let config = TrainConfig {
        batch_size: a.batch_size,
        epochs: a.epochs,
        optimizer: a.optimizer,
        lr: a.lr,
        decay: a.decay,
        seed: a.seed,
        limit_train: a.limit_train,
        limit_val: a.limit_val,
        model: ModelConfig {
            pool_stride: a.pool_stride,
            ..ModelConfig::default()
        },
    };
    config.validate()?;
    let ds = parse_fer_csv(&a.input)?;
    let (train_set, val_set) = train_val_split(
        &ds,
        SplitSpec {
            train_count: a.train_count,
        },
    )
    .map_err(Failure::data)?;
    let outcome = train_with(&config, &train_set, &val_set, |m| {
        eprintln!(
            "epoch {}/{} lr={:.6} train_loss={:.6} train_acc={:.4} val_loss={:.6} val_acc={:.4} ({:.1}s)",
            m.epoch, config.epochs, m.lr, m.train_loss, m.train_acc, m.val_loss, m.val_acc, m.seconds
        );
    })?;
    emit_curves(&outcome.metrics, config.optimizer, &a.metrics, a.curves.as_deref())?;
    save_checkpoint(&outcome.checkpoint, &a.out)?;
    let last = outcome.metrics.last().expect("epochs >= 1");
    let mut summary = format!(
        "epochs={} optimizer={} train_acc={} val_acc={} loss={:.6}",
        config.epochs,
        config.optimizer,
        percent(last.train_acc),
        percent(last.val_acc),
        last.train_loss
    );
    if let Some(e) = outcome.diverged_at {
        summary.push_str(&format!(" diverged_at={e}"));
    }
    println!("{summary}");
    if let Some(e) = outcome.diverged_at {
        return Err(Failure {
            code: 3,
            message: format!("training diverged (non-finite loss or gradient first seen in epoch {e})"),
        });
    }
    Ok(())
}

fn evaluate_cmd(a: EvaluateArgs) -> CmdResult {
    if a.batch_size == 0 {
        return Err(Failure::usage("--batch-size must be >= 1"));
    }
    if a.limit == Some(0) {
        return Err(Failure::usage("--limit must be >= 1"));
    }
    let ckpt = load_checkpoint(&a.model)?;
    let model = ckpt.model()?;
    let ds = parse_fer_csv(&a.input)?;
    let ds = match a.train_count {
        Some(n) => train_val_split(&ds, SplitSpec { train_count: n }).map_err(Failure::data)?.1,
        None => ds,
    };
    let ds = match a.limit {
        Some(n) => ds.truncated(n),
        None => ds,
    };
    let ev = evaluate(&model, &ds, a.batch_size)?;
    println!("rows={}", ds.len());
    println!("loss={:.6}", ev.loss);
    println!("accuracy={:.6}", ev.accuracy);
    println!("confusion (rows: true class, columns: predicted)");
    for (i, row) in ev.confusion.iter().enumerate() {
        let cells: Vec<String> = row.iter().map(|c| format!("{c:>6}")).collect();
        println!("{:>9} {}", CLASS_NAMES[i], cells.join(""));
    }
    Ok(())
}

fn gradcheck(a: GradcheckArgs) -> CmdResult {
    if a.tolerance.is_nan() || a.tolerance < 0.0 {
        return Err(Failure::usage("--tolerance must be >= 0"));
    }
    if a.seeds == 0 {
        return Err(Failure::usage("--seeds must be >= 1"));
    }
    let report = gradient_check(&GradCheckConfig {
        seeds: a.seeds,
        tolerance: a.tolerance,
        ..GradCheckConfig::default()
    })?;
    for g in &report.groups {
        let verdict = if g.max_rel < a.tolerance { "ok" } else { "FAIL" };
        println!(
            "{:<5} {:<11} max_rel_err={:.3e} checked={} {verdict}",
            g.scope, g.group, g.max_rel, g.checked
        );
    }
    if report.passed() {
        println!("gradcheck passed (tolerance {:e}, {} seeds)", a.tolerance, a.seeds);
        Ok(())
    } else {
        Err(Failure {
            code: 3,
            message: format!("gradcheck failed: some groups exceed tolerance {:e}", a.tolerance),
        })
    }
}

fn synth_cmd(a: SynthArgs) -> CmdResult {
    if a.rows == 0 {
        return Err(Failure::usage("--rows must be >= 1"));
    }
    let ds = synth::generate(a.rows, a.seed, &synth::SynthConfig::default());
    write_fer_csv(&ds, &a.out)?;
    println!("rows={}", ds.len());
    println!("{}", histogram_line(&ds));
    Ok(())
}

fn run(cli: Cli) -> CmdResult {
    configure_threads()?;
    match cli.command {
        Command::Prepare(a) => prepare(a),
        Command::Visualize(a) => visualize(a),
        Command::Train(a) => train(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Synth(a) => synth_cmd(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
