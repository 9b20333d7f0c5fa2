//! Command-line surface: `train`, `evaluate`, `oracle` and `compare`.
//!
//! Exit codes: 0 success, 2 invalid input, 3 numerical failure, 4 I/O.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::checkpoint::Checkpoint;
use crate::diffcore::{Precision, Real};
use crate::error::{Error, Result};
use crate::evaluation::{EvalReport, Evaluation};
use crate::experiment::{preset, ExperimentSpec};
use crate::oracle::{oracle_evaluate, solve_quadratic};
use crate::trainer::{configure_threads, evaluate, evaluation_paths, save_outcome, train, CheckpointSink, TrainOutcome};

#[derive(Parser, Debug)]
#[command(name = "eqrgan", version, about = "Learn multi-agent market equilibria with power trading costs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(clap::Args, Debug, Clone)]
pub struct SpecArgs {
    /// Experiment spec (JSON file).
    #[arg(long, conflicts_with = "preset")]
    pub spec: Option<PathBuf>,
    /// Shipped preset instead of a spec file (quad10, power2, ...).
    #[arg(long)]
    pub preset: Option<String>,
    /// Output directory (defaults to the spec file's `output`, then `eqrgan-out`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Training seed for `train`, evaluation seed otherwise.
    #[arg(long)]
    pub seed: Option<u64>,
    /// f32 or f64 (defaults to the spec file, or the checkpoint when evaluating).
    #[arg(long)]
    pub precision: Option<Precision>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train generator and discriminator; writes params.ckpt, trainlog.csv and resolved-spec.json.
    Train {
        #[command(flatten)]
        spec: SpecArgs,
    },
    /// Evaluate a checkpoint; prints one metrics row and writes metrics.json plus CSVs.
    Evaluate {
        #[command(flatten)]
        spec: SpecArgs,
        #[arg(long)]
        ckpt: PathBuf,
        /// Number of evaluation paths (default 3000).
        #[arg(long)]
        paths: Option<usize>,
    },
    /// Solve the quadratic-cost equilibrium exactly and evaluate it.
    Oracle {
        #[command(flatten)]
        spec: SpecArgs,
        #[arg(long)]
        paths: Option<usize>,
    },
    /// Side-by-side table of two metrics.json files with relative deltas of B against A.
    Compare { a: PathBuf, b: PathBuf },
}

/// Maps an error to the documented exit code.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Invalid(_) | Error::Format { .. } => 2,
        Error::NonFinite { .. } | Error::Numerical(_) | Error::Diff(_) => 3,
        Error::Io { .. } => 4,
    }
}

/// Parses `args`, runs the command and returns the exit code.
pub fn run_from<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            report_error(&e);
            exit_code(&e)
        }
    }
}

fn report_error(e: &Error) {
    match e {
        Error::Invalid(list) => {
            eprintln!("error: invalid market configuration");
            for v in list {
                eprintln!("  - {v}");
            }
        }
        Error::NonFinite { last_checkpoint: Some(p), .. } => {
            eprintln!("error: {e}");
            eprintln!("last good checkpoint: {}", p.display());
        }
        _ => eprintln!("error: {e}"),
    }
}

pub fn run(cli: Cli) -> Result<()> {
    configure_threads();
    match cli.command {
        Command::Train { spec } => cmd_train(&spec),
        Command::Evaluate { spec, ckpt, paths } => cmd_evaluate(&spec, &ckpt, paths),
        Command::Oracle { spec, paths } => cmd_oracle(&spec, paths),
        Command::Compare { a, b } => {
            println!("{}", cmd_compare(&a, &b)?);
            Ok(())
        }
    }
}

fn load_spec(args: &SpecArgs) -> Result<ExperimentSpec> {
    let mut spec = match (&args.spec, &args.preset) {
        (Some(p), _) => ExperimentSpec::load(p)?,
        (None, Some(name)) => preset(name)?,
        (None, None) => return Err(Error::Config("pass --spec FILE or --preset NAME".into())),
    };
    if let Some(p) = args.precision {
        spec.train.precision = p;
    }
    Ok(spec)
}

fn out_dir(args: &SpecArgs, spec: &ExperimentSpec) -> Result<PathBuf> {
    let dir = args.out.clone().or_else(|| spec.output.clone()).unwrap_or_else(|| PathBuf::from("eqrgan-out"));
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<fs::File> {
    fs::File::create(path).map_err(|e| Error::io(path, e))
}

fn cmd_train(args: &SpecArgs) -> Result<()> {
    let mut spec = load_spec(args)?;
    if let Some(s) = args.seed {
        spec.train.seed = s;
    }
    let dir = out_dir(args, &spec)?;
    write_text(&dir.join("resolved-spec.json"), &spec.resolved_json()?)?;
    let model = spec.model()?;
    let sink = if spec.train.checkpoint_every > 0 {
        let c = dir.join("checkpoints");
        fs::create_dir_all(&c).map_err(|e| Error::io(&c, e))?;
        CheckpointSink { dir: Some(c) }
    } else {
        CheckpointSink::default()
    };
    match spec.train.precision {
        Precision::F32 => finish_train(&dir, &spec, train::<f32>(&model, &spec.train, &sink)?),
        Precision::F64 => finish_train(&dir, &spec, train::<f64>(&model, &spec.train, &sink)?),
    }
}

fn finish_train<T: Real>(dir: &Path, spec: &ExperimentSpec, out: TrainOutcome<T>) -> Result<()> {
    save_outcome(&dir.join("params.ckpt"), &spec.train, &out)?;
    out.log.write_csv(create(&dir.join("trainlog.csv"))?)?;
    if let Some(last) = out.log.rows.last() {
        eprintln!("final round {}: discriminator loss {:.4e}, S0 {:.6}", last.round, last.loss, last.s0);
    }
    println!("{}", dir.join("params.ckpt").display());
    Ok(())
}

fn cmd_evaluate(args: &SpecArgs, ckpt: &Path, paths: Option<usize>) -> Result<()> {
    let mut spec = load_spec(args)?;
    if let Some(s) = args.seed {
        spec.evaluation.seed = s;
    }
    let n = paths.unwrap_or(spec.evaluation.paths);
    if n == 0 {
        return Err(Error::Config("--paths must be at least 1".into()));
    }
    let model = spec.model()?;
    let c = Checkpoint::load(ckpt)?;
    let precision = args.precision.unwrap_or(c.precision);
    let keep = spec.evaluation.keep_paths.min(n);
    let ev = match precision {
        Precision::F32 => {
            let (g, d) = c.params::<f32>(&model)?;
            evaluate(&g, &d, &model, n, spec.evaluation.seed, keep)?
        }
        Precision::F64 => {
            let (g, d) = c.params::<f64>(&model)?;
            evaluate(&g, &d, &model, n, spec.evaluation.seed, keep)?
        }
    };
    let dir = out_dir(args, &spec)?;
    emit(&dir, &ev)
}

fn cmd_oracle(args: &SpecArgs, paths: Option<usize>) -> Result<()> {
    let mut spec = load_spec(args)?;
    if let Some(s) = args.seed {
        spec.evaluation.seed = s;
    }
    let n = paths.unwrap_or(spec.evaluation.paths);
    if n == 0 {
        return Err(Error::Config("--paths must be at least 1".into()));
    }
    let model = spec.model()?;
    let eq = solve_quadratic(&model)?;
    let batch = evaluation_paths(&model, n, spec.evaluation.seed)?;
    let ev = oracle_evaluate(&eq, &model, &batch, spec.evaluation.keep_paths.min(n))?;
    let dir = out_dir(args, &spec)?;
    eq.write_csv(create(&dir.join("oracle.csv"))?)?;
    let exact: f64 = eq.expected_objective(&model).iter().sum();
    eprintln!("exact expected sum J on this grid: {exact:.6e}");
    emit(&dir, &ev)
}

fn emit(dir: &Path, ev: &Evaluation) -> Result<()> {
    let json = serde_json::to_string_pretty(&ev.report).map_err(|e| Error::Format { what: "metrics".into(), detail: e.to_string() })?;
    write_text(&dir.join("metrics.json"), &json)?;
    ev.series.write_csv(create(&dir.join("series.csv"))?)?;
    ev.kept.write_csv(create(&dir.join("trajectories.csv"))?)?;
    println!("{:>12} {:>12} {:>12} {:>12}", "sum_j", "clearing", "terminal", "s0");
    println!("{}", ev.report.row());
    Ok(())
}

/// Reads a metrics file and returns the four table columns.
pub fn read_metrics(path: &Path) -> Result<[f64; 4]> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let v: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Error::Format { what: format!("metrics file {}", path.display()), detail: e.to_string() })?;
    let mut out = [0.0; 4];
    for (slot, col) in out.iter_mut().zip(EvalReport::COLUMNS) {
        *slot = v.get(col).and_then(|x| x.as_f64()).ok_or_else(|| Error::Format {
            what: format!("metrics file {}", path.display()),
            detail: format!("missing numeric column {col:?}"),
        })?;
    }
    Ok(out)
}

/// Relative change of `b` against `a`; zero when both are zero.
pub fn relative_delta(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (b - a) / a.abs()
    }
}

pub fn cmd_compare(a: &Path, b: &Path) -> Result<String> {
    let (ma, mb) = (read_metrics(a)?, read_metrics(b)?);
    let mut out = format!("{:<10} {:>13} {:>13} {:>13} {:>10}\n", "column", "A", "B", "B - A", "rel");
    for (i, col) in EvalReport::COLUMNS.iter().enumerate() {
        let rel = relative_delta(ma[i], mb[i]);
        out.push_str(&format!(
            "{:<10} {:>13.5e} {:>13.5e} {:>13.5e} {:>9.2}%\n",
            col,
            ma[i],
            mb[i],
            mb[i] - ma[i],
            rel * 100.0
        ));
    }
    Ok(out.trim_end().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_delta_examples() {
        assert_eq!(relative_delta(0.361, 0.361), 0.0);
        assert!((relative_delta(0.361, 0.358) * 100.0 + 0.83).abs() < 0.005);
        assert_eq!(relative_delta(0.0, 0.0), 0.0);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        assert_eq!(exit_code(&Error::Numerical("x".into())), 3);
        assert_eq!(exit_code(&Error::io("p", std::io::Error::other("x"))), 4);
    }
}
