//! Known-drift against implicit-drift training on the two-agent quadratic
//! market, printed as a comparison table with the oracle as reference.
//!
//! `cargo run --release --example compare_modes -- [rounds]`

use std::path::{Path, PathBuf};

use eqrgan::cli::cmd_compare;
use eqrgan::discriminator::DiscriminatorMode;
use eqrgan::evaluation::EvalReport;
use eqrgan::experiment::preset;
use eqrgan::oracle::{oracle_evaluate, solve_quadratic};
use eqrgan::trainer::{evaluate, evaluation_paths, train, CheckpointSink};
use eqrgan::Error;

fn write(dir: &Path, name: &str, r: &EvalReport) -> eqrgan::Result<PathBuf> {
    let path = dir.join(name);
    let json = serde_json::to_string_pretty(r).expect("report serializes");
    std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

fn main() -> eqrgan::Result<()> {
    let rounds: usize = std::env::args().nth(1).map_or(6, |r| r.parse().expect("rounds"));
    let dir = std::env::temp_dir().join("eqrgan-compare-example");
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;

    let mut spec = preset("quad2_smoke")?;
    spec.train.rounds = rounds;
    let model = spec.model()?;
    let paths = evaluation_paths(&model, spec.evaluation.paths, spec.evaluation.seed)?;
    let oracle = oracle_evaluate(&solve_quadratic(&model)?, &model, &paths, 0)?.report;
    let reference = write(&dir, "oracle.json", &oracle)?;

    for (mode, label) in [(DiscriminatorMode::KnownQuadratic, "known"), (DiscriminatorMode::Implicit, "implicit")] {
        spec.train.discriminator.mode = mode;
        let out = train::<f32>(&model, &spec.train, &CheckpointSink::default())?;
        let ev = evaluate(&out.generator, &out.discriminator, &model, spec.evaluation.paths, spec.evaluation.seed, 0)?;
        let path = write(&dir, &format!("{label}.json"), &ev.report)?;
        println!("A = oracle, B = {label} drift after {rounds} rounds");
        println!("{}\n", cmd_compare(&reference, &path)?);
    }
    Ok(())
}
