//! Trains a shipped preset and compares the result with the oracle when one exists.
//!
//! `cargo run --release --example train_preset -- quad2_smoke [rounds] [epochs]`

use eqrgan::experiment::preset;
use eqrgan::oracle::{oracle_evaluate, solve_quadratic};
use eqrgan::trainer::{evaluate, evaluation_paths, train, CheckpointSink, PhaseKind};

fn main() -> eqrgan::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut spec = preset(args.first().map_or("quad2_smoke", |s| s.as_str()))?;
    if let Some(r) = args.get(1) {
        spec.train.rounds = r.parse().expect("rounds");
    }
    if let Some(e) = args.get(2) {
        let e = e.parse().expect("epochs");
        spec.train.generator_epochs = e;
        spec.train.discriminator_epochs = e;
    }
    let model = spec.model()?;
    let started = std::time::Instant::now();
    let out = train::<f32>(&model, &spec.train, &CheckpointSink::default())?;
    for round in 0..spec.train.rounds {
        println!(
            "round {round:>3}  generator loss {:>12.5e}  discriminator loss {:>12.5e}",
            out.log.round_loss(round, PhaseKind::Generator).unwrap(),
            out.log.round_loss(round, PhaseKind::Discriminator).unwrap()
        );
    }
    println!("trained in {:.1}s", started.elapsed().as_secs_f64());
    let ev = evaluate(&out.generator, &out.discriminator, &model, spec.evaluation.paths, spec.evaluation.seed, 0)?;
    println!("{:>12} {:>12} {:>12} {:>12}", "sum J", "clearing", "terminal", "S0");
    println!("{}  trained (terminal rate ratio {:.3})", ev.report.row(), ev.report.terminal_rate_ratio);
    if model.config.elasticity == 2.0 {
        let eq = solve_quadratic(&model)?;
        let paths = evaluation_paths(&model, spec.evaluation.paths, spec.evaluation.seed)?;
        println!("{}  oracle", oracle_evaluate(&eq, &model, &paths, 0)?.report.row());
    }
    Ok(())
}
