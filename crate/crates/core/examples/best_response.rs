//! Trains only the policies against fixed, exact equilibrium prices.
//!
//! The best response to the oracle's price dynamics is the oracle policy
//! itself, so this isolates how close the generator networks get on their own.
//!
//! `cargo run --release --example best_response -- [rounds] [epochs]`

use eqrgan::experiment::preset;
use eqrgan::generator::GeneratorPolicy;
use eqrgan::evaluation::evaluate_profile;
use eqrgan::oracle::{solve_quadratic, OracleProfile};
use eqrgan::trainer::{evaluation_paths, initialize, train_best_response};

fn main() -> eqrgan::Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).map(|a| a.parse().expect("integer argument")).collect();
    let mut spec = preset("quad2_smoke")?;
    spec.train.rounds = args.first().copied().unwrap_or(6);
    spec.train.generator_epochs = args.get(1).copied().unwrap_or(20);
    spec.train.lr_decay_every = 3;
    let model = spec.model()?;
    let eq = solve_quadratic(&model)?;
    let prices = OracleProfile { eq: &eq };

    let (gen, _) = initialize::<f32>(&model, &spec.train)?;
    let (gen, log) = train_best_response(&model, &spec.train, &prices, gen)?;
    if let (Some(first), Some(last)) = (log.rows.first(), log.rows.last()) {
        println!("generator loss {:.5e} -> {:.5e} over {} epochs", first.loss, last.loss, log.rows.len());
    }

    let paths = evaluation_paths(&model, spec.evaluation.paths, spec.evaluation.seed)?;
    let learned = evaluate_profile::<f32>(&model, &GeneratorPolicy { params: &gen, model: &model }, &prices, &paths, 0)?;
    let exact = evaluate_profile::<f32>(&model, &prices, &prices, &paths, 0)?;
    println!("{:>12} {:>12} {:>12} {:>12}", "sum J", "clearing", "terminal", "S0");
    println!("{}  learned policies", learned.report.row());
    println!("{}  oracle policies", exact.report.row());
    Ok(())
}
