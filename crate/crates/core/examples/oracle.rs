//! Exact quadratic-cost equilibrium for a shipped preset.
//!
//! Prints the Monte Carlo table row next to the exact expectation, then the
//! price volatility and drift coefficients along the grid.
//!
//! `cargo run --release --example oracle -- [preset]`

use eqrgan::experiment::preset;
use eqrgan::oracle::{oracle_evaluate, solve_quadratic};
use eqrgan::trainer::evaluation_paths;

fn main() -> eqrgan::Result<()> {
    let name = std::env::args().nth(1).unwrap_or_else(|| "quad10".into());
    let spec = preset(&name)?;
    let model = spec.model()?;
    let eq = solve_quadratic(&model)?;
    let paths = evaluation_paths(&model, spec.evaluation.paths, spec.evaluation.seed)?;
    let ev = oracle_evaluate(&eq, &model, &paths, 0)?;
    let exact: Vec<f64> = eq.expected_objective(&model);

    println!("{name}: {} agents, K = {}", model.agents(), model.steps());
    println!("{:>12} {:>12} {:>12} {:>12}", "sum J", "clearing", "terminal", "S0");
    println!("{}", ev.report.row());
    println!("exact sum J {:.6e} (Monte Carlo {:.6e} +- {:.1e})", exact.iter().sum::<f64>(), ev.report.sum_j, ev.report.sum_j_stderr);
    println!("largest adjoint-sum defect {:.1e}", eq.clearing_defect());
    println!();
    println!("{:>4} {:>8} {:>10} {:>14}", "k", "t", "sigma", "mu at start");
    let start: Vec<f64> = model.roster.iter().map(|a| a.initial_position).collect();
    for k in (0..=model.steps()).step_by((model.steps() / 10).max(1)) {
        println!("{k:>4} {:>8.4} {:>10.6} {:>14.6}", k as f64 * model.dt(), eq.sigma[k], eq.mu(k, &start, 0.0));
    }
    Ok(())
}
