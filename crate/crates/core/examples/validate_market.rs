//! Market validation: the shipped rosters pass, a broken one lists every problem.
//!
//! `cargo run --release --example validate_market`

use eqrgan::experiment::{preset, preset_names};
use eqrgan::market::validate;

fn main() {
    for name in preset_names() {
        let spec = preset(name).expect("shipped presets are valid");
        let m = &spec.market;
        println!("{name:<14} N = {:>2}  q = {}  lambda = {}  T = {}  K = {}", spec.roster.len(), m.elasticity, m.cost_level, m.horizon, m.steps);
    }

    let mut spec = preset("quad10").expect("shipped preset");
    spec.roster[0].endowment_vol += 1.0;
    spec.roster[3].risk_aversion = -1.0;
    spec.market.elasticity = 2.5;
    match validate(&spec.market, &spec.roster) {
        Ok(()) => println!("unexpectedly valid"),
        Err(violations) => {
            println!("\nbroken 10-agent market:");
            for v in violations {
                println!("  - {v}");
            }
        }
    }
}
