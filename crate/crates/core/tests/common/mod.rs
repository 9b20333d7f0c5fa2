#![allow(dead_code)]

pub mod fd;

use eqrgan::experiment::preset;
use eqrgan::market::MarketConfig;
use eqrgan::paths::PathBatch;
use eqrgan::diffcore::Tensor;
use eqrgan::rollout::{simulate_states, Model, StatePaths, ZeroPolicy};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A shipped preset with its time grid replaced by `steps` steps.
pub fn model(name: &str, steps: usize) -> Model {
    model_with(name, steps, |_| {})
}

pub fn model_with(name: &str, steps: usize, edit: impl FnOnce(&mut MarketConfig)) -> Model {
    let mut spec = preset(name).unwrap();
    spec.market.steps = steps;
    edit(&mut spec.market);
    spec.model().unwrap()
}

pub fn pilot(model: &Model, seed: u64, batch: usize) -> StatePaths<f64> {
    let paths = PathBatch::sample(seed, batch, &model.grid, 1).unwrap();
    simulate_states(model, &ZeroPolicy, &paths).unwrap()
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Arbitrary agent states on `model`'s grid: `batch` paths with positions and
/// Brownian levels drawn from `seed`.
pub fn random_states(model: &Model, batch: usize, seed: u64) -> StatePaths<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = model.agents();
    let steps = model.steps();
    let mut s = StatePaths { x: Vec::new(), phi: Vec::new(), rates: Vec::new(), b: Vec::new() };
    for _ in 0..=steps {
        let phi: Vec<f64> = (0..batch * n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        s.x.push(Tensor::from_vec(batch, n, phi.iter().map(|v| v * 0.5).collect()));
        s.phi.push(Tensor::from_vec(batch, n, phi));
        s.rates.push(Tensor::zeros(batch, n));
        s.b.push((0..batch).map(|_| rng.gen_range(-1.0..1.0)).collect());
    }
    s
}

pub fn random_sigmas(steps: usize, batch: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    (0..=steps).map(|_| (0..batch).map(|_| rng.gen_range(0.2..2.0)).collect()).collect()
}
