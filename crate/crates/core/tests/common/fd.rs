//! Central finite differences against reverse-mode gradients.

use eqrgan::diffcore::{mlp_apply, Graph, MlpParams, Tensor};
use eqrgan::discriminator::{discriminator_pass, DiscriminatorParams, DiscriminatorSpec};
use eqrgan::generator::{generator_rollout, GeneratorParams, GeneratorPolicy, GeneratorSpec, NetSpec};
use eqrgan::paths::PathBatch;
use eqrgan::rollout::{simulate_states, ConstantDynamics};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{model, model_with, pilot, rel_err};

pub const H: f64 = 1e-5;
pub const TOL: f64 = 1e-5;
/// Entries smaller than this are compared absolutely (to `TOL * FLOOR`), since
/// central differences carry roundoff of order `eps * loss / H` there.
pub const FLOOR: f64 = 1e-4;
/// Parameters sampled per rollout check.
const SAMPLED: usize = 400;

/// Central difference of `f` in parameter `(tensor, index)`.
fn central<P, F>(params: &P, slot: (usize, usize), get: impl Fn(&mut P) -> Vec<&mut Tensor<f64>>, f: F) -> f64
where
    P: Clone,
    F: Fn(&P) -> f64,
{
    let mut plus = params.clone();
    get(&mut plus)[slot.0].data_mut()[slot.1] += H;
    let mut minus = params.clone();
    get(&mut minus)[slot.0].data_mut()[slot.1] -= H;
    (f(&plus) - f(&minus)) / (2.0 * H)
}

/// Flat `(tensor, index)` list over tensor lengths.
fn slots(lens: &[usize]) -> Vec<(usize, usize)> {
    lens.iter().enumerate().flat_map(|(t, &n)| (0..n).map(move |i| (t, i))).collect()
}

/// Max relative error over every parameter of 50 random small networks.
pub fn random_networks() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let depth = rng.gen_range(1..=3);
        let mut widths = vec![rng.gen_range(1..=5)];
        for _ in 0..depth {
            widths.push(rng.gen_range(1..=6));
        }
        let skip = rng.gen_bool(0.5);
        let net = MlpParams::<f64>::init(&widths, skip, 1.0, &mut rng);
        let rows = rng.gen_range(1..=4);
        let out_w = widths[widths.len() - 1];
        let input = Tensor::from_vec(rows, widths[0], (0..rows * widths[0]).map(|_| rng.gen_range(-2.0..2.0)).collect());
        let weights: Vec<f64> = (0..rows * out_w).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let loss = |p: &MlpParams<f64>| -> f64 {
            let out = p.forward(&input).unwrap();
            out.data().iter().zip(&weights).map(|(o, w)| w * o + 0.5 * o * o).sum()
        };
        let mut g = Graph::new();
        let x = g.constant(input.clone());
        let (out, vars) = mlp_apply(&mut g, &net, x).unwrap();
        let w = g.constant(Tensor::from_vec(rows, out_w, weights.clone()));
        let lin = g.mul(out, w);
        let sq = g.square(out);
        let half = g.scale(sq, 0.5);
        let both = g.add(lin, half);
        let root = g.sum(both);
        assert!((g.value(root).item() - loss(&net)).abs() < 1e-12);
        let grads = net.collect_grads(&g, &vars, &g.backward(root).unwrap());
        let lens: Vec<usize> = net.tensors().iter().map(|t| t.len()).collect();
        for slot in slots(&lens) {
            let fd = central(&net, slot, |p| p.tensors_mut(), loss);
            worst = worst.max(rel_err(grads[slot.0].data()[slot.1], fd, FLOOR));
        }
    }
    worst
}

/// Generator loss on a two-agent preset with `K = 5` and a batch of 4.
pub fn generator_loss(name: &str) -> f64 {
    let m = model(name, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let spec = GeneratorSpec { net: NetSpec { output_gain: 1.0, ..Default::default() }, ..Default::default() };
    let params = GeneratorParams::<f64>::init(&m, &spec, &pilot(&m, 1, 32), &mut rng).unwrap();
    let paths = PathBatch::sample(4, 4, &m.grid, 1).unwrap();
    let dynamics = ConstantDynamics { mu: 0.7, sigma: 1.1, s0: 0.3 };
    let loss = |p: &GeneratorParams<f64>| generator_rollout(p, &dynamics, &paths, &m, 4).unwrap().loss_value();
    let grads = generator_rollout(&params, &dynamics, &paths, &m, 4).unwrap().gradients(&params).unwrap();
    let lens: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
    let all = slots(&lens);
    let mut worst = 0.0f64;
    for i in sample(&mut rng, all.len(), SAMPLED.min(all.len())) {
        let slot = all[i];
        let fd = central(&params, slot, |p| p.tensors_mut(), loss);
        worst = worst.max(rel_err(grads[slot.0].data()[slot.1], fd, FLOOR));
    }
    worst
}

/// Discriminator loss on the two-agent power preset with `K = 5` and a batch of 4.
pub fn discriminator_loss() -> f64 {
    // a larger cost level keeps the loss O(1), so finite differences are not roundoff-bound
    let m = model_with("power2", 5, |c| c.cost_level = 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let pilot = pilot(&m, 2, 32);
    let gen = GeneratorParams::<f64>::init(&m, &GeneratorSpec::default(), &pilot, &mut rng).unwrap();
    let params = DiscriminatorParams::<f64>::init(&m, &DiscriminatorSpec::default(), &pilot, &mut rng).unwrap();
    let paths = PathBatch::sample(8, 4, &m.grid, 1).unwrap();
    let states = simulate_states(&m, &GeneratorPolicy { params: &gen, model: &m }, &paths).unwrap();
    let loss = |p: &DiscriminatorParams<f64>| {
        let pass = discriminator_pass(p, &states, &paths, &m, 4).unwrap();
        pass.graph.value(pass.loss).item()
    };
    let grads = discriminator_pass(&params, &states, &paths, &m, 4).unwrap().gradients(&params).unwrap();
    let lens: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
    let all = slots(&lens);
    let mut worst = 0.0f64;
    for i in sample(&mut rng, all.len(), SAMPLED.min(all.len())) {
        let slot = all[i];
        let fd = central(&params, slot, |p| p.tensors_mut(), loss);
        worst = worst.max(rel_err(grads[slot.0].data()[slot.1], fd, FLOOR));
    }
    worst
}
