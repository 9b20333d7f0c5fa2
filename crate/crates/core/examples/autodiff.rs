//! The differentiation engine on its own: a network gradient checked against
//! finite differences, then Adam minimizing `w^2`.
//!
//! `cargo run --release --example autodiff`

use eqrgan::diffcore::{adam_step, mlp_apply, AdamConfig, AdamState, Graph, MlpParams, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let net = MlpParams::<f64>::init(&[2, 4, 4, 1], false, 1.0, &mut rng);
    let input = Tensor::from_vec(3, 2, vec![0.5, -1.0, 0.1, 0.2, -0.7, 1.3]);

    let mut g = Graph::new();
    let x = g.constant(input.clone());
    let (out, vars) = mlp_apply(&mut g, &net, x).expect("widths match");
    let loss = g.sum(out);
    let grads = net.collect_grads(&g, &vars, &g.backward(loss).expect("scalar root"));

    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for t in 0..grads.len() {
        for i in 0..grads[t].len() {
            let eval = |delta: f64| {
                let mut p = net.clone();
                p.tensors_mut()[t].data_mut()[i] += delta;
                p.forward(&input).expect("widths match").data().iter().sum::<f64>()
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            worst = worst.max((fd - grads[t].data()[i]).abs() / fd.abs().max(1e-4));
        }
    }
    println!("{} parameters, max relative gradient error {worst:.2e}", net.num_params());

    let mut w = Tensor::scalar(1.0f64);
    let mut state = AdamState::for_params(AdamConfig { lr: 0.05, ..Default::default() }, &[&w]);
    for _ in 0..100 {
        let grad = Tensor::scalar(2.0 * w.item());
        adam_step(&mut [&mut w], &[grad], &mut state).expect("finite gradient");
    }
    println!("Adam on w^2 from w = 1: w = {:.4} after {} steps", w.item(), state.step_count());
}
