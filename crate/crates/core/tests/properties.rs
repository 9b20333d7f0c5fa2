//! Randomized invariants across modules.

mod common;

use common::{model, random_sigmas, random_states};
use eqrgan::checkpoint::Checkpoint;
use eqrgan::diffcore::{adam_step, AdamConfig, AdamState, Precision, Tensor};
use eqrgan::discriminator::{backward_y_pass, mu_quadratic_clearing, mu_two_agent_power, DiscriminatorParams, DiscriminatorSpec};
use eqrgan::generator::{GeneratorParams, GeneratorSpec};
use eqrgan::market::{self, frictionless_roster, MarketConfig, Violation};
use eqrgan::paths::PathBatch;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn quadratic_drift_clears_adjoints(seed in any::<u64>(), steps in 1usize..30) {
        let m = model("quad10", steps);
        let states = random_states(&m, 8, seed);
        let sigma = random_sigmas(steps, 8, seed);
        let mu: Vec<Vec<f64>> = (0..=steps)
            .map(|k| (0..8).map(|p| {
                let pos: Vec<f64> = (0..m.agents()).map(|a| states.phi[k].get(p, a)).collect();
                mu_quadratic_clearing(sigma[k][p], &pos, states.b[k][p], &m.roster, 2.0).unwrap()
            }).collect())
            .collect();
        let (ys, residual) = backward_y_pass(&states, &mu, &sigma, &m);
        for (k, y) in ys.iter().enumerate() {
            for p in 0..8 {
                let total: f64 = (0..m.agents()).map(|a| y.get(p, a)).sum();
                prop_assert!(total.abs() <= 1e-12, "step {k} path {p}: {total:e}");
                prop_assert!(residual[k][p].abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn two_agent_power_drift_is_antisymmetric(seed in any::<u64>(), steps in 1usize..30) {
        let m = model("power2", steps);
        let states = random_states(&m, 8, seed);
        let sigma = random_sigmas(steps, 8, seed);
        let mu: Vec<Vec<f64>> = (0..=steps)
            .map(|k| (0..8).map(|p| {
                mu_two_agent_power(sigma[k][p], states.phi[k].get(p, 0), states.phi[k].get(p, 1), states.b[k][p], &m.roster).unwrap()
            }).collect())
            .collect();
        let (ys, _) = backward_y_pass(&states, &mu, &sigma, &m);
        for y in &ys {
            for p in 0..8 {
                prop_assert!((y.get(p, 0) + y.get(p, 1)).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn path_batches_are_seed_determined(seed in any::<u64>(), batch in 1usize..40, steps in 1usize..20) {
        let grid = eqrgan::paths::TimeGrid::new(steps, 0.5).unwrap();
        let a = PathBatch::sample(seed, batch, &grid, 1).unwrap();
        let b = PathBatch::sample(seed, batch, &grid, 1).unwrap();
        prop_assert_eq!(&a, &b);
        for p in 0..batch {
            prop_assert_eq!(a.level(p, 0, 0), 0.0);
            let mut acc = 0.0;
            for k in 0..steps {
                acc += a.increment(p, k, 0);
                prop_assert!((a.level(p, k + 1, 0) - acc).abs() < 1e-12);
            }
        }
        if batch > 1 {
            let s = a.slice(1, batch);
            prop_assert_eq!(s.level(0, steps, 0), a.level(1, steps, 0));
        }
    }

    #[test]
    fn nonzero_aggregate_endowment_is_rejected(shift in prop_oneof![-5.0..-1e-6f64, 1e-6..5.0f64]) {
        let mut xis = market::TEN_AGENT_XIS;
        xis[0] += shift;
        let roster = frictionless_roster(&market::TEN_AGENT_GAMMAS, &xis, 1.0);
        let cfg: MarketConfig = eqrgan::experiment::preset("quad10").unwrap().market;
        let violations = match roster {
            Ok(r) => market::validate(&cfg, &r).unwrap_err(),
            Err(_) => return Ok(()),
        };
        prop_assert!(violations.iter().any(|v| matches!(v, Violation::AggregateEndowmentNonzero(_))));
    }

    #[test]
    fn adam_leaves_parameters_alone_on_zero_gradient(values in prop::collection::vec(-10.0f64..10.0, 1..20), steps in 1usize..5) {
        let mut t = Tensor::from_vec(1, values.len(), values.clone());
        let mut state = AdamState::for_params(AdamConfig::default(), &[&t]);
        for i in 0..steps {
            adam_step(&mut [&mut t], &[Tensor::zeros(1, values.len())], &mut state).unwrap();
            prop_assert_eq!(state.step_count(), i as u64 + 1);
        }
        prop_assert_eq!(t.data(), &values[..]);
    }

    #[test]
    fn checkpoints_round_trip(seed in any::<u64>(), steps in 1usize..6) {
        let m = model("power2", steps);
        let pilot = common::pilot(&m, seed, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = GeneratorParams::<f32>::init(&m, &GeneratorSpec::default(), &pilot, &mut rng).unwrap();
        let d = DiscriminatorParams::<f32>::init(&m, &DiscriminatorSpec::default(), &pilot, &mut rng).unwrap();
        let c = Checkpoint::new(Precision::F32, 0, &g, &d);
        let (g2, d2) = Checkpoint::from_json(&c.to_json().unwrap()).unwrap().params::<f32>(&m).unwrap();
        prop_assert_eq!(g, g2);
        prop_assert_eq!(d, d2);
    }
}
