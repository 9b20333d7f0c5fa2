//! Reverse-mode gradients against central finite differences in f64.

mod common;

use common::fd::{self, TOL};

#[test]
fn fifty_random_networks() {
    let worst = fd::random_networks();
    println!("random networks: max relative error {worst:.3e}");
    assert!(worst <= TOL, "max relative error {worst:e}");
}

#[test]
fn generator_rollout_loss_two_agents() {
    for name in ["quad2_smoke", "power2"] {
        let worst = fd::generator_loss(name);
        println!("generator loss ({name}, K = 5, batch 4): max relative error {worst:.3e}");
        assert!(worst <= TOL, "{name}: {worst:e}");
    }
}

#[test]
fn discriminator_loss_two_agents() {
    let worst = fd::discriminator_loss();
    println!("discriminator loss (K = 5, batch 4): max relative error {worst:.3e}");
    assert!(worst <= TOL, "{worst:e}");
}
