//! Trains briefly, saves a checkpoint, reloads it and evaluates both copies.
//!
//! `cargo run --release --example checkpoint_roundtrip`

use eqrgan::checkpoint::Checkpoint;
use eqrgan::experiment::preset;
use eqrgan::trainer::{evaluate, save_outcome, train, CheckpointSink};

fn main() -> eqrgan::Result<()> {
    let mut spec = preset("power2")?;
    spec.market.steps = 10;
    spec.train.rounds = 3;
    spec.train.generator_epochs = 5;
    spec.train.discriminator_epochs = 5;
    spec.train.batch = 64;
    let model = spec.model()?;
    let out = train::<f32>(&model, &spec.train, &CheckpointSink::default())?;

    let dir = std::env::temp_dir().join("eqrgan-checkpoint-example");
    std::fs::create_dir_all(&dir).map_err(|e| eqrgan::Error::io(&dir, e))?;
    let path = dir.join("params.ckpt");
    save_outcome(&path, &spec.train, &out)?;
    let (gen, dis) = Checkpoint::load(&path)?.params::<f32>(&model)?;
    println!("saved and reloaded {}", path.display());

    let before = evaluate(&out.generator, &out.discriminator, &model, 1000, 7, 0)?;
    let after = evaluate(&gen, &dis, &model, 1000, 7, 0)?;
    println!("{}  in memory", before.report.row());
    println!("{}  reloaded", after.report.row());
    assert_eq!(before.report, after.report);
    Ok(())
}
