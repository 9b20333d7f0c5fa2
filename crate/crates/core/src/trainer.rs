//! The alternating training loop.
//!
//! Each round runs a generator phase and then a discriminator phase. During a
//! phase the other side is read through a frozen callback, so its parameters
//! receive no gradient and are not touched. Every epoch draws a fresh batch from
//! a seed derived from `(seed, round, epoch, phase)`.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::diffcore::{adam_step, AdamConfig, AdamState, Precision, Real, Tensor};
use crate::discriminator::{discriminator_pass, DiscriminatorDynamics, DiscriminatorParams, DiscriminatorSpec};
use crate::error::{Error, Result, TrainingSite};
use crate::evaluation::{evaluate_profile, Evaluation, DEFAULT_EVAL_PATHS};
use crate::generator::{generator_rollout, GeneratorParams, GeneratorPolicy, GeneratorSpec};
use crate::paths::{derive_seed, PathBatch, Phase};
use crate::rollout::{simulate_states, Model, PriceDynamics, StatePaths, ZeroPolicy};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub rounds: usize,
    /// Epochs per generator phase.
    pub generator_epochs: usize,
    /// Epochs per discriminator phase.
    pub discriminator_epochs: usize,
    pub batch: usize,
    pub generator_adam: AdamConfig,
    pub discriminator_adam: AdamConfig,
    /// Learning rates are multiplied by `lr_decay` every `lr_decay_every` rounds.
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    pub seed: u64,
    pub precision: Precision,
    /// Save a checkpoint every this many rounds (0 = only at the end).
    pub checkpoint_every: usize,
    /// Batches are split into this many chunks that run in parallel and are
    /// reduced in order. Results depend on this value but not on thread count.
    pub chunks: usize,
    /// Zero-policy paths used to fix input standardization and output scales.
    pub pilot_paths: usize,
    pub generator: GeneratorSpec,
    pub discriminator: DiscriminatorSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            rounds: 50,
            generator_epochs: 20,
            discriminator_epochs: 20,
            batch: 256,
            generator_adam: AdamConfig::default(),
            discriminator_adam: AdamConfig::default(),
            lr_decay: 0.5,
            lr_decay_every: 15,
            seed: 20_240_917,
            precision: Precision::F32,
            checkpoint_every: 0,
            chunks: 4,
            pilot_paths: 1024,
            generator: GeneratorSpec::default(),
            discriminator: DiscriminatorSpec::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.rounds == 0 {
            bad.push("rounds must be at least 1");
        }
        if self.generator_epochs == 0 || self.discriminator_epochs == 0 {
            bad.push("epochs must be at least 1");
        }
        if self.batch == 0 {
            bad.push("batch must be at least 1");
        }
        if self.chunks == 0 {
            bad.push("chunks must be at least 1");
        }
        if self.pilot_paths == 0 {
            bad.push("pilot_paths must be at least 1");
        }
        if !(self.lr_decay > 0.0) || self.lr_decay_every == 0 {
            bad.push("lr_decay must be positive and lr_decay_every at least 1");
        }
        for a in [&self.generator_adam, &self.discriminator_adam] {
            if !(a.lr > 0.0) || !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
                bad.push("Adam needs lr > 0, betas in [0, 1) and eps > 0");
                break;
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad.join("; ")))
        }
    }

    /// Learning-rate multiplier in effect during `round`.
    pub fn lr_factor(&self, round: usize) -> f64 {
        self.lr_decay.powi((round / self.lr_decay_every) as i32)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseKind {
    Generator,
    Discriminator,
}

impl PhaseKind {
    pub fn name(self) -> &'static str {
        match self {
            PhaseKind::Generator => "generator",
            PhaseKind::Discriminator => "discriminator",
        }
    }
}

/// One epoch of one phase.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub round: usize,
    pub phase: PhaseKind,
    pub epoch: usize,
    /// Seed of the batch this epoch consumed.
    pub seed: u64,
    pub loss: f64,
    /// `mean_{k, paths} (sum_n rate_n)^2` of the generator's rates.
    pub clearing: f64,
    /// `mean (S_K - S_T)^2`.
    pub terminal: f64,
    /// Batch mean of `sum_n J_n` (generator phase only, NaN otherwise).
    pub sum_j: f64,
    pub s0: f64,
    pub wall_ms: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    pub fn phase(&self, phase: PhaseKind) -> impl Iterator<Item = &LogRow> {
        self.rows.iter().filter(move |r| r.phase == phase)
    }

    /// Mean loss of one phase of one round.
    pub fn round_loss(&self, round: usize, phase: PhaseKind) -> Option<f64> {
        let rows: Vec<f64> = self.phase(phase).filter(|r| r.round == round).map(|r| r.loss).collect();
        (!rows.is_empty()).then(|| rows.iter().sum::<f64>() / rows.len() as f64)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["round", "phase", "epoch", "seed", "loss", "clearing", "terminal", "sum_j", "s0", "wall_ms"])
            .map_err(csv_err)?;
        for r in &self.rows {
            w.write_record([
                r.round.to_string(),
                r.phase.name().to_string(),
                r.epoch.to_string(),
                r.seed.to_string(),
                r.loss.to_string(),
                r.clearing.to_string(),
                r.terminal.to_string(),
                r.sum_j.to_string(),
                r.s0.to_string(),
                format!("{:.3}", r.wall_ms),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io("trainlog csv", e))
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format { what: "trainlog csv".into(), detail: e.to_string() }
}

/// Where and how often to save checkpoints.
#[derive(Clone, Debug, Default)]
pub struct CheckpointSink {
    pub dir: Option<PathBuf>,
}

impl CheckpointSink {
    fn save<T: Real>(&self, cfg: &TrainConfig, round: usize, gen: &GeneratorParams<T>, dis: &DiscriminatorParams<T>) -> Result<Option<PathBuf>> {
        let Some(dir) = &self.dir else { return Ok(None) };
        let path = dir.join(format!("round-{round:04}.ckpt"));
        Checkpoint::new(cfg.precision, round, gen, dis).save(&path)?;
        Ok(Some(path))
    }
}

pub struct TrainOutcome<T> {
    pub generator: GeneratorParams<T>,
    pub discriminator: DiscriminatorParams<T>,
    pub log: TrainLog,
}

/// Fresh parameters from a zero-policy pilot rollout.
pub fn initialize<T: Real>(model: &Model, cfg: &TrainConfig) -> Result<(GeneratorParams<T>, DiscriminatorParams<T>)> {
    let pilot_paths = PathBatch::sample(derive_seed(cfg.seed, 0, 0, Phase::Pilot), cfg.pilot_paths, &model.grid, 1)?;
    let pilot: StatePaths<f64> = simulate_states(model, &ZeroPolicy, &pilot_paths)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let gen = GeneratorParams::init(model, &cfg.generator, &pilot, &mut rng)?;
    let dis = DiscriminatorParams::init(model, &cfg.discriminator, &pilot, &mut rng)?;
    Ok((gen, dis))
}

/// Runs the full alternating loop from fresh parameters.
pub fn train<T: Real>(model: &Model, cfg: &TrainConfig, sink: &CheckpointSink) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    let (gen, dis) = initialize(model, cfg)?;
    train_from(model, cfg, sink, gen, dis)
}

/// Runs the alternating loop from given parameters.
pub fn train_from<T: Real>(
    model: &Model,
    cfg: &TrainConfig,
    sink: &CheckpointSink,
    mut gen: GeneratorParams<T>,
    mut dis: DiscriminatorParams<T>,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    gen.check(model)?;
    dis.check(model)?;
    let mut gen_opt = AdamState::for_params(cfg.generator_adam, &gen.tensors());
    let mut dis_opt = AdamState::for_params(cfg.discriminator_adam, &dis.tensors());
    let mut log = TrainLog::default();
    let mut last_ckpt: Option<PathBuf> = None;
    let with_ckpt = |e: Error, last: &Option<PathBuf>| match e {
        Error::NonFinite { what, site, .. } => Error::NonFinite { what, site, last_checkpoint: last.clone() },
        other => other,
    };

    for round in 0..cfg.rounds {
        let factor = cfg.lr_factor(round);
        gen_opt.set_lr(cfg.generator_adam.lr * factor);
        dis_opt.set_lr(cfg.discriminator_adam.lr * factor);

        for epoch in 0..cfg.generator_epochs {
            let dynamics = DiscriminatorDynamics { params: &dis, model };
            let row = generator_epoch(model, cfg, &mut gen, &dynamics, &mut gen_opt, round, epoch).map_err(|e| with_ckpt(e, &last_ckpt))?;
            log::info!(
                "round {round} generator epoch {epoch}: loss {:.6e} sum_j {:.6e} clearing {:.3e}",
                row.loss,
                row.sum_j,
                row.clearing
            );
            log.rows.push(row);
        }
        for epoch in 0..cfg.discriminator_epochs {
            let row = discriminator_epoch(model, cfg, &gen, &mut dis, &mut dis_opt, round, epoch).map_err(|e| with_ckpt(e, &last_ckpt))?;
            log::info!(
                "round {round} discriminator epoch {epoch}: loss {:.6e} terminal {:.3e} S0 {:.6}",
                row.loss,
                row.terminal,
                row.s0
            );
            log.rows.push(row);
        }
        if cfg.checkpoint_every > 0 && (round + 1) % cfg.checkpoint_every == 0 {
            if let Some(p) = sink.save(cfg, round + 1, &gen, &dis)? {
                last_ckpt = Some(p);
            }
        }
    }
    Ok(TrainOutcome { generator: gen, discriminator: dis, log })
}

/// Trains only the policies against fixed price dynamics for
/// `rounds * generator_epochs` epochs. The learning-rate schedule follows
/// [`TrainConfig::lr_factor`].
pub fn train_best_response<T: Real>(
    model: &Model,
    cfg: &TrainConfig,
    dynamics: &dyn PriceDynamics<T>,
    mut gen: GeneratorParams<T>,
) -> Result<(GeneratorParams<T>, TrainLog)> {
    cfg.validate()?;
    gen.check(model)?;
    let mut opt = AdamState::for_params(cfg.generator_adam, &gen.tensors());
    let mut log = TrainLog::default();
    for round in 0..cfg.rounds {
        opt.set_lr(cfg.generator_adam.lr * cfg.lr_factor(round));
        for epoch in 0..cfg.generator_epochs {
            let row = generator_epoch(model, cfg, &mut gen, dynamics, &mut opt, round, epoch)?;
            log::info!("round {round} best-response epoch {epoch}: loss {:.6e} clearing {:.3e}", row.loss, row.clearing);
            log.rows.push(row);
        }
    }
    Ok((gen, log))
}

struct GenChunk<T> {
    grads: Vec<Tensor<T>>,
    loss: f64,
    sum_j: f64,
    clearing: f64,
    terminal: f64,
}

fn chunk_bounds(batch: usize, chunks: usize) -> Vec<(usize, usize)> {
    let chunks = chunks.min(batch);
    let base = batch / chunks;
    let extra = batch % chunks;
    let mut out = Vec::with_capacity(chunks);
    let mut start = 0;
    for c in 0..chunks {
        let len = base + usize::from(c < extra);
        out.push((start, start + len));
        start += len;
    }
    out
}

fn sum_grads<T: Real>(mut parts: Vec<Vec<Tensor<T>>>) -> Vec<Tensor<T>> {
    let mut total = parts.remove(0);
    for p in parts {
        for (t, g) in total.iter_mut().zip(&p) {
            t.add_assign(g);
        }
    }
    total
}

fn site(round: usize, epoch: usize, phase: PhaseKind, agent: Option<usize>) -> TrainingSite {
    TrainingSite { round, epoch, phase: phase.name(), agent }
}

fn relocate(e: Error, round: usize, epoch: usize, phase: PhaseKind) -> Error {
    match e {
        Error::NonFinite { what, site: s, last_checkpoint } => {
            Error::NonFinite { what, site: site(round, epoch, phase, s.agent), last_checkpoint }
        }
        other => other,
    }
}

fn generator_epoch<T: Real>(
    model: &Model,
    cfg: &TrainConfig,
    gen: &mut GeneratorParams<T>,
    dynamics: &dyn PriceDynamics<T>,
    opt: &mut AdamState<T>,
    round: usize,
    epoch: usize,
) -> Result<LogRow> {
    let started = Instant::now();
    let seed = derive_seed(cfg.seed, round, epoch, Phase::Generator);
    let paths = PathBatch::sample(seed, cfg.batch, &model.grid, 1)?;
    let s0 = dynamics.initial_price();
    let frozen: &GeneratorParams<T> = gen;
    let parts: Vec<GenChunk<T>> = chunk_bounds(cfg.batch, cfg.chunks)
        .par_iter()
        .map(|&(s, e)| {
            let chunk = paths.slice(s, e);
            let r = generator_rollout(frozen, dynamics, &chunk, model, cfg.batch)?;
            let grads = r.gradients(frozen)?;
            let tr = &r.trajectories;
            let steps = model.steps();
            let len = (e - s) as f64;
            let mut clearing = 0.0;
            for k in 0..=steps {
                for p in 0..chunk.batch() {
                    let net: f64 = (0..model.agents()).map(|a| tr.states.rates[k].get(p, a).as_f64()).sum();
                    clearing += net * net;
                }
            }
            let mut terminal = 0.0;
            for p in 0..chunk.batch() {
                let mut price = s0;
                for k in 0..steps {
                    price += tr.mu[k][p].as_f64() * model.dt() + tr.sigma[k][p].as_f64() * chunk.increment(p, k, 0);
                }
                let d = price - model.terminal_dividend(chunk.level(p, steps, 0));
                terminal += d * d;
            }
            Ok(GenChunk {
                grads,
                loss: r.loss_value(),
                sum_j: r.objective.iter().sum::<f64>() * len,
                clearing: clearing / (steps + 1) as f64,
                terminal,
            })
        })
        .collect::<Result<_>>()
        .map_err(|e| relocate(e, round, epoch, PhaseKind::Generator))?;
    let loss: f64 = parts.iter().map(|p| p.loss).sum();
    let total = cfg.batch as f64;
    let sum_j = parts.iter().map(|p| p.sum_j).sum::<f64>() / total;
    let clearing = parts.iter().map(|p| p.clearing).sum::<f64>() / total;
    let terminal = parts.iter().map(|p| p.terminal).sum::<f64>() / total;
    if !loss.is_finite() {
        return Err(Error::NonFinite { what: "generator loss".into(), site: site(round, epoch, PhaseKind::Generator, None), last_checkpoint: None });
    }
    let grads = sum_grads(parts.into_iter().map(|p| p.grads).collect());
    adam_step(&mut gen.tensors_mut(), &grads, opt).map_err(|bad| Error::NonFinite {
        what: format!("generator gradient (tensor {})", bad.tensor),
        site: site(round, epoch, PhaseKind::Generator, None),
        last_checkpoint: None,
    })?;
    Ok(LogRow {
        round,
        phase: PhaseKind::Generator,
        epoch,
        seed,
        loss,
        clearing,
        terminal,
        sum_j,
        s0,
        wall_ms: started.elapsed().as_secs_f64() * 1e3,
    })
}

fn discriminator_epoch<T: Real>(
    model: &Model,
    cfg: &TrainConfig,
    gen: &GeneratorParams<T>,
    dis: &mut DiscriminatorParams<T>,
    opt: &mut AdamState<T>,
    round: usize,
    epoch: usize,
) -> Result<LogRow> {
    let started = Instant::now();
    let seed = derive_seed(cfg.seed, round, epoch, Phase::Discriminator);
    let paths = PathBatch::sample(seed, cfg.batch, &model.grid, 1)?;
    let policy = GeneratorPolicy { params: gen, model };
    let frozen: &DiscriminatorParams<T> = dis;
    let parts: Vec<(Vec<Tensor<T>>, f64, f64, f64)> = chunk_bounds(cfg.batch, cfg.chunks)
        .par_iter()
        .map(|&(s, e)| {
            let chunk = paths.slice(s, e);
            let states = simulate_states(model, &policy, &chunk)?;
            let pass = discriminator_pass(frozen, &states, &chunk, model, cfg.batch)?;
            let grads = pass.gradients(frozen)?;
            let len = (e - s) as f64;
            let steps = model.steps();
            let mut clearing = 0.0;
            for k in 0..=steps {
                for p in 0..chunk.batch() {
                    let net: f64 = (0..model.agents()).map(|a| states.rates[k].get(p, a).as_f64()).sum();
                    clearing += net * net;
                }
            }
            Ok((grads, pass.loss_value(), clearing / (steps + 1) as f64, pass.diagnostics.terminal * len))
        })
        .collect::<Result<_>>()
        .map_err(|e| relocate(e, round, epoch, PhaseKind::Discriminator))?;
    let total = cfg.batch as f64;
    let loss: f64 = parts.iter().map(|p| p.1).sum();
    let clearing = parts.iter().map(|p| p.2).sum::<f64>() / total;
    let terminal = parts.iter().map(|p| p.3).sum::<f64>() / total;
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            what: "discriminator loss".into(),
            site: site(round, epoch, PhaseKind::Discriminator, None),
            last_checkpoint: None,
        });
    }
    let grads = sum_grads(parts.into_iter().map(|p| p.0).collect());
    adam_step(&mut dis.tensors_mut(), &grads, opt).map_err(|bad| Error::NonFinite {
        what: format!("discriminator gradient (tensor {})", bad.tensor),
        site: site(round, epoch, PhaseKind::Discriminator, None),
        last_checkpoint: None,
    })?;
    Ok(LogRow {
        round,
        phase: PhaseKind::Discriminator,
        epoch,
        seed,
        loss,
        clearing,
        terminal,
        sum_j: f64::NAN,
        s0: dis.initial_price(),
        wall_ms: started.elapsed().as_secs_f64() * 1e3,
    })
}

/// Evaluates trained parameters on a fresh batch of `n_paths`, keeping `keep`
/// full trajectories.
pub fn evaluate<T: Real>(
    gen: &GeneratorParams<T>,
    dis: &DiscriminatorParams<T>,
    model: &Model,
    n_paths: usize,
    seed: u64,
    keep: usize,
) -> Result<Evaluation> {
    let paths = PathBatch::sample(derive_seed(seed, 0, 0, Phase::Evaluation), n_paths, &model.grid, 1)?;
    let policy = GeneratorPolicy { params: gen, model };
    let dynamics = DiscriminatorDynamics { params: dis, model };
    evaluate_profile(model, &policy, &dynamics, &paths, keep)
}

/// [`evaluate`] with the default 3000 paths.
pub fn evaluate_default<T: Real>(gen: &GeneratorParams<T>, dis: &DiscriminatorParams<T>, model: &Model, seed: u64) -> Result<Evaluation> {
    evaluate(gen, dis, model, DEFAULT_EVAL_PATHS, seed, 0)
}

/// The evaluation batch used for a given seed; shared with the oracle so rows
/// are compared on identical paths.
pub fn evaluation_paths(model: &Model, n_paths: usize, seed: u64) -> Result<PathBatch> {
    PathBatch::sample(derive_seed(seed, 0, 0, Phase::Evaluation), n_paths, &model.grid, 1)
}

/// Caps the global worker pool at `EQRGAN_THREADS` when set. Returns the cap.
pub fn configure_threads() -> Option<usize> {
    let n = std::env::var("EQRGAN_THREADS").ok()?.trim().parse::<usize>().ok().filter(|&n| n > 0)?;
    // a pool that is already built keeps its size
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Some(n)
}

/// Writes the final checkpoint of an outcome.
pub fn save_outcome<T: Real>(path: &Path, cfg: &TrainConfig, outcome: &TrainOutcome<T>) -> Result<()> {
    Checkpoint::new(cfg.precision, cfg.rounds, &outcome.generator, &outcome.discriminator).save(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rollout::fixtures::*;

    fn tiny() -> TrainConfig {
        TrainConfig {
            rounds: 1,
            generator_epochs: 1,
            discriminator_epochs: 1,
            batch: 2,
            chunks: 2,
            pilot_paths: 8,
            generator: GeneratorSpec { net: crate::generator::NetSpec { hidden: vec![4], ..Default::default() }, ..Default::default() },
            discriminator: DiscriminatorSpec { net: crate::generator::NetSpec { hidden: vec![4], ..Default::default() }, ..Default::default() },
            ..Default::default()
        }
    }

    #[test]
    fn loop_accounting() {
        let m = two_agent(2.0, 4);
        let out = train::<f64>(&m, &tiny(), &CheckpointSink::default()).unwrap();
        assert_eq!(out.log.rows.len(), 2);
        assert_eq!(out.log.rows[0].phase, PhaseKind::Generator);
        assert_eq!(out.log.rows[1].phase, PhaseKind::Discriminator);
        let zero = TrainConfig { rounds: 0, ..tiny() };
        assert!(matches!(train::<f64>(&m, &zero, &CheckpointSink::default()), Err(Error::Config(_))));
    }

    #[test]
    fn same_seed_same_log() {
        let m = two_agent(1.5, 5);
        let cfg = TrainConfig { rounds: 2, generator_epochs: 2, discriminator_epochs: 2, batch: 6, ..tiny() };
        let a = train::<f64>(&m, &cfg, &CheckpointSink::default()).unwrap();
        let b = train::<f64>(&m, &cfg, &CheckpointSink::default()).unwrap();
        let la: Vec<u64> = a.log.rows.iter().map(|r| r.loss.to_bits()).collect();
        let lb: Vec<u64> = b.log.rows.iter().map(|r| r.loss.to_bits()).collect();
        assert_eq!(la, lb);
        assert_eq!(a.generator, b.generator);
    }

    #[test]
    fn lr_schedule() {
        let c = TrainConfig::default();
        assert_eq!(c.lr_factor(0), 1.0);
        assert_eq!(c.lr_factor(14), 1.0);
        assert_eq!(c.lr_factor(15), 0.5);
        assert_eq!(c.lr_factor(31), 0.25);
    }

    #[test]
    fn chunk_bounds_cover_batch() {
        assert_eq!(chunk_bounds(10, 3), vec![(0, 4), (4, 7), (7, 10)]);
        assert_eq!(chunk_bounds(2, 4), vec![(0, 1), (1, 2)]);
    }
}
