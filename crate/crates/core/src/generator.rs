//! Per-agent policy learning.
//!
//! Each agent owns one tanh network per time step mapping the public state to
//! its trading rate. A rollout advances every agent's position through those
//! networks under frozen price dynamics and accumulates the discretized LQ
//! objective `sum_k f(t_k) dt` over `k = 0..=K`. The loss is `-sum_n J_n / batch`.
//!
//! In [`GeneratorMode::General`] each agent additionally learns `y_0` and a
//! volatility head `Z`, simulates the adjoint equation forward and pays
//! `||Y_K - d/dx g(X_K)||^2` (zero terminal reward here).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Gradients, Graph, MlpParams, MlpVars, Real, Tensor, Var};
use crate::error::{Error, Result};
use crate::paths::PathBatch;
use crate::rollout::{brownian_increments, brownian_levels, Model, PolicyEval, PriceDynamics, StatePaths, StepState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorMode {
    /// Objective only, no adjoint simulation.
    #[default]
    Lq,
    /// Adds the forward-simulated adjoint with learned `y_0` and `Z`.
    General,
}

/// What each agent's network sees besides `B_k`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PolicyInputs {
    /// Only the agent's own fast variable.
    OwnState,
    /// Every agent's fast variable.
    #[default]
    JointState,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NetLayout {
    /// One network per agent and time step.
    #[default]
    PerStep,
    /// One network per agent with `t / T` as an extra input.
    Shared,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetSpec {
    pub hidden: Vec<usize>,
    /// Adds a linear input-to-output path alongside the tanh layers.
    pub skip: bool,
    /// Scale of the output layer's initial weights.
    pub output_gain: f64,
}

impl Default for NetSpec {
    fn default() -> Self {
        Self { hidden: vec![32, 32], skip: true, output_gain: 0.1 }
    }
}

impl NetSpec {
    pub fn widths(&self, input: usize, output: usize) -> Vec<usize> {
        let mut w = vec![input];
        w.extend(&self.hidden);
        w.push(output);
        w
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorSpec {
    pub mode: GeneratorMode,
    pub inputs: PolicyInputs,
    pub layout: NetLayout,
    pub net: NetSpec,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self { mode: GeneratorMode::Lq, inputs: PolicyInputs::JointState, layout: NetLayout::PerStep, net: NetSpec::default() }
    }
}

/// Frozen input standardization `z = (x - shift) / scale`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputNorm {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl InputNorm {
    pub fn identity(width: usize) -> Self {
        Self { shift: vec![0.0; width], scale: vec![1.0; width] }
    }

    /// Column mean and standard deviation; near-constant columns keep unit scale.
    pub fn fit(columns: &[Vec<f64>]) -> Self {
        let mut shift = Vec::with_capacity(columns.len());
        let mut scale = Vec::with_capacity(columns.len());
        for col in columns {
            let n = col.len().max(1) as f64;
            let mean = col.iter().sum::<f64>() / n;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let sd = var.sqrt();
            if sd > 1e-8 * (1.0 + mean.abs()) {
                shift.push(mean);
                scale.push(sd);
            } else {
                shift.push(mean);
                scale.push(1.0);
            }
        }
        Self { shift, scale }
    }

    pub fn width(&self) -> usize {
        self.shift.len()
    }

    fn select(&self, idx: &[usize]) -> Self {
        Self { shift: idx.iter().map(|&i| self.shift[i]).collect(), scale: idx.iter().map(|&i| self.scale[i]).collect() }
    }

    fn factor_row<T: Real>(&self) -> (Vec<T>, Vec<T>) {
        let inv: Vec<T> = self.scale.iter().map(|&s| T::of(1.0 / s)).collect();
        let off: Vec<T> = self.shift.iter().zip(&self.scale).map(|(&m, &s)| T::of(-m / s)).collect();
        (inv, off)
    }

    /// Value-level standardization, same arithmetic as [`InputNorm::apply_graph`].
    pub fn apply<T: Real>(&self, x: &Tensor<T>) -> Tensor<T> {
        let (inv, off) = self.factor_row::<T>();
        let mut out = x.clone();
        let cols = x.cols();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v = *v * inv[i % cols];
        }
        out.add_row(&Tensor::from_vec(1, cols, off))
    }

    pub fn apply_graph<T: Real>(&self, g: &mut Graph<T>, x: Var) -> Var {
        let (rows, cols) = g.shape(x);
        let (inv, off) = self.factor_row::<T>();
        let mut full = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            full.extend_from_slice(&inv);
        }
        let inv_v = g.constant(Tensor::from_vec(rows, cols, full));
        let off_v = g.constant(Tensor::from_vec(1, cols, off));
        let z = g.mul(x, inv_v);
        g.add_row(z, off_v)
    }
}

/// Trainable generator state.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorParams<T> {
    pub spec: GeneratorSpec,
    /// `nets[n][k]`; a single entry per agent for [`NetLayout::Shared`].
    pub nets: Vec<Vec<MlpParams<T>>>,
    /// Joint-feature standardization `[X_1..X_N, B]` per time step.
    pub norms: Vec<InputNorm>,
    /// Per-agent multiplier on the network's rate output.
    pub rate_scale: Vec<f64>,
    /// Per-agent multiplier on the `Z` output (general mode).
    pub adjoint_scale: Vec<f64>,
    /// `1 x N` initial adjoint values (general mode).
    pub y0: Tensor<T>,
}

impl<T: Real> GeneratorParams<T> {
    /// Fresh parameters. `pilot` states (typically a zero-policy rollout) fix the
    /// input standardization and output scales.
    pub fn init<R: Rng>(model: &Model, spec: &GeneratorSpec, pilot: &StatePaths<f64>, rng: &mut R) -> Result<Self> {
        let n = model.agents();
        let steps = model.steps();
        if pilot.x.len() != steps + 1 {
            return Err(Error::Config("pilot rollout does not match the time grid".into()));
        }
        let norms: Vec<InputNorm> = match spec.layout {
            NetLayout::PerStep => (0..=steps).map(|k| fit_joint(pilot, k..k + 1)).collect(),
            NetLayout::Shared => vec![fit_joint(pilot, 0..steps + 1)],
        };
        let horizon = model.config.horizon;
        let rate_scale: Vec<f64> = (0..n)
            .map(|a| {
                let (mut ss, mut cnt) = (0.0, 0.0);
                for k in 0..=steps {
                    for p in 0..pilot.batch() {
                        ss += pilot.x[k].get(p, a).powi(2);
                        cnt += 1.0;
                    }
                }
                ((ss / cnt).sqrt() / horizon).max(1.0)
            })
            .collect();
        let adjoint_scale = model
            .roster
            .iter()
            .map(|a| (a.risk_aversion * a.endowment_vol.abs() * horizon).max(model.config.cost_level))
            .collect();
        let outputs = match spec.mode {
            GeneratorMode::Lq => 1,
            GeneratorMode::General => 2,
        };
        let width = input_width(spec, n);
        let per_agent = match spec.layout {
            NetLayout::PerStep => steps + 1,
            NetLayout::Shared => 1,
        };
        let widths = spec.net.widths(width, outputs);
        let nets = (0..n)
            .map(|_| (0..per_agent).map(|_| MlpParams::init(&widths, spec.net.skip, spec.net.output_gain, rng)).collect())
            .collect();
        Ok(Self { spec: spec.clone(), nets, norms, rate_scale, adjoint_scale, y0: Tensor::zeros(1, n) })
    }

    pub fn agents(&self) -> usize {
        self.nets.len()
    }

    fn net(&self, agent: usize, k: usize) -> &MlpParams<T> {
        match self.spec.layout {
            NetLayout::PerStep => &self.nets[agent][k],
            NetLayout::Shared => &self.nets[agent][0],
        }
    }

    fn norm(&self, k: usize) -> &InputNorm {
        match self.spec.layout {
            NetLayout::PerStep => &self.norms[k],
            NetLayout::Shared => &self.norms[0],
        }
    }

    fn time_feature(&self, model: &Model, k: usize) -> Option<T> {
        match self.spec.layout {
            NetLayout::PerStep => None,
            NetLayout::Shared => Some(T::of(model.grid.knot(k) / model.config.horizon)),
        }
    }

    /// Parameter tensors in canonical order: every network, then `y0`.
    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        let mut out: Vec<&Tensor<T>> = self.nets.iter().flatten().flat_map(|m| m.tensors()).collect();
        out.push(&self.y0);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out: Vec<&mut Tensor<T>> = self.nets.iter_mut().flatten().flat_map(|m| m.tensors_mut()).collect();
        out.push(&mut self.y0);
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Network outputs for agent `n` at step `k` (value level).
    pub fn policy_eval(&self, model: &Model, agent: usize, k: usize, x: &Tensor<T>, b: &[T]) -> Result<Tensor<T>> {
        let feats = self.features(model, agent, k, x, b);
        self.net(agent, k).forward(&feats)
    }

    fn features(&self, model: &Model, agent: usize, k: usize, x: &Tensor<T>, b: &[T]) -> Tensor<T> {
        let rows = x.rows();
        let n = x.cols();
        let joint = {
            let mut t = Tensor::zeros(rows, n + 1);
            for p in 0..rows {
                for a in 0..n {
                    t.set(p, a, x.get(p, a));
                }
                t.set(p, n, b[p]);
            }
            t
        };
        let (raw, norm) = match self.spec.inputs {
            PolicyInputs::JointState => (joint, self.norm(k).clone()),
            PolicyInputs::OwnState => {
                let mut t = Tensor::zeros(rows, 2);
                for p in 0..rows {
                    t.set(p, 0, x.get(p, agent));
                    t.set(p, 1, b[p]);
                }
                (t, self.norm(k).select(&[agent, n]))
            }
        };
        let z = norm.apply(&raw);
        match self.time_feature(model, k) {
            None => z,
            Some(t) => append_column(&z, t),
        }
    }

    /// Trading rates for every agent (value level).
    pub fn rates_at(&self, model: &Model, k: usize, x: &Tensor<T>, b: &[T]) -> Result<Tensor<T>> {
        let rows = x.rows();
        let n = self.agents();
        let mut rates = Tensor::zeros(rows, n);
        for a in 0..n {
            let out = self.policy_eval(model, a, k, x, b)?;
            let s = T::of(self.rate_scale[a]);
            for p in 0..rows {
                rates.set(p, a, out.get(p, 0) * s);
            }
        }
        Ok(rates)
    }

    pub fn cast<U: Real>(&self) -> GeneratorParams<U> {
        GeneratorParams {
            spec: self.spec.clone(),
            nets: self.nets.iter().map(|v| v.iter().map(|m| m.cast()).collect()).collect(),
            norms: self.norms.clone(),
            rate_scale: self.rate_scale.clone(),
            adjoint_scale: self.adjoint_scale.clone(),
            y0: self.y0.cast(),
        }
    }

    /// Structural check against a model.
    pub fn check(&self, model: &Model) -> Result<()> {
        let n = model.agents();
        if self.nets.len() != n || self.rate_scale.len() != n || self.y0.shape() != (1, n) {
            return Err(Error::Config(format!("generator has {} agents, model has {n}", self.nets.len())));
        }
        let per_agent = match self.spec.layout {
            NetLayout::PerStep => model.steps() + 1,
            NetLayout::Shared => 1,
        };
        let width = input_width(&self.spec, n);
        for nets in &self.nets {
            if nets.len() != per_agent {
                return Err(Error::Config(format!("generator has {} networks per agent, expected {per_agent}", nets.len())));
            }
            for net in nets {
                net.check()?;
                if net.input_width() != width {
                    return Err(Error::Config(format!("generator network input width {} != {width}", net.input_width())));
                }
            }
        }
        if self.norms.len() != if per_agent == 1 { 1 } else { model.steps() + 1 } {
            return Err(Error::Config("generator input normalization does not match the time grid".into()));
        }
        Ok(())
    }
}

fn input_width(spec: &GeneratorSpec, agents: usize) -> usize {
    let base = match spec.inputs {
        PolicyInputs::JointState => agents + 1,
        PolicyInputs::OwnState => 2,
    };
    base + usize::from(spec.layout == NetLayout::Shared)
}

fn fit_joint(pilot: &StatePaths<f64>, steps: std::ops::Range<usize>) -> InputNorm {
    let n = pilot.x[0].cols();
    let mut cols = vec![Vec::new(); n + 1];
    for k in steps {
        for p in 0..pilot.batch() {
            for (a, col) in cols.iter_mut().enumerate().take(n) {
                col.push(pilot.x[k].get(p, a));
            }
            cols[n].push(pilot.b[k][p]);
        }
    }
    InputNorm::fit(&cols)
}

fn append_column<T: Real>(z: &Tensor<T>, value: T) -> Tensor<T> {
    let (rows, cols) = z.shape();
    let mut out = Tensor::zeros(rows, cols + 1);
    for p in 0..rows {
        for c in 0..cols {
            out.set(p, c, z.get(p, c));
        }
        out.set(p, cols, value);
    }
    out
}

impl<T: Real> PolicyEval<T> for (&GeneratorParams<T>, &Model) {
    fn rates(&self, state: &StepState<'_, T>) -> Result<Tensor<T>> {
        self.0.rates_at(self.1, state.k, state.x, state.b)
    }
}

/// A policy bound to its model, usable as a frozen callback.
pub struct GeneratorPolicy<'a, T> {
    pub params: &'a GeneratorParams<T>,
    pub model: &'a Model,
}

impl<T: Real> PolicyEval<T> for GeneratorPolicy<'_, T> {
    fn rates(&self, state: &StepState<'_, T>) -> Result<Tensor<T>> {
        self.params.rates_at(self.model, state.k, state.x, state.b)
    }
}

/// Value trajectories recorded during a generator rollout (`K + 1` entries each).
#[derive(Clone, Debug)]
pub struct Trajectories<T> {
    pub states: StatePaths<T>,
    pub mu: Vec<Vec<T>>,
    pub sigma: Vec<Vec<T>>,
    /// General mode: adjoint values per step (`batch x N`).
    pub adjoint: Vec<Tensor<T>>,
}

/// A recorded generator rollout with its tape.
pub struct GeneratorRollout<T> {
    pub graph: Graph<T>,
    pub loss: Var,
    /// Batch-mean objective per agent (this chunk's paths only).
    pub objective: Vec<f64>,
    /// General mode: batch-mean `||Y_K||^2` per agent.
    pub terminal_adjoint: Vec<f64>,
    pub trajectories: Trajectories<T>,
    vars: Vec<Vec<MlpVars>>,
    y0: Option<Var>,
}

impl<T: Real> GeneratorRollout<T> {
    pub fn loss_value(&self) -> f64 {
        self.graph.value(self.loss).item().as_f64()
    }

    /// Gradients of the loss in the order of [`GeneratorParams::tensors`].
    pub fn gradients(&self, params: &GeneratorParams<T>) -> Result<Vec<Tensor<T>>> {
        let grads: Gradients<T> = self.graph.backward(self.loss)?;
        let mut out = Vec::with_capacity(params.tensors().len());
        for (nets, vars) in params.nets.iter().zip(&self.vars) {
            for (net, v) in nets.iter().zip(vars) {
                out.extend(net.collect_grads(&self.graph, v, &grads));
            }
        }
        out.push(match self.y0 {
            Some(v) => grads.wrt(&self.graph, v),
            None => Tensor::zeros(1, params.agents()),
        });
        Ok(out)
    }
}

/// Builds the generator's loss on one batch of paths.
///
/// `dynamics` is evaluated on plain values, so it is a constant of the tape:
/// no gradient can reach the discriminator. `normalizer` is the total batch
/// size when the batch is split into chunks whose gradients are summed.
pub fn generator_rollout<T: Real>(
    params: &GeneratorParams<T>,
    dynamics: &dyn PriceDynamics<T>,
    paths: &PathBatch,
    model: &Model,
    normalizer: usize,
) -> Result<GeneratorRollout<T>> {
    params.check(model)?;
    let steps = model.steps();
    if paths.steps() != steps {
        return Err(Error::Config(format!("path batch has {} steps, model has {steps}", paths.steps())));
    }
    let batch = paths.batch();
    let n = model.agents();
    let general = params.spec.mode == GeneratorMode::General;
    let dt = T::of(model.dt());
    let q = T::of(model.config.elasticity);
    let cost_factor = T::of(-model.config.cost_level / model.config.elasticity);

    let mut g = Graph::new();
    let vars: Vec<Vec<MlpVars>> = params.nets.iter().map(|nets| nets.iter().map(|m| m.register(&mut g)).collect()).collect();
    let y0 = general.then(|| g.param(params.y0.clone()));

    let half_gamma: Vec<T> = model.gammas.iter().map(|&gm| T::of(-0.5 * gm)).collect();
    let neg_half_gamma = g.constant(tile_row(&half_gamma, batch));

    let mut phi = g.constant(model.initial_positions::<T>(batch));
    let mut objective: Option<Var> = None;
    let mut adjoint = y0.map(|v| g.broadcast_rows(v, batch));
    let mut traj = Trajectories {
        states: StatePaths { x: Vec::new(), phi: Vec::new(), rates: Vec::new(), b: Vec::new() },
        mu: Vec::new(),
        sigma: Vec::new(),
        adjoint: Vec::new(),
    };

    for k in 0..=steps {
        let b = brownian_levels::<T>(paths, k);
        let reference = g.constant(model.reference_at(&b));
        let x = g.sub(phi, reference);
        let x_val = g.value(x).clone();
        let phi_val = g.value(phi).clone();
        let (mu, sigma) = dynamics.eval(&StepState { k, x: &x_val, phi: &phi_val, b: &b })?;
        if mu.len() != batch || sigma.len() != batch {
            return Err(Error::Config("price dynamics returned the wrong batch size".into()));
        }

        // network inputs
        let b_col = g.constant(Tensor::column(b.clone()));
        let time = params.time_feature(model, k).map(|t| g.constant(Tensor::filled(batch, 1, t)));
        let joint = match params.spec.inputs {
            PolicyInputs::JointState => {
                let raw = g.concat_cols(&[x, b_col]);
                let z = params.norm(k).apply_graph(&mut g, raw);
                Some(match time {
                    Some(t) => g.concat_cols(&[z, t]),
                    None => z,
                })
            }
            PolicyInputs::OwnState => None,
        };
        let mut rate_cols = Vec::with_capacity(n);
        let mut z_cols = Vec::with_capacity(n);
        for a in 0..n {
            let input = match joint {
                Some(z) => z,
                None => {
                    let xa = g.col(x, a);
                    let raw = g.concat_cols(&[xa, b_col]);
                    let z = params.norm(k).select(&[a, n]).apply_graph(&mut g, raw);
                    match time {
                        Some(t) => g.concat_cols(&[z, t]),
                        None => z,
                    }
                }
            };
            let vi = match params.spec.layout {
                NetLayout::PerStep => k,
                NetLayout::Shared => 0,
            };
            let out = params.net(a, k).apply(&mut g, &vars[a][vi], input)?;
            let raw_rate = g.col(out, 0);
            rate_cols.push(g.scale(raw_rate, T::of(params.rate_scale[a])));
            if general {
                let raw_z = g.col(out, 1);
                z_cols.push(g.scale(raw_z, T::of(params.adjoint_scale[a])));
            }
        }
        let rates = g.concat_cols(&rate_cols);

        // running objective
        let mu_m = g.constant(tile_col(&mu, n));
        let sigma_m = g.constant(tile_col(&sigma, n));
        let xi_b = g.constant(outer(&b, &model.xis));
        let gain = g.mul(phi, mu_m);
        let phi_sigma = g.mul(phi, sigma_m);
        let exposure = g.add(phi_sigma, xi_b);
        let exposure_sq = g.square(exposure);
        let risk = g.mul(exposure_sq, neg_half_gamma);
        let abs_q = g.abs_pow(rates, q);
        let cost = g.scale(abs_q, cost_factor);
        let reward = g.add(gain, risk);
        let reward = g.add(reward, cost);
        let increment = g.scale(reward, dt);
        objective = Some(match objective {
            Some(j) => g.add(j, increment),
            None => increment,
        });

        traj.states.x.push(x_val);
        traj.states.phi.push(phi_val);
        traj.states.rates.push(g.value(rates).clone());
        traj.states.b.push(b.clone());
        traj.mu.push(mu.clone());
        traj.sigma.push(sigma.clone());

        if let Some(y) = adjoint {
            traj.adjoint.push(g.value(y).clone());
            if k < steps {
                // Y_{k+1} = Y_k - dH/dx dt + Z dB, with -dH/dx = gamma sigma (phi sigma + xi B) - mu
                let gamma_sigma: Vec<T> = (0..batch * n).map(|i| T::of(model.gammas[i % n]) * sigma[i / n]).collect();
                let gs = g.constant(Tensor::from_vec(batch, n, gamma_sigma));
                let pull = g.mul(exposure, gs);
                let driver = g.sub(pull, mu_m);
                let drift = g.scale(driver, dt);
                let z = g.concat_cols(&z_cols);
                let db = g.constant(tile_col(&brownian_increments::<T>(paths, k), n));
                let noise = g.mul(z, db);
                let y1 = g.add(y, drift);
                adjoint = Some(g.add(y1, noise));
            }
        }

        if k < steps {
            let step = g.scale(rates, dt);
            phi = g.add(phi, step);
        }
    }

    let objective = objective.expect("at least one step");
    let obj_val = g.value(objective).clone();
    let per_agent = obj_val.sum_rows();
    let inv_norm = T::of(1.0 / normalizer as f64);
    let total = g.sum(objective);
    let mut loss = g.scale(total, -inv_norm);
    let mut terminal_adjoint = vec![0.0; n];
    if let Some(y) = adjoint {
        // terminal reward is zero, so d/dx g = 0
        let sq = g.square(y);
        let sq_val = g.value(sq).sum_rows();
        for (a, t) in terminal_adjoint.iter_mut().enumerate() {
            *t = sq_val.get(0, a).as_f64() / batch as f64;
        }
        let mismatch = g.sum(sq);
        let mismatch = g.scale(mismatch, inv_norm);
        loss = g.add(loss, mismatch);
    }
    let objective: Vec<f64> = (0..n).map(|a| per_agent.get(0, a).as_f64() / batch as f64).collect();
    if let Some(a) = objective.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "generator objective".into(),
            site: crate::error::TrainingSite { agent: Some(a), phase: "generator", ..Default::default() },
            last_checkpoint: None,
        });
    }
    Ok(GeneratorRollout { graph: g, loss, objective, terminal_adjoint, trajectories: traj, vars, y0 })
}

/// Euler step of the adjoint equation: `Y - dH/dx dt + Z dB`.
#[inline]
pub fn adjoint_forward_step(y: f64, z: f64, dh_dx: f64, dt: f64, db: f64) -> f64 {
    y - dh_dx * dt + z * db
}

pub(crate) fn tile_row<T: Real>(row: &[T], rows: usize) -> Tensor<T> {
    let mut data = Vec::with_capacity(rows * row.len());
    for _ in 0..rows {
        data.extend_from_slice(row);
    }
    Tensor::from_vec(rows, row.len(), data)
}

pub(crate) fn tile_col<T: Real>(col: &[T], cols: usize) -> Tensor<T> {
    let mut data = Vec::with_capacity(col.len() * cols);
    for &v in col {
        data.extend(std::iter::repeat(v).take(cols));
    }
    Tensor::from_vec(col.len(), cols, data)
}

pub(crate) fn outer<T: Real>(col: &[T], row: &[f64]) -> Tensor<T> {
    let mut data = Vec::with_capacity(col.len() * row.len());
    for &c in col {
        data.extend(row.iter().map(|&r| c * T::of(r)));
    }
    Tensor::from_vec(col.len(), row.len(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rollout::fixtures::*;
    use crate::rollout::{simulate_states, ConstantDynamics, ZeroPolicy};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pilot(model: &Model, seed: u64) -> StatePaths<f64> {
        let paths = PathBatch::sample(seed, 64, &model.grid, 1).unwrap();
        simulate_states(model, &ZeroPolicy, &paths).unwrap()
    }

    fn zero_outputs<T: Real>(p: &mut GeneratorParams<T>) {
        for t in p.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = T::zero());
        }
    }

    #[test]
    fn zero_network_rate_is_output_bias() {
        let m = two_agent(1.5, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = GeneratorParams::<f64>::init(&m, &GeneratorSpec::default(), &pilot(&m, 2), &mut rng).unwrap();
        zero_outputs(&mut p);
        p.nets[0][3].layers.last_mut().unwrap().bias.set(0, 0, 0.25);
        let x = Tensor::from_vec(2, 2, vec![0.3, -0.3, 1.0, 2.0]);
        let out = p.policy_eval(&m, 0, 3, &x, &[0.1, -0.2]).unwrap();
        assert_eq!(out.col_vec(0), vec![0.25, 0.25]);
        let again = p.policy_eval(&m, 0, 3, &x, &[0.1, -0.2]).unwrap();
        assert_eq!(out, again);
    }

    #[test]
    fn fast_variable_reconstructs_position() {
        let m = ten_agent(2.0, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = GeneratorParams::<f64>::init(&m, &GeneratorSpec::default(), &pilot(&m, 5), &mut rng).unwrap();
        let paths = PathBatch::sample(6, 8, &m.grid, 1).unwrap();
        let dynamics = ConstantDynamics { mu: 0.1, sigma: 1.0, s0: 0.0 };
        let r = generator_rollout(&p, &dynamics, &paths, &m, 8).unwrap();
        let s = &r.trajectories.states;
        for k in 0..=6 {
            for path in 0..8 {
                for a in 0..10 {
                    let recon = s.x[k].get(path, a) + m.reference.at(a, s.b[k][path]);
                    assert!((recon - s.phi[k].get(path, a)).abs() < 1e-12);
                }
            }
            if k == 0 {
                assert!(s.x[0].data().iter().all(|v| v.abs() < 1e-15));
            }
        }
    }

    #[test]
    fn zero_policy_objective_matches_direct_sum() {
        let m = two_agent(1.5, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut p = GeneratorParams::<f64>::init(&m, &GeneratorSpec::default(), &pilot(&m, 8), &mut rng).unwrap();
        zero_outputs(&mut p);
        let paths = PathBatch::sample(9, 32, &m.grid, 1).unwrap();
        let dynamics = ConstantDynamics { mu: 0.2, sigma: 1.1, s0: 0.0 };
        let r = generator_rollout(&p, &dynamics, &paths, &m, 32).unwrap();
        for a in 0..2 {
            let agent = &m.roster[a];
            let mut acc = 0.0;
            for path in 0..32 {
                for k in 0..=10 {
                    let b = paths.level(path, k, 0);
                    acc += crate::rollout::lq_objective_increment(agent.initial_position, b, 0.0, 0.2, 1.1, agent, &m.config) * m.dt();
                }
            }
            assert!((r.objective[a] - acc / 32.0).abs() < 1e-12);
        }
    }

    #[test]
    fn adjoint_step_examples() {
        assert!((adjoint_forward_step(0.5, 0.0, 2.0, 0.1, 0.3) - 0.3).abs() < 1e-15);
        assert!((adjoint_forward_step(0.5, 1.0, 2.0, 0.1, 0.3) - 0.6).abs() < 1e-15);
    }

    #[test]
    fn general_mode_rollout_runs_and_has_y0_gradient() {
        let m = two_agent(2.0, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let spec = GeneratorSpec { mode: GeneratorMode::General, ..Default::default() };
        let mut p = GeneratorParams::<f64>::init(&m, &spec, &pilot(&m, 12), &mut rng).unwrap();
        p.y0 = Tensor::from_vec(1, 2, vec![0.3, -0.1]);
        let paths = PathBatch::sample(13, 8, &m.grid, 1).unwrap();
        let dynamics = ConstantDynamics { mu: 0.5, sigma: 1.0, s0: 0.0 };
        let r = generator_rollout(&p, &dynamics, &paths, &m, 8).unwrap();
        let grads = r.gradients(&p).unwrap();
        let gy = grads.last().unwrap();
        assert!(gy.data().iter().all(|v| *v != 0.0));
        assert!(r.terminal_adjoint.iter().all(|v| v.is_finite() && *v > 0.0));
    }

    #[test]
    fn own_state_and_shared_layouts_build() {
        let m = two_agent(1.5, 3);
        for (inputs, layout) in [
            (PolicyInputs::OwnState, NetLayout::PerStep),
            (PolicyInputs::JointState, NetLayout::Shared),
            (PolicyInputs::OwnState, NetLayout::Shared),
        ] {
            let spec = GeneratorSpec { inputs, layout, ..Default::default() };
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let p = GeneratorParams::<f64>::init(&m, &spec, &pilot(&m, 1), &mut rng).unwrap();
            let paths = PathBatch::sample(2, 4, &m.grid, 1).unwrap();
            let r = generator_rollout(&p, &ConstantDynamics { mu: 0.1, sigma: 1.0, s0: 0.0 }, &paths, &m, 4).unwrap();
            // graph forward and value forward agree
            let s = &r.trajectories.states;
            for k in 0..=3 {
                let rates = p.rates_at(&m, k, &s.x[k], &s.b[k]).unwrap();
                assert_eq!(rates, s.rates[k], "{inputs:?} {layout:?} step {k}");
            }
        }
    }
}
