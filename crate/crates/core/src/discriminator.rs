//! Price-dynamics learning.
//!
//! A scalar `S_0` plus one network per time step mapping the joint public state
//! `(X_1..X_N, B_k)` to `(mu_k, sigma_k)`. Under frozen policies the agent states
//! do not depend on these parameters, so a phase rolls states out once per batch
//! and then builds the price path, the backward adjoint recursion and the loss
//! `mean[(S_K - S_T)^2 + sum_k (sum_n I_{n,k})^2]` on the tape.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{signed_pow, softplus, softplus_inv, Gradients, Graph, MlpParams, MlpVars, Real, Tensor, Var};
use crate::error::{Error, Result};
use crate::generator::{tile_row, InputNorm, NetSpec};
use crate::market::AgentSpec;
use crate::paths::PathBatch;
use crate::rollout::{brownian_increments, Model, PriceDynamics, StatePaths, StepState};

/// Floor added to the softplus volatility.
pub const SIGMA_FLOOR: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DiscriminatorMode {
    /// Both `mu` and `sigma` are learned.
    #[default]
    Implicit,
    /// `mu` from the quadratic-cost clearing formula; requires `q = 2`.
    KnownQuadratic,
    /// `mu` from the two-agent average formula; requires `N = 2`.
    KnownTwoAgentPower,
}

impl DiscriminatorMode {
    pub fn learns_mu(self) -> bool {
        self == DiscriminatorMode::Implicit
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscriminatorSpec {
    pub mode: DiscriminatorMode,
    pub net: NetSpec,
}

impl Default for DiscriminatorSpec {
    fn default() -> Self {
        Self { mode: DiscriminatorMode::Implicit, net: NetSpec::default() }
    }
}

/// `(1/N) sum_n gamma_n sigma (sigma phi_n + xi_n B)`.
pub fn mu_quadratic_clearing(sigma: f64, positions: &[f64], b: f64, roster: &[AgentSpec], elasticity: f64) -> Result<f64> {
    if (elasticity - 2.0).abs() > 1e-12 {
        return Err(Error::Config(format!("closed-form quadratic drift needs q = 2 (got {elasticity})")));
    }
    clearing_mean(sigma, positions, b, roster)
}

/// `(1/2) [gamma_1 sigma (sigma phi_1 + xi_1 B) + gamma_2 sigma (sigma phi_2 + xi_2 B)]`.
pub fn mu_two_agent_power(sigma: f64, phi1: f64, phi2: f64, b: f64, roster: &[AgentSpec]) -> Result<f64> {
    if roster.len() != 2 {
        return Err(Error::Config(format!("two-agent drift formula needs exactly 2 agents (got {})", roster.len())));
    }
    clearing_mean(sigma, &[phi1, phi2], b, roster)
}

fn clearing_mean(sigma: f64, positions: &[f64], b: f64, roster: &[AgentSpec]) -> Result<f64> {
    if positions.len() != roster.len() || roster.is_empty() {
        return Err(Error::Config("one position per agent required".into()));
    }
    let total: f64 = roster
        .iter()
        .zip(positions)
        .map(|(a, &phi)| a.risk_aversion * sigma * (sigma * phi + a.endowment_vol * b))
        .sum();
    Ok(total / roster.len() as f64)
}

/// Checks that `mode` is usable for `model`.
pub fn check_mode(mode: DiscriminatorMode, model: &Model) -> Result<()> {
    match mode {
        DiscriminatorMode::Implicit => Ok(()),
        DiscriminatorMode::KnownQuadratic if (model.config.elasticity - 2.0).abs() > 1e-12 => Err(Error::Config(format!(
            "known-mu quadratic mode needs q = 2 (got {})",
            model.config.elasticity
        ))),
        DiscriminatorMode::KnownTwoAgentPower if model.agents() != 2 => Err(Error::Config(format!(
            "known-mu two-agent mode needs exactly 2 agents (got {})",
            model.agents()
        ))),
        _ => Ok(()),
    }
}

/// Trainable discriminator state.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminatorParams<T> {
    pub spec: DiscriminatorSpec,
    /// `1 x 1` initial price.
    pub s0: Tensor<T>,
    /// One network per step `k = 0..=K`.
    pub nets: Vec<MlpParams<T>>,
    /// Standardization of `[X_1..X_N, B]` per step.
    pub norms: Vec<InputNorm>,
    /// `mu_k = mu_offset[k] + mu_scale[k] * out_0` (implicit mode).
    pub mu_offset: Vec<f64>,
    pub mu_scale: Vec<f64>,
    /// `sigma_k = softplus(out_last + sigma_offset) + floor`.
    pub sigma_offset: f64,
}

impl<T: Real> DiscriminatorParams<T> {
    /// Fresh parameters. The drift offset and scale come from the quadratic
    /// clearing drift evaluated on `pilot` states at `sigma = alpha`; `sigma`
    /// starts near `alpha` and `S_0` at the frictionless value.
    pub fn init<R: Rng>(model: &Model, spec: &DiscriminatorSpec, pilot: &StatePaths<f64>, rng: &mut R) -> Result<Self> {
        check_mode(spec.mode, model)?;
        let steps = model.steps();
        if pilot.x.len() != steps + 1 {
            return Err(Error::Config("pilot rollout does not match the time grid".into()));
        }
        let cfg = &model.config;
        let n = model.agents();
        let mut norms = Vec::with_capacity(steps + 1);
        let mut mu_offset = Vec::with_capacity(steps + 1);
        let mut mu_scale = Vec::with_capacity(steps + 1);
        let alpha = cfg.alpha;
        let bar_mu = model.bar_gamma * alpha * alpha;
        for k in 0..=steps {
            let mut cols = vec![Vec::with_capacity(pilot.batch()); n + 1];
            let mut mus = Vec::with_capacity(pilot.batch());
            for p in 0..pilot.batch() {
                let mut phis = Vec::with_capacity(n);
                for (a, col) in cols.iter_mut().enumerate().take(n) {
                    col.push(pilot.x[k].get(p, a));
                    phis.push(pilot.phi[k].get(p, a));
                }
                cols[n].push(pilot.b[k][p]);
                mus.push(clearing_mean(alpha, &phis, pilot.b[k][p], &model.roster)?);
            }
            norms.push(InputNorm::fit(&cols));
            let m = mus.iter().sum::<f64>() / mus.len() as f64;
            let sd = (mus.iter().map(|v| (v - m).powi(2)).sum::<f64>() / mus.len() as f64).sqrt();
            mu_offset.push(m);
            mu_scale.push(sd.max(0.1 * bar_mu.abs()).max(1e-6));
        }
        let outputs = if spec.mode.learns_mu() { 2 } else { 1 };
        let widths = spec.net.widths(n + 1, outputs);
        let nets = (0..=steps).map(|_| MlpParams::init(&widths, spec.net.skip, spec.net.output_gain, rng)).collect();
        let s0 = cfg.beta * cfg.horizon - bar_mu * cfg.horizon;
        Ok(Self {
            spec: spec.clone(),
            s0: Tensor::scalar(T::of(s0)),
            nets,
            norms,
            mu_offset,
            mu_scale,
            sigma_offset: softplus_inv((alpha - SIGMA_FLOOR).max(1e-3)),
        })
    }

    pub fn initial_price(&self) -> f64 {
        self.s0.item().as_f64()
    }

    /// Parameter tensors in canonical order: `S_0`, then every network.
    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        let mut out = vec![&self.s0];
        out.extend(self.nets.iter().flat_map(|m| m.tensors()));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = vec![&mut self.s0];
        out.extend(self.nets.iter_mut().flat_map(|m| m.tensors_mut()));
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn check(&self, model: &Model) -> Result<()> {
        check_mode(self.spec.mode, model)?;
        let steps = model.steps();
        if self.nets.len() != steps + 1 || self.norms.len() != steps + 1 || self.mu_offset.len() != steps + 1 {
            return Err(Error::Config(format!("discriminator has {} networks, expected {}", self.nets.len(), steps + 1)));
        }
        if self.s0.shape() != (1, 1) {
            return Err(Error::Config("discriminator S0 must be a scalar".into()));
        }
        let outputs = if self.spec.mode.learns_mu() { 2 } else { 1 };
        for net in &self.nets {
            net.check()?;
            if net.input_width() != model.agents() + 1 || net.output_width() != outputs {
                return Err(Error::Config(format!(
                    "discriminator network is {}->{}, expected {}->{outputs}",
                    net.input_width(),
                    net.output_width(),
                    model.agents() + 1
                )));
            }
        }
        Ok(())
    }

    /// `(mu_k, sigma_k)` per path (value level, same arithmetic as the tape).
    pub fn dynamics_at(&self, model: &Model, k: usize, x: &Tensor<T>, phi: &Tensor<T>, b: &[T]) -> Result<(Vec<T>, Vec<T>)> {
        let rows = x.rows();
        let n = model.agents();
        let mut raw = Tensor::zeros(rows, n + 1);
        for p in 0..rows {
            for a in 0..n {
                raw.set(p, a, x.get(p, a));
            }
            raw.set(p, n, b[p]);
        }
        let out = self.nets[k].forward(&self.norms[k].apply(&raw))?;
        let last = out.cols() - 1;
        let off = T::of(self.sigma_offset);
        let floor = T::of(SIGMA_FLOOR);
        let sigma: Vec<T> = (0..rows).map(|p| softplus(out.get(p, last) + off) + floor).collect();
        let mu = if self.spec.mode.learns_mu() {
            let (m, s) = (T::of(self.mu_offset[k]), T::of(self.mu_scale[k]));
            (0..rows).map(|p| out.get(p, 0) * s + m).collect()
        } else {
            let (gphi, gxib) = clearing_factors(model, phi, b);
            (0..rows).map(|p| sigma[p] * sigma[p] * gphi[p] + sigma[p] * gxib[p]).collect()
        };
        Ok((mu, sigma))
    }

    pub fn cast<U: Real>(&self) -> DiscriminatorParams<U> {
        DiscriminatorParams {
            spec: self.spec.clone(),
            s0: self.s0.cast(),
            nets: self.nets.iter().map(|m| m.cast()).collect(),
            norms: self.norms.clone(),
            mu_offset: self.mu_offset.clone(),
            mu_scale: self.mu_scale.clone(),
            sigma_offset: self.sigma_offset,
        }
    }
}

/// Per path `(1/N) sum_n gamma_n phi_n` and `(1/N) sum_n gamma_n xi_n B`.
fn clearing_factors<T: Real>(model: &Model, phi: &Tensor<T>, b: &[T]) -> (Vec<T>, Vec<T>) {
    let n = model.agents();
    let inv_n = T::of(1.0 / n as f64);
    let gxi = T::of(model.gammas.iter().zip(&model.xis).map(|(g, x)| g * x).sum::<f64>());
    let gphi = (0..phi.rows())
        .map(|p| (0..n).map(|a| T::of(model.gammas[a]) * phi.get(p, a)).sum::<T>() * inv_n)
        .collect();
    let gxib = b.iter().map(|&bv| gxi * bv * inv_n).collect();
    (gphi, gxib)
}

/// The discriminator bound to its model, usable as a frozen callback.
pub struct DiscriminatorDynamics<'a, T> {
    pub params: &'a DiscriminatorParams<T>,
    pub model: &'a Model,
}

impl<T: Real> PriceDynamics<T> for DiscriminatorDynamics<'_, T> {
    fn eval(&self, state: &StepState<'_, T>) -> Result<(Vec<T>, Vec<T>)> {
        self.params.dynamics_at(self.model, state.k, state.x, state.phi, state.b)
    }

    fn initial_price(&self) -> f64 {
        self.params.initial_price()
    }
}

/// Batch-mean diagnostics of one discriminator pass.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ClearingDiagnostics {
    /// `mean_paths (sum_n I_{n,k})^2` for `k = 0..=K`.
    pub residual: Vec<f64>,
    /// `mean_paths (S_K - S_T)^2`.
    pub terminal: f64,
    /// Batch-mean `Y_{n,k}`, indexed `[k][n]`.
    pub mean_y: Vec<Vec<f64>>,
    /// Batch-mean `mu_k` and `sigma_k`.
    pub mean_mu: Vec<f64>,
    pub mean_sigma: Vec<f64>,
}

impl ClearingDiagnostics {
    pub fn clearing_total(&self) -> f64 {
        self.residual.iter().sum()
    }
}

/// Terminal mismatch plus summed squared clearing residuals.
pub fn discriminator_loss(diag: &ClearingDiagnostics) -> f64 {
    diag.terminal + diag.clearing_total()
}

/// A recorded discriminator pass with its tape.
pub struct DiscriminatorPass<T> {
    pub graph: Graph<T>,
    pub loss: Var,
    pub diagnostics: ClearingDiagnostics,
    s0: Var,
    vars: Vec<MlpVars>,
}

impl<T: Real> DiscriminatorPass<T> {
    pub fn loss_value(&self) -> f64 {
        self.graph.value(self.loss).item().as_f64()
    }

    /// Gradients in the order of [`DiscriminatorParams::tensors`].
    pub fn gradients(&self, params: &DiscriminatorParams<T>) -> Result<Vec<Tensor<T>>> {
        let grads: Gradients<T> = self.graph.backward(self.loss)?;
        let mut out = vec![grads.wrt(&self.graph, self.s0)];
        for (net, v) in params.nets.iter().zip(&self.vars) {
            out.extend(net.collect_grads(&self.graph, v, &grads));
        }
        Ok(out)
    }
}

/// Builds the discriminator loss on precomputed agent states.
///
/// `states` come from frozen policies and enter the tape as constants.
/// `normalizer` is the total batch size across chunks.
pub fn discriminator_pass<T: Real>(
    params: &DiscriminatorParams<T>,
    states: &StatePaths<T>,
    paths: &PathBatch,
    model: &Model,
    normalizer: usize,
) -> Result<DiscriminatorPass<T>> {
    params.check(model)?;
    let steps = model.steps();
    if states.x.len() != steps + 1 || paths.steps() != steps || states.batch() != paths.batch() {
        return Err(Error::Config("state paths do not match the path batch or time grid".into()));
    }
    let batch = paths.batch();
    let n = model.agents();
    let cfg = &model.config;
    let dt = T::of(model.dt());
    let mut g = Graph::new();
    let s0 = g.param(params.s0.clone());
    let vars: Vec<MlpVars> = params.nets.iter().map(|m| m.register(&mut g)).collect();

    // forward: (mu_k, sigma_k) and the price path
    let mut mus = Vec::with_capacity(steps + 1);
    let mut sigmas = Vec::with_capacity(steps + 1);
    let mut price = g.broadcast_rows(s0, batch);
    for k in 0..=steps {
        let mut raw = Tensor::zeros(batch, n + 1);
        for p in 0..batch {
            for a in 0..n {
                raw.set(p, a, states.x[k].get(p, a));
            }
            raw.set(p, n, states.b[k][p]);
        }
        let raw = g.constant(raw);
        let z = params.norms[k].apply_graph(&mut g, raw);
        let out = params.nets[k].apply(&mut g, &vars[k], z)?;
        let (_, width) = g.shape(out);
        let pre = g.col(out, width - 1);
        let pre = g.offset(pre, T::of(params.sigma_offset));
        let sp = g.softplus(pre);
        let sigma = g.offset(sp, T::of(SIGMA_FLOOR));
        let mu = if params.spec.mode.learns_mu() {
            let o = g.col(out, 0);
            let o = g.scale(o, T::of(params.mu_scale[k]));
            g.offset(o, T::of(params.mu_offset[k]))
        } else {
            let (gphi, gxib) = clearing_factors(model, &states.phi[k], &states.b[k]);
            let gphi = g.constant(Tensor::column(gphi));
            let gxib = g.constant(Tensor::column(gxib));
            let s2 = g.square(sigma);
            let a = g.mul(s2, gphi);
            let c = g.mul(sigma, gxib);
            g.add(a, c)
        };
        if k < steps {
            let drift = g.scale(mu, dt);
            let db = g.constant(Tensor::column(brownian_increments::<T>(paths, k)));
            let noise = g.mul(sigma, db);
            let p1 = g.add(price, drift);
            price = g.add(p1, noise);
        }
        mus.push(mu);
        sigmas.push(sigma);
    }
    let target: Vec<T> = (0..batch).map(|p| T::of(model.terminal_dividend(paths.level(p, steps, 0)))).collect();
    let target = g.constant(Tensor::column(target));
    let mismatch = g.sub(price, target);
    let mismatch_sq = g.square(mismatch);
    let terminal_val = g.value(mismatch_sq).sum().as_f64() / batch as f64;
    let mut total = g.sum(mismatch_sq);

    // backward adjoint recursion, Y_K = 0
    let gammas = g.constant(tile_row(&model.gammas.iter().map(|&v| T::of(v)).collect::<Vec<_>>(), batch));
    let inv_lambda = T::of(1.0 / cfg.cost_level);
    let expo = T::of(1.0 / (cfg.elasticity - 1.0));
    let mut y = g.constant(Tensor::zeros(batch, n));
    let mut residual = vec![0.0; steps + 1];
    let mut mean_y = vec![Vec::new(); steps + 1];
    for k in (0..=steps).rev() {
        mean_y[k] = g.value(y).sum_rows().data().iter().map(|v| v.as_f64() / batch as f64).collect();
        let scaled = g.scale(y, inv_lambda);
        let rate = g.signed_pow(scaled, expo);
        let r = g.sum_cols(rate);
        let r2 = g.square(r);
        residual[k] = g.value(r2).sum().as_f64() / batch as f64;
        let rs = g.sum(r2);
        total = g.add(total, rs);
        if k > 0 {
            let driver = lq_driver(&mut g, model, mus[k], sigmas[k], &states.phi[k], &states.b[k], gammas);
            let step = g.scale(driver, dt);
            y = g.add(y, step);
        }
    }
    let loss = g.scale(total, T::of(1.0 / normalizer as f64));
    let mean = |v: Var, g: &Graph<T>| g.value(v).sum().as_f64() / batch as f64;
    let diagnostics = ClearingDiagnostics {
        residual,
        terminal: terminal_val,
        mean_y,
        mean_mu: mus.iter().map(|&v| mean(v, &g)).collect(),
        mean_sigma: sigmas.iter().map(|&v| mean(v, &g)).collect(),
    };
    if !g.value(loss).all_finite() {
        return Err(Error::NonFinite {
            what: "discriminator loss".into(),
            site: crate::error::TrainingSite { phase: "discriminator", ..Default::default() },
            last_checkpoint: None,
        });
    }
    Ok(DiscriminatorPass { graph: g, loss, diagnostics, s0, vars })
}

/// `mu - gamma sigma (phi sigma + xi B)` as a `batch x N` node.
fn lq_driver<T: Real>(g: &mut Graph<T>, model: &Model, mu: Var, sigma: Var, phi: &Tensor<T>, b: &[T], gammas: Var) -> Var {
    let n = model.agents();
    let phi = g.constant(phi.clone());
    let xib: Vec<T> = b.iter().flat_map(|&bv| model.xis.iter().map(move |&x| T::of(x) * bv)).collect();
    let xib = g.constant(Tensor::from_vec(b.len(), n, xib));
    let sigma_b = g.broadcast_cols(sigma, n);
    let ps = g.mul(phi, sigma_b);
    let exposure = g.add(ps, xib);
    let e = g.mul(exposure, sigma_b);
    let pull = g.mul(e, gammas);
    let mu_b = g.broadcast_cols(mu, n);
    g.sub(mu_b, pull)
}

/// Value-level backward recursion from `Y_K = 0`.
///
/// `mu[k][p]`, `sigma[k][p]` for `k = 0..=K`. Returns `Y[k]` (`batch x N`) and the
/// per-path clearing residual `sum_n I_{n,k}`.
pub fn backward_y_pass(states: &StatePaths<f64>, mu: &[Vec<f64>], sigma: &[Vec<f64>], model: &Model) -> (Vec<Tensor<f64>>, Vec<Vec<f64>>) {
    let steps = states.x.len() - 1;
    let batch = states.batch();
    let n = model.agents();
    let cfg = &model.config;
    let dt = model.dt();
    let expo = 1.0 / (cfg.elasticity - 1.0);
    let mut ys = vec![Tensor::zeros(batch, n); steps + 1];
    let mut res = vec![vec![0.0; batch]; steps + 1];
    for k in (0..=steps).rev() {
        for p in 0..batch {
            res[k][p] = (0..n).map(|a| signed_pow(ys[k].get(p, a) / cfg.cost_level, expo)).sum();
        }
        if k > 0 {
            let mut prev = ys[k].clone();
            for p in 0..batch {
                let (m, s, b) = (mu[k][p], sigma[k][p], states.b[k][p]);
                for a in 0..n {
                    let drv = m - model.gammas[a] * s * (states.phi[k].get(p, a) * s + model.xis[a] * b);
                    prev.set(p, a, ys[k].get(p, a) + drv * dt);
                }
            }
            ys[k - 1] = prev;
        }
    }
    (ys, res)
}
