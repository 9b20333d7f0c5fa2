//! Rollout machinery shared by the generator, the discriminator, evaluation and
//! the oracle: the precomputed market model, the frozen-callback traits that
//! form the link between the two learners, and value-level path simulation.

use crate::diffcore::{Real, Tensor};
use crate::error::{Error, Result};
use crate::market::{self, AgentSpec, MarketConfig, ReferencePositions};
use crate::paths::{PathBatch, TimeGrid};

/// Market configuration plus the per-agent constants every rollout needs.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: MarketConfig,
    pub roster: Vec<AgentSpec>,
    pub grid: TimeGrid,
    pub bar_gamma: f64,
    pub reference: ReferencePositions,
    pub gammas: Vec<f64>,
    pub xis: Vec<f64>,
}

impl Model {
    /// Validates and precomputes. Fails on any roster or configuration violation.
    pub fn new(config: MarketConfig, roster: Vec<AgentSpec>) -> Result<Self> {
        market::ensure_valid(&config, &roster)?;
        Self::new_unchecked(config, roster)
    }

    /// Skips the roster invariants (used by property tests on arbitrary states).
    pub fn new_unchecked(config: MarketConfig, roster: Vec<AgentSpec>) -> Result<Self> {
        let grid = TimeGrid::new(config.steps, config.horizon)?;
        let bar_gamma = market::bar_gamma(&roster)?;
        let reference = ReferencePositions::new(&config, &roster)?;
        let gammas = roster.iter().map(|a| a.risk_aversion).collect();
        let xis = roster.iter().map(|a| a.endowment_vol).collect();
        Ok(Self { config, roster, grid, bar_gamma, reference, gammas, xis })
    }

    pub fn agents(&self) -> usize {
        self.roster.len()
    }

    pub fn steps(&self) -> usize {
        self.grid.steps()
    }

    pub fn dt(&self) -> f64 {
        self.grid.dt()
    }

    /// `batch x N` reference positions at Brownian levels `b`.
    pub fn reference_at<T: Real>(&self, b: &[T]) -> Tensor<T> {
        let n = self.agents();
        let mut out = Tensor::zeros(b.len(), n);
        for (p, &bv) in b.iter().enumerate() {
            for a in 0..n {
                out.set(p, a, T::of(self.reference.at(a, bv.as_f64())));
            }
        }
        out
    }

    /// `batch x N` initial positions.
    pub fn initial_positions<T: Real>(&self, batch: usize) -> Tensor<T> {
        let n = self.agents();
        let mut out = Tensor::zeros(batch, n);
        for p in 0..batch {
            for (a, agent) in self.roster.iter().enumerate() {
                out.set(p, a, T::of(agent.initial_position));
            }
        }
        out
    }

    pub fn terminal_dividend(&self, b_t: f64) -> f64 {
        market::terminal_dividend(b_t, &self.config)
    }
}

/// Public state at time step `k` for a batch of paths.
pub struct StepState<'a, T> {
    pub k: usize,
    /// Fast variables `phi - bar_phi`, `batch x N`.
    pub x: &'a Tensor<T>,
    /// Positions, `batch x N`.
    pub phi: &'a Tensor<T>,
    /// Brownian levels `B_k`, one per path.
    pub b: &'a [T],
}

/// Frozen price dynamics `(mu_k, sigma_k)` consumed by the generator.
pub trait PriceDynamics<T: Real>: Sync {
    fn eval(&self, state: &StepState<'_, T>) -> Result<(Vec<T>, Vec<T>)>;

    /// Initial price `S_0`.
    fn initial_price(&self) -> f64;
}

/// Frozen trading policies consumed by the discriminator.
pub trait PolicyEval<T: Real>: Sync {
    /// Trading rates `batch x N`.
    fn rates(&self, state: &StepState<'_, T>) -> Result<Tensor<T>>;
}

/// Deterministic constant `(mu, sigma)` and a fixed `S_0`.
#[derive(Clone, Copy, Debug)]
pub struct ConstantDynamics {
    pub mu: f64,
    pub sigma: f64,
    pub s0: f64,
}

impl<T: Real> PriceDynamics<T> for ConstantDynamics {
    fn eval(&self, state: &StepState<'_, T>) -> Result<(Vec<T>, Vec<T>)> {
        let n = state.b.len();
        Ok((vec![T::of(self.mu); n], vec![T::of(self.sigma); n]))
    }

    fn initial_price(&self) -> f64 {
        self.s0
    }
}

/// Never trades.
#[derive(Clone, Copy, Debug, Default)]
pub struct ZeroPolicy;

impl<T: Real> PolicyEval<T> for ZeroPolicy {
    fn rates(&self, state: &StepState<'_, T>) -> Result<Tensor<T>> {
        Ok(Tensor::zeros(state.x.rows(), state.x.cols()))
    }
}

/// Value paths of a joint rollout; every array has `K + 1` entries of `batch x N`.
#[derive(Clone, Debug)]
pub struct StatePaths<T> {
    pub x: Vec<Tensor<T>>,
    pub phi: Vec<Tensor<T>>,
    pub rates: Vec<Tensor<T>>,
    /// Brownian levels per step, one value per path.
    pub b: Vec<Vec<T>>,
}

impl<T: Real> StatePaths<T> {
    pub fn batch(&self) -> usize {
        self.b[0].len()
    }

    pub fn state(&self, k: usize) -> StepState<'_, T> {
        StepState { k, x: &self.x[k], phi: &self.phi[k], b: &self.b[k] }
    }
}

/// Column view of a path batch in precision `T` (first Brownian dimension).
pub fn brownian_levels<T: Real>(paths: &PathBatch, k: usize) -> Vec<T> {
    let d = paths.dim();
    paths.levels_at(k).iter().step_by(d).map(|&v| T::of(v)).collect()
}

pub fn brownian_increments<T: Real>(paths: &PathBatch, k: usize) -> Vec<T> {
    let d = paths.dim();
    paths.increments_at(k).iter().step_by(d).map(|&v| T::of(v)).collect()
}

/// Advances positions under a frozen policy: `phi_{k+1} = phi_k + rate_k dt`,
/// `X_k = phi_k - bar_phi(B_k)`. Rates are also evaluated at `k = K`.
pub fn simulate_states<T: Real>(model: &Model, policy: &dyn PolicyEval<T>, paths: &PathBatch) -> Result<StatePaths<T>> {
    let steps = model.steps();
    if paths.steps() != steps {
        return Err(Error::Config(format!("path batch has {} steps, model has {steps}", paths.steps())));
    }
    let batch = paths.batch();
    let dt = T::of(model.dt());
    let mut out = StatePaths { x: Vec::new(), phi: Vec::new(), rates: Vec::new(), b: Vec::new() };
    let mut phi = model.initial_positions::<T>(batch);
    for k in 0..=steps {
        let b = brownian_levels::<T>(paths, k);
        let reference = model.reference_at(&b);
        let x = phi.zip_map(&reference, |p, r| p - r);
        let rates = policy.rates(&StepState { k, x: &x, phi: &phi, b: &b })?;
        if rates.shape() != phi.shape() {
            return Err(Error::Config(format!("policy returned {:?} rates for {:?} positions", rates.shape(), phi.shape())));
        }
        let next = phi.zip_map(&rates, |p, r| p + r * dt);
        out.x.push(x);
        out.phi.push(phi);
        out.rates.push(rates);
        out.b.push(b);
        phi = next;
    }
    Ok(out)
}

/// LQ running reward `phi mu - (gamma/2)(phi sigma + xi B)^2 - (lambda/q)|rate|^q`
/// before multiplication by `dt`.
#[inline]
pub fn lq_objective_increment(phi: f64, b: f64, rate: f64, mu: f64, sigma: f64, agent: &AgentSpec, config: &MarketConfig) -> f64 {
    let exposure = phi * sigma + agent.endowment_vol * b;
    phi * mu - 0.5 * agent.risk_aversion * exposure * exposure - market::cost(rate, config.cost_level, config.elasticity)
}

/// `d/dx H` of the LQ Hamiltonian in the fast variable: `mu - gamma sigma (phi sigma + xi B)`.
#[inline]
pub fn lq_hamiltonian_dx(phi: f64, b: f64, mu: f64, sigma: f64, gamma: f64, xi: f64) -> f64 {
    mu - gamma * sigma * (phi * sigma + xi * b)
}

/// `d/da H = y - lambda |a|^(q-1) sign(a)`; vanishes at the optimal rate.
#[inline]
pub fn lq_hamiltonian_da(y: f64, rate: f64, cost_level: f64, elasticity: f64) -> f64 {
    y - market::marginal_cost(rate, cost_level, elasticity)
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;
    use crate::market::{frictionless_roster, TEN_AGENT_GAMMAS, TEN_AGENT_XIS};

    pub fn config(q: f64, horizon: f64, steps: usize) -> MarketConfig {
        MarketConfig {
            supply: 1.0,
            horizon,
            interest_rate: 0.0,
            cost_level: 0.01,
            elasticity: q,
            alpha: 1.0,
            beta: 2.0,
            steps,
            assets: 1,
            brownian_dim: 1,
        }
    }

    pub fn two_agent(q: f64, steps: usize) -> Model {
        let roster = frictionless_roster(&[1.0, 2.0], &[3.0, -3.0], 1.0).unwrap();
        Model::new(config(q, 0.4, steps), roster).unwrap()
    }

    pub fn ten_agent(q: f64, steps: usize) -> Model {
        let roster = frictionless_roster(&TEN_AGENT_GAMMAS, &TEN_AGENT_XIS, 1.0).unwrap();
        Model::new(config(q, 0.2, steps), roster).unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    #[test]
    fn objective_increment_examples() {
        let c = config(2.0, 0.2, 10);
        let a = AgentSpec::new(2.0, 0.0, 1.0);
        assert_eq!(lq_objective_increment(0.0, 0.0, 0.0, 0.3, 1.0, &a, &c), 0.0);
        assert!((lq_objective_increment(1.0, 0.0, 0.0, 0.1, 1.0, &a, &c) + 0.9).abs() < 1e-15);
        // two-agent frictionless point, gamma = {1, 2}, s = 1: agent 1 holds 2/3, mu = bar_gamma = 2/3
        let a1 = AgentSpec::new(1.0, 0.0, 2.0 / 3.0);
        let v = lq_objective_increment(2.0 / 3.0, 0.0, 0.0, 2.0 / 3.0, 1.0, &a1, &c);
        assert!((v - 2.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn hamiltonian_stationary_at_marginal_inverse() {
        for &(y, q) in &[(0.3, 1.5), (-0.02, 1.5), (0.05, 2.0), (-1.0, 1.2)] {
            let a = market::marginal_cost_inverse(y, 0.01, q);
            assert!(lq_hamiltonian_da(y, a, 0.01, q).abs() < 1e-12 * (1.0 + y.abs()));
        }
    }

    #[test]
    fn driver_vanishes_at_frictionless_point() {
        let (gamma, xi, sigma, phi, b) = (1.3, -14.0, 1.0, 0.4, 0.2);
        let mu = gamma * sigma * (phi * sigma + xi * b);
        assert_eq!(lq_hamiltonian_dx(phi, b, mu, sigma, gamma, xi), 0.0);
    }

    #[test]
    fn zero_policy_keeps_positions() {
        let m = two_agent(1.5, 8);
        let paths = PathBatch::sample(1, 4, &m.grid, 1).unwrap();
        let s = simulate_states::<f64>(&m, &ZeroPolicy, &paths).unwrap();
        for k in 0..=8 {
            for p in 0..4 {
                assert_eq!(s.phi[k].get(p, 0), m.roster[0].initial_position);
                let recon = s.x[k].get(p, 1) + m.reference.at(1, s.b[k][p]);
                assert!((recon - s.phi[k].get(p, 1)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn reference_positions_clear_the_supply() {
        let m = ten_agent(2.0, 10);
        for b in [-1.3, 0.0, 0.25, 2.0] {
            let total: f64 = (0..10).map(|n| m.reference.at(n, b)).sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }
}
