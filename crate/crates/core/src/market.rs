//! Market and agent configuration, the power trading-cost functional, the
//! frictionless benchmark and the reference positions built from it.
//!
//! The traded asset pays the liquidating dividend `alpha * B_T + beta * T` at
//! the horizon. Agent `n` carries an endowment exposure `xi_n * B_t`, and the
//! roster's exposures sum to zero, so the frictionless equilibrium has
//! volatility `alpha`, return `bar_gamma * alpha^2` and positions
//! `(bar_gamma / gamma_n) s - (xi_n / alpha) B_t`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketConfig {
    /// Total share supply `s`.
    pub supply: f64,
    /// Horizon `T` in years.
    pub horizon: f64,
    /// Interest rate; the LQ model only supports 0.
    #[serde(default)]
    pub interest_rate: f64,
    /// Cost level `lambda` in `G(x) = lambda |x|^q / q`.
    pub cost_level: f64,
    /// Cost elasticity `q` in (1, 2].
    pub elasticity: f64,
    /// Brownian loading of the terminal dividend.
    pub alpha: f64,
    /// Drift of the terminal dividend.
    pub beta: f64,
    /// Number of time steps `K`.
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "one")]
    pub assets: usize,
    #[serde(default = "one")]
    pub brownian_dim: usize,
}

fn default_steps() -> usize {
    50
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    pub risk_aversion: f64,
    /// Endowment volatility coefficient; the endowment volatility is `xi * B_t`.
    pub endowment_vol: f64,
    pub initial_position: f64,
    /// Carried for the general wealth-dependent preferences; unused by the LQ objective.
    #[serde(default)]
    pub initial_wealth: f64,
}

impl AgentSpec {
    pub fn new(risk_aversion: f64, endowment_vol: f64, initial_position: f64) -> Self {
        Self { risk_aversion, endowment_vol, initial_position, initial_wealth: 0.0 }
    }
}

/// Agents starting at their frictionless positions `(bar_gamma / gamma_n) s`.
pub fn frictionless_roster(gammas: &[f64], xis: &[f64], supply: f64) -> Result<Vec<AgentSpec>> {
    if gammas.len() != xis.len() {
        return Err(Error::Config("risk aversions and endowment vols differ in length".into()));
    }
    let gbar = harmonic_gamma(gammas)?;
    Ok(gammas.iter().zip(xis).map(|(&g, &x)| AgentSpec::new(g, x, gbar / g * supply)).collect())
}

#[derive(Clone, Debug, PartialEq)]
pub enum Violation {
    EmptyRoster,
    NonPositiveHorizon(f64),
    NoSteps,
    NonPositiveCostLevel(f64),
    ElasticityOutOfRange(f64),
    NegativeSupply(f64),
    NonPositiveRiskAversion { agent: usize, value: f64 },
    NonFinite(&'static str),
    AggregateEndowmentNonzero(f64),
    InitialPositionsDoNotClear { total: f64, supply: f64 },
    NonzeroInterestRate(f64),
    NonPositiveAlpha(f64),
    UnsupportedDimension { assets: usize, brownian_dim: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyRoster => write!(f, "roster is empty"),
            Violation::NonPositiveHorizon(t) => write!(f, "horizon must be positive (got {t})"),
            Violation::NoSteps => write!(f, "need at least one time step"),
            Violation::NonPositiveCostLevel(l) => write!(f, "cost level must be positive (got {l})"),
            Violation::ElasticityOutOfRange(q) => write!(f, "elasticity out of (1,2] (got {q})"),
            Violation::NegativeSupply(s) => write!(f, "supply must be non-negative (got {s})"),
            Violation::NonPositiveRiskAversion { agent, value } => {
                write!(f, "agent {agent}: risk aversion must be positive (got {value})")
            }
            Violation::NonFinite(what) => write!(f, "{what} is not finite"),
            Violation::AggregateEndowmentNonzero(sum) => write!(f, "aggregate endowment nonzero (sum of xi = {sum})"),
            Violation::InitialPositionsDoNotClear { total, supply } => {
                write!(f, "initial positions sum to {total}, supply is {supply}")
            }
            Violation::NonzeroInterestRate(r) => write!(f, "interest rate must be 0 in the LQ model (got {r})"),
            Violation::NonPositiveAlpha(a) => write!(f, "dividend loading alpha must be positive (got {a})"),
            Violation::UnsupportedDimension { assets, brownian_dim } => {
                write!(f, "only one asset and one Brownian motion are supported (got m={assets}, d={brownian_dim})")
            }
        }
    }
}

fn close(a: f64, b: f64, scale: f64) -> bool {
    (a - b).abs() <= 1e-9 * (1.0 + scale)
}

/// Checks every configuration and roster invariant. Never panics.
pub fn validate(config: &MarketConfig, roster: &[AgentSpec]) -> std::result::Result<(), Vec<Violation>> {
    let mut v = Vec::new();
    let c = config;
    for (name, x) in [
        ("supply", c.supply),
        ("horizon", c.horizon),
        ("interest rate", c.interest_rate),
        ("cost level", c.cost_level),
        ("elasticity", c.elasticity),
        ("alpha", c.alpha),
        ("beta", c.beta),
    ] {
        if !x.is_finite() {
            v.push(Violation::NonFinite(name));
        }
    }
    if !(c.horizon > 0.0) {
        v.push(Violation::NonPositiveHorizon(c.horizon));
    }
    if c.steps == 0 {
        v.push(Violation::NoSteps);
    }
    if !(c.cost_level > 0.0) {
        v.push(Violation::NonPositiveCostLevel(c.cost_level));
    }
    if !(c.elasticity > 1.0 && c.elasticity <= 2.0) {
        v.push(Violation::ElasticityOutOfRange(c.elasticity));
    }
    if !(c.supply >= 0.0) {
        v.push(Violation::NegativeSupply(c.supply));
    }
    if c.interest_rate != 0.0 {
        v.push(Violation::NonzeroInterestRate(c.interest_rate));
    }
    if !(c.alpha > 0.0) {
        v.push(Violation::NonPositiveAlpha(c.alpha));
    }
    if c.assets != 1 || c.brownian_dim != 1 {
        v.push(Violation::UnsupportedDimension { assets: c.assets, brownian_dim: c.brownian_dim });
    }

    if roster.is_empty() {
        v.push(Violation::EmptyRoster);
    }
    for (i, a) in roster.iter().enumerate() {
        if !(a.risk_aversion > 0.0) {
            v.push(Violation::NonPositiveRiskAversion { agent: i, value: a.risk_aversion });
        }
        if !a.endowment_vol.is_finite() || !a.initial_position.is_finite() {
            v.push(Violation::NonFinite("agent parameter"));
        }
    }
    if !roster.is_empty() {
        let xi_sum: f64 = roster.iter().map(|a| a.endowment_vol).sum();
        let xi_scale: f64 = roster.iter().map(|a| a.endowment_vol.abs()).sum();
        if !close(xi_sum, 0.0, xi_scale) {
            v.push(Violation::AggregateEndowmentNonzero(xi_sum));
        }
        let total: f64 = roster.iter().map(|a| a.initial_position).sum();
        let pos_scale: f64 = roster.iter().map(|a| a.initial_position.abs()).sum::<f64>() + c.supply.abs();
        if !close(total, c.supply, pos_scale) {
            v.push(Violation::InitialPositionsDoNotClear { total, supply: c.supply });
        }
    }
    if v.is_empty() {
        Ok(())
    } else {
        Err(v)
    }
}

/// Like [`validate`] but as an [`Error`].
pub fn ensure_valid(config: &MarketConfig, roster: &[AgentSpec]) -> Result<()> {
    validate(config, roster).map_err(Error::Invalid)
}

fn harmonic_gamma(gammas: &[f64]) -> Result<f64> {
    if gammas.is_empty() {
        return Err(Error::Config("bar_gamma of an empty roster".into()));
    }
    if let Some(g) = gammas.iter().find(|&&g| !(g > 0.0)) {
        return Err(Error::Config(format!("risk aversion must be positive (got {g})")));
    }
    Ok(1.0 / gammas.iter().map(|g| 1.0 / g).sum::<f64>())
}

/// Aggregate risk aversion `(sum 1/gamma_n)^-1`.
pub fn bar_gamma(roster: &[AgentSpec]) -> Result<f64> {
    let gammas: Vec<f64> = roster.iter().map(|a| a.risk_aversion).collect();
    harmonic_gamma(&gammas)
}

/// Trading cost per unit time, `lambda |x|^q / q`.
#[inline]
pub fn cost(rate: f64, cost_level: f64, elasticity: f64) -> f64 {
    if rate == 0.0 {
        return 0.0;
    }
    cost_level * rate.abs().powf(elasticity) / elasticity
}

/// Marginal cost `lambda |x|^(q-1) sign(x)`.
#[inline]
pub fn marginal_cost(rate: f64, cost_level: f64, elasticity: f64) -> f64 {
    if rate == 0.0 {
        return 0.0;
    }
    cost_level * rate.abs().powf(elasticity - 1.0) * rate.signum()
}

/// Trading rate whose marginal cost equals `y`: `sign(y) |y / lambda|^(1/(q-1))`.
#[inline]
pub fn marginal_cost_inverse(y: f64, cost_level: f64, elasticity: f64) -> f64 {
    if y == 0.0 {
        return 0.0;
    }
    y.signum() * (y.abs() / cost_level).powf(1.0 / (elasticity - 1.0))
}

/// Frictionless equilibrium return and volatility `(bar_gamma alpha^2, alpha)`.
pub fn frictionless_benchmark(config: &MarketConfig, roster: &[AgentSpec]) -> Result<(f64, f64)> {
    let g = bar_gamma(roster)?;
    Ok((g * config.alpha * config.alpha, config.alpha))
}

/// Precomputed per-agent constants of the reference position
/// `bar_phi_n(B) = level_n - slope_n * B`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferencePositions {
    pub level: Vec<f64>,
    pub slope: Vec<f64>,
}

impl ReferencePositions {
    pub fn new(config: &MarketConfig, roster: &[AgentSpec]) -> Result<Self> {
        let g = bar_gamma(roster)?;
        Ok(Self {
            level: roster.iter().map(|a| g / a.risk_aversion * config.supply).collect(),
            slope: roster.iter().map(|a| a.endowment_vol / config.alpha).collect(),
        })
    }

    #[inline]
    pub fn at(&self, agent: usize, b: f64) -> f64 {
        self.level[agent] - self.slope[agent] * b
    }

    pub fn len(&self) -> usize {
        self.level.len()
    }

    pub fn is_empty(&self) -> bool {
        self.level.is_empty()
    }
}

/// Frictionless equilibrium position `(bar_gamma / gamma_n) s - (xi_n / alpha) B_t`.
pub fn reference_position(agent: &AgentSpec, b_t: f64, bar_gamma: f64, config: &MarketConfig) -> f64 {
    bar_gamma / agent.risk_aversion * config.supply - agent.endowment_vol / config.alpha * b_t
}

/// Liquidating dividend `alpha B_T + beta T`.
#[inline]
pub fn terminal_dividend(b_t: f64, config: &MarketConfig) -> f64 {
    config.alpha * b_t + config.beta * config.horizon
}

/// Risk aversions of the ten-agent experiments.
pub const TEN_AGENT_GAMMAS: [f64; 10] = [1.0, 1.1, 1.2, 1.3, 1.4, 1.5, 1.6, 1.7, 1.8, 1.9];
/// Endowment volatility coefficients of the ten-agent experiments.
pub const TEN_AGENT_XIS: [f64; 10] = [28.9, 14.9, 11.8, -14.0, -19.1, -27.0, 22.2, 31.5, -26.3, -22.9];

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn two_agent_config() -> MarketConfig {
        MarketConfig {
            supply: 1.0,
            horizon: 0.4,
            interest_rate: 0.0,
            cost_level: 0.01,
            elasticity: 1.5,
            alpha: 1.0,
            beta: 2.0,
            steps: 50,
            assets: 1,
            brownian_dim: 1,
        }
    }

    #[test]
    fn bar_gamma_examples() {
        let one = vec![AgentSpec::new(1.0, 0.0, 1.0)];
        assert_eq!(bar_gamma(&one).unwrap(), 1.0);
        let two = frictionless_roster(&[1.0, 2.0], &[0.0, 0.0], 1.0).unwrap();
        assert!((bar_gamma(&two).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        let ten = frictionless_roster(&TEN_AGENT_GAMMAS, &TEN_AGENT_XIS, 1.0).unwrap();
        // direct summation: 1 / sum(1/gamma)
        let direct = 1.0 / TEN_AGENT_GAMMAS.iter().map(|g| 1.0 / g).sum::<f64>();
        assert!((bar_gamma(&ten).unwrap() - direct).abs() < 1e-15);
        assert!((direct - 0.13913).abs() < 5e-6);
        assert!(bar_gamma(&[]).is_err());
    }

    #[test]
    fn cost_examples() {
        assert_eq!(cost(0.0, 0.01, 2.0), 0.0);
        assert!((cost(1.0, 0.01, 2.0) - 0.005).abs() < 1e-15);
        assert!((cost(4.0, 0.01, 1.5) - 0.01 * 8.0 / 1.5).abs() < 1e-15);
    }

    #[test]
    fn marginal_cost_inverse_examples() {
        assert_eq!(marginal_cost_inverse(0.0, 0.01, 1.5), 0.0);
        assert!((marginal_cost_inverse(0.01, 0.01, 2.0) - 1.0).abs() < 1e-15);
        assert!((marginal_cost_inverse(-0.04, 0.01, 1.5) + 16.0).abs() < 1e-12);
    }

    #[test]
    fn benchmark_examples() {
        let mut c = two_agent_config();
        let r = frictionless_roster(&[1.0, 2.0], &[3.0, -3.0], 1.0).unwrap();
        let (mu, sigma) = frictionless_benchmark(&c, &r).unwrap();
        assert!((mu - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(sigma, 1.0);
        c.alpha = 2.0;
        let single = vec![AgentSpec::new(1.0, 0.0, 1.0)];
        assert_eq!(frictionless_benchmark(&c, &single).unwrap(), (4.0, 2.0));
    }

    #[test]
    fn reference_position_examples() {
        let c = two_agent_config();
        let r = frictionless_roster(&[1.0, 2.0], &[3.0, -3.0], 1.0).unwrap();
        let g = bar_gamma(&r).unwrap();
        assert!((reference_position(&r[0], 0.0, g, &c) - 2.0 / 3.0).abs() < 1e-15);
        assert!((reference_position(&r[1], 0.0, g, &c) - 1.0 / 3.0).abs() < 1e-15);
        assert!((reference_position(&r[0], 0.5, g, &c) + 5.0 / 6.0).abs() < 1e-15);
        let rp = ReferencePositions::new(&c, &r).unwrap();
        assert_eq!(rp.at(0, 0.5), reference_position(&r[0], 0.5, g, &c));
    }

    #[test]
    fn terminal_dividend_examples() {
        let mut c = two_agent_config();
        c.horizon = 0.2;
        assert!((terminal_dividend(0.0, &c) - 0.4).abs() < 1e-15);
        c.horizon = 0.0;
        assert_eq!(terminal_dividend(1.0, &c), 1.0);
    }

    #[test]
    fn validation() {
        let mut c = two_agent_config();
        c.elasticity = 2.0;
        let ten = frictionless_roster(&TEN_AGENT_GAMMAS, &TEN_AGENT_XIS, 1.0).unwrap();
        assert_eq!(validate(&c, &ten), Ok(()));

        let bad = frictionless_roster(&[1.0, 1.0], &[1.0, 1.0], 1.0).unwrap();
        let err = validate(&c, &bad).unwrap_err();
        assert!(err.iter().any(|v| v.to_string().contains("aggregate endowment nonzero")));

        c.elasticity = 2.5;
        let err = validate(&c, &ten).unwrap_err();
        assert!(err.iter().any(|v| v.to_string().contains("elasticity out of (1,2]")));

        let err = validate(&two_agent_config(), &[]).unwrap_err();
        assert!(err.contains(&Violation::EmptyRoster));

        let mut off = ten.clone();
        off[0].initial_position += 0.1;
        assert!(validate(&two_agent_config(), &off).is_err());
    }
}
