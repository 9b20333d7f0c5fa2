//! Monte Carlo evaluation of a policy profile under given price dynamics.
//!
//! Used for trained parameters and the oracle alike, so both rows of a
//! comparison come out of the same arithmetic.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffcore::Real;
use crate::error::{Error, Result};
use crate::paths::PathBatch;
use crate::rollout::{lq_objective_increment, simulate_states, Model, PolicyEval, PriceDynamics};

/// Default number of evaluation paths.
pub const DEFAULT_EVAL_PATHS: usize = 3000;

/// One table row: `(sum_n J_n, ||sum_n rate_n||^2, ||S_T - S_K||^2, S_0)` plus
/// bookkeeping.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub sum_j: f64,
    pub clearing: f64,
    pub terminal: f64,
    pub s0: f64,
    /// Standard error of `sum_j` across paths.
    pub sum_j_stderr: f64,
    /// `mean |rate at T|` over `mean max_k |rate|`, both over paths and agents.
    /// Small when agents stop trading near the horizon.
    pub terminal_rate_ratio: f64,
    pub per_agent_j: Vec<f64>,
    pub paths: usize,
    pub seed: u64,
}

impl EvalReport {
    pub const COLUMNS: [&'static str; 4] = ["sum_j", "clearing", "terminal", "s0"];

    pub fn column(&self, name: &str) -> Option<f64> {
        match name {
            "sum_j" => Some(self.sum_j),
            "clearing" => Some(self.clearing),
            "terminal" => Some(self.terminal),
            "s0" => Some(self.s0),
            _ => None,
        }
    }

    /// `sum_j  clearing  terminal  s0` in scientific notation.
    pub fn row(&self) -> String {
        format!("{:>12.4e} {:>12.4e} {:>12.4e} {:>12.4e}", self.sum_j, self.clearing, self.terminal, self.s0)
    }
}

/// Batch means per time step `k = 0..=K`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepSeries {
    pub t: Vec<f64>,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub price: Vec<f64>,
    /// `mean (sum_n rate_n)^2`.
    pub clearing: Vec<f64>,
    /// `[k][n]` mean rate.
    pub rate: Vec<Vec<f64>>,
    /// `[k][n]` mean position.
    pub position: Vec<Vec<f64>>,
}

/// Per-path trajectories kept for plotting: `[path][k][n]`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct KeptPaths {
    pub x: Vec<Vec<Vec<f64>>>,
    pub phi: Vec<Vec<Vec<f64>>>,
    pub rate: Vec<Vec<Vec<f64>>>,
    pub price: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct Evaluation {
    pub report: EvalReport,
    pub series: StepSeries,
    pub kept: KeptPaths,
}

struct ChunkStats {
    j: Vec<f64>,
    j_agent: Vec<f64>,
    clearing: Vec<f64>,
    terminal: f64,
    end_rate: f64,
    peak_rate: f64,
    mu: Vec<f64>,
    sigma: Vec<f64>,
    price: Vec<f64>,
    rate: Vec<Vec<f64>>,
    position: Vec<Vec<f64>>,
    kept: KeptPaths,
}

/// Paths are processed in chunks of this size, in parallel, and reduced in order.
const CHUNK: usize = 500;

/// Evaluates on `paths`, keeping full trajectories for the first `keep` paths.
pub fn evaluate_profile<T: Real>(
    model: &Model,
    policy: &dyn PolicyEval<T>,
    dynamics: &dyn PriceDynamics<T>,
    paths: &PathBatch,
    keep: usize,
) -> Result<Evaluation> {
    let batch = paths.batch();
    let starts: Vec<usize> = (0..batch).step_by(CHUNK).collect();
    let chunks: Vec<ChunkStats> = starts
        .par_iter()
        .map(|&s| {
            let e = (s + CHUNK).min(batch);
            let keep_here = keep.saturating_sub(s).min(e - s);
            evaluate_chunk(model, policy, dynamics, &paths.slice(s, e), keep_here)
        })
        .collect::<Result<_>>()?;

    let n = model.agents();
    let steps = model.steps();
    let total = batch as f64;
    let mut j_all = Vec::with_capacity(batch);
    let mut j_agent = vec![0.0; n];
    let mut clearing = vec![0.0; steps + 1];
    let mut terminal = 0.0;
    let (mut end_rate, mut peak_rate) = (0.0, 0.0);
    let mut series = StepSeries {
        t: model.grid.knots(),
        mu: vec![0.0; steps + 1],
        sigma: vec![0.0; steps + 1],
        price: vec![0.0; steps + 1],
        clearing: Vec::new(),
        rate: vec![vec![0.0; n]; steps + 1],
        position: vec![vec![0.0; n]; steps + 1],
    };
    let mut kept = KeptPaths::default();
    for c in chunks {
        j_all.extend(c.j);
        for a in 0..n {
            j_agent[a] += c.j_agent[a];
        }
        terminal += c.terminal;
        end_rate += c.end_rate;
        peak_rate += c.peak_rate;
        for k in 0..=steps {
            clearing[k] += c.clearing[k];
            series.mu[k] += c.mu[k];
            series.sigma[k] += c.sigma[k];
            series.price[k] += c.price[k];
            for a in 0..n {
                series.rate[k][a] += c.rate[k][a];
                series.position[k][a] += c.position[k][a];
            }
        }
        kept.x.extend(c.kept.x);
        kept.phi.extend(c.kept.phi);
        kept.rate.extend(c.kept.rate);
        kept.price.extend(c.kept.price);
        kept.b.extend(c.kept.b);
    }
    for k in 0..=steps {
        clearing[k] /= total;
        series.mu[k] /= total;
        series.sigma[k] /= total;
        series.price[k] /= total;
        for a in 0..n {
            series.rate[k][a] /= total;
            series.position[k][a] /= total;
        }
    }
    let mean_j = j_all.iter().sum::<f64>() / total;
    let var = if batch > 1 { j_all.iter().map(|v| (v - mean_j).powi(2)).sum::<f64>() / (total - 1.0) } else { 0.0 };
    let report = EvalReport {
        sum_j: mean_j,
        clearing: clearing.iter().sum::<f64>() / clearing.len() as f64,
        terminal: terminal / total,
        s0: dynamics.initial_price(),
        sum_j_stderr: (var / total).sqrt(),
        terminal_rate_ratio: if peak_rate > 0.0 { end_rate / peak_rate } else { 0.0 },
        per_agent_j: j_agent.iter().map(|v| v / total).collect(),
        paths: batch,
        seed: paths.seed(),
    };
    series.clearing = clearing;
    for v in [report.sum_j, report.clearing, report.terminal] {
        if !v.is_finite() {
            return Err(Error::Numerical(format!("evaluation produced a non-finite metric ({report:?})")));
        }
    }
    Ok(Evaluation { report, series, kept })
}

fn evaluate_chunk<T: Real>(
    model: &Model,
    policy: &dyn PolicyEval<T>,
    dynamics: &dyn PriceDynamics<T>,
    paths: &PathBatch,
    keep: usize,
) -> Result<ChunkStats> {
    let states = simulate_states(model, policy, paths)?;
    let batch = paths.batch();
    let n = model.agents();
    let steps = model.steps();
    let dt = model.dt();
    let mut j = vec![0.0; batch];
    let mut j_agent = vec![0.0; n];
    let mut clearing = vec![0.0; steps + 1];
    let mut mu_sum = vec![0.0; steps + 1];
    let mut sigma_sum = vec![0.0; steps + 1];
    let mut price_sum = vec![0.0; steps + 1];
    let mut rate_sum = vec![vec![0.0; n]; steps + 1];
    let mut pos_sum = vec![vec![0.0; n]; steps + 1];
    let mut price = vec![dynamics.initial_price(); batch];
    let mut peak = vec![0.0f64; batch * n];
    let mut end_rate = 0.0;
    let mut kept = KeptPaths {
        x: vec![Vec::new(); keep],
        phi: vec![Vec::new(); keep],
        rate: vec![Vec::new(); keep],
        price: vec![Vec::new(); keep],
        b: vec![Vec::new(); keep],
    };
    for k in 0..=steps {
        let (mu, sigma) = dynamics.eval(&states.state(k))?;
        let (x, phi, rates) = (&states.x[k], &states.phi[k], &states.rates[k]);
        for p in 0..batch {
            let (m, s, b) = (mu[p].as_f64(), sigma[p].as_f64(), states.b[k][p].as_f64());
            let mut net = 0.0;
            for (a, agent) in model.roster.iter().enumerate() {
                let (ph, r) = (phi.get(p, a).as_f64(), rates.get(p, a).as_f64());
                let f = lq_objective_increment(ph, b, r, m, s, agent, &model.config) * dt;
                j[p] += f;
                j_agent[a] += f;
                net += r;
                rate_sum[k][a] += r;
                peak[p * n + a] = peak[p * n + a].max(r.abs());
                if k == steps {
                    end_rate += r.abs();
                }
                pos_sum[k][a] += ph;
            }
            clearing[k] += net * net;
            mu_sum[k] += m;
            sigma_sum[k] += s;
            price_sum[k] += price[p];
            if p < keep {
                kept.x[p].push((0..n).map(|a| x.get(p, a).as_f64()).collect());
                kept.phi[p].push((0..n).map(|a| phi.get(p, a).as_f64()).collect());
                kept.rate[p].push((0..n).map(|a| rates.get(p, a).as_f64()).collect());
                kept.price[p].push(price[p]);
                kept.b[p].push(b);
            }
            if k < steps {
                price[p] += m * dt + s * paths.increment(p, k, 0);
            }
        }
    }
    let terminal = (0..batch)
        .map(|p| {
            let d = price[p] - model.terminal_dividend(paths.level(p, steps, 0));
            d * d
        })
        .sum();
    Ok(ChunkStats {
        j,
        j_agent,
        clearing,
        terminal,
        end_rate,
        peak_rate: peak.iter().sum(),
        mu: mu_sum,
        sigma: sigma_sum,
        price: price_sum,
        rate: rate_sum,
        position: pos_sum,
        kept,
    })
}

impl StepSeries {
    /// `k,t,mu,sigma,price,clearing,rate_1..rate_N,phi_1..phi_N`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let n = self.rate.first().map_or(0, |r| r.len());
        let mut header = vec!["k".to_string(), "t".into(), "mu".into(), "sigma".into(), "price".into(), "clearing".into()];
        header.extend((1..=n).map(|a| format!("rate_{a}")));
        header.extend((1..=n).map(|a| format!("phi_{a}")));
        w.write_record(&header).map_err(csv_err)?;
        for k in 0..self.t.len() {
            let mut row = vec![
                k.to_string(),
                self.t[k].to_string(),
                self.mu[k].to_string(),
                self.sigma[k].to_string(),
                self.price[k].to_string(),
                self.clearing[k].to_string(),
            ];
            row.extend(self.rate[k].iter().map(|v| v.to_string()));
            row.extend(self.position[k].iter().map(|v| v.to_string()));
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io("series csv", e))
    }
}

impl KeptPaths {
    /// Long format `agent,path,k,B,S,X,phi,rate`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["agent", "path", "k", "B", "S", "X", "phi", "rate"]).map_err(csv_err)?;
        for p in 0..self.x.len() {
            for k in 0..self.x[p].len() {
                for a in 0..self.x[p][k].len() {
                    w.write_record([
                        a.to_string(),
                        p.to_string(),
                        k.to_string(),
                        self.b[p][k].to_string(),
                        self.price[p][k].to_string(),
                        self.x[p][k][a].to_string(),
                        self.phi[p][k][a].to_string(),
                        self.rate[p][k][a].to_string(),
                    ])
                    .map_err(csv_err)?;
                }
            }
        }
        w.flush().map_err(|e| Error::io("trajectory csv", e))
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format { what: "csv output".into(), detail: e.to_string() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rollout::fixtures::*;
    use crate::rollout::{ConstantDynamics, ZeroPolicy};

    #[test]
    fn zero_policy_at_frictionless_point_is_exact() {
        let m = ten_agent(2.0, 20);
        let cfg = &m.config;
        let dynamics = ConstantDynamics { mu: 0.0, sigma: cfg.alpha, s0: cfg.beta * cfg.horizon };
        let paths = PathBatch::sample(5, 700, &m.grid, 1).unwrap();
        let ev = evaluate_profile::<f64>(&m, &ZeroPolicy, &dynamics, &paths, 2).unwrap();
        assert_eq!(ev.report.clearing, 0.0);
        assert!(ev.report.terminal < 1e-24);
        assert_eq!(ev.kept.x.len(), 2);
        assert_eq!(ev.kept.x[0].len(), 21);
        assert_eq!(ev.series.clearing.len(), 21);
    }

    #[test]
    fn chunking_does_not_change_results() {
        let m = two_agent(1.5, 10);
        let dynamics = ConstantDynamics { mu: 0.2, sigma: 1.1, s0: 0.7 };
        let paths = PathBatch::sample(8, 1100, &m.grid, 1).unwrap();
        let ev = evaluate_profile::<f64>(&m, &ZeroPolicy, &dynamics, &paths, 0).unwrap();
        // direct single-pass sum
        let mut acc = 0.0;
        for p in 0..1100 {
            for k in 0..=10 {
                for a in 0..2 {
                    let ag = &m.roster[a];
                    acc += lq_objective_increment(ag.initial_position, paths.level(p, k, 0), 0.0, 0.2, 1.1, ag, &m.config) * m.dt();
                }
            }
        }
        assert!((ev.report.sum_j - acc / 1100.0).abs() < 1e-10);
        let total: f64 = ev.report.per_agent_j.iter().sum();
        assert!((total - ev.report.sum_j).abs() < 1e-10);
    }

    #[test]
    fn report_columns() {
        let r = EvalReport {
            sum_j: -0.2,
            clearing: 1e-5,
            terminal: 2e-7,
            s0: 0.36,
            sum_j_stderr: 0.0,
            terminal_rate_ratio: 0.0,
            per_agent_j: vec![],
            paths: 1,
            seed: 0,
        };
        for c in EvalReport::COLUMNS {
            assert!(r.column(c).is_some());
        }
        assert!(r.column("nope").is_none());
    }
}
