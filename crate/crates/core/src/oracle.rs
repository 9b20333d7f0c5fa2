//! Exact equilibrium of the discretized quadratic-cost model.
//!
//! With `q = 2` the optimal rate is `Y / lambda`, clearing forces the drift to
//! `mu = (1/N) sum_n gamma_n sigma (sigma phi_n + xi_n B)`, and every quantity
//! stays affine in the joint state `(phi, B)`. Positing
//! `Y_k = A_k phi_k + b_k B_k` and `S_k = u_k . phi_k + v_k B_k + w_k`, one
//! backward sweep from `A_K = 0`, `b_K = 0`, `S_K = alpha B + beta T` yields all
//! coefficients. The volatility is read off the price: `sigma_k = v_{k+1}`.
//!
//! Columns of `A_k` sum to zero and `sum_n b_k = 0`, so aggregate trading
//! vanishes as a coefficient identity.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::diffcore::{Real, Tensor};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_profile, Evaluation};
use crate::paths::PathBatch;
use crate::rollout::{Model, PolicyEval, PriceDynamics, StepState};

/// Coefficients of the affine equilibrium on the model's time grid.
#[derive(Clone, Debug)]
pub struct AffineEquilibrium {
    pub steps: usize,
    pub dt: f64,
    pub cost_level: f64,
    /// `Y_k = a[k] phi + b[k] B`.
    pub a: Vec<DMatrix<f64>>,
    pub b: Vec<DVector<f64>>,
    /// `S_k = u[k] . phi + v[k] B + w[k]`.
    pub u: Vec<DVector<f64>>,
    pub v: Vec<f64>,
    pub w: Vec<f64>,
    pub sigma: Vec<f64>,
    pub s0: f64,
    gammas: DVector<f64>,
    gamma_xi: f64,
    initial: DVector<f64>,
}

/// Solves the discrete quadratic-cost equilibrium.
pub fn solve_quadratic(model: &Model) -> Result<AffineEquilibrium> {
    let cfg = &model.config;
    if (cfg.elasticity - 2.0).abs() > 1e-12 {
        return Err(Error::Config(format!("the affine oracle needs q = 2 (got {})", cfg.elasticity)));
    }
    let n = model.agents();
    let steps = model.steps();
    let dt = model.dt();
    let lambda = cfg.cost_level;
    let nf = n as f64;
    let gammas = DVector::from_vec(model.gammas.clone());
    let xis = DVector::from_vec(model.xis.clone());
    let gamma_xi = gammas.dot(&xis);
    let ones = DVector::<f64>::from_element(n, 1.0);
    let eye = DMatrix::<f64>::identity(n, n);
    // driver_n = sigma^2 ((1/N) gamma.phi - gamma_n phi_n) + sigma B ((1/N) gamma.xi - gamma_n xi_n)
    let spread = &ones * gammas.transpose() / nf - DMatrix::from_diagonal(&gammas);
    let tilt = DVector::from_element(n, gamma_xi / nf) - gammas.component_mul(&xis);

    let mut a = vec![DMatrix::zeros(n, n); steps + 1];
    let mut b = vec![DVector::zeros(n); steps + 1];
    let mut u = vec![DVector::zeros(n); steps + 1];
    let mut v = vec![0.0; steps + 1];
    let mut w = vec![0.0; steps + 1];
    let mut sigma = vec![0.0; steps + 1];
    sigma[steps] = cfg.alpha;
    v[steps] = cfg.alpha;
    w[steps] = cfg.beta * cfg.horizon;
    for k in (0..steps).rev() {
        let s1 = sigma[k + 1];
        // Y_k = E_k[Y_{k+1} + driver_{k+1} dt] with phi_{k+1} = phi_k + Y_k dt / lambda
        let p = &a[k + 1] + &spread * (s1 * s1 * dt);
        let bp = &b[k + 1] + &tilt * (s1 * dt);
        let lhs = &eye - &p * (dt / lambda);
        let lu = lhs.lu();
        a[k] = lu.solve(&p).ok_or_else(|| Error::Numerical(format!("singular backward system at step {k}")))?;
        b[k] = lu.solve(&bp).ok_or_else(|| Error::Numerical(format!("singular backward system at step {k}")))?;
        // S_k = E_k S_{k+1} - mu_k dt, sigma_k = d S_{k+1} / d B_{k+1}
        sigma[k] = v[k + 1];
        let sk = sigma[k];
        let transition = &eye + &a[k] * (dt / lambda);
        u[k] = transition.transpose() * &u[k + 1] - &gammas * (dt * sk * sk / nf);
        v[k] = u[k + 1].dot(&b[k]) * dt / lambda + v[k + 1] - dt * sk * gamma_xi / nf;
        w[k] = w[k + 1];
    }
    let initial = DVector::from_iterator(n, model.roster.iter().map(|r| r.initial_position));
    let s0 = u[0].dot(&initial) + w[0];
    if !s0.is_finite() || sigma.iter().any(|s| !s.is_finite()) {
        return Err(Error::Numerical("oracle recursion produced non-finite coefficients".into()));
    }
    Ok(AffineEquilibrium { steps, dt, cost_level: lambda, a, b, u, v, w, sigma, s0, gammas, gamma_xi, initial })
}

impl AffineEquilibrium {
    pub fn agents(&self) -> usize {
        self.gammas.len()
    }

    /// `Y_k` for one path.
    pub fn adjoint(&self, k: usize, phi: &[f64], b: f64) -> DVector<f64> {
        &self.a[k] * DVector::from_column_slice(phi) + &self.b[k] * b
    }

    /// Drift coefficients `(on phi, on B, constant)`.
    pub fn mu_coefficients(&self, k: usize) -> (DVector<f64>, f64, f64) {
        let n = self.agents() as f64;
        let s = self.sigma[k];
        (&self.gammas * (s * s / n), s * self.gamma_xi / n, 0.0)
    }

    pub fn mu(&self, k: usize, phi: &[f64], b: f64) -> f64 {
        let (c, cb, c0) = self.mu_coefficients(k);
        c.dot(&DVector::from_column_slice(phi)) + cb * b + c0
    }

    pub fn price(&self, k: usize, phi: &[f64], b: f64) -> f64 {
        self.u[k].dot(&DVector::from_column_slice(phi)) + self.v[k] * b + self.w[k]
    }

    /// Largest `|sum_n A_k[n, j]|` and `|sum_n b_k[n]|` over all steps.
    pub fn clearing_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for k in 0..=self.steps {
            for j in 0..self.agents() {
                worst = worst.max(self.a[k].column(j).sum().abs());
            }
            worst = worst.max(self.b[k].sum().abs());
        }
        worst
    }

    /// Exact expected objective per agent, from first and second moments of
    /// the Gaussian state `z = (phi, B)`.
    pub fn expected_objective(&self, model: &Model) -> Vec<f64> {
        let n = self.agents();
        let dim = n + 1;
        let dt = self.dt;
        let lambda = self.cost_level;
        let mut second = DMatrix::<f64>::zeros(dim, dim);
        for i in 0..n {
            for j in 0..n {
                second[(i, j)] = self.initial[i] * self.initial[j];
            }
        }
        let mut out = vec![0.0; n];
        for k in 0..=self.steps {
            let s = self.sigma[k];
            let (mc, mb, _) = self.mu_coefficients(k);
            let mut mu_row = DVector::zeros(dim);
            mu_row.rows_mut(0, n).copy_from(&mc);
            mu_row[n] = mb;
            for (agent, total) in out.iter_mut().enumerate() {
                // phi_n mu - gamma/2 (sigma phi_n + xi B)^2 - (1/(2 lambda)) Y_n^2
                let mut e_n = DVector::zeros(dim);
                e_n[agent] = 1.0;
                let mut r = DVector::zeros(dim);
                r[agent] = s;
                r[n] = model.xis[agent];
                let mut y = DVector::zeros(dim);
                for j in 0..n {
                    y[j] = self.a[k][(agent, j)];
                }
                y[n] = self.b[k][agent];
                let q = (&e_n * mu_row.transpose() + &mu_row * e_n.transpose()) * 0.5
                    - &r * r.transpose() * (0.5 * model.gammas[agent])
                    - &y * y.transpose() * (0.5 / lambda);
                *total += q.component_mul(&second).sum() * dt;
            }
            if k < self.steps {
                let mut f = DMatrix::<f64>::identity(dim, dim);
                for i in 0..n {
                    for j in 0..n {
                        f[(i, j)] += self.a[k][(i, j)] * dt / lambda;
                    }
                    f[(i, n)] = self.b[k][i] * dt / lambda;
                }
                second = &f * &second * f.transpose();
                second[(n, n)] += dt;
            }
        }
        out
    }

    /// `k,t,sigma,v,w,s0` plus flattened `A_k` and `b_k` per row.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let n = self.agents();
        let mut header = vec!["k".to_string(), "t".into(), "sigma".into(), "mu_phi_scale".into(), "mu_b".into(), "price_v".into(), "price_w".into()];
        for i in 0..n {
            for j in 0..n {
                header.push(format!("a_{}_{}", i + 1, j + 1));
            }
        }
        header.extend((1..=n).map(|i| format!("b_{i}")));
        header.extend((1..=n).map(|i| format!("u_{i}")));
        let err = |e: csv::Error| Error::Format { what: "oracle csv".into(), detail: e.to_string() };
        w.write_record(&header).map_err(err)?;
        for k in 0..=self.steps {
            let (_, mb, _) = self.mu_coefficients(k);
            let s = self.sigma[k];
            let mut row = vec![
                k.to_string(),
                (k as f64 * self.dt).to_string(),
                s.to_string(),
                (s * s / n as f64).to_string(),
                mb.to_string(),
                self.v[k].to_string(),
                self.w[k].to_string(),
            ];
            for i in 0..n {
                for j in 0..n {
                    row.push(self.a[k][(i, j)].to_string());
                }
            }
            row.extend(self.b[k].iter().map(|v| v.to_string()));
            row.extend(self.u[k].iter().map(|v| v.to_string()));
            w.write_record(&row).map_err(err)?;
        }
        w.flush().map_err(|e| Error::io("oracle csv", e))
    }
}

/// The oracle as a policy profile and price process.
pub struct OracleProfile<'a> {
    pub eq: &'a AffineEquilibrium,
}

impl<T: Real> PolicyEval<T> for OracleProfile<'_> {
    fn rates(&self, state: &StepState<'_, T>) -> Result<Tensor<T>> {
        let (rows, n) = state.phi.shape();
        let mut out = Tensor::zeros(rows, n);
        let mut phi = vec![0.0; n];
        for p in 0..rows {
            for (a, v) in phi.iter_mut().enumerate() {
                *v = state.phi.get(p, a).as_f64();
            }
            let y = self.eq.adjoint(state.k, &phi, state.b[p].as_f64());
            for a in 0..n {
                out.set(p, a, T::of(y[a] / self.eq.cost_level));
            }
        }
        Ok(out)
    }
}

impl<T: Real> PriceDynamics<T> for OracleProfile<'_> {
    fn eval(&self, state: &StepState<'_, T>) -> Result<(Vec<T>, Vec<T>)> {
        let (rows, n) = state.phi.shape();
        let s = T::of(self.eq.sigma[state.k]);
        let mut phi = vec![0.0; n];
        let mu = (0..rows)
            .map(|p| {
                for (a, v) in phi.iter_mut().enumerate() {
                    *v = state.phi.get(p, a).as_f64();
                }
                T::of(self.eq.mu(state.k, &phi, state.b[p].as_f64()))
            })
            .collect();
        Ok((mu, vec![s; rows]))
    }

    fn initial_price(&self) -> f64 {
        self.eq.s0
    }
}

/// Monte Carlo evaluation of the oracle's policies and price in 64-bit.
pub fn oracle_evaluate(eq: &AffineEquilibrium, model: &Model, paths: &PathBatch, keep: usize) -> Result<Evaluation> {
    let profile = OracleProfile { eq };
    evaluate_profile::<f64>(model, &profile, &profile, paths, keep)
}
