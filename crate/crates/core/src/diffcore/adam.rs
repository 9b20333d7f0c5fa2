use serde::{Deserialize, Serialize};

use super::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Returned when a gradient entry is NaN or infinite; parameters are left untouched.
#[derive(Debug, Clone, PartialEq)]
pub struct NonFiniteGradient {
    pub tensor: usize,
}

/// Moment accumulators for one parameter list.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(config: AdamConfig, shapes: &[usize]) -> Self {
        Self {
            config,
            step: 0,
            m: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
        }
    }

    pub fn for_params(config: AdamConfig, params: &[&Tensor<T>]) -> Self {
        let shapes: Vec<usize> = params.iter().map(|t| t.len()).collect();
        Self::new(config, &shapes)
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }
}

/// One bias-corrected Adam update.
pub fn adam_step<T: Real>(
    params: &mut [&mut Tensor<T>],
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
) -> Result<(), NonFiniteGradient> {
    assert_eq!(params.len(), grads.len(), "parameter and gradient counts differ");
    assert_eq!(params.len(), state.m.len(), "optimizer state does not match parameter list");
    if let Some(bad) = grads.iter().position(|g| !g.all_finite()) {
        return Err(NonFiniteGradient { tensor: bad });
    }
    state.step += 1;
    let c = state.config;
    let t = state.step as f64;
    let bc1 = 1.0 - c.beta1.powf(t);
    let bc2 = 1.0 - c.beta2.powf(t);
    let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
    let (one_b1, one_b2) = (T::of(1.0 - c.beta1), T::of(1.0 - c.beta2));
    let step_size = T::of(c.lr / bc1);
    let inv_bc2 = T::of(1.0 / bc2);
    let eps = T::of(c.eps);

    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        assert_eq!(p.len(), g.len(), "gradient shape mismatch for tensor {i}");
        let m = &mut state.m[i];
        let v = &mut state.v[i];
        assert_eq!(m.len(), p.len(), "optimizer moment shape mismatch for tensor {i}");
        for (((w, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mv = b1 * *mv + one_b1 * gv;
            *vv = b2 * *vv + one_b2 * gv * gv;
            let denom = (*vv * inv_bc2).sqrt() + eps;
            *w = *w - step_size * *mv / denom;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = Tensor::from_vec(1, 3, vec![1.0f64, -2.0, 0.5]);
        let before = p.clone();
        let mut st = AdamState::new(AdamConfig::default(), &[3]);
        adam_step(&mut [&mut p], &[Tensor::zeros(1, 3)], &mut st).unwrap();
        assert_eq!(p, before);
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = Tensor::scalar(0.0f64);
        let mut st = AdamState::new(AdamConfig { lr: 0.1, ..Default::default() }, &[1]);
        adam_step(&mut [&mut p], &[Tensor::scalar(1.0)], &mut st).unwrap();
        assert!((p.item() + 0.1).abs() < 1e-6, "got {}", p.item());
    }

    #[test]
    fn quadratic_descends() {
        // reference: 100 steps of Adam on w^2 from w=1 with lr=0.05 land near 0
        let mut p = Tensor::scalar(1.0f64);
        let mut st = AdamState::new(AdamConfig { lr: 0.05, ..Default::default() }, &[1]);
        for _ in 0..100 {
            let g = Tensor::scalar(2.0 * p.item());
            adam_step(&mut [&mut p], &[g], &mut st).unwrap();
        }
        assert!(p.item().abs() < 0.5, "w = {}", p.item());
    }

    #[test]
    fn nan_gradient_is_reported_and_params_kept() {
        let mut p = Tensor::scalar(1.0f64);
        let mut st = AdamState::new(AdamConfig::default(), &[1]);
        let err = adam_step(&mut [&mut p], &[Tensor::scalar(f64::NAN)], &mut st).unwrap_err();
        assert_eq!(err.tensor, 0);
        assert_eq!(p.item(), 1.0);
        assert_eq!(st.step_count(), 0);
    }
}
