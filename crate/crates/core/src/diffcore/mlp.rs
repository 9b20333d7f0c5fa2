use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{Gradients, Graph, Var};
use super::tensor::{matmul_into, Real, Tensor};
use crate::error::{Error, Result};

/// Hidden-layer nonlinearity. Only `tanh` is supported.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
}

/// Affine layer: `x W + b` with `W: in x out`, `b: 1 x out`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Real> Dense<T> {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self { weight: Tensor::zeros(input, output), bias: Tensor::zeros(1, output) }
    }

    pub fn input_width(&self) -> usize {
        self.weight.rows()
    }

    pub fn output_width(&self) -> usize {
        self.weight.cols()
    }
}

/// Multilayer perceptron: tanh after every hidden layer, affine output, and
/// an optional linear skip from input to output.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams<T> {
    pub layers: Vec<Dense<T>>,
    pub skip: Option<Tensor<T>>,
    pub activation: Activation,
}

/// Graph handles for one registered [`MlpParams`].
#[derive(Clone, Debug)]
pub struct MlpVars {
    layers: Vec<(Var, Var)>,
    skip: Option<Var>,
}

impl<T: Real> MlpParams<T> {
    /// Zero-initialized network with the given layer widths (`[in, h1, ..., out]`).
    pub fn zeros(widths: &[usize], skip: bool) -> Self {
        assert!(widths.len() >= 2, "an MLP needs at least input and output widths");
        let layers = widths.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect();
        let skip = skip.then(|| Tensor::zeros(widths[0], *widths.last().unwrap()));
        Self { layers, skip, activation: Activation::Tanh }
    }

    /// Glorot-uniform hidden layers; the output layer is scaled by `output_gain`
    /// so fresh networks start close to the zero map.
    pub fn init<R: Rng>(widths: &[usize], skip: bool, output_gain: f64, rng: &mut R) -> Self {
        let mut net = Self::zeros(widths, skip);
        let last = net.layers.len() - 1;
        for (i, layer) in net.layers.iter_mut().enumerate() {
            let (fan_in, fan_out) = (layer.input_width(), layer.output_width());
            let mut limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            if i == last {
                limit *= output_gain;
            }
            for w in layer.weight.data_mut() {
                *w = T::of(rng.gen_range(-limit..=limit));
            }
        }
        net
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].input_width()
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().unwrap().output_width()
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_width()];
        w.extend(self.layers.iter().map(|l| l.output_width()));
        w
    }

    /// Checks that consecutive layer widths chain and all entries are finite.
    pub fn check(&self) -> Result<()> {
        for pair in self.layers.windows(2) {
            if pair[0].output_width() != pair[1].input_width() {
                return Err(Error::Config(format!(
                    "layer widths do not chain: {} -> {}",
                    pair[0].output_width(),
                    pair[1].input_width()
                )));
            }
        }
        for l in &self.layers {
            if l.bias.shape() != (1, l.output_width()) {
                return Err(Error::Config("bias shape does not match layer width".into()));
            }
        }
        if let Some(s) = &self.skip {
            if s.shape() != (self.input_width(), self.output_width()) {
                return Err(Error::Config("skip weight shape mismatch".into()));
            }
        }
        if !self.tensors().iter().all(|t| t.all_finite()) {
            return Err(Error::Numerical("non-finite network parameter".into()));
        }
        Ok(())
    }

    /// Parameter tensors in canonical order (w0, b0, w1, b1, ..., skip).
    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        let mut out = Vec::with_capacity(self.layers.len() * 2 + 1);
        for l in &self.layers {
            out.push(&l.weight);
            out.push(&l.bias);
        }
        if let Some(s) = &self.skip {
            out.push(s);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::with_capacity(self.layers.len() * 2 + 1);
        for l in &mut self.layers {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        if let Some(s) = &mut self.skip {
            out.push(s);
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Plain forward pass on a `batch x in` input.
    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        if input.cols() != self.input_width() {
            return Err(Error::Config(format!(
                "network expects {} inputs, got {}",
                self.input_width(),
                input.cols()
            )));
        }
        let rows = input.rows();
        let last = self.layers.len() - 1;
        let mut h = input.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut out = Tensor::zeros(rows, layer.output_width());
            matmul_into(h.data(), layer.weight.data(), out.data_mut(), rows, layer.input_width(), layer.output_width());
            let mut out = out.add_row(&layer.bias);
            if i < last {
                out = out.map(|x| x.tanh());
            }
            h = out;
        }
        if let Some(skip) = &self.skip {
            let mut lin = Tensor::zeros(rows, self.output_width());
            matmul_into(input.data(), skip.data(), lin.data_mut(), rows, self.input_width(), self.output_width());
            h = h.zip_map(&lin, |a, b| a + b);
        }
        Ok(h)
    }

    /// Registers the parameters as trainable leaves.
    pub fn register(&self, g: &mut Graph<T>) -> MlpVars {
        self.register_with(g, true)
    }

    /// Registers the parameters as constants (frozen network).
    pub fn register_frozen(&self, g: &mut Graph<T>) -> MlpVars {
        self.register_with(g, false)
    }

    fn register_with(&self, g: &mut Graph<T>, trainable: bool) -> MlpVars {
        let mut leaf = |t: &Tensor<T>| if trainable { g.param(t.clone()) } else { g.constant(t.clone()) };
        let layers = self.layers.iter().map(|l| (leaf(&l.weight), leaf(&l.bias))).collect();
        let skip = self.skip.as_ref().map(leaf);
        MlpVars { layers, skip }
    }

    /// Differentiable forward pass; arithmetic matches [`MlpParams::forward`] exactly.
    pub fn apply(&self, g: &mut Graph<T>, vars: &MlpVars, input: Var) -> Result<Var> {
        let (_, cols) = g.shape(input);
        if cols != self.input_width() {
            return Err(Error::Config(format!("network expects {} inputs, got {cols}", self.input_width())));
        }
        let last = vars.layers.len() - 1;
        let mut h = input;
        for (i, &(w, b)) in vars.layers.iter().enumerate() {
            let z = g.matmul(h, w);
            h = g.add_row(z, b);
            if i < last {
                h = g.tanh(h);
            }
        }
        if let Some(skip) = vars.skip {
            let lin = g.matmul(input, skip);
            h = g.add(h, lin);
        }
        Ok(h)
    }

    /// Gradients in the order of [`MlpParams::tensors`].
    pub fn collect_grads(&self, g: &Graph<T>, vars: &MlpVars, grads: &Gradients<T>) -> Vec<Tensor<T>> {
        let mut out = Vec::with_capacity(vars.layers.len() * 2 + 1);
        for &(w, b) in &vars.layers {
            out.push(grads.wrt(g, w));
            out.push(grads.wrt(g, b));
        }
        if let Some(s) = vars.skip {
            out.push(grads.wrt(g, s));
        }
        out
    }

    pub fn cast<U: Real>(&self) -> MlpParams<U> {
        MlpParams {
            layers: self.layers.iter().map(|l| Dense { weight: l.weight.cast(), bias: l.bias.cast() }).collect(),
            skip: self.skip.as_ref().map(|s| s.cast()),
            activation: self.activation,
        }
    }
}

/// Convenience: differentiable forward of `params` on `input` in a fresh registration.
pub fn mlp_apply<T: Real>(g: &mut Graph<T>, params: &MlpParams<T>, input: Var) -> Result<(Var, MlpVars)> {
    let vars = params.register(g);
    let out = params.apply(g, &vars, input)?;
    Ok((out, vars))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_network_is_zero_map() {
        let net = MlpParams::<f64>::zeros(&[3, 5, 2], false);
        let x = Tensor::from_vec(2, 3, vec![1.0, -2.0, 0.3, 7.0, 0.0, 1.0]);
        assert!(net.forward(&x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_identity_layer_is_identity() {
        let mut net = MlpParams::<f64>::zeros(&[2, 2], false);
        net.layers[0].weight = Tensor::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
        let x = Tensor::from_vec(1, 2, vec![0.7, -3.0]);
        assert_eq!(net.forward(&x).unwrap().data(), x.data());
    }

    #[test]
    fn tanh_of_zero_passes_zero() {
        let mut net = MlpParams::<f64>::zeros(&[1, 1, 1], false);
        net.layers[0].weight.set(0, 0, 1.0);
        net.layers[1].weight.set(0, 0, 1.0);
        assert_eq!(net.forward(&Tensor::scalar(0.0)).unwrap().item(), 0.0);
        assert!((net.forward(&Tensor::scalar(0.5)).unwrap().item() - 0.5f64.tanh()).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch_is_config_error() {
        let net = MlpParams::<f64>::zeros(&[3, 4, 1], false);
        assert!(matches!(net.forward(&Tensor::zeros(1, 2)), Err(Error::Config(_))));
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(1, 2));
        assert!(mlp_apply(&mut g, &net, x).is_err());
    }

    #[test]
    fn graph_and_plain_forward_agree_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = MlpParams::<f32>::init(&[4, 8, 8, 2], true, 1.0, &mut rng);
        let x = Tensor::from_vec(3, 4, (0..12).map(|i| (i as f32) * 0.37 - 2.0).collect());
        let plain = net.forward(&x).unwrap();
        let mut g = Graph::new();
        let xv = g.constant(x);
        let (y, _) = mlp_apply(&mut g, &net, xv).unwrap();
        assert_eq!(g.value(y), &plain);
    }

    #[test]
    fn check_rejects_broken_chain() {
        let mut net = MlpParams::<f64>::zeros(&[2, 3, 1], false);
        net.layers[1] = Dense::zeros(4, 1);
        assert!(net.check().is_err());
    }
}
