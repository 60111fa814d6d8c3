//! Small fully-connected critics built on the tape.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Tape, Tensor, Var};
use crate::error::{Result, SobolevError};

/// Activation between hidden layers. `Tanh` and `Softplus` are twice
/// continuously differentiable and safe under nested differentiation of
/// gradient-norm terms; `Relu` is first-order only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Softplus,
    Relu,
}

impl Activation {
    pub fn apply(&self, tape: &Tape, x: Var) -> Var {
        match self {
            Activation::Tanh => tape.tanh(x),
            Activation::Softplus => tape.softplus(x),
            Activation::Relu => tape.relu(x),
        }
    }
}

/// A multilayer perceptron mapping [d_in, batch] columns to [d_out, batch].
///
/// Parameters live outside any tape; `forward` inserts them as inputs of the
/// tape passed in, returning both the output and the parameter vars so the
/// caller can ask for gradients.
#[derive(Debug, Clone)]
pub struct Mlp {
    /// (weight [out, in], bias [out]) per layer.
    pub layers: Vec<(Tensor, Tensor)>,
    pub activation: Activation,
}

impl Mlp {
    /// Glorot-normal initialization for the given widths, e.g. [2, 64, 64, 1].
    pub fn init<R: Rng>(widths: &[usize], activation: Activation, rng: &mut R) -> Result<Self> {
        if widths.len() < 2 {
            return Err(SobolevError::Config(
                "an MLP needs at least input and output widths".into(),
            ));
        }
        let mut layers = Vec::new();
        for pair in widths.windows(2) {
            let (n_in, n_out) = (pair[0], pair[1]);
            let std = (2.0 / (n_in + n_out) as f64).sqrt();
            let data = (0..n_in * n_out)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(rng);
                    std * z
                })
                .collect();
            layers.push((
                Tensor::new(data, vec![n_out, n_in])?,
                Tensor::zeros(&[n_out]),
            ));
        }
        Ok(Mlp { layers, activation })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].0.shape[1]
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().0.shape[0]
    }

    /// Insert the parameters as differentiable tape inputs.
    pub fn params(&self, tape: &Tape) -> Vec<Var> {
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for (w, b) in &self.layers {
            out.push(tape.input(w.clone()));
            out.push(tape.input(b.clone()));
        }
        out
    }

    /// Forward pass given tape-resident parameters from [`Mlp::params`].
    pub fn forward(&self, tape: &Tape, params: &[Var], x: Var) -> Var {
        let n_layers = self.layers.len();
        debug_assert_eq!(params.len(), 2 * n_layers);
        let mut h = x;
        for l in 0..n_layers {
            let z = tape.add_col_vec(tape.matmul(params[2 * l], h), params[2 * l + 1]);
            h = if l + 1 < n_layers {
                self.activation.apply(tape, z)
            } else {
                z
            };
        }
        h
    }

    /// Total parameter count.
    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|(w, b)| w.len() + b.len()).sum()
    }

    /// Flatten all parameters into one vector (layer order, weight then bias).
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for (w, b) in &self.layers {
            out.extend_from_slice(&w.data);
            out.extend_from_slice(&b.data);
        }
        out
    }

    /// Inverse of [`Mlp::flatten`].
    pub fn unflatten(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(SobolevError::Dimension(format!(
                "expected {} parameters, got {}",
                self.n_params(),
                flat.len()
            )));
        }
        let mut at = 0;
        for (w, b) in self.layers.iter_mut() {
            let (wn, bn) = (w.len(), b.len());
            w.data.copy_from_slice(&flat[at..at + wn]);
            at += wn;
            b.data.copy_from_slice(&flat[at..at + bn]);
            at += bn;
        }
        Ok(())
    }

    /// Flatten tape gradients (in [`Mlp::params`] order) into one vector.
    pub fn flatten_grads(&self, tape: &Tape, grads: &[Var]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for g in grads {
            out.extend_from_slice(&tape.value(*g).data);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::numerical_grad;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn flatten_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut mlp = Mlp::init(&[2, 5, 1], Activation::Tanh, &mut rng).unwrap();
        let flat = mlp.flatten();
        assert_eq!(flat.len(), mlp.n_params());
        let mut bumped = flat.clone();
        for v in bumped.iter_mut() {
            *v += 1.0;
        }
        mlp.unflatten(&bumped).unwrap();
        let back = mlp.flatten();
        for (a, b) in back.iter().zip(&flat) {
            assert!((a - b - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn mlp_parameter_gradients_match_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mlp = Mlp::init(&[2, 6, 1], Activation::Softplus, &mut rng).unwrap();
        let x0 = Tensor::new(
            (0..10)
                .map(|_| rand_distr::Distribution::sample(&StandardNormal, &mut rng))
                .collect(),
            vec![2, 5],
        )
        .unwrap();
        let eval = |flat: &[f64]| {
            let mut m = mlp.clone();
            m.unflatten(flat).unwrap();
            let tape = Tape::new();
            let params = m.params(&tape);
            let x = tape.constant(x0.clone());
            let y = m.forward(&tape, &params, x);
            tape.value(tape.sumsq(y)).item()
        };
        let flat = mlp.flatten();
        let fd = numerical_grad(eval, &flat, 1e-5);
        let tape = Tape::new();
        let params = mlp.params(&tape);
        let x = tape.constant(x0);
        let y = mlp.forward(&tape, &params, x);
        let loss = tape.sumsq(y);
        let grads = tape.backward(loss, &params);
        let got = mlp.flatten_grads(&tape, &grads);
        for (a, b) in got.iter().zip(&fd) {
            assert!((a - b).abs() < 1e-6 * (1.0 + b.abs()), "{a} vs {b}");
        }
    }
}
