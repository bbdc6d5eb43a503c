use rand::Rng;

use super::graph::{Graph, Var};
use super::params::{Init, ParamId, ParamStore};
use crate::error::Result;

/// Affine map `x · W + b` with `W` stored as `in × out`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn init<R: Rng>(
        init: &mut Init<'_, R>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
    ) -> Self {
        init.scope(name, |init| {
            let std = (1.0 / in_dim as f64).sqrt();
            let weight = init.normal("weight", &[in_dim, out_dim], std);
            let bias = bias.then(|| init.constant("bias", &[out_dim], 0.0));
            Self {
                weight,
                bias,
                in_dim,
                out_dim,
            }
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let y = g.matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let b = g.param(store, b);
                g.add_row(y, b)
            }
            None => Ok(y),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn init<R: Rng>(init: &mut Init<'_, R>, name: &str, dim: usize) -> Self {
        init.scope(name, |init| Self {
            gain: init.constant("gain", &[dim], 1.0),
            bias: init.constant("bias", &[dim], 0.0),
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let gain = g.param(store, self.gain);
        let bias = g.param(store, self.bias);
        layer_norm(g, x, gain, bias)
    }
}

/// Layer normalization over the last axis with epsilon 1e-5.
pub fn layer_norm(g: &mut Graph, x: Var, gain: Var, bias: Var) -> Result<Var> {
    g.layer_norm(x, gain, bias)
}

/// Two affine maps with GELU in between.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeedForward {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl FeedForward {
    pub fn init<R: Rng>(init: &mut Init<'_, R>, name: &str, dim: usize, hidden: usize) -> Self {
        init.scope(name, |init| Self {
            fc1: Linear::init(init, "fc1", dim, hidden, true),
            fc2: Linear::init(init, "fc2", hidden, dim, true),
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let h = self.fc1.forward(g, store, x)?;
        let h = g.gelu(h);
        self.fc2.forward(g, store, h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;

    fn norm_row(row: &[f64]) -> Vec<f64> {
        let mut g = Graph::new();
        let n = row.len();
        let x = g.constant(Tensor::new(vec![1, n], row.to_vec()).unwrap());
        let gain = g.constant(Tensor::filled(&[n], 1.0));
        let bias = g.constant(Tensor::zeros(&[n]));
        let y = layer_norm(&mut g, x, gain, bias).unwrap();
        g.value(y).data().to_vec()
    }

    #[test]
    fn constant_row_maps_to_zero() {
        assert_eq!(norm_row(&[1.0, 1.0, 1.0, 1.0]), vec![0.0; 4]);
    }

    #[test]
    fn symmetric_pair_maps_to_unit_pair() {
        let a = 3.0;
        let y = norm_row(&[-a, a]);
        // exact value is ±a / sqrt(a² + eps)
        let expect = a / (a * a + 1e-5f64).sqrt();
        assert!((y[0] + expect).abs() < 1e-15 && (y[1] - expect).abs() < 1e-15);
        assert!((y[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn one_to_four_matches_scalar_formula() {
        // mean 2.5, biased variance 1.25
        let y = norm_row(&[1.0, 2.0, 3.0, 4.0]);
        let s = (1.25f64 + 1e-5).sqrt();
        let expect = [-1.5 / s, -0.5 / s, 0.5 / s, 1.5 / s];
        for (a, b) in y.iter().zip(expect) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn unit_gain_rows_have_zero_mean_unit_variance() {
        let y = norm_row(&[0.3, -2.0, 5.5, 1.25, 7.0, -0.5]);
        let mean = y.iter().sum::<f64>() / 6.0;
        let var = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 6.0;
        assert!(mean.abs() < 1e-9);
        assert!((var - 1.0).abs() < 1e-6);
    }
}
