use serde::{Deserialize, Serialize};

use super::config::OptimizerConfig;
use crate::nn::{ParamId, ParamStore};

/// Learning-rate group of a parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    /// Video and audio encoders.
    Encoder,
    /// Combiner and caption decoder.
    Decoder,
}

impl ParamGroup {
    pub fn of(name: &str) -> Self {
        if name.starts_with("video.") || name.starts_with("audio.") {
            ParamGroup::Encoder
        } else {
            ParamGroup::Decoder
        }
    }
}

/// AdamW with decoupled weight decay and per-parameter learning rates.
#[derive(Debug, Clone)]
pub struct AdamW {
    cfg: OptimizerConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(cfg: OptimizerConfig, store: &ParamStore) -> Self {
        let zeros = || {
            store
                .ids()
                .map(|id| vec![0.0; store.get(id).len()])
                .collect()
        };
        Self {
            cfg,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update. Parameters absent from `grads` still decay.
    /// Returns the pre-clip global gradient norm.
    pub fn step(
        &mut self,
        store: &mut ParamStore,
        grads: &[(ParamId, Vec<f64>)],
        lr: impl Fn(ParamId) -> f64,
    ) -> f64 {
        self.step += 1;
        let norm = grads
            .iter()
            .flat_map(|(_, g)| g.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt();
        let clip = match self.cfg.max_grad_norm {
            Some(max) if norm > max => max / norm,
            _ => 1.0,
        };
        let OptimizerConfig {
            beta1,
            beta2,
            eps,
            weight_decay,
            ..
        } = self.cfg;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        let mut dense: Vec<Option<&[f64]>> = vec![None; store.len()];
        for (id, g) in grads {
            dense[id.index()] = Some(g);
        }
        let ids: Vec<ParamId> = store.ids().collect();
        for id in ids {
            let i = id.index();
            let rate = lr(id);
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let p = store.get_mut(id).data_mut();
            match dense[i] {
                Some(g) => {
                    for k in 0..p.len() {
                        let gk = g[k] * clip;
                        m[k] = beta1 * m[k] + (1.0 - beta1) * gk;
                        v[k] = beta2 * v[k] + (1.0 - beta2) * gk * gk;
                        let mh = m[k] / bc1;
                        let vh = v[k] / bc2;
                        p[k] -= rate * (mh / (vh.sqrt() + eps) + weight_decay * p[k]);
                    }
                }
                None => {
                    for k in 0..p.len() {
                        m[k] *= beta1;
                        v[k] *= beta2;
                        let mh = m[k] / bc1;
                        let vh = v[k] / bc2;
                        p[k] -= rate * (mh / (vh.sqrt() + eps) + weight_decay * p[k]);
                    }
                }
            }
        }
        norm
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;

    #[test]
    fn groups_by_prefix() {
        assert_eq!(
            ParamGroup::of("video.patch.proj.weight"),
            ParamGroup::Encoder
        );
        assert_eq!(ParamGroup::of("audio.token_embedding"), ParamGroup::Encoder);
        assert_eq!(ParamGroup::of("combiner.vcls"), ParamGroup::Decoder);
        assert_eq!(ParamGroup::of("decoder.proj.weight"), ParamGroup::Decoder);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut store = ParamStore::new();
        let id = store.insert("w", Tensor::vector(vec![1.0, -2.0]));
        let cfg = OptimizerConfig {
            weight_decay: 0.0,
            ..Default::default()
        };
        let mut opt = AdamW::new(cfg, &store);
        opt.step(&mut store, &[(id, vec![0.5, -3.0])], |_| 0.1);
        let p = store.get(id).data();
        // bias-corrected first step is lr * sign(g)
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] + 1.9).abs() < 1e-6);
    }

    #[test]
    fn quadratic_converges() {
        let mut store = ParamStore::new();
        let id = store.insert("w", Tensor::vector(vec![3.0]));
        let mut opt = AdamW::new(OptimizerConfig::default(), &store);
        for _ in 0..2000 {
            let w = store.get(id).data()[0];
            opt.step(&mut store, &[(id, vec![2.0 * w])], |_| 0.01);
        }
        assert!(store.get(id).data()[0].abs() < 1e-2);
    }
}
