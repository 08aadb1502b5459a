use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use super::ParamStore;
use crate::error::{Error, Result};
use crate::math;

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct AdamConfig {
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam optimizer state: first/second moments per parameter and a step count.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    moments: BTreeMap<String, (Vec<f32>, Vec<f32>)>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One bias-corrected update of every trainable parameter, then clear the
    /// gradients. Frozen parameters (`requires_grad == false`) are skipped.
    pub fn step(&mut self, params: &mut ParamStore, learning_rate: f32) -> Result<()> {
        for (name, t) in params.iter() {
            if t.requires_grad() && t.grad().is_none() {
                return Err(Error::MissingGradient(name.to_string()));
            }
        }
        self.update(params, learning_rate)
    }

    /// Like [`Adam::step`], but parameters that received no gradient (a
    /// disabled branch, an absent proposal) are left alone, moments included.
    pub fn step_available(&mut self, params: &mut ParamStore, learning_rate: f32) -> Result<()> {
        self.update(params, learning_rate)
    }

    fn update(&mut self, params: &mut ParamStore, learning_rate: f32) -> Result<()> {
        if !(learning_rate > 0.0) || !learning_rate.is_finite() {
            return Err(Error::invalid(alloc::format!("learning rate {learning_rate}")));
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, epsilon } = self.config;
        let bc1 = 1.0 - libm::pow(beta1 as f64, self.step as f64);
        let bc2 = 1.0 - libm::pow(beta2 as f64, self.step as f64);
        for (name, t) in params.iter_mut() {
            if !t.requires_grad() || t.grad().is_none() {
                continue;
            }
            let n = t.numel();
            let (m, v) = self
                .moments
                .entry(name.to_string())
                .or_insert_with(|| (vec![0.0; n], vec![0.0; n]));
            let g = t.grad().expect("checked above").to_vec();
            for i in 0..n {
                let gi = g[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                let m_hat = m[i] as f64 / bc1;
                let v_hat = v[i] as f64 / bc2;
                let update = learning_rate as f64 * m_hat / (math::sqrt(v_hat) + epsilon as f64);
                t.data_mut()[i] -= update as f32;
            }
            t.clear_grad();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn store(grad: Option<f32>) -> ParamStore {
        let mut p = ParamStore::new();
        let mut t = Tensor::new(&[1], vec![1.0]).unwrap().with_requires_grad(true);
        if let Some(g) = grad {
            t.accumulate_grad(&[g]).unwrap();
        }
        p.insert("a", t);
        p
    }

    #[test]
    fn first_step_moves_by_the_learning_rate() {
        // Bias correction makes the first update lr * g / |g|.
        let mut p = store(Some(0.25));
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(&mut p, 0.1).unwrap();
        let v = p.get("a").unwrap().data()[0];
        assert!((v - 0.9).abs() < 1e-6, "{v}");
        assert!(p.get("a").unwrap().grad().is_none());
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn strict_step_needs_every_gradient() {
        let mut p = store(None);
        let mut adam = Adam::new(AdamConfig::default());
        assert!(matches!(adam.step(&mut p, 0.1), Err(Error::MissingGradient(_))));
        adam.step_available(&mut p, 0.1).unwrap();
        assert_eq!(p.get("a").unwrap().data(), &[1.0]);
    }

    #[test]
    fn frozen_parameters_stay_put() {
        let mut p = store(Some(1.0));
        p.set_trainable("a", false);
        let mut adam = Adam::new(AdamConfig::default());
        adam.step(&mut p, 0.1).unwrap();
        assert_eq!(p.get("a").unwrap().data(), &[1.0]);
    }

    #[test]
    fn bad_learning_rates_are_rejected() {
        let mut p = store(Some(1.0));
        let mut adam = Adam::new(AdamConfig::default());
        assert!(adam.step(&mut p, 0.0).is_err());
        assert!(adam.step(&mut p, f32::NAN).is_err());
    }

    #[test]
    fn zero_gradients_leave_parameters_unchanged() {
        let mut p = store(Some(0.0));
        Adam::new(AdamConfig::default()).step(&mut p, 0.1).unwrap();
        assert_eq!(p.get("a").unwrap().data()[0], 1.0);
    }

    #[test]
    fn constant_gradient_moves_by_the_learning_rate_each_step() {
        // m_hat = g and v_hat = g^2 exactly, so every update is lr * sign(g)
        // up to epsilon.
        let mut p = store(None);
        let mut adam = Adam::new(AdamConfig::default());
        let mut prev = 1.0f32;
        for k in 0..200 {
            p.get_mut("a").unwrap().accumulate_grad(&[-3.0]).unwrap();
            adam.step(&mut p, 1e-3).unwrap();
            let v = p.get("a").unwrap().data()[0];
            if k > 100 {
                assert!(((v - prev) - 1e-3).abs() < 1e-6, "step {k}: {}", v - prev);
            }
            prev = v;
        }
    }

    #[test]
    fn identical_runs_are_bitwise_equal() {
        let run = || {
            let mut p = store(None);
            let mut adam = Adam::new(AdamConfig::default());
            for k in 0..50 {
                p.get_mut("a").unwrap().accumulate_grad(&[(k as f32 * 0.37).sin()]).unwrap();
                adam.step(&mut p, 1e-2).unwrap();
            }
            p.get("a").unwrap().data()[0].to_bits()
        };
        assert_eq!(run(), run());
    }
}
