use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng;

use super::{Graph, Tensor};
use crate::error::{Error, Result};
use crate::math;

/// Named trainable tensors, iterated in name order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
}

/// Weight initialization schemes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ParamInit {
    /// Uniform on `[-b, b]`, `b = sqrt(6 / fan_in)`.
    KaimingUniform { fan_in: usize },
    Zeros,
    Constant(f32),
}

impl ParamInit {
    pub fn build<R: Rng + ?Sized>(self, shape: &[usize], rng: &mut R) -> Tensor {
        let mut t = Tensor::zeros(shape);
        match self {
            ParamInit::KaimingUniform { fan_in } => {
                let bound = math::sqrtf(6.0 / fan_in.max(1) as f32);
                for v in t.data_mut() {
                    *v = rng.gen_range(-bound..bound);
                }
            }
            ParamInit::Zeros => {}
            ParamInit::Constant(c) => t.data_mut().fill(c),
        }
        t.with_requires_grad(true)
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Insert a trainable parameter, replacing any previous one of that name.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.params.insert(name.into(), tensor.with_requires_grad(true));
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar weights.
    pub fn num_values(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    /// Freeze or unfreeze every parameter whose name starts with `prefix`.
    pub fn set_trainable(&mut self, prefix: &str, trainable: bool) {
        for (name, t) in self.params.iter_mut() {
            if name.starts_with(prefix) {
                t.set_requires_grad(trainable);
            }
        }
    }

    /// Fold the parameter gradients of a finished backward pass into the store.
    pub fn accumulate_grads(&mut self, graph: &Graph) -> Result<()> {
        for (name, g) in graph.param_grads() {
            if let Some(t) = self.params.get_mut(name) {
                if t.requires_grad() {
                    t.accumulate_grad(g)?;
                }
            }
        }
        Ok(())
    }

    pub fn clear_grads(&mut self) {
        self.params.values_mut().for_each(Tensor::clear_grad);
    }

    /// Scale every present gradient (e.g. to average over a mini-batch).
    pub fn scale_grads(&mut self, s: f32) {
        for t in self.params.values_mut() {
            if let Some(g) = t.grad_mut() {
                g.iter_mut().for_each(|v| *v *= s);
            }
        }
    }

    /// Copy with every name prefixed by `prefix`.
    pub fn prefixed(&self, prefix: &str) -> ParamStore {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|(k, v)| (format!("{prefix}{k}"), v.clone()))
                .collect(),
        }
    }

    /// Parameters under `prefix`, with the prefix removed.
    pub fn strip_prefix(&self, prefix: &str) -> ParamStore {
        ParamStore {
            params: self
                .params
                .iter()
                .filter_map(|(k, v)| k.strip_prefix(prefix).map(|s| (s.to_string(), v.clone())))
                .collect(),
        }
    }

    /// Add all parameters of `other`, overwriting duplicates.
    pub fn extend(&mut self, other: ParamStore) {
        self.params.extend(other.params);
    }

    /// True when both stores hold the same names, shapes and bit patterns.
    pub fn bitwise_eq(&self, other: &ParamStore) -> bool {
        self.params.len() == other.params.len()
            && self.params.iter().zip(other.params.iter()).all(|((ka, a), (kb, b))| {
                ka == kb
                    && a.shape() == b.shape()
                    && a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }

    /// Names in sorted order.
    pub fn name_list(&self) -> Vec<String> {
        self.params.keys().cloned().collect()
    }
}
