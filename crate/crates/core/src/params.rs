//! Named parameter collections and the Adam optimizer.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Grads, Graph, NodeId, Tensor};
use crate::error::{Error, Result};

/// Parameters of one model role. Names are fully qualified (`fwd/lstm.w`).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    tensors: BTreeMap<String, Tensor>,
}

/// Leaf ids for a parameter set bound into one graph.
#[derive(Clone, Debug, Default)]
pub struct BoundParams {
    ids: BTreeMap<String, NodeId>,
}

impl BoundParams {
    pub fn get(&self, name: &str) -> NodeId {
        *self.ids.get(name).unwrap_or_else(|| panic!("parameter `{name}` not bound"))
    }
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        let mut t = tensor;
        t.requires_grad = false;
        self.tensors.insert(name.into(), t);
    }

    /// Uniform initialization in `[-scale, scale]`.
    pub fn insert_uniform(&mut self, name: impl Into<String>, shape: &[usize], scale: f64, rng: &mut impl Rng) {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-scale..=scale)).collect();
        self.insert(name, Tensor::new(shape.to_vec(), data).expect("positive shape"));
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors.get(name).ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.tensors.get_mut(name).ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Adds every tensor as a leaf; differentiable when `trainable`.
    pub fn bind(&self, graph: &mut Graph, trainable: bool) -> Result<BoundParams> {
        let mut ids = BTreeMap::new();
        for (name, t) in &self.tensors {
            let mut v = t.clone();
            v.requires_grad = trainable;
            ids.insert(name.clone(), graph.leaf(Some(name), v)?);
        }
        Ok(BoundParams { ids })
    }

    /// Keeps only the gradients that belong to this set.
    pub fn restrict(&self, grads: &Grads) -> Grads {
        grads
            .iter()
            .filter(|(n, _)| self.tensors.contains_key(*n))
            .map(|(n, g)| (n.clone(), g.clone()))
            .collect()
    }

    /// Copy with every name's prefix (text up to the first `/`) replaced.
    pub fn renamed(&self, prefix: &str) -> ParamSet {
        let tensors = self
            .tensors
            .iter()
            .map(|(n, t)| {
                let suffix = n.split_once('/').map_or(n.as_str(), |(_, s)| s);
                (format!("{prefix}/{suffix}"), t.clone())
            })
            .collect();
        ParamSet { tensors }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias-corrected moments; minimizes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub first: BTreeMap<String, Tensor>,
    pub second: BTreeMap<String, Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    pub fn update(&mut self, params: &mut ParamSet, grads: &Grads) -> Result<()> {
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (name, g) in grads {
            let p = params.get_mut(name)?;
            if p.shape() != g.shape() {
                return Err(Error::shape("adam", format!("`{name}` {:?} vs {:?}", p.shape(), g.shape())));
            }
            let m = self.first.entry(name.clone()).or_insert_with(|| Tensor::zeros(g.shape()));
            let v = self.second.entry(name.clone()).or_insert_with(|| Tensor::zeros(g.shape()));
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut())
                .zip(v.data_mut().iter_mut())
            {
                *mv = beta1 * *mv + (1.0 - beta1) * gv;
                *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
                let mhat = *mv / c1;
                let vhat = *vv / c2;
                *pv -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_minimizes_a_quadratic() {
        let mut p = ParamSet::new();
        p.insert("q/x", Tensor::vector(vec![3.0, -2.0]));
        let mut opt = Adam::new(AdamConfig {
            lr: 0.05,
            ..AdamConfig::default()
        });
        for _ in 0..500 {
            let x = p.get("q/x").unwrap().clone();
            let mut g = Grads::new();
            g.insert("q/x".into(), x.scaled(2.0));
            opt.update(&mut p, &g).unwrap();
        }
        assert!(p.get("q/x").unwrap().max_abs() < 1e-2);
    }

    #[test]
    fn renamed_swaps_role_prefix() {
        let mut p = ParamSet::new();
        p.insert("fwd/lstm.w", Tensor::scalar(1.0));
        let q = p.renamed("bwd");
        assert_eq!(q.get("bwd/lstm.w").unwrap().item(), 1.0);
    }
}
