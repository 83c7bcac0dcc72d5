//! Named parameter tensors with SGD (weight decay, momentum, milestone
//! learning-rate schedule).

use std::collections::{BTreeMap, BTreeSet};

use crate::diff::Value;
use crate::error::{Error, Result};
use crate::real::Real;

/// SGD hyperparameters. The learning rate at a given epoch is the base rate
/// multiplied by every milestone factor whose epoch has been reached.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdConfig<T> {
    pub base_lr: T,
    pub weight_decay: T,
    pub momentum: T,
    /// `(epoch, multiplier)` pairs with strictly increasing epochs.
    pub milestones: Vec<(usize, T)>,
}

impl<T: Real> SgdConfig<T> {
    pub fn new(
        base_lr: T,
        weight_decay: T,
        momentum: T,
        milestones: Vec<(usize, T)>,
    ) -> Result<Self> {
        if weight_decay < T::zero() {
            return Err(Error::InvalidInput(format!(
                "weight decay must be >= 0, got {weight_decay}"
            )));
        }
        if momentum < T::zero() || momentum >= T::one() {
            return Err(Error::InvalidInput(format!(
                "momentum must lie in [0, 1), got {momentum}"
            )));
        }
        if !milestones.windows(2).all(|w| w[0].0 < w[1].0) {
            return Err(Error::InvalidInput(
                "milestone epochs must be strictly increasing".into(),
            ));
        }
        Ok(Self { base_lr, weight_decay, momentum, milestones })
    }
}

/// Map from tensor name to a flat array of graph leaves, plus the optimizer
/// state needed to update them.
pub struct ParameterStore<T> {
    tensors: BTreeMap<String, Vec<Value<T>>>,
    momentum_buf: BTreeMap<String, Vec<T>>,
    frozen: BTreeSet<String>,
    sgd: SgdConfig<T>,
}

impl<T: Real> ParameterStore<T> {
    pub fn new(sgd: SgdConfig<T>) -> Self {
        Self {
            tensors: BTreeMap::new(),
            momentum_buf: BTreeMap::new(),
            frozen: BTreeSet::new(),
            sgd,
        }
    }

    pub fn sgd_config(&self) -> &SgdConfig<T> {
        &self.sgd
    }

    pub fn insert(&mut self, name: &str, values: Vec<T>) {
        let leaves = values.into_iter().map(Value::leaf).collect::<Vec<_>>();
        self.momentum_buf.insert(name.to_string(), vec![T::zero(); leaves.len()]);
        self.tensors.insert(name.to_string(), leaves);
    }

    pub fn get(&self, name: &str) -> &[Value<T>] {
        self.tensors
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter tensor '{name}'"))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(|s| s.as_str())
    }

    /// Mark a tensor as frozen: `sgd_step` leaves it bit-identical (its
    /// gradients are still zeroed each step).
    pub fn freeze(&mut self, name: &str) {
        self.frozen.insert(name.to_string());
    }

    pub fn is_frozen(&self, name: &str) -> bool {
        self.frozen.contains(name)
    }

    /// `base · ∏ {multiplier : milestone epoch ≤ epoch}`.
    pub fn lr_at(&self, epoch: usize) -> T {
        self.sgd
            .milestones
            .iter()
            .filter(|(m, _)| epoch >= *m)
            .fold(self.sgd.base_lr, |lr, (_, f)| lr * *f)
    }

    /// One SGD update: `buf ← momentum·buf + (grad + wd·p)`, then
    /// `p ← p − lr(epoch)·buf`, then all gradients reset to zero.
    pub fn sgd_step(&mut self, epoch: usize) -> Result<()> {
        let lr = self.lr_at(epoch);
        let wd = self.sgd.weight_decay;
        let mom = self.sgd.momentum;
        for (name, leaves) in &self.tensors {
            if self.frozen.contains(name) {
                for leaf in leaves {
                    leaf.zero_grad();
                }
                continue;
            }
            let buf = self.momentum_buf.get_mut(name).expect("buffer exists");
            for (i, leaf) in leaves.iter().enumerate() {
                let g = leaf.grad();
                if !g.is_finite() {
                    return Err(Error::Numerical(format!(
                        "non-finite gradient ({g}) on parameter '{name}'[{i}]"
                    )));
                }
                let g = g + wd * leaf.value();
                buf[i] = mom * buf[i] + g;
                leaf.set_value(leaf.value() - lr * buf[i]);
                leaf.zero_grad();
            }
        }
        Ok(())
    }

    pub fn zero_grads(&self) {
        for leaves in self.tensors.values() {
            for leaf in leaves {
                leaf.zero_grad();
            }
        }
    }

    /// Plain copy of every tensor's current values.
    pub fn snapshot(&self) -> BTreeMap<String, Vec<T>> {
        self.tensors
            .iter()
            .map(|(k, v)| (k.clone(), v.iter().map(|l| l.value()).collect()))
            .collect()
    }

    /// Fresh store (new leaves, zero momentum) with this store's values,
    /// SGD settings and frozen set.
    pub fn clone_detached(&self) -> Self {
        let mut out = Self::new(self.sgd.clone());
        for (name, leaves) in &self.tensors {
            out.insert(name, leaves.iter().map(|l| l.value()).collect());
        }
        out.frozen = self.frozen.clone();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plain_sgd(lr: f64) -> SgdConfig<f64> {
        SgdConfig::new(lr, 0.0, 0.0, vec![]).unwrap()
    }

    #[test]
    fn rejects_bad_hyperparameters() {
        assert!(SgdConfig::new(0.1, -1.0, 0.0, vec![]).is_err());
        assert!(SgdConfig::new(0.1, 0.0, 1.0, vec![]).is_err());
        assert!(SgdConfig::new(0.1, 0.0, 0.0, vec![(80, 0.1), (80, 0.1)]).is_err());
    }

    #[test]
    fn basic_step() {
        let mut ps = ParameterStore::new(plain_sgd(0.1));
        ps.insert("p", vec![1.0]);
        let leaf = ps.get("p")[0].clone();
        let loss = leaf.clone(); // dL/dp = 1
        loss.backward();
        ps.sgd_step(0).unwrap();
        assert!((leaf.value() - 0.9).abs() < 1e-15);
        assert_eq!(leaf.grad(), 0.0);
    }

    #[test]
    fn milestone_schedule() {
        let sgd = SgdConfig::new(0.1, 0.0, 0.0, vec![(80, 0.1), (120, 0.1)]).unwrap();
        let ps = ParameterStore::<f64>::new(sgd);
        assert!((ps.lr_at(0) - 0.1).abs() < 1e-15);
        assert!((ps.lr_at(100) - 0.01).abs() < 1e-15);
        assert!((ps.lr_at(130) - 0.001).abs() < 1e-15);
    }

    #[test]
    fn zero_grad_is_noop() {
        let mut ps = ParameterStore::new(plain_sgd(0.1));
        ps.insert("p", vec![2.5]);
        ps.sgd_step(0).unwrap();
        assert_eq!(ps.get("p")[0].value(), 2.5);
    }

    #[test]
    fn zero_lr_is_noop_on_values() {
        let mut ps = ParameterStore::new(plain_sgd(0.0));
        ps.insert("p", vec![1.0]);
        let leaf = ps.get("p")[0].clone();
        leaf.square().backward();
        ps.sgd_step(0).unwrap();
        assert_eq!(leaf.value(), 1.0);
    }

    #[test]
    fn frozen_tensor_is_bit_identical() {
        let mut ps = ParameterStore::new(plain_sgd(0.1));
        ps.insert("a", vec![1.0, 2.0]);
        ps.insert("b", vec![3.0]);
        ps.freeze("a");
        for leaf in ps.get("a").iter().chain(ps.get("b")) {
            leaf.square().backward();
        }
        ps.sgd_step(0).unwrap();
        assert_eq!(ps.get("a")[0].value(), 1.0);
        assert_eq!(ps.get("a")[1].value(), 2.0);
        assert_eq!(ps.get("a")[0].grad(), 0.0);
        assert!(ps.get("b")[0].value() != 3.0);
    }

    #[test]
    fn momentum_accumulates() {
        let sgd = SgdConfig::new(1.0, 0.0, 0.5, vec![]).unwrap();
        let mut ps = ParameterStore::new(sgd);
        ps.insert("p", vec![0.0f64]);
        let leaf = ps.get("p")[0].clone();
        // constant gradient of 1 each step
        leaf.add_const(0.0).backward();
        ps.sgd_step(0).unwrap(); // buf=1, p=-1
        leaf.add_const(0.0).backward();
        ps.sgd_step(1).unwrap(); // buf=1.5, p=-2.5
        assert!((leaf.value() + 2.5).abs() < 1e-15);
    }

    #[test]
    fn non_finite_grad_names_parameter() {
        let mut ps = ParameterStore::new(plain_sgd(0.1));
        ps.insert("theta", vec![0.0]);
        let leaf = ps.get("theta")[0].clone();
        leaf.ln().backward(); // d/dx ln(x) at 0 = inf
        let err = ps.sgd_step(0).unwrap_err();
        assert!(err.to_string().contains("theta"));
    }
}
