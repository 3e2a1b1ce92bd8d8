//! Named parameter storage and the Adam optimizer.
//!
//! Parameters are keyed by dotted names (`enc.f_h.l0.w`); the dotted prefixes
//! double as freeze groups, so a training stage can exclude whole subsystems
//! (e.g. every hypergraph module) by listing their prefixes. Iteration order
//! is the `BTreeMap` name order, which keeps optimizer behaviour independent
//! of insertion order.

use std::collections::{BTreeMap, HashMap};
use std::rc::Rc;

use ndarray::Array2;

use crate::NnetError;

struct Param {
    value: Rc<Array2<f64>>,
    m: Array2<f64>,
    v: Array2<f64>,
}

/// All learnable tensors of a model plus Adam moments.
#[derive(Default)]
pub struct ParamStore {
    params: BTreeMap<String, Param>,
    step: u64,
}

/// Adam hyperparameters; `lr` is expected to be adjusted externally when a
/// step decay schedule is in effect.
#[derive(Debug, Clone)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a tensor; duplicate names are an error so that two layers can
    /// never silently share weights.
    pub fn insert(&mut self, name: impl Into<String>, value: Array2<f64>) -> Result<(), NnetError> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(NnetError::DuplicateParam(name));
        }
        let (m, v) = (Array2::zeros(value.dim()), Array2::zeros(value.dim()));
        self.params.insert(
            name,
            Param {
                value: Rc::new(value),
                m,
                v,
            },
        );
        Ok(())
    }

    /// Shared handle to a parameter's current value; panics on unknown names
    /// because a typo here is always a programming error.
    pub fn get(&self, name: &str) -> Rc<Array2<f64>> {
        Rc::clone(
            &self
                .params
                .get(name)
                .unwrap_or_else(|| panic!("unknown parameter `{name}`"))
                .value,
        )
    }

    /// Overwrites a parameter value (checkpoint restore, tests).
    pub fn set(&mut self, name: &str, value: Array2<f64>) -> Result<(), NnetError> {
        let p = self
            .params
            .get_mut(name)
            .ok_or_else(|| NnetError::MissingParam(name.to_string()))?;
        p.value = Rc::new(value);
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
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

    /// Total number of scalar entries across all tensors.
    pub fn num_scalars(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    /// Applies one Adam update from named gradients. Parameters whose name
    /// starts with any of `frozen_prefixes` are left untouched, moments
    /// included, so a later stage resumes them exactly where they were.
    pub fn adam_step(
        &mut self,
        grads: &HashMap<String, Array2<f64>>,
        cfg: &AdamConfig,
        frozen_prefixes: &[&str],
    ) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for (name, param) in self.params.iter_mut() {
            if frozen_prefixes.iter().any(|p| name.starts_with(p)) {
                continue;
            }
            let Some(g) = grads.get(name) else { continue };
            debug_assert_eq!(g.dim(), param.value.dim(), "gradient shape for {name}");
            param.m.zip_mut_with(g, |m, &gi| {
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * gi;
            });
            param.v.zip_mut_with(g, |v, &gi| {
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * gi * gi;
            });
            let value = Rc::make_mut(&mut param.value);
            for ((x, &m), &v) in value.iter_mut().zip(param.m.iter()).zip(param.v.iter()) {
                let mhat = m / bc1;
                let vhat = v / bc2;
                *x -= cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
            }
        }
    }

    /// Global L2 norm of a gradient map (for norm clipping).
    pub fn grad_norm(grads: &HashMap<String, Array2<f64>>) -> f64 {
        grads
            .values()
            .map(|g| g.iter().map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    /// Scales all gradients in place so their global norm is at most `max_norm`.
    pub fn clip_grad_norm(grads: &mut HashMap<String, Array2<f64>>, max_norm: f64) {
        let norm = Self::grad_norm(grads);
        if norm > max_norm && norm > 0.0 {
            let s = max_norm / norm;
            for g in grads.values_mut() {
                g.mapv_inplace(|x| x * s);
            }
        }
    }

    /// Snapshot of all tensors (used for bit-identity assertions in tests and
    /// for checkpoint writing).
    pub fn snapshot(&self) -> BTreeMap<String, Array2<f64>> {
        self.params
            .iter()
            .map(|(k, p)| (k.clone(), (*p.value).clone()))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn duplicate_insert_is_rejected() {
        let mut s = ParamStore::new();
        s.insert("a.w", array![[1.0]]).unwrap();
        assert!(s.insert("a.w", array![[2.0]]).is_err());
    }

    #[test]
    fn adam_minimizes_a_quadratic() {
        let mut s = ParamStore::new();
        s.insert("x", array![[5.0, -3.0]]).unwrap();
        let cfg = AdamConfig {
            lr: 0.1,
            ..Default::default()
        };
        for _ in 0..500 {
            let x = s.get("x");
            let mut grads = HashMap::new();
            grads.insert("x".to_string(), 2.0 * &*x); // d/dx x^2
            s.adam_step(&grads, &cfg, &[]);
        }
        let x = s.get("x");
        assert!(x.iter().all(|v| v.abs() < 1e-3), "converged to {x:?}");
    }

    #[test]
    fn frozen_prefixes_stay_bit_identical() {
        let mut s = ParamStore::new();
        s.insert("hg.pim.w", array![[1.25, -0.5]]).unwrap();
        s.insert("enc.w", array![[2.0, 3.0]]).unwrap();
        let before = s.snapshot();
        let mut grads = HashMap::new();
        grads.insert("hg.pim.w".to_string(), array![[1.0, 1.0]]);
        grads.insert("enc.w".to_string(), array![[1.0, 1.0]]);
        s.adam_step(&grads, &AdamConfig::default(), &["hg."]);
        let after = s.snapshot();
        assert_eq!(before["hg.pim.w"], after["hg.pim.w"]);
        assert_ne!(before["enc.w"], after["enc.w"]);
    }

    #[test]
    fn clip_grad_norm_caps_global_norm() {
        let mut grads = HashMap::new();
        grads.insert("a".to_string(), array![[3.0, 4.0]]); // norm 5
        ParamStore::clip_grad_norm(&mut grads, 1.0);
        let n = ParamStore::grad_norm(&grads);
        assert!((n - 1.0).abs() < 1e-12);
    }
}
