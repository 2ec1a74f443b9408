//! Named trainable parameters.
//!
//! A [`ParamSet`] keeps parameters in insertion order so that optimizer
//! updates, checkpoint layout, and gradient application are all deterministic.

use std::collections::HashMap;

use rand::Rng;

use crate::error::{CoreError, Result};
use crate::numerics::tape::{NodeId, Shape, Tape, Tensor};

/// One named trainable tensor.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub tensor: Tensor,
}

/// Ordered collection of named parameters.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    params: Vec<Param>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a parameter; the tensor is forced trainable. Duplicate names are
    /// rejected so checkpoints stay unambiguous.
    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(CoreError::config(format!("duplicate parameter name: {name}")));
        }
        self.index.insert(name.clone(), self.params.len());
        self.params.push(Param { name, tensor: tensor.with_grad() });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.index.get(name).map(|i| &self.params[*i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        let i = *self.index.get(name)?;
        Some(&mut self.params[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar values across all parameters.
    pub fn value_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    /// Injects one parameter onto a tape. With `trainable` false the leaf is
    /// frozen: activations still flow forward but backward treats the value
    /// as a constant.
    pub fn bind(&self, tape: &mut Tape, name: &str, trainable: bool) -> Result<NodeId> {
        let param = self
            .get(name)
            .ok_or_else(|| CoreError::Unknown { kind: "parameter", id: name.to_string() })?;
        let mut t = param.tensor.clone();
        t.requires_grad = trainable;
        t.grad = None;
        Ok(tape.leaf(t))
    }

    /// Merges another set under a `prefix.` namespace.
    pub fn absorb(&mut self, prefix: &str, other: &ParamSet) -> Result<()> {
        for p in other.iter() {
            let mut t = p.tensor.clone();
            t.grad = None;
            self.insert(format!("{prefix}.{}", p.name), t)?;
        }
        Ok(())
    }

    /// Copies values back out of a prefixed merged set.
    pub fn adopt_values(&mut self, prefix: &str, merged: &ParamSet) -> Result<()> {
        for p in self.params.iter_mut() {
            let key = format!("{prefix}.{}", p.name);
            let src = merged
                .get(&key)
                .ok_or_else(|| CoreError::Unknown { kind: "parameter", id: key.clone() })?;
            if src.tensor.shape != p.tensor.shape {
                return Err(CoreError::ShapeMismatch {
                    op: "adopt_values",
                    left: p.tensor.shape,
                    right: src.tensor.shape,
                });
            }
            p.tensor.values.clone_from(&src.tensor.values);
        }
        Ok(())
    }
}

/// Uniform(-scale, scale) matrix initialisation.
pub fn init_matrix(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    let values: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-scale..scale)).collect();
    Tensor { shape: Shape::Matrix(rows, cols), values, requires_grad: false, grad: None }
}

/// Identity matrix plus uniform(-noise, noise) perturbation.
pub fn init_identity_matrix(rng: &mut impl Rng, n: usize, noise: f64) -> Tensor {
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        values[i * n + i] = 1.0;
    }
    if noise > 0.0 {
        for v in values.iter_mut() {
            *v += rng.gen_range(-noise..noise);
        }
    }
    Tensor { shape: Shape::Matrix(n, n), values, requires_grad: false, grad: None }
}

/// Uniform(-scale, scale) vector initialisation.
pub fn init_vector(rng: &mut impl Rng, n: usize, scale: f64) -> Tensor {
    let values: Vec<f64> = (0..n)
        .map(|_| if scale > 0.0 { rng.gen_range(-scale..scale) } else { 0.0 })
        .collect();
    Tensor { shape: Shape::Vector(n), values, requires_grad: false, grad: None }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn insertion_order_is_preserved() {
        let mut set = ParamSet::new();
        set.insert("b", Tensor::vector(vec![1.0]).unwrap()).unwrap();
        set.insert("a", Tensor::vector(vec![2.0]).unwrap()).unwrap();
        let names: Vec<&str> = set.iter().map(|p| p.name.as_str()).collect();
        assert_eq!(names, ["b", "a"]);
    }

    #[test]
    fn duplicate_names_are_rejected() {
        let mut set = ParamSet::new();
        set.insert("w", Tensor::scalar(0.0).unwrap()).unwrap();
        assert!(set.insert("w", Tensor::scalar(1.0).unwrap()).is_err());
    }

    #[test]
    fn frozen_bind_blocks_gradient() {
        let mut set = ParamSet::new();
        set.insert("w", Tensor::vector(vec![2.0, 3.0]).unwrap()).unwrap();
        let mut tape = Tape::new();
        let frozen = set.bind(&mut tape, "w", false).unwrap();
        let live = set.bind(&mut tape, "w", true).unwrap();
        let prod = tape.mul(frozen, live).unwrap();
        let loss = tape.sum(prod).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert!(grads.of(frozen).is_none());
        assert_eq!(grads.of(live).unwrap(), &[2.0, 3.0]);
    }

    #[test]
    fn absorb_and_adopt_round_trip() {
        let mut inner = ParamSet::new();
        inner.insert("w", Tensor::vector(vec![1.0, 2.0]).unwrap()).unwrap();
        let mut merged = ParamSet::new();
        merged.absorb("block", &inner).unwrap();
        merged.get_mut("block.w").unwrap().tensor.values = vec![5.0, 6.0];
        inner.adopt_values("block", &merged).unwrap();
        assert_eq!(inner.get("w").unwrap().tensor.values, vec![5.0, 6.0]);
    }
}
