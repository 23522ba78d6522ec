//! Named parameter storage with per-tensor trainability flags.

use std::collections::BTreeMap;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use crate::rng::{name_hash, stream, tag};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub value: Matrix,
    pub trainable: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Matrix) {
        self.params.insert(
            name.into(),
            Param {
                value,
                trainable: true,
            },
        );
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.params.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Param)> {
        self.params.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Sets the trainability flag on every tensor whose name starts with `prefix`.
    pub fn set_trainable(&mut self, prefix: &str, trainable: bool) {
        for (name, p) in self.params.iter_mut() {
            if name.starts_with(prefix) {
                p.trainable = trainable;
            }
        }
    }

    /// (trainable scalars, total scalars).
    pub fn counts(&self) -> (usize, usize) {
        self.params.values().fold((0, 0), |(t, n), p| {
            let k = p.value.len();
            (t + if p.trainable { k } else { 0 }, n + k)
        })
    }

    /// Moves every tensor from `other` into `self`, replacing same-named entries.
    pub fn merge(&mut self, other: ParamStore) {
        self.params.extend(other.params);
    }

    /// Keeps only the tensors whose names start with `prefix`.
    pub fn subset(&self, prefix: &str) -> ParamStore {
        ParamStore {
            params: self
                .params
                .iter()
                .filter(|(n, _)| n.starts_with(prefix))
                .map(|(n, p)| (n.clone(), p.clone()))
                .collect(),
        }
    }

    /// Rounds every value through f32.
    pub fn quantize_f32(&mut self) {
        for p in self.params.values_mut() {
            for v in p.value.data.iter_mut() {
                *v = *v as f32 as f64;
            }
        }
    }

    /// Gaussian weights of shape (fan_in × fan_out) with std 1/sqrt(fan_in),
    /// drawn from a stream keyed by the tensor name.
    pub fn init_linear(
        &mut self,
        seed: u64,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
    ) {
        let w = format!("{name}.w");
        let std = (1.0 / fan_in.max(1) as f64).sqrt();
        self.insert(w.clone(), gaussian(seed, &w, fan_in, fan_out, std));
        if bias {
            self.insert(format!("{name}.b"), Matrix::zeros(1, fan_out));
        }
    }

    pub fn init_layer_norm(&mut self, name: &str, dim: usize) {
        self.insert(format!("{name}.g"), Matrix::filled(1, dim, 1.0));
        self.insert(format!("{name}.b"), Matrix::zeros(1, dim));
    }
}

pub fn gaussian(seed: u64, name: &str, rows: usize, cols: usize, std: f64) -> Matrix {
    let mut rng = stream(seed, &[tag::INIT, name_hash(name)]);
    let normal = Normal::new(0.0, std).expect("finite std");
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols).map(|_| normal.sample(&mut rng)).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_follow_flags() {
        let mut p = ParamStore::new();
        p.init_linear(0, "a.lin", 3, 4, true);
        p.init_layer_norm("b.ln", 4);
        assert_eq!(p.counts(), (12 + 4 + 8, 24));
        p.set_trainable("a.", false);
        assert_eq!(p.counts(), (8, 24));
    }

    #[test]
    fn init_depends_on_name_not_order() {
        let mut p = ParamStore::new();
        p.init_linear(5, "x", 4, 4, false);
        p.init_linear(5, "y", 4, 4, false);
        let mut q = ParamStore::new();
        q.init_linear(5, "y", 4, 4, false);
        q.init_linear(5, "x", 4, 4, false);
        assert_eq!(p, q);
        assert_ne!(p.get("x.w"), p.get("y.w"));
    }
}
