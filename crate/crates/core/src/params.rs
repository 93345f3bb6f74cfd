//! Named trainable tensors with gradient slots.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Range of the uniform initializer used for every weight matrix.
pub const INIT_RANGE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub trainable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ParamRecord {
    name: String,
    trainable: bool,
    value: Tensor,
}

/// Ordered collection of parameters. Insertion order is the serialization
/// order, which keeps checkpoints byte-stable.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<ParamRecord>", into = "Vec<ParamRecord>")]
pub struct ParameterStore {
    params: Vec<Parameter>,
    index: BTreeMap<String, ParamId>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, value: Tensor, trainable: bool) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::config(alloc::format!("duplicate parameter name {name}")));
        }
        let id = ParamId(self.params.len());
        let (r, c) = value.shape();
        self.params.push(Parameter {
            name: name.to_string(),
            value,
            grad: Tensor::zeros(r, c),
            trainable,
        });
        self.index.insert(name.to_string(), id);
        Ok(id)
    }

    /// Seeded uniform `[-INIT_RANGE, INIT_RANGE]` matrix.
    pub fn add_uniform<R: Rng>(
        &mut self,
        rng: &mut R,
        name: &str,
        rows: usize,
        cols: usize,
    ) -> Result<ParamId> {
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-INIT_RANGE..=INIT_RANGE))
            .collect();
        self.add(name, Tensor::from_vec(rows, cols, data)?, true)
    }

    pub fn add_zeros(&mut self, name: &str, rows: usize, cols: usize) -> Result<ParamId> {
        self.add(name, Tensor::zeros(rows, cols), true)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn expect(&self, name: &str) -> Result<ParamId> {
        self.id(name)
            .ok_or_else(|| Error::config(alloc::format!("missing parameter {name}")))
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.params.iter_mut()
    }

    /// Total number of scalar entries.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    pub fn grad_norm(&self) -> f64 {
        libm::sqrt(
            self.params
                .iter()
                .filter(|p| p.trainable)
                .map(|p| p.grad.sq_norm())
                .sum(),
        )
    }

    /// Rescale all trainable gradients so their joint L2 norm is at most `max_norm`.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > max_norm && norm > 0.0 {
            let s = max_norm / norm;
            for p in self.params.iter_mut().filter(|p| p.trainable) {
                p.grad.scale_in_place(s);
            }
        }
        norm
    }

    /// Redraws every trainable entry, biases included, uniformly in `[-range, range]`.
    pub fn randomize<R: Rng>(&mut self, rng: &mut R, range: f64) {
        for p in self.params.iter_mut().filter(|p| p.trainable) {
            for x in p.value.data_mut() {
                *x = rng.random_range(-range..=range);
            }
        }
    }

    /// Replace values from another store with identical names and shapes.
    pub fn load_values(&mut self, other: &ParameterStore) -> Result<()> {
        if other.len() != self.len() {
            return Err(Error::config(alloc::format!(
                "checkpoint has {} tensors, model expects {}",
                other.len(),
                self.len()
            )));
        }
        for p in &mut self.params {
            let id = other.expect(&p.name)?;
            let src = other.value(id);
            if src.shape() != p.value.shape() {
                return Err(Error::config(alloc::format!(
                    "tensor {} has shape {:?}, model expects {:?}",
                    p.name,
                    src.shape(),
                    p.value.shape()
                )));
            }
            p.value = src.clone();
        }
        Ok(())
    }
}

impl TryFrom<Vec<ParamRecord>> for ParameterStore {
    type Error = Error;

    fn try_from(records: Vec<ParamRecord>) -> Result<Self> {
        let mut store = ParameterStore::new();
        for r in records {
            store.add(&r.name, r.value, r.trainable)?;
        }
        Ok(store)
    }
}

impl From<ParameterStore> for Vec<ParamRecord> {
    fn from(store: ParameterStore) -> Self {
        store
            .params
            .into_iter()
            .map(|p| ParamRecord {
                name: p.name,
                trainable: p.trainable,
                value: p.value,
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn names_are_unique() {
        let mut s = ParameterStore::new();
        s.add_zeros("w", 2, 2).unwrap();
        assert!(s.add_zeros("w", 1, 1).is_err());
    }

    #[test]
    fn uniform_init_in_range_and_seeded() {
        let mut a = ParameterStore::new();
        let mut b = ParameterStore::new();
        a.add_uniform(&mut ChaCha8Rng::seed_from_u64(3), "w", 4, 5).unwrap();
        b.add_uniform(&mut ChaCha8Rng::seed_from_u64(3), "w", 4, 5).unwrap();
        assert_eq!(a, b);
        let v = a.value(ParamId(0));
        assert!(v.data().iter().all(|x| x.abs() <= INIT_RANGE));
        assert_eq!(a.get(ParamId(0)).grad.shape(), (4, 5));
    }

    #[test]
    fn clipping_bounds_norm() {
        let mut s = ParameterStore::new();
        let id = s.add_zeros("w", 1, 2).unwrap();
        s.get_mut(id).grad = Tensor::vector(alloc::vec![30.0, 40.0]).transpose();
        let before = s.clip_grad_norm(5.0);
        assert_eq!(before, 50.0);
        assert!((s.grad_norm() - 5.0).abs() < 1e-12);
    }
}
