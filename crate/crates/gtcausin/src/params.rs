//! Named parameter storage: values plus accumulated gradients, keyed by
//! hierarchical paths like `block3/tcn/theta`.

use crate::error::{input_err, Result};
use crate::tensor::Tensor;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub value: Tensor,
    #[serde(skip, default = "empty_grad")]
    pub grad: Option<Tensor>,
}

fn empty_grad() -> Option<Tensor> {
    None
}

/// Ordered map of trainable tensors. Iteration order is the lexicographic
/// path order, which keeps optimizer updates deterministic.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    entries: BTreeMap<String, ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor) -> Result<()> {
        if self.entries.contains_key(name) {
            return input_err(format!("parameter {name:?} registered twice"));
        }
        self.entries
            .insert(name.to_string(), ParamEntry { value, grad: None });
        Ok(())
    }

    /// Registers a tensor drawn uniformly from [−1/√fan_in, +1/√fan_in].
    pub fn init_uniform<R: Rng>(
        &mut self,
        name: &str,
        shape: &[usize],
        fan_in: usize,
        rng: &mut R,
    ) -> Result<()> {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let len: usize = shape.iter().product();
        let data: Vec<f64> = (0..len).map(|_| rng.gen_range(-bound..bound)).collect();
        self.insert(name, Tensor::new(shape, data)?)
    }

    pub fn get(&self, name: &str) -> Result<&ParamEntry> {
        self.entries
            .get(name)
            .ok_or_else(|| crate::error::Error::Input(format!("unknown parameter {name:?}")))
    }

    pub fn value(&self, name: &str) -> Result<&Tensor> {
        Ok(&self.get(name)?.value)
    }

    pub fn set_value(&mut self, name: &str, value: Tensor) -> Result<()> {
        let entry = self
            .entries
            .get_mut(name)
            .ok_or_else(|| crate::error::Error::Input(format!("unknown parameter {name:?}")))?;
        if entry.value.shape() != value.shape() {
            return input_err(format!(
                "parameter {name:?} has shape {:?}, refusing {:?}",
                entry.value.shape(),
                value.shape()
            ));
        }
        entry.value = value;
        Ok(())
    }

    /// Adds `grad` into the stored gradient for `name`.
    pub fn accumulate_grad(&mut self, name: &str, grad: &Tensor) -> Result<()> {
        let entry = self
            .entries
            .get_mut(name)
            .ok_or_else(|| crate::error::Error::Input(format!("unknown parameter {name:?}")))?;
        if entry.value.shape() != grad.shape() {
            return input_err(format!(
                "gradient shape {:?} does not match parameter {name:?} {:?}",
                grad.shape(),
                entry.value.shape()
            ));
        }
        match &mut entry.grad {
            Some(g) => g.add_assign(grad),
            slot => *slot = Some(grad.clone()),
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for entry in self.entries.values_mut() {
            entry.grad = None;
        }
    }

    /// Scales every stored gradient in place.
    pub fn scale_grads(&mut self, c: f64) {
        for entry in self.entries.values_mut() {
            if let Some(g) = &mut entry.grad {
                g.scale_assign(c);
            }
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ParamEntry)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut ParamEntry)> {
        self.entries.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.entries.values().map(|e| e.value.len()).sum()
    }

    /// Flattens all parameter values into one vector, in path order.
    pub fn flatten_values(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.scalar_count());
        for entry in self.entries.values() {
            out.extend_from_slice(entry.value.data());
        }
        out
    }

    /// Flattens all gradients into one vector, in path order; missing
    /// gradients contribute zeros.
    pub fn flatten_grads(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.scalar_count());
        for entry in self.entries.values() {
            match &entry.grad {
                Some(g) => out.extend_from_slice(g.data()),
                None => out.extend(std::iter::repeat(0.0).take(entry.value.len())),
            }
        }
        out
    }

    /// Overwrites every parameter from one flat vector, in path order.
    pub fn unflatten_values(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.scalar_count() {
            return input_err(format!(
                "flat vector has {} entries, parameters hold {}",
                flat.len(),
                self.scalar_count()
            ));
        }
        let mut off = 0;
        for entry in self.entries.values_mut() {
            let len = entry.value.len();
            entry.value = Tensor::new(entry.value.shape(), flat[off..off + len].to_vec())?;
            off += len;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn init_respects_fan_in_bound() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        store.init_uniform("w", &[16, 16], 16, &mut rng).unwrap();
        let bound = 0.25;
        for &v in store.value("w").unwrap().data() {
            assert!(v.abs() < bound);
        }
    }

    #[test]
    fn same_seed_same_init() {
        let mut a = ParamStore::new();
        let mut b = ParamStore::new();
        let mut ra = ChaCha8Rng::seed_from_u64(9);
        let mut rb = ChaCha8Rng::seed_from_u64(9);
        a.init_uniform("w", &[3, 3], 3, &mut ra).unwrap();
        b.init_uniform("w", &[3, 3], 3, &mut rb).unwrap();
        assert_eq!(a.value("w").unwrap(), b.value("w").unwrap());
    }

    #[test]
    fn grads_accumulate_and_reset() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::filled(&[2], 1.0)).unwrap();
        let g = Tensor::filled(&[2], 0.5);
        store.accumulate_grad("w", &g).unwrap();
        store.accumulate_grad("w", &g).unwrap();
        assert_eq!(
            store.get("w").unwrap().grad.as_ref().unwrap().data(),
            &[1.0, 1.0]
        );
        store.zero_grads();
        assert!(store.get("w").unwrap().grad.is_none());
    }

    #[test]
    fn flatten_round_trip() {
        let mut store = ParamStore::new();
        store.insert("b/z", Tensor::filled(&[2], 2.0)).unwrap();
        store.insert("a/w", Tensor::filled(&[3], 1.0)).unwrap();
        // Path order: a/w before b/z.
        assert_eq!(store.flatten_values(), vec![1.0, 1.0, 1.0, 2.0, 2.0]);
        let flat = vec![5.0, 6.0, 7.0, 8.0, 9.0];
        store.unflatten_values(&flat).unwrap();
        assert_eq!(store.value("a/w").unwrap().data(), &[5.0, 6.0, 7.0]);
        assert_eq!(store.value("b/z").unwrap().data(), &[8.0, 9.0]);
    }

    #[test]
    fn duplicate_registration_rejected() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::filled(&[1], 0.0)).unwrap();
        assert!(store.insert("w", Tensor::filled(&[1], 0.0)).is_err());
    }
}
