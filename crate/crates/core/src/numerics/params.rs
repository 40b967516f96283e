use std::sync::atomic::{AtomicU64, Ordering};

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

static NEXT_STORE_ID: AtomicU64 = AtomicU64::new(1);

/// Index of a parameter inside its [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
struct Entry<T> {
    name: String,
    value: Tensor<T>,
    grad: Tensor<T>,
}

/// Named trainable tensors, each paired with a gradient buffer of the same
/// shape, plus non-trainable buffers (batch-norm running statistics).
///
/// Iteration order is insertion order.
#[derive(Debug)]
pub struct ParamStore<T> {
    id: u64,
    params: Vec<Entry<T>>,
    buffers: Vec<(String, Tensor<T>)>,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Clone for ParamStore<T> {
    fn clone(&self) -> Self {
        Self {
            id: NEXT_STORE_ID.fetch_add(1, Ordering::Relaxed),
            params: self.params.clone(),
            buffers: self.buffers.clone(),
        }
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            id: NEXT_STORE_ID.fetch_add(1, Ordering::Relaxed),
            params: Vec::new(),
            buffers: Vec::new(),
        }
    }

    /// Process-unique identity, used by the tape to route gradients.
    pub(crate) fn store_id(&self) -> u64 {
        self.id
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.find(&name).is_some() || self.buffer_index(&name).is_some() {
            return Err(Error::invalid(format!("duplicate parameter name {name:?}")));
        }
        let grad = Tensor::zeros(value.shape());
        self.params.push(Entry { name, value, grad });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<usize> {
        let name = name.into();
        if self.find(&name).is_some() || self.buffer_index(&name).is_some() {
            return Err(Error::invalid(format!("duplicate buffer name {name:?}")));
        }
        self.buffers.push((name, value));
        Ok(self.buffers.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of trainable scalars.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|e| e.value.len()).sum()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|e| e.name == name).map(ParamId)
    }

    fn buffer_index(&self, name: &str) -> Option<usize> {
        self.buffers.iter().position(|(n, _)| n == name)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].grad
    }

    pub(crate) fn grad_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.params[id.0].grad
    }

    pub(crate) fn value_and_grad_mut(&mut self, id: ParamId) -> (&mut Tensor<T>, &Tensor<T>) {
        let e = &mut self.params[id.0];
        (&mut e.value, &e.grad)
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.params {
            e.grad.fill(T::zero());
        }
    }

    pub fn buffer(&self, index: usize) -> &Tensor<T> {
        &self.buffers[index].1
    }

    pub fn buffer_mut(&mut self, index: usize) -> &mut Tensor<T> {
        &mut self.buffers[index].1
    }

    /// Every named tensor (parameters first, then buffers) in stable order.
    pub fn named_tensors(&self) -> Vec<(&str, &Tensor<T>)> {
        self.params
            .iter()
            .map(|e| (e.name.as_str(), &e.value))
            .chain(self.buffers.iter().map(|(n, t)| (n.as_str(), t)))
            .collect()
    }

    /// Overwrites the tensor called `name` (parameter or buffer).
    pub fn assign(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let slot = if let Some(id) = self.find(name) {
            &mut self.params[id.0].value
        } else if let Some(i) = self.buffer_index(name) {
            &mut self.buffers[i].1
        } else {
            return Err(Error::CheckpointMismatch(format!("unknown tensor {name:?}")));
        };
        if slot.shape() != value.shape() {
            return Err(Error::CheckpointMismatch(format!(
                "tensor {name:?} has shape {:?}, expected {:?}",
                value.shape(),
                slot.shape()
            )));
        }
        *slot = value;
        Ok(())
    }

    /// Concatenation of all parameter values, for equality checks in tests.
    pub fn flat_values(&self) -> Vec<T> {
        self.params
            .iter()
            .flat_map(|e| e.value.data().iter().copied())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradient_buffers_match_parameter_shapes() {
        let mut store = ParamStore::<f64>::new();
        let a = store.add("a", Tensor::zeros(&[2, 3])).unwrap();
        let b = store.add("b", Tensor::zeros(&[4])).unwrap();
        assert_eq!(store.grad(a).shape(), &[2, 3]);
        assert_eq!(store.grad(b).shape(), &[4]);
        assert!(store.add("a", Tensor::zeros(&[1])).is_err());
        let names: Vec<_> = store.named_tensors().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names, ["a", "b"]);
    }

    #[test]
    fn assign_checks_shape() {
        let mut store = ParamStore::<f32>::new();
        store.add("w", Tensor::zeros(&[2])).unwrap();
        assert!(store.assign("w", Tensor::zeros(&[3])).is_err());
        assert!(store.assign("nope", Tensor::zeros(&[2])).is_err());
        store.assign("w", Tensor::full(&[2], 1.5)).unwrap();
        assert_eq!(store.flat_values(), vec![1.5, 1.5]);
    }
}
