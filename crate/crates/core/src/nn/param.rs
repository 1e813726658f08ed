use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// A named learnable tensor with its gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor {
    pub id: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub grad: Vec<f64>,
}

impl ParamTensor {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Registry of every learnable tensor in a model, addressed by [`ParamId`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    tensors: Vec<ParamTensor>,
}

/// Gradient buffers shaped like a [`ParamStore`]; one per worker when
/// batch items are differentiated in parallel.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads(Vec<Vec<f64>>);

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, id: impl Into<String>, shape: Vec<usize>, values: Vec<f64>) -> ParamId {
        let id = id.into();
        let n: usize = shape.iter().product();
        assert_eq!(n, values.len(), "parameter {id}: shape/value mismatch");
        assert!(self.find(&id).is_none(), "duplicate parameter id {id}");
        self.tensors.push(ParamTensor { id, shape, grad: vec![0.0; n], values });
        ParamId(self.tensors.len() - 1)
    }

    pub fn find(&self, id: &str) -> Option<ParamId> {
        self.tensors.iter().position(|t| t.id == id).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &ParamTensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ParamTensor {
        &mut self.tensors[id.0]
    }

    #[inline]
    pub fn values(&self, id: ParamId) -> &[f64] {
        &self.tensors[id.0].values
    }

    pub fn values_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.tensors[id.0].values
    }

    pub fn tensors(&self) -> &[ParamTensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [ParamTensor] {
        &mut self.tensors
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(ParamTensor::len).sum()
    }

    pub fn zero_grad(&mut self) {
        for t in &mut self.tensors {
            t.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn zero_grads(&self) -> Grads {
        Grads(self.tensors.iter().map(|t| vec![0.0; t.len()]).collect())
    }

    /// Adds `grads` into every tensor's gradient accumulator.
    pub fn accumulate(&mut self, grads: &Grads) {
        for (t, g) in self.tensors.iter_mut().zip(&grads.0) {
            for (a, b) in t.grad.iter_mut().zip(g) {
                *a += b;
            }
        }
    }

    pub fn grads(&self) -> Grads {
        Grads(self.tensors.iter().map(|t| t.grad.clone()).collect())
    }

    /// Replaces values from another store with identical ids and shapes.
    pub fn load_values(&mut self, other: &ParamStore) -> Result<()> {
        for t in &mut self.tensors {
            let src = other
                .find(&t.id)
                .map(|i| other.get(i))
                .ok_or_else(|| Error::Data(format!("checkpoint lacks parameter {}", t.id)))?;
            if src.shape != t.shape {
                return Err(Error::Data(format!(
                    "parameter {} has shape {:?} in checkpoint, expected {:?}",
                    t.id, src.shape, t.shape
                )));
            }
            t.values.clone_from(&src.values);
        }
        Ok(())
    }
}

impl Grads {
    #[inline]
    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.0[id.0]
    }

    #[inline]
    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.0[id.0]
    }

    pub fn add_assign(&mut self, other: &Grads) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().flatten().all(|g| *g == 0.0)
    }
}
