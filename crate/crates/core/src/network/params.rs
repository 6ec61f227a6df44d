use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// One named trainable tensor with its momentum buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub value: Tensor,
    pub velocity: Tensor,
    /// Frozen entries are skipped by the optimizer.
    pub frozen: bool,
}

/// Ordered, uniquely named parameter set shared by every forward pass of a model.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Parameters {
    entries: Vec<ParamEntry>,
    index: HashMap<String, usize>,
}

impl Parameters {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: Tensor, frozen: bool) -> Result<usize> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::invalid(format!("duplicate parameter name {name:?}")));
        }
        let slot = self.entries.len();
        self.index.insert(name.clone(), slot);
        let velocity = Tensor::zeros(value.shape());
        self.entries.push(ParamEntry {
            name,
            value,
            velocity,
            frozen,
        });
        Ok(slot)
    }

    pub fn slot(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.slot(name).map(|i| &self.entries[i].value)
    }

    pub fn entry(&self, slot: usize) -> &ParamEntry {
        &self.entries[slot]
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry] {
        &mut self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    pub fn set_frozen(&mut self, name: &str, frozen: bool) -> Result<()> {
        let slot = self
            .slot(name)
            .ok_or_else(|| Error::invalid(format!("no parameter named {name:?}")))?;
        self.entries[slot].frozen = frozen;
        Ok(())
    }

    pub fn zero_grads(&self) -> Gradients {
        Gradients {
            tensors: self
                .entries
                .iter()
                .map(|e| Tensor::zeros(e.value.shape()))
                .collect(),
        }
    }

    /// All parameter values concatenated in entry order.
    pub fn flatten(&self) -> Vec<f64> {
        self.entries
            .iter()
            .flat_map(|e| e.value.data().iter().copied())
            .collect()
    }

    /// Inverse of [`Parameters::flatten`].
    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_scalars() {
            return Err(Error::Dimension {
                op: "assign_flat",
                left: vec![self.num_scalars()],
                right: vec![flat.len()],
            });
        }
        let mut offset = 0;
        for e in &mut self.entries {
            let n = e.value.len();
            e.value
                .data_mut()
                .copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }
}

/// Gradient set congruent with a [`Parameters`] instance (same order and shapes).
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    tensors: Vec<Tensor>,
}

impl Gradients {
    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn get_mut(&mut self, slot: usize) -> &mut Tensor {
        &mut self.tensors[slot]
    }

    pub fn add_assign(&mut self, other: &Gradients) -> Result<()> {
        if self.tensors.len() != other.tensors.len() {
            return Err(Error::Dimension {
                op: "gradients_add",
                left: vec![self.tensors.len()],
                right: vec![other.tensors.len()],
            });
        }
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.axpy(1.0, b)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: f64) {
        self.tensors.iter_mut().for_each(|t| t.scale(alpha));
    }

    pub fn reset(&mut self) {
        self.tensors.iter_mut().for_each(|t| t.fill(0.0));
    }

    pub fn is_zero(&self) -> bool {
        self.tensors
            .iter()
            .all(|t| t.data().iter().all(|&v| v == 0.0))
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors
            .iter()
            .flat_map(|t| t.data().iter().copied())
            .collect()
    }

    pub(crate) fn check_congruent(&self, params: &Parameters) -> Result<()> {
        let congruent = self.tensors.len() == params.len()
            && self
                .tensors
                .iter()
                .zip(params.entries())
                .all(|(g, p)| g.shape() == p.value.shape());
        if congruent {
            Ok(())
        } else {
            Err(Error::Dimension {
                op: "gradients_vs_parameters",
                left: vec![self.tensors.len()],
                right: vec![params.len()],
            })
        }
    }
}
