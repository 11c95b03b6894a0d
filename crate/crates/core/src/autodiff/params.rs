use rand::Rng;

use crate::autodiff::tape::{Gradients, Tape, Var};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Clone, Debug)]
pub struct Param<T> {
    pub name: String,
    pub value: Matrix<T>,
    /// Whether L2 weight decay applies (weights yes, biases no).
    pub decay: bool,
}

/// Named, ordered collection of trainable matrices.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix<T>, decay: bool) -> ParamId {
        let name = name.into();
        debug_assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        self.params.push(Param { name, value, decay });
        ParamId(self.params.len() - 1)
    }

    /// Glorot-style uniform init in `[-limit, limit]`, `limit = sqrt(6 / (fan_in + fan_out))`.
    pub fn add_weight<R: Rng>(
        &mut self,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> ParamId {
        let value = glorot_uniform(fan_in, fan_out, rng);
        self.add(name, value, true)
    }

    pub fn add_bias(&mut self, name: &str, width: usize) -> ParamId {
        self.add(name, Matrix::zeros(1, width), false)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Matrix<T> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Matrix<T> {
        &mut self.params[id.0].value
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    /// Total number of scalar entries.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Copies every parameter onto the tape as a differentiable leaf.
    pub fn bind(&self, tape: &mut Tape<T>) -> Bound {
        Bound {
            vars: self
                .params
                .iter()
                .map(|p| tape.param(p.value.clone()))
                .collect(),
        }
    }

    /// Overwrites values from another store with identical names and shapes.
    pub fn load_from(&mut self, other: &ParamStore<T>) -> Result<()> {
        if other.len() != self.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, found {}",
                self.len(),
                other.len()
            )));
        }
        for (dst, src) in self.params.iter_mut().zip(&other.params) {
            if dst.name != src.name || dst.value.shape() != src.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter mismatch: `{}` {:?} vs `{}` {:?}",
                    dst.name,
                    dst.value.shape(),
                    src.name,
                    src.value.shape()
                )));
            }
            dst.value = src.value.clone();
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    decay: p.decay,
                })
                .collect(),
        }
    }
}

/// Tape variables for each parameter of a store, in store order.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    /// Gradient per parameter; zeros where the loss does not depend on it.
    pub fn collect<T: Scalar>(
        &self,
        store: &ParamStore<T>,
        grads: &mut Gradients<T>,
    ) -> Vec<Matrix<T>> {
        self.vars
            .iter()
            .zip(store.iter())
            .map(|(&v, p)| {
                grads
                    .take(v)
                    .unwrap_or_else(|| Matrix::zeros(p.value.rows(), p.value.cols()))
            })
            .collect()
    }
}

pub fn glorot_uniform<T: Scalar, R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> Matrix<T> {
    let limit = (6.0 / (fan_in + fan_out).max(1) as f64).sqrt();
    Matrix::from_fn(fan_in, fan_out, |_, _| {
        T::from_f64_lossy(rng.gen_range(-limit..=limit))
    })
}
