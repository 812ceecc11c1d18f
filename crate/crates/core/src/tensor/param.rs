use rand::distributions::Open01;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::error::{Error, Result};

/// Which part of a shared-bottom model a parameter belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParamGroup {
    Shared,
    /// Head of the task with this zero-based index.
    Task(usize),
}

impl ParamGroup {
    pub fn is_shared(self) -> bool {
        matches!(self, ParamGroup::Shared)
    }

    pub fn is_head(self) -> bool {
        matches!(self, ParamGroup::Task(_))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitScheme {
    /// i.i.d. `U(-1/sqrt(rows), +1/sqrt(rows))`, open interval.
    UniformFanIn,
    Zeros,
}

/// Draws an initial value matrix. Identical `(rng state, shape, scheme)` give identical output.
pub fn init_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, scheme: InitScheme, rng: &mut R) -> Result<Matrix> {
    if rows == 0 || cols == 0 {
        return Err(Error::shape(format!(
            "parameter shape must be positive, got {rows}x{cols}"
        )));
    }
    Ok(match scheme {
        InitScheme::Zeros => Matrix::zeros(rows, cols),
        InitScheme::UniformFanIn => {
            let bound = 1.0 / (rows as f64).sqrt();
            let data = (0..rows * cols)
                .map(|_| {
                    let u: f64 = rng.sample(Open01);
                    bound * (2.0 * u - 1.0)
                })
                .collect();
            Matrix::from_vec(rows, cols, data)?
        }
    })
}

/// A trainable matrix with its gradient ledger and Adagrad state.
#[derive(Clone, Debug)]
pub struct ParamTensor {
    name: String,
    group: ParamGroup,
    pub value: Matrix,
    pub grad: Matrix,
    pub accumulator: Matrix,
}

impl ParamTensor {
    pub fn new(name: impl Into<String>, group: ParamGroup, value: Matrix) -> Self {
        let (r, c) = value.shape();
        ParamTensor {
            name: name.into(),
            group,
            value,
            grad: Matrix::zeros(r, c),
            accumulator: Matrix::zeros(r, c),
        }
    }

    pub fn init<R: Rng + ?Sized>(
        name: impl Into<String>,
        group: ParamGroup,
        shape: (usize, usize),
        scheme: InitScheme,
        rng: &mut R,
    ) -> Result<Self> {
        let value = init_matrix(shape.0, shape.1, scheme, rng)?;
        Ok(Self::new(name, group, value))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn group(&self) -> ParamGroup {
        self.group
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value.shape()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered collection of every parameter of one model.
#[derive(Clone, Debug, Default)]
pub struct ParamSet {
    params: Vec<ParamTensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, param: ParamTensor) -> ParamId {
        self.params.push(param);
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &ParamTensor {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ParamTensor {
        &mut self.params[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &ParamTensor)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut ParamTensor)> {
        self.params.iter_mut().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.scale_assign(0.0);
        }
    }

    /// Adds every gradient in `grads` to the matching parameter's ledger.
    pub fn accumulate(&mut self, grads: &GradMap) {
        for (id, g) in grads.iter() {
            self.params[id.0].grad.add_assign(g);
        }
    }
}

/// Sparse per-parameter gradients produced by one backward pass.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradMap {
    grads: Vec<Option<Matrix>>,
}

impl GradMap {
    pub(crate) fn from_slots(grads: Vec<Option<Matrix>>) -> Self {
        GradMap { grads }
    }

    /// Gradient for `id`; `None` means the parameter was unreachable (zero gradient).
    pub fn get(&self, id: ParamId) -> Option<&Matrix> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Matrix)> {
        self.grads
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_ref().map(|g| (ParamId(i), g)))
    }

    /// Adds `other` into `self`, slot by slot.
    pub fn add_assign(&mut self, other: &GradMap) {
        if self.grads.len() < other.grads.len() {
            self.grads.resize(other.grads.len(), None);
        }
        for (slot, g) in self.grads.iter_mut().zip(&other.grads) {
            match (slot.as_mut(), g) {
                (Some(s), Some(g)) => s.add_assign(g),
                (None, Some(g)) => *slot = Some(g.clone()),
                _ => {}
            }
        }
    }

    /// Drops gradients of parameters whose group fails `keep`.
    pub fn retain_groups(&mut self, params: &ParamSet, keep: impl Fn(ParamGroup) -> bool) {
        for (i, slot) in self.grads.iter_mut().enumerate() {
            if slot.is_some() && !keep(params.params[i].group) {
                *slot = None;
            }
        }
    }
}
