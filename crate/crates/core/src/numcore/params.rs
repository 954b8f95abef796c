use std::ops::Index;

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use sha2::{Digest, Sha256};

use super::{Real, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Initialization schemes.
#[derive(Clone, Copy, Debug)]
pub enum Init {
    /// `U[-1/sqrt(fan_in), 1/sqrt(fan_in)]` with `fan_in` = rows (weights are stored `in×out`).
    FanIn,
    Normal(f64),
    Zeros,
    Ones,
}

#[derive(Clone, Debug)]
pub struct Param<F: Real> {
    pub name: String,
    pub tensor: Tensor<F>,
}

/// Ordered, named collection of matrices.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<F: Real = f64> {
    params: Vec<Param<F>>,
}

impl<F: Real> ParamStore<F> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    /// Adds a trainable tensor unless it is frozen.
    pub fn add(&mut self, name: impl Into<String>, mut tensor: Tensor<F>) -> Result<ParamId> {
        let name = name.into();
        if self.params.iter().any(|p| p.name == name) {
            return Err(Error::Config(format!("duplicate parameter `{name}`")));
        }
        if !tensor.is_frozen() {
            tensor.set_requires_grad(true)?;
        }
        self.params.push(Param { name, tensor });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn init<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        init: Init,
        rng: &mut R,
    ) -> Result<ParamId> {
        let n = rows * cols;
        let data: Vec<F> = match init {
            Init::FanIn => {
                let bound = 1.0 / (rows as f64).sqrt();
                let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
                (0..n).map(|_| F::c(dist.sample(rng))).collect()
            }
            Init::Normal(std) => {
                let dist = Normal::new(0.0, std).map_err(|e| Error::Config(e.to_string()))?;
                (0..n).map(|_| F::c(dist.sample(rng))).collect()
            }
            Init::Zeros => vec![F::zero(); n],
            Init::Ones => vec![F::one(); n],
        };
        self.add(name, Tensor::matrix(rows, cols, data)?)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<F> {
        &self.params[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        &mut self.params[id.0].tensor
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<F>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<F>> {
        self.params.iter_mut()
    }

    /// Number of scalar entries that take gradients.
    pub fn trainable_count(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.tensor.requires_grad())
            .map(|p| p.tensor.numel())
            .sum()
    }

    pub fn total_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    pub fn freeze_all(&mut self) {
        self.params.iter_mut().for_each(|p| p.tensor.freeze());
    }

    pub fn is_frozen(&self) -> bool {
        self.params.iter().all(|p| p.tensor.is_frozen())
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(|p| p.tensor.zero_grad());
    }

    /// Records every parameter on the tape.
    pub fn bind(&self, tape: &mut Tape<F>) -> Bound {
        Bound(self.params.iter().map(|p| tape.leaf(&p.tensor)).collect())
    }

    /// Collects the gradients of bound parameters after `tape.backward`.
    pub fn collect_grads(&self, tape: &Tape<F>, bound: &Bound) -> GradBuffer<F> {
        GradBuffer {
            grads: bound
                .0
                .iter()
                .zip(&self.params)
                .map(|(&v, p)| {
                    if p.tensor.requires_grad() {
                        tape.grad(v).map(<[F]>::to_vec)
                    } else {
                        None
                    }
                })
                .collect(),
        }
    }

    /// Stores a gradient buffer into each tensor's `grad` slot.
    pub fn set_grads(&mut self, buffer: GradBuffer<F>) -> Result<()> {
        if buffer.grads.len() != self.params.len() {
            return Err(Error::dim("set_grads", &[self.params.len()], &[buffer.grads.len()]));
        }
        for (p, g) in self.params.iter_mut().zip(buffer.grads) {
            if g.is_some() && !p.tensor.requires_grad() {
                return Err(Error::Frozen(p.name.clone()));
            }
            *p.tensor.grad_mut() = g;
        }
        Ok(())
    }

    /// SHA-256 over names, shapes and f64 bit patterns; hex encoded.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for p in &self.params {
            h.update(p.name.as_bytes());
            h.update([0u8]);
            h.update(p.tensor.to_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn cast<G: Real>(&self) -> ParamStore<G> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    tensor: p.tensor.cast(),
                })
                .collect(),
        }
    }
}

/// Tape handles of a bound [`ParamStore`], indexable by [`ParamId`].
#[derive(Clone, Debug)]
pub struct Bound(Vec<Var>);

impl Index<ParamId> for Bound {
    type Output = Var;

    fn index(&self, id: ParamId) -> &Var {
        &self.0[id.0]
    }
}

/// Per-parameter gradients, aligned with a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradBuffer<F: Real = f64> {
    grads: Vec<Option<Vec<F>>>,
}

impl<F: Real> GradBuffer<F> {
    pub fn empty(len: usize) -> Self {
        Self { grads: vec![None; len] }
    }

    pub fn get(&self, id: ParamId) -> Option<&[F]> {
        self.grads[id.0].as_deref()
    }

    /// Elementwise accumulation; order of calls fixes the floating point result.
    pub fn add_assign(&mut self, other: &GradBuffer<F>) {
        for (dst, src) in self.grads.iter_mut().zip(&other.grads) {
            if let Some(s) = src {
                match dst {
                    Some(d) => d.iter_mut().zip(s).for_each(|(a, &b)| *a += b),
                    None => *dst = Some(s.clone()),
                }
            }
        }
    }

    pub fn scale(&mut self, s: F) {
        for g in self.grads.iter_mut().flatten() {
            g.iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.grads.iter().flatten().all(|g| super::kernels::all_finite(g))
    }

    pub fn max_abs(&self) -> F {
        self.grads
            .iter()
            .flatten()
            .flat_map(|g| g.iter())
            .fold(F::zero(), |m, v| m.max(v.abs()))
    }
}
