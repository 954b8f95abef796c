//! Parameterized building blocks recorded on a [`Tape`].

use rand::Rng;

use super::kernels;
use super::{Bound, Init, ParamId, ParamStore, Real, Tape, Var};
use crate::error::{Error, Result};

pub const LAYERNORM_EPS: f64 = 1e-5;

/// `y = x·W + b` with `W` stored `in×out`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new<F: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        name: &str,
        d_in: usize,
        d_out: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if d_in == 0 || d_out == 0 {
            return Err(Error::Config(format!("{name}: linear dims must be positive ({d_in}→{d_out})")));
        }
        Ok(Self {
            weight: store.init(format!("{name}.weight"), d_in, d_out, Init::FanIn, rng)?,
            bias: store.init(format!("{name}.bias"), 1, d_out, Init::Zeros, rng)?,
            d_in,
            d_out,
        })
    }

    pub fn param_count(d_in: usize, d_out: usize) -> usize {
        d_in * d_out + d_out
    }

    pub fn forward<F: Real>(&self, tape: &mut Tape<F>, bound: &Bound, x: Var) -> Result<Var> {
        let y = tape.matmul(x, bound[self.weight])?;
        tape.add_row(y, bound[self.bias])
    }

    /// Tape-free evaluation on `rows × d_in` data.
    pub fn apply<F: Real>(&self, store: &ParamStore<F>, x: &[F], rows: usize) -> Vec<F> {
        let mut out = vec![F::zero(); rows * self.d_out];
        kernels::matmul(x, store.get(self.weight).data(), &mut out, rows, self.d_in, self.d_out, false, false, false);
        let b = store.get(self.bias).data();
        for row in out.chunks_exact_mut(self.d_out) {
            row.iter_mut().zip(b).for_each(|(v, &bb)| *v += bb);
        }
        out
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
    pub dim: usize,
}

impl LayerNorm {
    pub fn new<F: Real, R: Rng + ?Sized>(store: &mut ParamStore<F>, name: &str, dim: usize, rng: &mut R) -> Result<Self> {
        Ok(Self {
            gain: store.init(format!("{name}.gain"), 1, dim, Init::Ones, rng)?,
            bias: store.init(format!("{name}.bias"), 1, dim, Init::Zeros, rng)?,
            dim,
        })
    }

    pub fn param_count(dim: usize) -> usize {
        2 * dim
    }

    pub fn forward<F: Real>(&self, tape: &mut Tape<F>, bound: &Bound, x: Var) -> Result<Var> {
        tape.layernorm(x, bound[self.gain], bound[self.bias], F::c(LAYERNORM_EPS))
    }

    pub fn apply<F: Real>(&self, store: &ParamStore<F>, x: &[F]) -> Vec<F> {
        let g = store.get(self.gain).data();
        let b = store.get(self.bias).data();
        let mut out = vec![F::zero(); x.len()];
        for (src, dst) in x.chunks_exact(self.dim).zip(out.chunks_exact_mut(self.dim)) {
            kernels::normalize_row(src, dst, F::c(LAYERNORM_EPS));
            for j in 0..self.dim {
                dst[j] = dst[j] * g[j] + b[j];
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Gelu,
}

/// Position-wise two-layer MLP.
#[derive(Clone, Copy, Debug)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
    pub activation: Activation,
}

impl FeedForward {
    pub fn new<F: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        name: &str,
        d_in: usize,
        hidden: usize,
        d_out: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            up: Linear::new(store, &format!("{name}.up"), d_in, hidden, rng)?,
            down: Linear::new(store, &format!("{name}.down"), hidden, d_out, rng)?,
            activation,
        })
    }

    pub fn param_count(d_in: usize, hidden: usize, d_out: usize) -> usize {
        Linear::param_count(d_in, hidden) + Linear::param_count(hidden, d_out)
    }

    pub fn forward<F: Real>(&self, tape: &mut Tape<F>, bound: &Bound, x: Var) -> Result<Var> {
        let h = self.up.forward(tape, bound, x)?;
        let h = match self.activation {
            Activation::Relu => tape.relu(h)?,
            Activation::Gelu => tape.gelu(h)?,
        };
        self.down.forward(tape, bound, h)
    }

    pub fn apply<F: Real>(&self, store: &ParamStore<F>, x: &[F], rows: usize) -> Vec<F> {
        let mut h = self.up.apply(store, x, rows);
        match self.activation {
            Activation::Relu => h.iter_mut().for_each(|v| *v = v.max(F::zero())),
            Activation::Gelu => h.iter_mut().for_each(|v| *v = kernels::gelu(*v)),
        }
        self.down.apply(store, &h, rows)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct KeyProjection {
    pub weight: ParamId,
}

/// Scaled dot-product attention with learned query/key/value/output
/// projections. No causal structure is imposed unless a mask is supplied.
///
/// The key projection has no bias: a shared offset on every score of a row
/// cancels in the softmax, so such a bias would never receive gradient.
#[derive(Clone, Copy, Debug)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: KeyProjection,
    pub value: Linear,
    pub output: Linear,
    pub n_heads: usize,
    pub d_model: usize,
}

impl MultiHeadAttention {
    #[allow(clippy::too_many_arguments)]
    pub fn new<F: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        name: &str,
        d_query: usize,
        d_key: usize,
        d_value: usize,
        d_model: usize,
        d_out: usize,
        n_heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if n_heads == 0 || d_model % n_heads != 0 {
            return Err(Error::Config(format!(
                "{name}: {n_heads} heads do not divide model dim {d_model}"
            )));
        }
        Ok(Self {
            query: Linear::new(store, &format!("{name}.q"), d_query, d_model, rng)?,
            key: KeyProjection {
                weight: store.init(format!("{name}.k.weight"), d_key, d_model, Init::FanIn, rng)?,
            },
            value: Linear::new(store, &format!("{name}.v"), d_value, d_model, rng)?,
            output: Linear::new(store, &format!("{name}.o"), d_model, d_out, rng)?,
            n_heads,
            d_model,
        })
    }

    pub fn param_count(d_query: usize, d_key: usize, d_value: usize, d_model: usize, d_out: usize) -> usize {
        Linear::param_count(d_query, d_model)
            + d_key * d_model
            + Linear::param_count(d_value, d_model)
            + Linear::param_count(d_model, d_out)
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn forward<F: Real>(
        &self,
        tape: &mut Tape<F>,
        bound: &Bound,
        query: Var,
        key: Var,
        value: Var,
        mask: Option<&[bool]>,
    ) -> Result<Var> {
        Ok(self.forward_with_weights(tape, bound, query, key, value, mask)?.0)
    }

    /// Also returns the per-head attention probability matrices (`a×b`).
    pub fn forward_with_weights<F: Real>(
        &self,
        tape: &mut Tape<F>,
        bound: &Bound,
        query: Var,
        key: Var,
        value: Var,
        mask: Option<&[bool]>,
    ) -> Result<(Var, Vec<Var>)> {
        let (kr, _) = tape.shape(key);
        let (vr, _) = tape.shape(value);
        if kr != vr {
            return Err(Error::dim("multi_head_attention", &[kr], &[vr]));
        }
        let q = self.query.forward(tape, bound, query)?;
        let q = tape.scale(q, F::one() / F::c(self.head_dim() as f64).sqrt())?;
        let k = tape.matmul(key, bound[self.key.weight])?;
        let v = self.value.forward(tape, bound, value)?;
        let (mixed, weights) = self.attend(tape, q, k, v, mask)?;
        Ok((self.output.forward(tape, bound, mixed)?, weights))
    }

    /// Attention over already-projected (and pre-scaled) queries.
    fn attend<F: Real>(
        &self,
        tape: &mut Tape<F>,
        q: Var,
        k: Var,
        v: Var,
        mask: Option<&[bool]>,
    ) -> Result<(Var, Vec<Var>)> {
        let dh = self.head_dim();
        if self.n_heads == 1 {
            let scores = tape.matmul_nt(q, k)?;
            let p = match mask {
                Some(m) => tape.softmax_rows_masked(scores, m)?,
                None => tape.softmax_rows(scores)?,
            };
            return Ok((tape.matmul(p, v)?, vec![p]));
        }
        let mut heads = Vec::with_capacity(self.n_heads);
        let mut weights = Vec::with_capacity(self.n_heads);
        for h in 0..self.n_heads {
            let qh = tape.slice_cols(q, h * dh, dh)?;
            let kh = tape.slice_cols(k, h * dh, dh)?;
            let vh = tape.slice_cols(v, h * dh, dh)?;
            let scores = tape.matmul_nt(qh, kh)?;
            let p = match mask {
                Some(m) => tape.softmax_rows_masked(scores, m)?,
                None => tape.softmax_rows(scores)?,
            };
            heads.push(tape.matmul(p, vh)?);
            weights.push(p);
        }
        Ok((tape.concat_cols(&heads)?, weights))
    }
}
