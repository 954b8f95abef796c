use rand::Rng;

use super::fc::stack_frames_var;
use crate::error::{Error, Result};
use crate::numcore::{Bound, Linear, MultiHeadAttention, ParamStore, Real, Tape, Var};

/// Strided convolution with kernel = stride = `s`, written as frame stacking
/// followed by `conv`. The tail window is zero-padded.
pub fn conv1d_downsample<F: Real>(tape: &mut Tape<F>, bound: &Bound, conv: &Linear, x: Var, s: usize) -> Result<Var> {
    let (_, d_x) = tape.shape(x);
    if conv.d_in != s * d_x {
        return Err(Error::dim("conv1d_downsample", &[s * d_x], &[conv.d_in]));
    }
    let h = stack_frames_var(tape, x, s)?;
    conv.forward(tape, bound, h)
}

/// Rearranges the weight of a linear layer over `s` stacked `d_x`-frames
/// into a `[c_out][d_x][s]` convolution kernel.
pub fn linear_as_conv_kernel<F: Real>(store: &ParamStore<F>, linear: &Linear, d_x: usize, s: usize) -> Vec<f64> {
    let w = store.get(linear.weight).data();
    let c_out = linear.d_out;
    let mut kernel = vec![0.0; c_out * d_x * s];
    for o in 0..c_out {
        for c in 0..d_x {
            for k in 0..s {
                kernel[(o * d_x + c) * s + k] = w[(k * d_x + c) * c_out + o].f64();
            }
        }
    }
    kernel
}

/// `H = Linear(Conv1d(X))`, then `T = MultiHead(H, E, E)`.
#[derive(Clone, Debug)]
pub struct CaConnector {
    pub downsample: usize,
    pub conv: Linear,
    pub proj: Linear,
    pub attention: MultiHeadAttention,
}

impl CaConnector {
    pub fn new<F: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        d_x: usize,
        d_t: usize,
        downsample: usize,
        n_heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            downsample,
            conv: Linear::new(store, "ca.conv", downsample * d_x, d_t, rng)?,
            proj: Linear::new(store, "ca.proj", d_t, d_t, rng)?,
            attention: MultiHeadAttention::new(store, "ca.attn", d_t, d_t, d_t, d_t, d_t, n_heads, rng)?,
        })
    }

    pub fn param_count(d_x: usize, d_t: usize, downsample: usize) -> usize {
        Linear::param_count(downsample * d_x, d_t)
            + Linear::param_count(d_t, d_t)
            + MultiHeadAttention::param_count(d_t, d_t, d_t, d_t, d_t)
    }

    /// `e` is the frozen `V × d_t` text embedding table.
    pub fn forward<F: Real>(&self, tape: &mut Tape<F>, bound: &Bound, x: Var, e: Var) -> Result<Var> {
        let (_, d_e) = tape.shape(e);
        if d_e != self.proj.d_out {
            return Err(Error::dim("ca_connector", &[self.proj.d_out], &[d_e]));
        }
        let h = conv1d_downsample(tape, bound, &self.conv, x, self.downsample)?;
        let h = self.proj.forward(tape, bound, h)?;
        self.attention.forward(tape, bound, h, e, e, None)
    }
}
