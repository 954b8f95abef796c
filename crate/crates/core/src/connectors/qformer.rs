use rand::Rng;

use super::{QformerSpec, QuerySet};
use crate::error::{Error, Result};
use crate::numcore::{
    layers::Activation, Bound, FeedForward, Init, LayerNorm, Linear, MultiHeadAttention, ParamStore, Real, Tape, Var,
};

pub const QUERY_INIT_STD: f64 = 0.02;

#[derive(Clone, Debug)]
struct Block {
    norm_self: LayerNorm,
    self_attn: MultiHeadAttention,
    norm_cross: LayerNorm,
    cross_attn: MultiHeadAttention,
    norm_ffn: LayerNorm,
    ffn: FeedForward,
}

/// Trainable queries refined by pre-norm blocks of bidirectional
/// self-attention, cross-attention to `X` and a GELU feed-forward layer,
/// followed by a final norm and a projection to `d_t`.
#[derive(Clone, Debug)]
pub struct QFormer {
    pub queries: QuerySet,
    blocks: Vec<Block>,
    final_norm: LayerNorm,
    pub output: Linear,
    d_x: usize,
}

impl QFormer {
    pub fn new<F: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<F>,
        name: &str,
        d_x: usize,
        d_t: usize,
        spec: &QformerSpec,
        rng: &mut R,
    ) -> Result<Self> {
        let d_q = spec.d_query;
        let id = store.init(format!("{name}.queries"), spec.n_queries, d_q, Init::Normal(QUERY_INIT_STD), rng)?;
        let mut blocks = Vec::with_capacity(spec.n_blocks);
        for b in 0..spec.n_blocks {
            let p = format!("{name}.block{b}");
            blocks.push(Block {
                norm_self: LayerNorm::new(store, &format!("{p}.norm_self"), d_q, rng)?,
                self_attn: MultiHeadAttention::new(store, &format!("{p}.self"), d_q, d_q, d_q, d_q, d_q, spec.n_heads, rng)?,
                norm_cross: LayerNorm::new(store, &format!("{p}.norm_cross"), d_q, rng)?,
                cross_attn: MultiHeadAttention::new(store, &format!("{p}.cross"), d_q, d_x, d_x, d_q, d_q, spec.n_heads, rng)?,
                norm_ffn: LayerNorm::new(store, &format!("{p}.norm_ffn"), d_q, rng)?,
                ffn: FeedForward::new(store, &format!("{p}.ffn"), d_q, 4 * d_q, d_q, Activation::Gelu, rng)?,
            });
        }
        Ok(Self {
            queries: QuerySet {
                id,
                n_q: spec.n_queries,
                d_q,
            },
            blocks,
            final_norm: LayerNorm::new(store, &format!("{name}.final_norm"), d_q, rng)?,
            output: Linear::new(store, &format!("{name}.out"), d_q, d_t, rng)?,
            d_x,
        })
    }

    pub fn param_count(d_x: usize, d_t: usize, spec: &QformerSpec) -> usize {
        let d_q = spec.d_query;
        let block = 3 * LayerNorm::param_count(d_q)
            + MultiHeadAttention::param_count(d_q, d_q, d_q, d_q, d_q)
            + MultiHeadAttention::param_count(d_q, d_x, d_x, d_q, d_q)
            + FeedForward::param_count(d_q, 4 * d_q, d_q);
        spec.n_queries * d_q + spec.n_blocks * block + LayerNorm::param_count(d_q) + Linear::param_count(d_q, d_t)
    }

    pub fn n_queries(&self) -> usize {
        self.queries.n_q
    }

    /// Emits exactly `n_q` rows for any non-empty `x`.
    pub fn forward<F: Real>(&self, tape: &mut Tape<F>, bound: &Bound, x: Var) -> Result<Var> {
        let (n_x, d_x) = tape.shape(x);
        if n_x == 0 {
            return Err(Error::EmptyInput("Q-Former input has no frames"));
        }
        if d_x != self.d_x {
            return Err(Error::dim("qformer", &[self.d_x], &[d_x]));
        }
        let mut q = bound[self.queries.id];
        for b in &self.blocks {
            let h = b.norm_self.forward(tape, bound, q)?;
            let h = b.self_attn.forward(tape, bound, h, h, h, None)?;
            q = tape.add(q, h)?;
            let h = b.norm_cross.forward(tape, bound, q)?;
            let h = b.cross_attn.forward(tape, bound, h, x, x, None)?;
            q = tape.add(q, h)?;
            let h = b.norm_ffn.forward(tape, bound, q)?;
            let h = b.ffn.forward(tape, bound, h)?;
            q = tape.add(q, h)?;
        }
        let q = self.final_norm.forward(tape, bound, q)?;
        self.output.forward(tape, bound, q)
    }
}
