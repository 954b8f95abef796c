use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::layers::Activation;
use crate::numcore::{
    kernels, Bound, FeedForward, Init, LayerNorm, MultiHeadAttention, ParamId, ParamStore, Real, Tape, Tensor, Var,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub vocab: usize,
    pub d_t: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    /// Longest prefix and longest text input, each counted separately.
    pub max_positions: usize,
    pub position_scale: f64,
    pub embed_std: f64,
}

impl DecoderConfig {
    pub fn toy(vocab: usize) -> Self {
        Self {
            vocab,
            d_t: 64,
            n_layers: 2,
            n_heads: 4,
            d_ff: 256,
            max_positions: 128,
            position_scale: 1.0,
            embed_std: 0.5,
        }
    }

    pub fn bos(&self) -> usize {
        self.vocab - 2
    }

    pub fn eos(&self) -> usize {
        self.vocab - 1
    }
}

#[derive(Clone, Debug)]
struct Layer {
    norm_attn: LayerNorm,
    attn: MultiHeadAttention,
    norm_ffn: LayerNorm,
    ffn: FeedForward,
}

/// Small pre-norm Transformer LM with logits tied to its embedding table.
///
/// Input rows are `[speech prefix] ++ [BOS, t_1, ..]`. Prefix rows and text
/// rows each count positions from 0 and carry a learned type vector. Prefix
/// rows see each other; text rows see the whole prefix and earlier text.
#[derive(Clone, Debug)]
pub struct ToyDecoder {
    pub config: DecoderConfig,
    store: ParamStore<f64>,
    embed: ParamId,
    types: ParamId,
    layers: Vec<Layer>,
    final_norm: LayerNorm,
    positions: Vec<f64>,
}

/// Teacher-forced pass over one transcript.
#[derive(Clone, Debug)]
pub struct TeacherForced {
    /// Summed token cross-entropy (`1×1`).
    pub loss_sum: Var,
    pub logits: Var,
    pub targets: Vec<usize>,
}

impl TeacherForced {
    pub fn positions(&self) -> usize {
        self.targets.len()
    }

    /// Number of positions whose argmax (lowest id on ties) is the target.
    pub fn correct<F: Real>(&self, tape: &Tape<F>) -> usize {
        let (_, v) = tape.shape(self.logits);
        tape.value(self.logits)
            .chunks_exact(v)
            .zip(&self.targets)
            .filter(|(row, &t)| argmax(row) == t)
            .count()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decoded {
    pub tokens: Vec<usize>,
    pub truncated: bool,
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax<F: Real>(row: &[F]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

impl ToyDecoder {
    pub fn new<R: Rng + ?Sized>(config: DecoderConfig, rng: &mut R) -> Result<Self> {
        if config.vocab < 3 || config.n_layers == 0 || config.max_positions == 0 {
            return Err(Error::Config(format!("invalid decoder config {config:?}")));
        }
        let d = config.d_t;
        let mut store = ParamStore::new();
        let embed = store.init("decoder.embed", config.vocab, d, Init::Normal(config.embed_std), rng)?;
        let types = store.init("decoder.types", 2, d, Init::Normal(0.1), rng)?;
        let mut layers = Vec::with_capacity(config.n_layers);
        for l in 0..config.n_layers {
            let p = format!("decoder.layer{l}");
            layers.push(Layer {
                norm_attn: LayerNorm::new(&mut store, &format!("{p}.norm_attn"), d, rng)?,
                attn: MultiHeadAttention::new(&mut store, &format!("{p}.attn"), d, d, d, d, d, config.n_heads, rng)?,
                norm_ffn: LayerNorm::new(&mut store, &format!("{p}.norm_ffn"), d, rng)?,
                ffn: FeedForward::new(&mut store, &format!("{p}.ffn"), d, config.d_ff, d, Activation::Gelu, rng)?,
            });
        }
        let final_norm = LayerNorm::new(&mut store, "decoder.final_norm", d, rng)?;
        let positions = (0..config.max_positions)
            .flat_map(|t| kernels::sinusoid(t as f64, d).into_iter().map(|v| v * config.position_scale))
            .collect();
        Ok(Self {
            config,
            store,
            embed,
            types,
            layers,
            final_norm,
            positions,
        })
    }

    /// Rebuilds a decoder around parameters loaded from disk.
    pub fn from_store(config: DecoderConfig, store: ParamStore<f64>) -> Result<Self> {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let mut dec = Self::new(config, &mut rng)?;
        if dec.store.len() != store.len() {
            return Err(Error::Format(format!(
                "decoder expects {} tensors, found {}",
                dec.store.len(),
                store.len()
            )));
        }
        for ((_, a), (_, b)) in dec.store.iter().zip(store.iter()) {
            if a.name != b.name || a.tensor.shape() != b.tensor.shape() {
                return Err(Error::Format(format!("decoder tensor mismatch at `{}`", b.name)));
            }
        }
        dec.store = store;
        Ok(dec)
    }

    pub fn store(&self) -> &ParamStore<f64> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<f64> {
        &mut self.store
    }

    pub fn freeze(&mut self) {
        self.store.freeze_all();
    }

    pub fn is_frozen(&self) -> bool {
        self.store.is_frozen()
    }

    pub fn fingerprint(&self) -> String {
        self.store.fingerprint()
    }

    pub fn embed_id(&self) -> ParamId {
        self.embed
    }

    /// The frozen text embedding table `E` (`V × d_t`).
    pub fn text_embeddings(&self) -> &Tensor<f64> {
        self.store.get(self.embed)
    }

    fn position_rows<F: Real>(&self, n: usize) -> Vec<F> {
        self.positions[..n * self.config.d_t].iter().map(|&v| F::c(v)).collect()
    }

    fn check_lengths(&self, prefix: usize, text: usize) -> Result<()> {
        let limit = self.config.max_positions;
        if prefix > limit {
            return Err(Error::Length { len: prefix, limit });
        }
        if text > limit {
            return Err(Error::Length { len: text, limit });
        }
        Ok(())
    }

    /// Logits (`inputs.len() × V`) for the text rows.
    pub fn logits<F: Real>(&self, tape: &mut Tape<F>, bound: &Bound, prefix: Option<Var>, inputs: &[usize]) -> Result<Var> {
        let d = self.config.d_t;
        let m = inputs.len();
        if m == 0 {
            return Err(Error::EmptyInput("decoder text inputs"));
        }
        let p = match prefix {
            Some(v) => {
                let (rows, cols) = tape.shape(v);
                if cols != d {
                    return Err(Error::dim("decoder prefix", &[rows, d], &[rows, cols]));
                }
                rows
            }
            None => 0,
        };
        self.check_lengths(p, m)?;
        let e = bound[self.embed];
        let types = bound[self.types];
        let text = tape.gather_rows(e, inputs)?;
        let pos = tape.constant(m, d, self.position_rows(m))?;
        let text = tape.add(text, pos)?;
        let t1 = tape.slice_rows(types, 1, 1)?;
        let text = tape.add_row(text, t1)?;
        let mut x = match prefix {
            Some(pv) if p > 0 => {
                let pos = tape.constant(p, d, self.position_rows(p))?;
                let h = tape.add(pv, pos)?;
                let t0 = tape.slice_rows(types, 0, 1)?;
                let h = tape.add_row(h, t0)?;
                tape.concat_rows(&[h, text])?
            }
            _ => text,
        };
        let n = p + m;
        let mask: Vec<bool> = (0..n * n)
            .map(|idx| {
                let (i, j) = (idx / n, idx % n);
                j < p || (i >= p && j <= i)
            })
            .collect();
        for layer in &self.layers {
            let h = layer.norm_attn.forward(tape, bound, x)?;
            let h = layer.attn.forward(tape, bound, h, h, h, Some(&mask))?;
            x = tape.add(x, h)?;
            let h = layer.norm_ffn.forward(tape, bound, x)?;
            let h = layer.ffn.forward(tape, bound, h)?;
            x = tape.add(x, h)?;
        }
        let x = if p > 0 { tape.slice_rows(x, p, m)? } else { x };
        let h = self.final_norm.forward(tape, bound, x)?;
        tape.matmul_nt(h, e)
    }

    /// Inputs `[BOS] ++ transcript`, targets `transcript ++ [EOS]`.
    pub fn teacher_forced<F: Real>(
        &self,
        tape: &mut Tape<F>,
        bound: &Bound,
        prefix: Option<Var>,
        transcript: &[usize],
    ) -> Result<TeacherForced> {
        self.teacher_forced_padded(tape, bound, prefix, transcript, transcript.len() + 1)
    }

    /// [`Self::teacher_forced`] with the target sequence padded by EOS to
    /// `padded_len` positions. Padding carries zero loss weight.
    pub fn teacher_forced_padded<F: Real>(
        &self,
        tape: &mut Tape<F>,
        bound: &Bound,
        prefix: Option<Var>,
        transcript: &[usize],
        padded_len: usize,
    ) -> Result<TeacherForced> {
        if transcript.is_empty() {
            return Err(Error::EmptyInput("transcript"));
        }
        if let Some(&bad) = transcript.iter().find(|&&t| t >= self.config.bos()) {
            return Err(Error::Config(format!("token {bad} is not a transcript symbol")));
        }
        let real = transcript.len() + 1;
        if padded_len < real {
            return Err(Error::Length {
                len: real,
                limit: padded_len,
            });
        }
        let eos = self.config.eos();
        let mut inputs = Vec::with_capacity(padded_len);
        inputs.push(self.config.bos());
        inputs.extend_from_slice(transcript);
        inputs.resize(padded_len, eos);
        let mut targets = transcript.to_vec();
        targets.push(eos);
        let mut padded_targets = targets.clone();
        padded_targets.resize(padded_len, eos);
        let weights: Vec<F> = (0..padded_len).map(|i| if i < real { F::one() } else { F::zero() }).collect();
        let logits = self.logits(tape, bound, prefix, &inputs)?;
        let loss_sum = tape.cross_entropy(logits, &padded_targets, &weights)?;
        Ok(TeacherForced {
            loss_sum,
            logits,
            targets,
        })
    }

    /// Greedy decoding from BOS until EOS or `max_len` symbols, with cached
    /// keys and values. `store` may be this decoder's store or a cast of it.
    pub fn greedy_decode<F: Real>(&self, store: &ParamStore<F>, prefix: Option<&Tensor<F>>, max_len: usize) -> Result<Decoded> {
        let d = self.config.d_t;
        let p = prefix.map_or(0, |t| t.rows());
        if let Some(t) = prefix {
            if t.cols() != d {
                return Err(Error::dim("decoder prefix", &[p, d], t.shape()));
            }
        }
        self.check_lengths(p, max_len.min(self.config.max_positions))?;
        let mut caches: Vec<(Vec<F>, Vec<F>)> = vec![(Vec::new(), Vec::new()); self.layers.len()];
        let types = store.get(self.types).data();
        if let Some(t) = prefix {
            let mut h = t.data().to_vec();
            for (i, row) in h.chunks_exact_mut(d).enumerate() {
                for c in 0..d {
                    row[c] += F::c(self.positions[i * d + c]) + types[c];
                }
            }
            for (layer, cache) in self.layers.iter().zip(&mut caches) {
                h = self.layer_step(store, layer, cache, h, p);
            }
        }
        let table = store.get(self.embed).data();
        let mut tokens = Vec::new();
        let mut current = self.config.bos();
        loop {
            if tokens.len() == max_len {
                return Ok(Decoded { tokens, truncated: true });
            }
            let pos = tokens.len();
            if pos >= self.config.max_positions {
                return Ok(Decoded { tokens, truncated: true });
            }
            let mut h: Vec<F> = (0..d)
                .map(|c| table[current * d + c] + F::c(self.positions[pos * d + c]) + types[d + c])
                .collect();
            for (layer, cache) in self.layers.iter().zip(&mut caches) {
                h = self.layer_step(store, layer, cache, h, 1);
            }
            let h = self.final_norm.apply(store, &h);
            let mut logits = vec![F::zero(); self.config.vocab];
            kernels::matmul(&h, table, &mut logits, 1, d, self.config.vocab, false, true, false);
            let next = argmax(&logits);
            if next == self.config.eos() {
                return Ok(Decoded { tokens, truncated: false });
            }
            tokens.push(next);
            current = next;
        }
    }

    /// One layer over `rows` new rows, which attend to everything cached so
    /// far: the whole prefix, earlier text, and themselves.
    fn layer_step<F: Real>(
        &self,
        store: &ParamStore<F>,
        layer: &Layer,
        cache: &mut (Vec<F>, Vec<F>),
        mut h: Vec<F>,
        rows: usize,
    ) -> Vec<F> {
        let d = self.config.d_t;
        let a = layer.norm_attn.apply(store, &h);
        let mha = &layer.attn;
        let mut q = mha.query.apply(store, &a, rows);
        let scale = F::one() / F::c(mha.head_dim() as f64).sqrt();
        q.iter_mut().for_each(|v| *v *= scale);
        let mut k = vec![F::zero(); rows * d];
        kernels::matmul(&a, store.get(mha.key.weight).data(), &mut k, rows, d, d, false, false, false);
        let v = mha.value.apply(store, &a, rows);
        cache.0.extend_from_slice(&k);
        cache.1.extend_from_slice(&v);
        let keys = cache.0.len() / d;
        let mixed = attend(&q, &cache.0, &cache.1, rows, keys, d, mha.n_heads);
        let o = mha.output.apply(store, &mixed, rows);
        h.iter_mut().zip(&o).for_each(|(x, y)| *x += *y);
        let f = layer.ffn.apply(store, &layer.norm_ffn.apply(store, &h), rows);
        h.iter_mut().zip(&f).for_each(|(x, y)| *x += *y);
        h
    }
}

/// Unmasked multi-head attention of `a` query rows over `b` keys.
fn attend<F: Real>(q: &[F], k: &[F], v: &[F], a: usize, b: usize, d: usize, heads: usize) -> Vec<F> {
    let dh = d / heads;
    let mut out = vec![F::zero(); a * d];
    let mut scores = vec![F::zero(); b];
    let mut probs = vec![F::zero(); b];
    for i in 0..a {
        for h in 0..heads {
            let qi = &q[i * d + h * dh..i * d + (h + 1) * dh];
            for j in 0..b {
                let kj = &k[j * d + h * dh..j * d + (h + 1) * dh];
                scores[j] = qi.iter().zip(kj).map(|(x, y)| *x * *y).sum();
            }
            kernels::softmax_row(&scores, &mut probs, None);
            let o = &mut out[i * d + h * dh..i * d + (h + 1) * dh];
            for j in 0..b {
                let vj = &v[j * d + h * dh..j * d + (h + 1) * dh];
                o.iter_mut().zip(vj).for_each(|(x, y)| *x += probs[j] * *y);
            }
        }
    }
    out
}
