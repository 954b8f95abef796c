use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::connectors::FeatureSequence;
use crate::error::{Error, Result};
use crate::numcore::{kernels, ParamId, ParamStore, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub d_x: usize,
    pub n_symbols: usize,
    pub frames_per_symbol: usize,
    pub noise_sigma: f64,
    pub window_frames: usize,
    pub frame_rate_hz: f64,
    pub position_scale: f64,
}

/// Frozen stand-in for a pretrained speech encoder with a fixed input window.
///
/// Each symbol becomes `r` noisy copies of its embedding, rotated by a fixed
/// orthogonal matrix. [`ToyEncoder::encode`] then zero-pads to whole windows
/// and adds a window-relative position signal, so padded frames are not
/// silent: they look like "position t of an empty window".
#[derive(Clone, Debug)]
pub struct ToyEncoder {
    pub config: EncoderConfig,
    store: ParamStore<f64>,
    embed: ParamId,
    mixing: ParamId,
}

impl ToyEncoder {
    pub fn new<R: Rng + ?Sized>(config: EncoderConfig, rng: &mut R) -> Result<Self> {
        let d = config.d_x;
        let embed: Vec<f64> = (0..config.n_symbols * d).map(|_| StandardNormal.sample(rng)).collect();
        let embed = Tensor::matrix(config.n_symbols, d, embed)?;
        let mixing = random_orthogonal(d, rng);
        Self::from_parts(config, embed, mixing)
    }

    pub fn from_parts(config: EncoderConfig, embed: Tensor<f64>, mixing: Tensor<f64>) -> Result<Self> {
        if embed.shape() != [config.n_symbols, config.d_x] || mixing.shape() != [config.d_x, config.d_x] {
            return Err(Error::dim("toy_encoder", embed.shape(), mixing.shape()));
        }
        let mut store = ParamStore::new();
        let embed = store.add("encoder.symbol_embed", embed)?;
        let mixing = store.add("encoder.mixing", mixing)?;
        store.freeze_all();
        Ok(Self {
            config,
            store,
            embed,
            mixing,
        })
    }

    pub fn store(&self) -> &ParamStore<f64> {
        &self.store
    }

    pub fn fingerprint(&self) -> String {
        self.store.fingerprint()
    }

    pub fn symbol_embedding(&self) -> &Tensor<f64> {
        self.store.get(self.embed)
    }

    /// Raw frames of a symbol string, before windowing.
    pub fn render<R: Rng + ?Sized>(&self, symbols: &[usize], rng: &mut R) -> FeatureSequence<f64> {
        let c = &self.config;
        let d = c.d_x;
        let n = symbols.len() * c.frames_per_symbol;
        let noise = Normal::new(0.0, c.noise_sigma).expect("validated sigma");
        let table = self.store.get(self.embed).data();
        let mut raw = Vec::with_capacity(n * d);
        for &s in symbols {
            for _ in 0..c.frames_per_symbol {
                raw.extend(table[s * d..(s + 1) * d].iter().map(|&v| {
                    if c.noise_sigma > 0.0 {
                        v + noise.sample(rng)
                    } else {
                        v
                    }
                }));
            }
        }
        let mut out = vec![0.0; n * d];
        kernels::matmul(&raw, self.store.get(self.mixing).data(), &mut out, n, d, d, false, false, false);
        FeatureSequence::new(n, d, out, c.frame_rate_hz).expect("shape by construction")
    }

    /// Pads to a whole number of windows and adds the position signal.
    pub fn encode(&self, x: &FeatureSequence<f64>) -> Result<FeatureSequence<f64>> {
        if x.n_x() == 0 {
            return Err(Error::EmptyInput("encoder input has no frames"));
        }
        let c = &self.config;
        if x.d_x() != c.d_x {
            return Err(Error::dim("toy_encoder", &[c.d_x], &[x.d_x()]));
        }
        let w = c.window_frames;
        let n = x.n_x().div_ceil(w) * w;
        let mut data = x.data().to_vec();
        data.resize(n * c.d_x, 0.0);
        if c.position_scale != 0.0 {
            let table: Vec<Vec<f64>> = (0..w).map(|t| kernels::sinusoid(t as f64, c.d_x)).collect();
            for (t, row) in data.chunks_exact_mut(c.d_x).enumerate() {
                row.iter_mut()
                    .zip(&table[t % w])
                    .for_each(|(v, p)| *v += c.position_scale * p);
            }
        }
        FeatureSequence::new(n, c.d_x, data, c.frame_rate_hz)
    }
}

/// Gram–Schmidt on a Gaussian matrix; rows are orthonormal.
pub fn random_orthogonal<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Tensor<f64> {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(d);
    while rows.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        for r in &rows {
            let dot: f64 = v.iter().zip(r).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(r).for_each(|(a, b)| *a -= dot * b);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-6 {
            rows.push(v.into_iter().map(|a| a / norm).collect());
        }
    }
    Tensor::from_rows(&rows).expect("square by construction")
}
