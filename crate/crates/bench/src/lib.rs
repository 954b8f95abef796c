//! Inputs shared by the benchmarks, at the toy task's dimensions.

use bridgekit::connectors::{Connector, ConnectorConfig, ConnectorSpec, FeatureSequence, QformerSpec};
use bridgekit::{ParamStore, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const D_X: usize = 32;
pub const D_T: usize = 64;
pub const WINDOW: usize = 300;

pub fn features(n_x: usize, seed: u64) -> FeatureSequence<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..n_x * D_X).map(|_| rng.random_range(-1.0..1.0)).collect();
    FeatureSequence::new(n_x, D_X, data, 10.0).expect("consistent shape")
}

pub fn text_embeddings(vocab: usize, seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut e = Tensor::matrix(vocab, D_T, (0..vocab * D_T).map(|_| rng.random_range(-1.0..1.0)).collect())
        .expect("consistent shape");
    e.freeze();
    e
}

fn qformer(n_queries: usize) -> QformerSpec {
    QformerSpec {
        n_queries,
        d_query: D_X,
        n_blocks: 2,
        n_heads: 4,
    }
}

/// The four connectors with their toy defaults.
pub fn toy_connectors() -> Vec<(&'static str, ConnectorConfig)> {
    [
        ("fc", ConnectorSpec::Fc { stack: 10, hidden: 4 * D_T }),
        ("ca", ConnectorSpec::Ca { downsample: 10, n_heads: 4 }),
        ("qf", ConnectorSpec::Qf(qformer(16))),
        (
            "segqf",
            ConnectorSpec::SegQf {
                qformer: qformer(16),
                segment_len: WINDOW,
                segment_pe: true,
            },
        ),
    ]
    .into_iter()
    .map(|(name, spec)| (name, ConnectorConfig { d_x: D_X, d_t: D_T, spec }))
    .collect()
}

pub fn build(config: &ConnectorConfig, seed: u64) -> (Connector, ParamStore<f32>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let conn = Connector::new(config, &mut store, &mut rng).expect("valid toy config");
    (conn, store)
}

/// Two symbol sequences of `n` words that differ in about a fifth of places.
pub fn word_pair(n: usize, seed: u64) -> (Vec<u32>, Vec<u32>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let reference: Vec<u32> = (0..n).map(|_| rng.random_range(0..24)).collect();
    let mut hypothesis = Vec::with_capacity(n);
    for &w in &reference {
        match rng.random_range(0..15) {
            0 => {}
            1 => {
                hypothesis.push(w);
                hypothesis.push(rng.random_range(0..24));
            }
            2 => hypothesis.push(rng.random_range(0..24)),
            _ => hypothesis.push(w),
        }
    }
    (reference, hypothesis)
}

/// `seconds` of a 440 Hz tone with a little noise, as 16-bit samples.
pub fn tone(seconds: f64, seed: u64) -> Vec<i16> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (seconds * 16_000.0) as usize;
    (0..n)
        .map(|i| {
            let t = i as f64 / 16_000.0;
            let v = 0.5 * (2.0 * std::f64::consts::PI * 440.0 * t).sin() + rng.random_range(-0.05..0.05);
            (v * i16::MAX as f64) as i16
        })
        .collect()
}
