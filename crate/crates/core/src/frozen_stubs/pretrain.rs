use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::decoder::{DecoderConfig, ToyDecoder};
use crate::error::{Error, Result};
use crate::numcore::{par_map, warmup_cosine_lr, Adam, AdamConfig, GradBuffer, ParamStore, Tape};

/// Decoder pretraining mixes plain next-token prediction with an "echo"
/// objective, where the transcript is preceded by a prefix of noisy copies
/// of its own embeddings. The echo task gives the frozen decoder a way to
/// read a soft prefix, which connectors later learn to produce.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub warmup_steps: usize,
    pub echo_fraction: f64,
    pub echo_noise: f64,
    /// Longest text (in symbols) seen in pretraining.
    pub max_text_len: usize,
    pub max_prefix_len: usize,
    pub heldout_fraction: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            steps: 1500,
            batch_size: 16,
            learning_rate: 2e-3,
            warmup_steps: 100,
            echo_fraction: 0.75,
            echo_noise: 0.1,
            max_text_len: 96,
            max_prefix_len: 100,
            heldout_fraction: 0.1,
            seed: 11,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    pub steps: usize,
    /// `(step, mean token loss)` every 50 steps.
    pub log: Vec<(usize, f64)>,
    pub heldout_perplexity: f64,
    /// Perplexity of a uniform model, `V`.
    pub uniform_perplexity: f64,
    pub heldout_echo_accuracy: f64,
}

/// One pretraining example. `echo_rows` is the number of prefix rows (0 for
/// plain language modelling).
#[derive(Clone, Debug)]
struct Example {
    text: Vec<usize>,
    echo_rows: usize,
    noise_seed: u64,
}

struct Outcome {
    grads: Option<GradBuffer<f32>>,
    loss: f64,
    positions: usize,
    correct: usize,
}

/// Trains a [`ToyDecoder`] on `corpus` and returns it frozen.
pub fn pretrain_toy_lm(
    corpus: &[Vec<usize>],
    decoder: DecoderConfig,
    config: &PretrainConfig,
) -> Result<(ToyDecoder, PretrainReport)> {
    let corpus: Vec<Vec<usize>> = corpus.iter().filter(|t| !t.is_empty()).cloned().collect();
    if corpus.len() < 2 {
        return Err(Error::Config("pretraining corpus needs at least two transcripts".into()));
    }
    if config.max_text_len + 1 > decoder.max_positions || config.max_prefix_len > decoder.max_positions {
        return Err(Error::Config(format!(
            "pretraining lengths exceed the decoder's {} positions",
            decoder.max_positions
        )));
    }
    if config.max_prefix_len < config.max_text_len {
        return Err(Error::Config("max_prefix_len must be at least max_text_len".into()));
    }
    let n_held = ((corpus.len() as f64 * config.heldout_fraction).ceil() as usize).clamp(1, corpus.len() - 1);
    let (train, held) = corpus.split_at(corpus.len() - n_held);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut dec = ToyDecoder::new(decoder, &mut rng)?;
    let mut store: ParamStore<f32> = dec.store().cast();
    let mut adam = Adam::new(&store, AdamConfig::default());
    let mut log = Vec::new();
    let mut window = (0.0, 0usize);
    for step in 1..=config.steps {
        let batch: Vec<Example> = (0..config.batch_size).map(|_| sample(train, config, &mut rng)).collect();
        let outs = par_map(&batch, |ex| run(&dec, &store, ex, config, true))?;
        let mut grads = GradBuffer::empty(store.len());
        let (mut loss, mut positions) = (0.0, 0);
        for o in outs {
            if let Some(g) = o.grads {
                grads.add_assign(&g);
            }
            loss += o.loss;
            positions += o.positions;
        }
        if !loss.is_finite() {
            return Err(Error::NonFinite { op: "decoder pretraining loss" });
        }
        grads.scale(1.0 / positions as f32);
        store.set_grads(grads)?;
        let lr = warmup_cosine_lr(config.learning_rate, step, config.warmup_steps, config.steps, 0.1);
        adam.step(&mut store, lr);
        window.0 += loss / positions as f64;
        window.1 += 1;
        if step % 50 == 0 || step == config.steps {
            log.push((step, window.0 / window.1 as f64));
            window = (0.0, 0);
        }
    }
    store.zero_grad();
    for ((_, src), dst) in store.iter().zip(dec.store_mut().iter_mut()) {
        dst.tensor = src.tensor.cast();
    }
    dec.freeze();

    let heldout_perplexity = perplexity(&dec, held)?;
    let mut echo_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xec40);
    let echo: Vec<Example> = held
        .iter()
        .map(|t| {
            let text = t.clone();
            let rows = echo_rng.random_range(text.len()..=config.max_prefix_len.min(text.len() + 8));
            Example {
                text,
                echo_rows: rows,
                noise_seed: echo_rng.random(),
            }
        })
        .collect();
    let f32_store: ParamStore<f32> = dec.store().cast();
    let outs = par_map(&echo, |ex| run(&dec, &f32_store, ex, config, false))?;
    let (correct, total) = outs.iter().fold((0, 0), |(c, t), o| (c + o.correct, t + o.positions));
    let uniform_perplexity = dec.config.vocab as f64;
    Ok((
        dec,
        PretrainReport {
            steps: config.steps,
            log,
            heldout_perplexity,
            uniform_perplexity,
            heldout_echo_accuracy: correct as f64 / total as f64,
        },
    ))
}

/// Held-out next-token perplexity without any prefix.
pub fn perplexity(dec: &ToyDecoder, texts: &[Vec<usize>]) -> Result<f64> {
    if texts.is_empty() {
        return Err(Error::EmptyInput("perplexity texts"));
    }
    let per = par_map(texts, |t| {
        let mut tape = Tape::<f64>::new();
        let b = dec.store().bind(&mut tape);
        let tf = dec.teacher_forced(&mut tape, &b, None, t)?;
        Ok((tape.scalar(tf.loss_sum), tf.positions()))
    })?;
    let (loss, n) = per.iter().fold((0.0, 0), |(l, n), &(a, b)| (l + a, n + b));
    Ok((loss / n as f64).exp())
}

fn sample(train: &[Vec<usize>], config: &PretrainConfig, rng: &mut ChaCha8Rng) -> Example {
    let first = train.choose(rng).expect("non-empty corpus").clone();
    let text = if rng.random_bool(0.5) {
        first
    } else {
        let target = rng.random_range(1..=config.max_text_len);
        let mut text = first;
        while text.len() < target {
            text.extend_from_slice(train.choose(rng).expect("non-empty corpus"));
        }
        text.truncate(target);
        text
    };
    let text_len = text.len().min(config.max_text_len);
    let mut text = text;
    text.truncate(text_len);
    let echo_rows = if rng.random_bool(config.echo_fraction) {
        if rng.random_bool(0.3) {
            text_len
        } else {
            rng.random_range(text_len..=config.max_prefix_len)
        }
    } else {
        0
    };
    Example {
        text,
        echo_rows,
        noise_seed: rng.random(),
    }
}

fn run(dec: &ToyDecoder, store: &ParamStore<f32>, ex: &Example, config: &PretrainConfig, train: bool) -> Result<Outcome> {
    let mut tape = Tape::<f32>::new();
    let bound = store.bind(&mut tape);
    let prefix = if ex.echo_rows > 0 {
        let eos = dec.config.eos();
        let ids: Vec<usize> = (0..ex.echo_rows).map(|j| ex.text.get(j).copied().unwrap_or(eos)).collect();
        let rows = tape.gather_rows(bound[dec.embed_id()], &ids)?;
        let d = dec.config.d_t;
        let mut nrng = ChaCha8Rng::seed_from_u64(ex.noise_seed);
        let normal = Normal::new(0.0, config.echo_noise).map_err(|e| Error::Config(e.to_string()))?;
        let noise: Vec<f32> = (0..ids.len() * d).map(|_| normal.sample(&mut nrng) as f32).collect();
        let noise = tape.constant(ids.len(), d, noise)?;
        Some(tape.add(rows, noise)?)
    } else {
        None
    };
    let tf = dec.teacher_forced(&mut tape, &bound, prefix, &ex.text)?;
    let loss = tape.scalar(tf.loss_sum) as f64;
    let correct = tf.correct(&tape);
    let grads = if train {
        tape.backward(tf.loss_sum)?;
        Some(store.collect_grads(&tape, &bound))
    } else {
        None
    };
    Ok(Outcome {
        grads,
        loss,
        positions: tf.positions(),
        correct,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_corpus_is_rejected() {
        let cfg = PretrainConfig::default();
        assert!(matches!(
            pretrain_toy_lm(&[], DecoderConfig::toy(26), &cfg),
            Err(Error::Config(_))
        ));
    }
}
