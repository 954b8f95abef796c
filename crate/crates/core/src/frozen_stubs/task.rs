use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use super::encoder::{EncoderConfig, ToyEncoder};
use crate::connectors::FeatureSequence;
use crate::datapipe::{Source, UtteranceRecord};
use crate::error::{Error, Result};

/// Synthetic speech-like task: bigram symbol strings rendered as frames.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub n_symbols: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub frames_per_symbol: usize,
    pub noise_sigma: f64,
    pub d_x: usize,
    pub frame_rate_hz: f64,
    pub window_frames: usize,
    /// Scale of the window-relative position signal the encoder adds.
    pub position_scale: f64,
    /// Std of the bigram transition logits; 0 gives uniform transitions.
    pub bigram_sharpness: f64,
    pub seed: u64,
}

impl Default for TaskSpec {
    fn default() -> Self {
        Self {
            n_symbols: 24,
            min_len: 1,
            max_len: 12,
            frames_per_symbol: 10,
            noise_sigma: 0.5,
            d_x: 32,
            frame_rate_hz: 10.0,
            window_frames: 300,
            position_scale: 1.0,
            bigram_sharpness: 1.5,
            seed: 7,
        }
    }
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_symbols == 0 || self.n_symbols > 26 {
            return Err(Error::Config(format!("n_symbols must be in 1..=26, got {}", self.n_symbols)));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::Config(format!(
                "transcript lengths {}..={} are invalid",
                self.min_len, self.max_len
            )));
        }
        if self.frames_per_symbol == 0 || self.d_x == 0 || self.window_frames == 0 {
            return Err(Error::Config("frames_per_symbol, d_x and window_frames must be positive".into()));
        }
        if !(self.frame_rate_hz > 0.0) || !(self.noise_sigma >= 0.0) {
            return Err(Error::Config("frame rate must be positive and noise non-negative".into()));
        }
        Ok(())
    }

    pub fn vocab(&self) -> Vocab {
        Vocab {
            n_symbols: self.n_symbols,
        }
    }

    pub fn window_seconds(&self) -> f64 {
        self.window_frames as f64 / self.frame_rate_hz
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            d_x: self.d_x,
            n_symbols: self.n_symbols,
            frames_per_symbol: self.frames_per_symbol,
            noise_sigma: self.noise_sigma,
            window_frames: self.window_frames,
            frame_rate_hz: self.frame_rate_hz,
            position_scale: self.position_scale,
        }
    }
}

/// Symbols `0..n`, then BOS and EOS. Symbol `i` is written as the `i`-th
/// lowercase letter.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Vocab {
    pub n_symbols: usize,
}

impl Vocab {
    pub fn size(&self) -> usize {
        self.n_symbols + 2
    }

    pub fn bos(&self) -> usize {
        self.n_symbols
    }

    pub fn eos(&self) -> usize {
        self.n_symbols + 1
    }

    pub fn word(&self, id: usize) -> &'static str {
        const LETTERS: [&str; 26] = [
            "a", "b", "c", "d", "e", "f", "g", "h", "i", "j", "k", "l", "m", "n", "o", "p", "q", "r", "s", "t", "u",
            "v", "w", "x", "y", "z",
        ];
        LETTERS[id]
    }

    pub fn render(&self, ids: &[usize]) -> String {
        ids.iter().map(|&i| self.word(i)).collect::<Vec<_>>().join(" ")
    }

    pub fn parse(&self, text: &str) -> Result<Vec<usize>> {
        text.split_whitespace()
            .map(|w| {
                let b = w.as_bytes();
                if b.len() == 1 && b[0].is_ascii_lowercase() && ((b[0] - b'a') as usize) < self.n_symbols {
                    Ok((b[0] - b'a') as usize)
                } else {
                    Err(Error::Format(format!("`{w}` is not a task symbol")))
                }
            })
            .collect()
    }
}

/// A task instance: the frozen encoder plus the bigram text model.
#[derive(Clone, Debug)]
pub struct SyntheticTask {
    pub spec: TaskSpec,
    pub encoder: ToyEncoder,
    start: Vec<f64>,
    transitions: Vec<Vec<f64>>,
}

impl SyntheticTask {
    pub fn new(spec: TaskSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let encoder = ToyEncoder::new(spec.encoder_config(), &mut rng)?;
        let n = spec.n_symbols;
        let logit = Normal::new(0.0, spec.bigram_sharpness.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
        let transitions = (0..n)
            .map(|_| {
                let w: Vec<f64> = (0..n).map(|_| logit.sample(&mut rng).exp()).collect();
                let total: f64 = w.iter().sum();
                w.into_iter().map(|v| v / total).collect()
            })
            .collect();
        Ok(Self {
            start: vec![1.0 / n as f64; n],
            transitions,
            encoder,
            spec,
        })
    }

    pub fn vocab(&self) -> Vocab {
        self.spec.vocab()
    }

    /// Bigram transition probabilities out of `prev`.
    pub fn transition_row(&self, prev: usize) -> &[f64] {
        &self.transitions[prev]
    }

    /// Cross-entropy (nats per symbol) of the bigram source under its own model,
    /// averaged over the stationary start; a floor for any text model.
    pub fn bigram_entropy(&self) -> f64 {
        let rows: f64 = self
            .transitions
            .iter()
            .map(|row| -row.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>())
            .sum();
        rows / self.transitions.len() as f64
    }

    pub fn sample_symbols<R: Rng + ?Sized>(&self, len: usize, rng: &mut R) -> Vec<usize> {
        let mut out = Vec::with_capacity(len);
        let mut dist = WeightedIndex::new(&self.start).expect("start weights");
        for _ in 0..len {
            let s = dist.sample(rng);
            out.push(s);
            dist = WeightedIndex::new(&self.transitions[s]).expect("transition weights");
        }
        out
    }

    pub fn sample_transcript<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<usize> {
        let len = rng.random_range(self.spec.min_len..=self.spec.max_len);
        self.sample_symbols(len, rng)
    }

    /// Deterministic per-index generator: the same `(seed, index)` always
    /// yields the same utterance, independent of generation order.
    pub fn rng_for(&self, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.spec.seed ^ 0x5eed_0f_da7a);
        rng.set_stream(index);
        rng
    }

    /// Utterance number `index` of the task.
    pub fn utterance(&self, index: u64) -> (UtteranceRecord, FeatureSequence<f64>) {
        let mut rng = self.rng_for(index);
        let (mut record, x) = generate_utterance(self, &mut rng);
        record.id = format!("utt{index:06}");
        record.source = Source::Synthetic(index);
        (record, x)
    }

    /// Symbols of utterance `index` without rendering its features.
    pub fn transcript_of(&self, index: u64) -> Vec<usize> {
        let mut rng = self.rng_for(index);
        self.sample_transcript(&mut rng)
    }

    /// Features of a record from its source.
    pub fn features(&self, source: &Source) -> Result<FeatureSequence<f64>> {
        match source {
            Source::Synthetic(i) => Ok(self.utterance(*i).1),
            Source::Concat(ids) => {
                let parts: Vec<FeatureSequence<f64>> = ids.iter().map(|&i| self.utterance(i).1).collect();
                FeatureSequence::concat(&parts.iter().collect::<Vec<_>>())
            }
            Source::Features(path) => {
                let mut f = std::fs::File::open(path)?;
                let t = crate::numcore::Tensor::<f64>::read_from(&mut f)?;
                FeatureSequence::new(t.rows(), t.cols(), t.into_data(), self.spec.frame_rate_hz)
            }
            Source::Wav(path) => Err(Error::Config(format!(
                "{}: WAV sources need the log-mel front end, not the synthetic task",
                path.display()
            ))),
        }
    }
}

/// Draws a transcript and renders it through the encoder's symbol frames.
pub fn generate_utterance<R: Rng + ?Sized>(task: &SyntheticTask, rng: &mut R) -> (UtteranceRecord, FeatureSequence<f64>) {
    let symbols = task.sample_transcript(rng);
    let x = task.encoder.render(&symbols, rng);
    let record = UtteranceRecord {
        id: String::new(),
        source: Source::Synthetic(0),
        duration_seconds: x.duration_seconds(),
        transcript: task.vocab().render(&symbols),
        chapter_id: None,
        order_in_chapter: None,
    };
    (record, x)
}
