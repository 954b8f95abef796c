//! Connectors that compress encoder features `X` (`n_x × d_x`) into speech
//! tokens (`n_t × d_t`) consumed by the frozen decoder as a soft prefix.
//!
//! Four architectures are provided:
//!
//! * [`FcConnector`]: frame stacking followed by `Linear(ReLU(Linear(H)))`.
//! * [`CaConnector`]: strided convolution, a linear map, then multi-head
//!   attention with the decoder's frozen text embeddings as keys and values.
//! * [`QFormer`]: trainable queries passing through blocks of bidirectional
//!   self-attention, cross-attention to `X` and a feed-forward layer.
//! * [`SegQFormer`]: one shared Q-Former applied to fixed-length segments of
//!   `X`, each shifted by a sinusoid segment embedding, outputs concatenated.

mod ca;
mod fc;
mod qformer;
mod segment;
mod types;

pub use ca::{conv1d_downsample, linear_as_conv_kernel, CaConnector};
pub use fc::{stack_frames, stack_frames_var, FcConnector};
pub use qformer::QFormer;
pub use segment::{segment_pe, segment_split, segment_split_var, SegQFormer};
pub use types::{FeatureSequence, HiddenSequence, QuerySet, SpeechTokens};

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{Bound, ParamStore, Real, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConnectorKind {
    Fc,
    Ca,
    Qf,
    SegQf,
}

impl ConnectorKind {
    pub fn label(self) -> &'static str {
        match self {
            ConnectorKind::Fc => "FC",
            ConnectorKind::Ca => "CA",
            ConnectorKind::Qf => "QF",
            ConnectorKind::SegQf => "Seg-QF",
        }
    }
}

impl std::str::FromStr for ConnectorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fc" => Ok(ConnectorKind::Fc),
            "ca" => Ok(ConnectorKind::Ca),
            "qf" => Ok(ConnectorKind::Qf),
            "segqf" | "seg-qf" | "seg_qf" => Ok(ConnectorKind::SegQf),
            other => Err(Error::Config(format!("unknown connector kind `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QformerSpec {
    pub n_queries: usize,
    pub d_query: usize,
    pub n_blocks: usize,
    pub n_heads: usize,
}

/// Architecture-specific settings; each kind carries exactly its own fields.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ConnectorSpec {
    Fc {
        stack: usize,
        hidden: usize,
    },
    Ca {
        downsample: usize,
        n_heads: usize,
    },
    Qf(QformerSpec),
    SegQf {
        qformer: QformerSpec,
        segment_len: usize,
        segment_pe: bool,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConnectorConfig {
    pub d_x: usize,
    pub d_t: usize,
    pub spec: ConnectorSpec,
}

impl ConnectorConfig {
    pub fn kind(&self) -> ConnectorKind {
        match self.spec {
            ConnectorSpec::Fc { .. } => ConnectorKind::Fc,
            ConnectorSpec::Ca { .. } => ConnectorKind::Ca,
            ConnectorSpec::Qf(_) => ConnectorKind::Qf,
            ConnectorSpec::SegQf { .. } => ConnectorKind::SegQf,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.d_x == 0 || self.d_t == 0 {
            return bad(format!("d_x={} and d_t={} must be positive", self.d_x, self.d_t));
        }
        let check_qf = |q: &QformerSpec| -> Result<()> {
            if q.n_queries == 0 || q.d_query == 0 || q.n_blocks == 0 {
                return Err(Error::Config(format!("Q-Former dims must be positive: {q:?}")));
            }
            if q.n_heads == 0 || q.d_query % q.n_heads != 0 {
                return Err(Error::Config(format!(
                    "{} heads do not divide d_query {}",
                    q.n_heads, q.d_query
                )));
            }
            Ok(())
        };
        match &self.spec {
            ConnectorSpec::Fc { stack, hidden } => {
                if *stack == 0 {
                    return bad("FC stacking factor m must be >= 1".into());
                }
                if *hidden == 0 {
                    return bad("FC hidden width must be >= 1".into());
                }
            }
            ConnectorSpec::Ca { downsample, n_heads } => {
                if *downsample == 0 {
                    return bad("CA downsampling rate s must be >= 1".into());
                }
                if *n_heads == 0 || self.d_t % n_heads != 0 {
                    return bad(format!("{n_heads} heads do not divide d_t {}", self.d_t));
                }
            }
            ConnectorSpec::Qf(q) => check_qf(q)?,
            ConnectorSpec::SegQf {
                qformer, segment_len, ..
            } => {
                check_qf(qformer)?;
                if *segment_len == 0 {
                    return bad("segment length L must be >= 1".into());
                }
            }
        }
        Ok(())
    }

    /// Number of speech tokens emitted for `n_x` input frames.
    pub fn output_len(&self, n_x: usize) -> usize {
        match self.spec {
            ConnectorSpec::Fc { stack, .. } => n_x.div_ceil(stack),
            ConnectorSpec::Ca { downsample, .. } => n_x.div_ceil(downsample),
            ConnectorSpec::Qf(q) => q.n_queries,
            ConnectorSpec::SegQf {
                qformer, segment_len, ..
            } => n_x.div_ceil(segment_len).max(1) * qformer.n_queries,
        }
    }

    /// Exact number of trainable connector parameters. Frozen text embeddings
    /// and the frozen endpoints are excluded.
    pub fn param_count(&self) -> Result<usize> {
        self.validate()?;
        Ok(match self.spec {
            ConnectorSpec::Fc { stack, hidden } => FcConnector::param_count(self.d_x, self.d_t, stack, hidden),
            ConnectorSpec::Ca { downsample, .. } => CaConnector::param_count(self.d_x, self.d_t, downsample),
            ConnectorSpec::Qf(q) => QFormer::param_count(self.d_x, self.d_t, &q),
            ConnectorSpec::SegQf { qformer, .. } => QFormer::param_count(self.d_x, self.d_t, &qformer),
        })
    }
}

/// Free function form of [`ConnectorConfig::param_count`].
pub fn param_count(config: &ConnectorConfig) -> Result<usize> {
    config.param_count()
}

/// A constructed connector; parameters live in the caller's [`ParamStore`].
#[derive(Clone, Debug)]
pub enum Connector {
    Fc(FcConnector),
    Ca(CaConnector),
    Qf(QFormer),
    SegQf(SegQFormer),
}

impl Connector {
    pub fn new<F: Real, R: Rng + ?Sized>(config: &ConnectorConfig, store: &mut ParamStore<F>, rng: &mut R) -> Result<Self> {
        config.validate()?;
        Ok(match config.spec {
            ConnectorSpec::Fc { stack, hidden } => {
                Connector::Fc(FcConnector::new(store, config.d_x, config.d_t, stack, hidden, rng)?)
            }
            ConnectorSpec::Ca { downsample, n_heads } => {
                Connector::Ca(CaConnector::new(store, config.d_x, config.d_t, downsample, n_heads, rng)?)
            }
            ConnectorSpec::Qf(q) => Connector::Qf(QFormer::new(store, "qformer", config.d_x, config.d_t, &q, rng)?),
            ConnectorSpec::SegQf {
                qformer,
                segment_len,
                segment_pe,
            } => Connector::SegQf(SegQFormer::new(
                QFormer::new(store, "qformer", config.d_x, config.d_t, &qformer, rng)?,
                segment_len,
                segment_pe,
            )?),
        })
    }

    /// Rebuilds the parameter handles of a connector whose tensors are
    /// already present in `store` (e.g. loaded from a checkpoint).
    pub fn attach<F: Real>(config: &ConnectorConfig, store: &ParamStore<F>) -> Result<Self> {
        let mut scratch = ParamStore::<F>::new();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let conn = Connector::new(config, &mut scratch, &mut rng)?;
        if scratch.len() != store.len() {
            return Err(Error::Format(format!(
                "connector expects {} tensors, store has {}",
                scratch.len(),
                store.len()
            )));
        }
        for ((_, a), (_, b)) in scratch.iter().zip(store.iter()) {
            if a.name != b.name || a.tensor.shape() != b.tensor.shape() {
                return Err(Error::Format(format!(
                    "parameter mismatch: expected {} {:?}, found {} {:?}",
                    a.name,
                    a.tensor.shape(),
                    b.name,
                    b.tensor.shape()
                )));
            }
        }
        Ok(conn)
    }

    pub fn kind(&self) -> ConnectorKind {
        match self {
            Connector::Fc(_) => ConnectorKind::Fc,
            Connector::Ca(_) => ConnectorKind::Ca,
            Connector::Qf(_) => ConnectorKind::Qf,
            Connector::SegQf(_) => ConnectorKind::SegQf,
        }
    }

    /// Maps features (`n_x × d_x`) to speech tokens (`n_t × d_t`).
    /// `text_embed` is the frozen decoder embedding table, required by CA.
    pub fn forward<F: Real>(&self, tape: &mut Tape<F>, bound: &Bound, x: Var, text_embed: Option<Var>) -> Result<Var> {
        match self {
            Connector::Fc(c) => c.forward(tape, bound, x),
            Connector::Ca(c) => {
                let e = text_embed.ok_or_else(|| Error::Config("CA connector needs the text embedding table".into()))?;
                c.forward(tape, bound, x, e)
            }
            Connector::Qf(c) => c.forward(tape, bound, x),
            Connector::SegQf(c) => c.forward(tape, bound, x),
        }
    }

    /// Tape-free convenience wrapper around [`Connector::forward`].
    pub fn encode<F: Real>(
        &self,
        store: &ParamStore<F>,
        x: &FeatureSequence<F>,
        text_embed: Option<&crate::numcore::Tensor<F>>,
    ) -> Result<SpeechTokens<F>> {
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let xv = x.to_var(&mut tape, false)?;
        let e = text_embed.map(|t| tape.leaf(t));
        let out = self.forward(&mut tape, &bound, xv, e)?;
        SpeechTokens::new(tape.to_tensor(out))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn qf(n_queries: usize) -> QformerSpec {
        QformerSpec {
            n_queries,
            d_query: 8,
            n_blocks: 2,
            n_heads: 2,
        }
    }

    #[test]
    fn fc_with_zero_hidden_width_is_rejected() {
        let cfg = ConnectorConfig {
            d_x: 4,
            d_t: 6,
            spec: ConnectorSpec::Fc { stack: 2, hidden: 0 },
        };
        assert!(matches!(cfg.param_count(), Err(Error::Config(_))));
    }

    #[test]
    fn doubling_queries_adds_exactly_n_q_times_d_q() {
        let a = ConnectorConfig {
            d_x: 8,
            d_t: 12,
            spec: ConnectorSpec::Qf(qf(3)),
        };
        let b = ConnectorConfig {
            spec: ConnectorSpec::Qf(qf(6)),
            ..a
        };
        assert_eq!(b.param_count().unwrap() - a.param_count().unwrap(), 3 * 8);
    }

    #[test]
    fn formula_matches_constructed_stores() {
        let specs = [
            ConnectorSpec::Fc { stack: 3, hidden: 10 },
            ConnectorSpec::Ca { downsample: 2, n_heads: 3 },
            ConnectorSpec::Qf(qf(4)),
            ConnectorSpec::SegQf {
                qformer: qf(4),
                segment_len: 5,
                segment_pe: true,
            },
        ];
        for spec in specs {
            let cfg = ConnectorConfig { d_x: 8, d_t: 12, spec };
            let mut store = ParamStore::<f64>::new();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
            Connector::new(&cfg, &mut store, &mut rng).unwrap();
            assert_eq!(store.trainable_count(), cfg.param_count().unwrap(), "{spec:?}");
            let again = Connector::attach(&cfg, &store).unwrap();
            assert_eq!(again.kind(), cfg.kind());
        }
    }

    #[test]
    fn output_lengths() {
        let fc = ConnectorConfig {
            d_x: 4,
            d_t: 4,
            spec: ConnectorSpec::Fc { stack: 20, hidden: 8 },
        };
        assert_eq!(fc.output_len(1500), 75);
        let fc5 = ConnectorConfig {
            spec: ConnectorSpec::Fc { stack: 5, hidden: 8 },
            ..fc
        };
        assert_eq!(fc5.output_len(1500), 300);
        let ca = ConnectorConfig {
            spec: ConnectorSpec::Ca { downsample: 20, n_heads: 2 },
            ..fc
        };
        assert_eq!(ca.output_len(1500), 75);
        let seg = ConnectorConfig {
            spec: ConnectorSpec::SegQf {
                qformer: QformerSpec {
                    n_queries: 80,
                    d_query: 4,
                    n_blocks: 2,
                    n_heads: 2,
                },
                segment_len: 1500,
                segment_pe: true,
            },
            ..fc
        };
        assert_eq!(seg.output_len(3000), 160);
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("SegQF".parse::<ConnectorKind>().unwrap(), ConnectorKind::SegQf);
        assert!("lstm".parse::<ConnectorKind>().is_err());
    }
}
