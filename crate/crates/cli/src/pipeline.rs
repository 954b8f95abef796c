//! The frozen endpoints, the datasets and the per-utterance forward pass
//! shared by training, evaluation and sweeps.

use std::path::Path;

use bridgekit::connectors::{Connector, ConnectorConfig, FeatureSequence};
use bridgekit::datapipe::{build_longform_testset, LongformSpec, UtteranceRecord};
use bridgekit::frozen_stubs::{pretrain_toy_lm, PretrainReport, SyntheticTask, ToyDecoder};
use bridgekit::numcore::GradBuffer;
use bridgekit::{Error, ParamStore, Tape};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::checkpoint::Container;
use crate::config::ExperimentConfig;
use crate::error::CliResult;

/// Utterance index ranges of the synthetic task. Each split draws from its
/// own range, so splits never share an utterance.
pub const VAL_BASE: u64 = 100_000;
pub const TEST_BASE: u64 = 200_000;
pub const LM_BASE: u64 = 1_000_000;

/// Test utterances are grouped into chapters of this many for long-form sets.
pub const CHAPTER_LEN: u64 = 50;

pub struct Pipeline {
    pub config: ExperimentConfig,
    pub task: SyntheticTask,
    pub decoder: ToyDecoder,
    pub connector_config: ConnectorConfig,
    decoder_f32: ParamStore<f32>,
}

/// Result of one teacher-forced pass.
pub struct Pass {
    pub loss: f64,
    pub positions: usize,
    pub correct: usize,
    pub grads: Option<GradBuffer<f32>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct DecoderCacheMeta {
    key: String,
    report: PretrainReport,
}

impl Pipeline {
    /// Builds the task and obtains the frozen decoder, from the cache when
    /// `paths.cache_dir` holds one pretrained under identical settings.
    pub fn new(config: ExperimentConfig) -> CliResult<Self> {
        let task = SyntheticTask::new(config.task.clone())?;
        let decoder = load_or_pretrain_decoder(&config, &task)?.0;
        Self::with_decoder(config, decoder)
    }

    pub fn with_decoder(config: ExperimentConfig, decoder: ToyDecoder) -> CliResult<Self> {
        config.validate()?;
        let task = SyntheticTask::new(config.task.clone())?;
        if !decoder.is_frozen() {
            return Err(Error::Config("the decoder must be frozen before connector training".into()).into());
        }
        let connector_config = config.connector_config();
        if connector_config.d_t != decoder.config.d_t {
            return Err(Error::Dimension {
                op: "connector output vs decoder width",
                left: vec![connector_config.d_t],
                right: vec![decoder.config.d_t],
            }
            .into());
        }
        let decoder_f32 = decoder.store().cast();
        Ok(Self {
            config,
            task,
            decoder,
            connector_config,
            decoder_f32,
        })
    }

    pub fn decoder_store_f32(&self) -> &ParamStore<f32> {
        &self.decoder_f32
    }

    pub fn train_records(&self) -> Vec<UtteranceRecord> {
        split(&self.task, 0, self.config.training.n_train)
    }

    pub fn val_records(&self) -> Vec<UtteranceRecord> {
        split(&self.task, VAL_BASE, self.config.training.n_val)
    }

    pub fn test_records(&self) -> Vec<UtteranceRecord> {
        split(&self.task, TEST_BASE, self.config.eval.n_test)
    }

    /// Test utterances packed chapter by chapter up to `spec.t_test` seconds.
    pub fn longform_records(&self, spec: &LongformSpec) -> bridgekit::Result<Vec<UtteranceRecord>> {
        build_longform_testset(&self.test_records(), spec)
    }

    /// Encoder output for a record, in training precision.
    pub fn features(&self, record: &UtteranceRecord) -> bridgekit::Result<FeatureSequence<f32>> {
        let raw = self.task.features(&record.source)?;
        Ok(self.task.encoder.encode(&raw)?.cast())
    }

    pub fn symbols(&self, record: &UtteranceRecord) -> bridgekit::Result<Vec<usize>> {
        self.task.vocab().parse(&record.transcript)
    }

    /// Connector then decoder under teacher forcing; with `want_grads`, the
    /// connector gradients of the summed loss.
    pub fn pass(
        &self,
        connector: &Connector,
        store: &ParamStore<f32>,
        x: &FeatureSequence<f32>,
        symbols: &[usize],
        want_grads: bool,
    ) -> bridgekit::Result<Pass> {
        let mut tape = Tape::<f32>::new();
        let cb = store.bind(&mut tape);
        let db = self.decoder_f32.bind(&mut tape);
        let xv = x.to_var(&mut tape, false)?;
        let e = db[self.decoder.embed_id()];
        let prefix = connector.forward(&mut tape, &cb, xv, Some(e))?;
        let tf = self.decoder.teacher_forced(&mut tape, &db, Some(prefix), symbols)?;
        let loss = tape.scalar(tf.loss_sum) as f64;
        let correct = tf.correct(&tape);
        let grads = if want_grads {
            tape.backward(tf.loss_sum)?;
            Some(store.collect_grads(&tape, &cb))
        } else {
            None
        };
        Ok(Pass {
            loss,
            positions: tf.positions(),
            correct,
            grads,
        })
    }
}

fn split(task: &SyntheticTask, base: u64, n: usize) -> Vec<UtteranceRecord> {
    (0..n as u64)
        .map(|i| {
            let mut r = task.utterance(base + i).0;
            r.chapter_id = Some(format!("ch{:04}", i / CHAPTER_LEN));
            r.order_in_chapter = Some((i % CHAPTER_LEN) as u32);
            r
        })
        .collect()
}

pub struct Splits {
    pub train: Vec<UtteranceRecord>,
    pub val: Vec<UtteranceRecord>,
    pub test: Vec<UtteranceRecord>,
}

/// The train, validation and test records a config describes.
pub fn records_for(config: &ExperimentConfig, task: &SyntheticTask) -> Splits {
    Splits {
        train: split(task, 0, config.training.n_train),
        val: split(task, VAL_BASE, config.training.n_val),
        test: split(task, TEST_BASE, config.eval.n_test),
    }
}

/// Cache key over everything that determines the pretrained decoder.
pub fn decoder_cache_key(config: &ExperimentConfig) -> String {
    let material = serde_json::json!({
        "version": env!("CARGO_PKG_VERSION"),
        "task": config.task,
        "decoder": config.decoder_config(),
        "setup": config.decoder,
    });
    let digest = Sha256::digest(material.to_string().as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// The pretraining corpus: transcripts from their own index range.
pub fn lm_corpus(config: &ExperimentConfig, task: &SyntheticTask) -> Vec<Vec<usize>> {
    (0..config.decoder.corpus_size as u64)
        .map(|i| task.transcript_of(LM_BASE + i))
        .collect()
}

pub fn load_or_pretrain_decoder(config: &ExperimentConfig, task: &SyntheticTask) -> CliResult<(ToyDecoder, PretrainReport)> {
    let key = decoder_cache_key(config);
    let path = config
        .paths
        .cache_dir
        .as_ref()
        .map(|d| d.join(format!("decoder-{key}.bkckpt")));
    if let Some(p) = path.as_deref().filter(|p| p.exists()) {
        return load_cached_decoder(config, p, &key);
    }
    let (decoder, report) = pretrain_toy_lm(&lm_corpus(config, task), config.decoder_config(), &config.decoder.pretrain)?;
    if let Some(p) = path {
        if let Some(dir) = p.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let meta = DecoderCacheMeta {
            key,
            report: report.clone(),
        };
        Container {
            meta: serde_json::to_value(meta).map_err(|e| Error::Format(e.to_string()))?,
            groups: vec![("decoder".into(), decoder.store().clone())],
        }
        .save(&p)?;
    }
    Ok((decoder, report))
}

fn load_cached_decoder(config: &ExperimentConfig, path: &Path, key: &str) -> CliResult<(ToyDecoder, PretrainReport)> {
    let c = Container::load(path)?;
    let meta: DecoderCacheMeta =
        serde_json::from_value(c.meta.clone()).map_err(|e| Error::Format(format!("decoder cache: {e}")))?;
    if meta.key != key {
        return Err(Error::Format(format!("{} was written for other settings", path.display())).into());
    }
    let store = c
        .group("decoder")
        .ok_or_else(|| Error::Format("decoder cache has no decoder tensors".into()))?
        .clone();
    let decoder = ToyDecoder::from_store(config.decoder_config(), store)?;
    if !decoder.is_frozen() {
        return Err(Error::Format("cached decoder is not flagged frozen".into()).into());
    }
    Ok((decoder, meta.report))
}
