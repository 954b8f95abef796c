//! Shared setup: one pretrained decoder per process, cached on disk across
//! test binaries.

#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::OnceLock;

use bridgekit::frozen_stubs::{SyntheticTask, ToyDecoder};
use bridgekit_cli::pipeline::load_or_pretrain_decoder;
use bridgekit_cli::{ExperimentConfig, Pipeline};

pub fn cache_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("bridgekit-decoder-cache")
}

/// Default settings with the shared decoder cache.
pub fn config(seed: u64) -> ExperimentConfig {
    let mut c = ExperimentConfig::with_seed(seed);
    c.paths.cache_dir = Some(cache_dir());
    c
}

pub fn decoder() -> &'static ToyDecoder {
    static DECODER: OnceLock<ToyDecoder> = OnceLock::new();
    DECODER.get_or_init(|| {
        let c = config(0);
        let task = SyntheticTask::new(c.task.clone()).unwrap();
        load_or_pretrain_decoder(&c, &task).unwrap().0
    })
}

pub fn pipeline(config: ExperimentConfig) -> Pipeline {
    Pipeline::with_decoder(config, decoder().clone()).unwrap()
}

/// A config small enough for runs of a few seconds.
pub fn tiny(seed: u64, steps: usize) -> ExperimentConfig {
    let mut c = config(seed);
    for (k, v) in [
        ("training.steps", steps.to_string()),
        ("training.n_train", "48".into()),
        ("training.n_val", "16".into()),
        ("training.batch_size", "4".into()),
        ("training.val_every", "2".into()),
        ("training.warmup_steps", "2".into()),
        ("eval.n_test", "12".into()),
    ] {
        c.set(k, &v).unwrap();
    }
    c
}

pub fn set(c: &mut ExperimentConfig, pairs: &[(&str, &str)]) {
    for (k, v) in pairs {
        c.set(k, v).unwrap();
    }
}
