use std::path::PathBuf;

use bridgekit::connectors::Connector;
use bridgekit::datapipe::{random_concat_sample, BatchStream, UtteranceRecord};
use bridgekit::numcore::{par_map, warmup_lr, Adam, AdamConfig, GradBuffer};
use bridgekit::{Error, ParamStore};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, CheckpointMeta};
use crate::error::CliResult;
use crate::pipeline::Pipeline;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub step: usize,
    /// Mean token loss of the step's batch; absent at step 0.
    pub loss: Option<f64>,
    pub lr: f64,
    pub val_accuracy: Option<f64>,
    pub val_loss: Option<f64>,
}

pub struct TrainRun {
    pub best: Checkpoint,
    pub last: ParamStore<f64>,
    pub log: Vec<LogEntry>,
    pub initial_accuracy: f64,
}

/// Validation teacher-forcing accuracy and mean token loss.
pub fn validate(p: &Pipeline, connector: &Connector, store: &ParamStore<f32>, records: &[UtteranceRecord]) -> CliResult<(f64, f64)> {
    let outs = par_map(records, |r| {
        p.pass(connector, store, &p.features(r)?, &p.symbols(r)?, false)
    })?;
    let (correct, positions, loss) = outs
        .iter()
        .fold((0, 0, 0.0), |(c, n, l), o| (c + o.correct, n + o.positions, l + o.loss));
    Ok((correct as f64 / positions as f64, loss / positions as f64))
}

/// Connector parameters from `paths.init_checkpoint` when set, else fresh
/// ones rounded to single precision so that a run with zero learning rate
/// reproduces them bit for bit. Any checkpoint with the same parameter
/// layout can seed a run, so a Q-Former checkpoint can start a segment-level
/// Q-Former.
pub fn init_connector(p: &Pipeline) -> CliResult<(Connector, ParamStore<f64>)> {
    if let Some(path) = &p.config.paths.init_checkpoint {
        let ck = Checkpoint::load(path)?;
        if ck.decoder.fingerprint() != p.decoder.fingerprint() {
            return Err(Error::Config(format!("{} was trained against another decoder", path.display())).into());
        }
        let conn = Connector::attach(&p.connector_config, &ck.connector)?;
        return Ok((conn, ck.connector));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(p.config.training.seed);
    let mut store = ParamStore::<f64>::new();
    let conn = Connector::new(&p.connector_config, &mut store, &mut rng)?;
    Ok((conn, store.cast::<f32>().cast()))
}

pub fn checkpoint_path(p: &Pipeline) -> Option<PathBuf> {
    p.config.paths.out_dir.as_ref().map(|d| d.join("best.bkckpt"))
}

/// Connector-only training with Adam, linear warmup then constant learning
/// rate, and validation every `val_every` steps. The checkpoint with the
/// highest validation accuracy is kept (the earliest on ties).
pub fn train(p: &Pipeline) -> CliResult<TrainRun> {
    let t = &p.config.training;
    let (connector, init) = init_connector(p)?;
    let mut store: ParamStore<f32> = init.cast();
    let mut adam = Adam::new(&store, AdamConfig::default());
    let train_records = p.train_records();
    let val_records = p.val_records();
    let policy = p.config.concat.policy();
    let lens: Vec<usize> = train_records.iter().map(|r| r.words().len()).collect();
    let mut batches = BatchStream::new(lens, t.batch_size, ChaCha8Rng::seed_from_u64(t.seed ^ 0xba7c_4e5))?;
    let mut concat_rng = ChaCha8Rng::seed_from_u64(t.seed ^ 0xc0_ca7);
    let out_path = checkpoint_path(p);
    if let Some(dir) = &p.config.paths.out_dir {
        std::fs::create_dir_all(dir)?;
    }

    let snapshot = |store: &ParamStore<f32>, step: usize, acc: f64| {
        Checkpoint::new(
            CheckpointMeta {
                config: p.config.clone(),
                connector: p.connector_config,
                decoder: p.decoder.config.clone(),
                step,
                val_accuracy: acc,
            },
            store.cast(),
            &p.decoder,
            &p.task.encoder,
        )
    };

    let (acc0, loss0) = validate(p, &connector, &store, &val_records)?;
    let mut log = vec![LogEntry {
        step: 0,
        loss: None,
        lr: 0.0,
        val_accuracy: Some(acc0),
        val_loss: Some(loss0),
    }];
    let mut best = snapshot(&store, 0, acc0);
    if let Some(path) = &out_path {
        best.save(path)?;
    }

    for step in 1..=t.steps {
        let batch = batches.next().expect("batch stream is endless");
        let mut samples = Vec::with_capacity(batch.indices.len());
        for &i in &batch.indices {
            let base = &train_records[i];
            let record = if policy.enabled {
                random_concat_sample(&train_records, base, &policy, &mut concat_rng)?.record()
            } else {
                base.clone()
            };
            samples.push(record);
        }
        let outs = par_map(&samples, |r| {
            p.pass(&connector, &store, &p.features(r)?, &p.symbols(r)?, true)
        })?;
        let mut grads = GradBuffer::empty(store.len());
        let (mut loss, mut positions) = (0.0, 0);
        for o in outs {
            grads.add_assign(o.grads.as_ref().expect("requested gradients"));
            loss += o.loss;
            positions += o.positions;
        }
        if !loss.is_finite() || !grads.all_finite() {
            return Err(Error::NonFinite { op: "connector training loss" }.into());
        }
        grads.scale(1.0 / positions as f32);
        store.set_grads(grads)?;
        let lr = warmup_lr(t.learning_rate, step, t.warmup_steps);
        adam.step(&mut store, lr);
        let mut entry = LogEntry {
            step,
            loss: Some(loss / positions as f64),
            lr,
            val_accuracy: None,
            val_loss: None,
        };
        if step % t.val_every == 0 || step == t.steps {
            let (acc, vloss) = validate(p, &connector, &store, &val_records)?;
            entry.val_accuracy = Some(acc);
            entry.val_loss = Some(vloss);
            if acc > best.meta.val_accuracy {
                best = snapshot(&store, step, acc);
                if let Some(path) = &out_path {
                    best.save(path)?;
                }
            }
        }
        log.push(entry);
    }
    store.zero_grad();
    Ok(TrainRun {
        best,
        last: store.cast(),
        log,
        initial_accuracy: acc0,
    })
}
