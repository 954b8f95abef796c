//! The subcommands behind the `bridgekit` binary. Each returns what it wrote
//! so tests can drive them without a subprocess.

use std::path::{Path, PathBuf};

use bridgekit::connectors::ConnectorKind;
use bridgekit::datapipe::{build_longform_testset, load_manifest, save_manifest, LongformSpec, UtteranceRecord};
use bridgekit::eval::EvalReport;
use bridgekit::frozen_stubs::SyntheticTask;
use bridgekit::numcore::par_map;
use bridgekit::Error;
use serde::Serialize;

use crate::checkpoint::Checkpoint;
use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::evaluate::evaluate;
use crate::gradcheck::{run_gradcheck, Fixture, GradcheckSummary};
use crate::pipeline::{load_or_pretrain_decoder, Pipeline};
use crate::train::{train, LogEntry, TrainRun};

pub const CHECKPOINT_FILE: &str = "best.bkckpt";
pub const LOG_FILE: &str = "train_log.json";
pub const CONFIG_FILE: &str = "config.txt";

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

fn require_out_dir(config: &ExperimentConfig) -> CliResult<PathBuf> {
    config
        .paths
        .out_dir
        .clone()
        .ok_or_else(|| CliError::Usage("paths.out_dir must be set".into()))
}

/// Trains a connector; writes the best checkpoint, the log and the resolved
/// config to `paths.out_dir`.
pub fn cmd_train(config: ExperimentConfig) -> CliResult<TrainRun> {
    let out = require_out_dir(&config)?;
    std::fs::create_dir_all(&out)?;
    std::fs::write(out.join(CONFIG_FILE), config.to_text())?;
    let pipeline = Pipeline::new(config)?;
    let run = train(&pipeline)?;
    write_json(&out.join(LOG_FILE), &run.log)?;
    Ok(run)
}

pub fn read_log(path: &Path) -> CliResult<Vec<LogEntry>> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())).into())
}

/// Rebuilds the pipeline a checkpoint was trained in, using its own frozen
/// decoder, and checks the encoder matches the one the task produces.
pub fn pipeline_for(checkpoint: &Checkpoint) -> CliResult<Pipeline> {
    let mut config = checkpoint.meta.config.clone();
    config.paths.init_checkpoint = None;
    let pipeline = Pipeline::with_decoder(config, checkpoint.decoder()?)?;
    if pipeline.task.encoder.fingerprint() != checkpoint.encoder.fingerprint() {
        return Err(Error::Config("checkpoint encoder differs from the task's encoder".into()).into());
    }
    Ok(pipeline)
}

pub struct EvalOutput {
    pub report: EvalReport,
    pub text_path: PathBuf,
    pub json_path: PathBuf,
}

/// Greedy decoding of a manifest, optionally packed into long-form
/// utterances first. Reports go to `out_dir`, or next to the checkpoint.
pub fn cmd_eval(ckpt: &Path, manifest: &Path, longform: Option<f64>, out_dir: Option<&Path>) -> CliResult<EvalOutput> {
    let checkpoint = Checkpoint::load(ckpt)?;
    let mut records = load_manifest(manifest)?;
    let pipeline = pipeline_for(&checkpoint)?;
    let stem = match longform {
        Some(t) => {
            records = build_longform_testset(&records, &LongformSpec { t_test: t })?;
            format!("eval-longform{t}")
        }
        None => "eval".into(),
    };
    let report = evaluate(&pipeline, &checkpoint, &records)?;
    let dir = match out_dir {
        Some(d) => d.to_path_buf(),
        None => ckpt.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    std::fs::create_dir_all(&dir)?;
    let text_path = dir.join(format!("{stem}.txt"));
    let json_path = dir.join(format!("{stem}.json"));
    std::fs::write(&text_path, report.to_text())?;
    write_json(&json_path, &report)?;
    Ok(EvalOutput {
        report,
        text_path,
        json_path,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub enum SweepAxis {
    Kind(Vec<ConnectorKind>),
    Queries(Vec<usize>),
    SegmentLen(Vec<usize>),
}

impl std::str::FromStr for SweepAxis {
    type Err = CliError;

    /// `kind=fc,qf`, `n_q=4,8,16` or `L=50,150`.
    fn from_str(s: &str) -> CliResult<Self> {
        let (name, values) = s
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("sweep axis `{s}`: expected name=v1,v2,..")))?;
        let values: Vec<&str> = values.split(',').map(str::trim).filter(|v| !v.is_empty()).collect();
        if values.is_empty() {
            return Err(CliError::Usage(format!("sweep axis `{name}` has no values")));
        }
        let numbers = || -> CliResult<Vec<usize>> {
            values
                .iter()
                .map(|v| v.parse().map_err(|_| CliError::Usage(format!("`{v}` is not a count"))))
                .collect()
        };
        match name.trim() {
            "kind" => values
                .iter()
                .map(|v| v.parse().map_err(|e: Error| CliError::Usage(e.to_string())))
                .collect::<CliResult<_>>()
                .map(SweepAxis::Kind),
            "n_q" => numbers().map(SweepAxis::Queries),
            "L" | "segment_len" => numbers().map(SweepAxis::SegmentLen),
            other => Err(CliError::Usage(format!("unknown sweep axis `{other}` (kind, n_q or L)"))),
        }
    }
}

impl SweepAxis {
    /// Point labels with the config overrides that produce them.
    fn points(&self) -> Vec<(String, Vec<(&'static str, String)>)> {
        match self {
            SweepAxis::Kind(kinds) => kinds
                .iter()
                .map(|k| {
                    let key = format!("{k:?}").to_lowercase();
                    (k.label().to_string(), vec![("connector.kind", key)])
                })
                .collect(),
            SweepAxis::Queries(ns) => ns
                .iter()
                .map(|n| (format!("n_q={n}"), vec![("connector.n_queries", n.to_string())]))
                .collect(),
            SweepAxis::SegmentLen(ls) => ls
                .iter()
                .map(|l| {
                    (
                        format!("L={l}"),
                        vec![("connector.kind", "segqf".into()), ("connector.segment_len", l.to_string())],
                    )
                })
                .collect(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepRow {
    pub point: String,
    /// Speech tokens for one full window of input.
    pub tokens: usize,
    pub params: usize,
    pub wer_percent: f64,
    pub del_percent: f64,
}

pub fn sweep_table(rows: &[SweepRow]) -> String {
    let mut out = format!("{:<12} {:>8} {:>10} {:>8} {:>8}\n", "point", "#tokens", "#params", "%WER", "%Del");
    for r in rows {
        out += &format!(
            "{:<12} {:>8} {:>10} {:>8.2} {:>8.2}\n",
            r.point, r.tokens, r.params, r.wer_percent, r.del_percent
        );
    }
    out
}

fn save_sweep(dir: &Path, rows: &[SweepRow]) -> CliResult<()> {
    std::fs::write(dir.join("sweep.txt"), sweep_table(rows))?;
    write_json(&dir.join("sweep.json"), &rows)
}

fn sweep_point(base: &Pipeline, label: &str, overrides: &[(&'static str, String)], root: &Path) -> CliResult<SweepRow> {
    let mut config = base.config.clone();
    for (k, v) in overrides {
        config.set(k, v)?;
    }
    let dir = root.join(label.replace(['=', ' '], "-"));
    config.paths.out_dir = Some(dir.clone());
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join(CONFIG_FILE), config.to_text())?;
    let pipeline = Pipeline::with_decoder(config, base.decoder.clone())?;
    let run = train(&pipeline)?;
    write_json(&dir.join(LOG_FILE), &run.log)?;
    let report = evaluate(&pipeline, &run.best, &pipeline.test_records())?;
    let cc = &pipeline.connector_config;
    Ok(SweepRow {
        point: label.to_string(),
        tokens: cc.output_len(pipeline.task.spec.window_frames),
        params: cc.param_count()?,
        wer_percent: report.overall.wer_percent,
        del_percent: report.overall.del_percent,
    })
}

/// Trains and evaluates each point with the same seed and data. Points run
/// one after another unless `parallel`. The table is rewritten after every
/// point, so a failure leaves the finished rows on disk.
pub fn cmd_sweep(config: ExperimentConfig, axis: &SweepAxis, parallel: bool) -> CliResult<Vec<SweepRow>> {
    let root = require_out_dir(&config)?;
    std::fs::create_dir_all(&root)?;
    let task = SyntheticTask::new(config.task.clone())?;
    let decoder = load_or_pretrain_decoder(&config, &task)?.0;
    let base = Pipeline::with_decoder(config, decoder)?;
    let points = axis.points();
    let mut rows = Vec::new();
    if parallel {
        let results = par_map(&points, |(label, ov)| Ok(sweep_point(&base, label, ov, &root)))?;
        let mut first_err = None;
        for r in results {
            match r {
                Ok(row) => rows.push(row),
                Err(e) => {
                    first_err.get_or_insert(e);
                }
            }
        }
        save_sweep(&root, &rows)?;
        return match first_err {
            Some(e) => Err(e),
            None => Ok(rows),
        };
    }
    for (label, ov) in &points {
        match sweep_point(&base, label, ov, &root) {
            Ok(row) => {
                rows.push(row);
                save_sweep(&root, &rows)?;
            }
            Err(e) => {
                save_sweep(&root, &rows)?;
                return Err(e);
            }
        }
    }
    Ok(rows)
}

pub fn cmd_gradcheck(seeds: &[u64]) -> CliResult<GradcheckSummary> {
    let summary = run_gradcheck(seeds, Fixture::Clean)?;
    if !summary.passed() {
        let names: Vec<String> = summary
            .failures()
            .iter()
            .map(|c| format!("{} (seed {}, {:.2e})", c.module, c.seed, c.max_rel_err))
            .collect();
        return Err(CliError::Gradcheck(format!("{}\n{}", summary.to_text(), names.join(", "))));
    }
    Ok(summary)
}

/// Writes train, validation and test manifests, plus one long-form test
/// manifest per `eval.longform` limit, to `paths.out_dir`.
pub fn cmd_make_data(config: ExperimentConfig) -> CliResult<Vec<PathBuf>> {
    let out = require_out_dir(&config)?;
    std::fs::create_dir_all(&out)?;
    let task = SyntheticTask::new(config.task.clone())?;
    let sets = crate::pipeline::records_for(&config, &task);
    let mut written = Vec::new();
    let mut emit = |name: String, records: &[UtteranceRecord]| -> CliResult<()> {
        let path = out.join(name);
        save_manifest(&path, records)?;
        written.push(path);
        Ok(())
    };
    emit("train.tsv".into(), &sets.train)?;
    emit("val.tsv".into(), &sets.val)?;
    emit("test.tsv".into(), &sets.test)?;
    for spec in config.eval.longform_specs() {
        let packed = build_longform_testset(&sets.test, &spec)?;
        emit(format!("test-longform{}.tsv", spec.t_test), &packed)?;
    }
    Ok(written)
}
