//! Finite-difference checks of every connector and of the decoder loss head
//! at small dimensions, in double precision.

use std::time::Instant;

use bridgekit::connectors::{Connector, ConnectorConfig, ConnectorSpec, FeatureSequence, QformerSpec};
use bridgekit::frozen_stubs::{DecoderConfig, ToyDecoder};
use bridgekit::numcore::{gradcheck, Bound, Init, ParamStore, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

pub const TOLERANCE: f64 = 1e-4;
pub const EPS: f64 = 1e-5;
pub const DEFAULT_SEEDS: [u64; 3] = [0, 1, 2];

const D_X: usize = 8;
const D_T: usize = 6;
const N_X: usize = 11;
const N_Q: usize = 3;

/// `Corrupted` adds a term whose value the tape sees but whose gradient it
/// does not, the way a broken backward rule would. Used as a negative control.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fixture {
    Clean,
    Corrupted,
}

#[derive(Clone, Debug, Serialize)]
pub struct ModuleCheck {
    pub module: String,
    pub seed: u64,
    pub max_rel_err: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradcheckSummary {
    pub tolerance: f64,
    pub checks: Vec<ModuleCheck>,
    pub seconds: f64,
}

impl GradcheckSummary {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<&ModuleCheck> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }

    /// Worst error per module over all seeds, one line each.
    pub fn to_text(&self) -> String {
        let mut modules: Vec<&str> = Vec::new();
        for c in &self.checks {
            if !modules.contains(&c.module.as_str()) {
                modules.push(&c.module);
            }
        }
        let mut out = String::new();
        for m in modules {
            let rows: Vec<&ModuleCheck> = self.checks.iter().filter(|c| c.module == m).collect();
            let worst = rows.iter().map(|c| c.max_rel_err).fold(0.0, f64::max);
            let ok = rows.iter().all(|c| c.passed);
            out += &format!(
                "{:<10} max rel err {worst:.3e} over {} seeds  {}\n",
                m,
                rows.len(),
                if ok { "ok" } else { "FAIL" }
            );
        }
        out += &format!("tolerance {:.0e}, {:.1}s\n", self.tolerance, self.seconds);
        out
    }
}

fn qf_spec() -> QformerSpec {
    QformerSpec {
        n_queries: N_Q,
        d_query: D_X,
        n_blocks: 2,
        n_heads: 2,
    }
}

pub fn small_connectors() -> Vec<ConnectorConfig> {
    [
        ConnectorSpec::Fc { stack: 3, hidden: 12 },
        ConnectorSpec::Ca { downsample: 3, n_heads: 2 },
        ConnectorSpec::Qf(qf_spec()),
        ConnectorSpec::SegQf {
            qformer: qf_spec(),
            segment_len: 4,
            segment_pe: true,
        },
    ]
    .into_iter()
    .map(|spec| ConnectorConfig { d_x: D_X, d_t: D_T, spec })
    .collect()
}

fn small_decoder() -> DecoderConfig {
    DecoderConfig {
        vocab: 7,
        d_t: D_T,
        n_layers: 1,
        n_heads: 2,
        d_ff: 12,
        max_positions: 16,
        position_scale: 1.0,
        embed_std: 0.5,
    }
}

fn uniform(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// `y` plus, for the corrupted fixture, a detached copy of it.
fn finish(tape: &mut Tape<f64>, y: Var, fixture: Fixture) -> bridgekit::Result<Var> {
    match fixture {
        Fixture::Clean => Ok(y),
        Fixture::Corrupted => {
            let value = tape.scalar(y);
            let detached = tape.constant(1, 1, vec![value])?;
            tape.add(y, detached)
        }
    }
}

fn check_connector(config: &ConnectorConfig, seed: u64, fixture: Fixture) -> bridgekit::Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::<f64>::new();
    let conn = Connector::new(config, &mut store, &mut rng)?;
    let x = FeatureSequence::new(N_X, D_X, uniform(&mut rng, N_X * D_X), 10.0)?;
    let mut e = Tensor::matrix(5, D_T, uniform(&mut rng, 5 * D_T))?;
    e.freeze();
    let n_t = config.output_len(N_X);
    let w = uniform(&mut rng, n_t * D_T);
    let report = gradcheck(&mut store, EPS, |tape: &mut Tape<f64>, bound: &Bound| {
        let xv = x.to_var(tape, false)?;
        let ev = tape.leaf(&e);
        let out = conn.forward(tape, bound, xv, Some(ev))?;
        let wv = tape.constant(n_t, D_T, w.clone())?;
        let prod = tape.mul(out, wv)?;
        let y = tape.sum(prod)?;
        finish(tape, y, fixture)
    })?;
    Ok(report.max_rel_err())
}

/// Teacher-forced cross-entropy of a small unfrozen decoder, differentiated
/// with respect to its weights and to a soft prefix.
fn check_loss_head(seed: u64, fixture: Fixture) -> bridgekit::Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let config = small_decoder();
    let decoder = ToyDecoder::new(config.clone(), &mut rng)?;
    let mut store = decoder.store().clone();
    let prefix = store.init("prefix", 4, D_T, Init::Normal(1.0), &mut rng)?;
    let symbols: Vec<usize> = (0..5).map(|_| rng.random_range(0..config.bos())).collect();
    let report = gradcheck(&mut store, EPS, |tape: &mut Tape<f64>, bound: &Bound| {
        let tf = decoder.teacher_forced(tape, bound, Some(bound[prefix]), &symbols)?;
        finish(tape, tf.loss_sum, fixture)
    })?;
    Ok(report.max_rel_err())
}

pub fn run_gradcheck(seeds: &[u64], fixture: Fixture) -> bridgekit::Result<GradcheckSummary> {
    let start = Instant::now();
    let mut checks = Vec::new();
    for &seed in seeds {
        for config in small_connectors() {
            let err = check_connector(&config, seed, fixture)?;
            checks.push(ModuleCheck {
                module: config.kind().label().to_string(),
                seed,
                max_rel_err: err,
                passed: err <= TOLERANCE,
            });
        }
        let err = check_loss_head(seed, fixture)?;
        checks.push(ModuleCheck {
            module: "loss head".into(),
            seed,
            max_rel_err: err,
            passed: err <= TOLERANCE,
        });
    }
    Ok(GradcheckSummary {
        tolerance: TOLERANCE,
        checks,
        seconds: start.elapsed().as_secs_f64(),
    })
}
