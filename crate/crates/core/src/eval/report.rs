use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::wer::{pool, score_text, WerReport};
use crate::error::{Error, Result};

/// Largest deletion rate a decode may have and still count as successful.
pub const SUCCESS_MAX_DEL_PERCENT: f64 = 50.0;

pub const SUCCESS_RULE: &str = "success = %Del <= 50 and decoding stopped at EOS";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodeOutcome {
    pub id: String,
    pub reference: String,
    pub hypothesis: String,
    pub duration_seconds: f64,
    pub truncated: bool,
    pub report: WerReport,
    pub success: bool,
}

impl DecodeOutcome {
    pub fn new(id: &str, reference: &str, hypothesis: &str, duration_seconds: f64, truncated: bool) -> Result<Self> {
        let report = score_text(reference, hypothesis)?;
        Ok(Self {
            id: id.to_string(),
            reference: reference.to_string(),
            hypothesis: hypothesis.to_string(),
            duration_seconds,
            truncated,
            success: is_success(&report, truncated),
            report,
        })
    }
}

pub fn is_success(report: &WerReport, truncated: bool) -> bool {
    report.del_percent <= SUCCESS_MAX_DEL_PERCENT && !truncated
}

/// Scores for durations in `(lo, hi]`. Buckets without data hold `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BucketRow {
    pub lo: f64,
    pub hi: f64,
    pub n_all: usize,
    pub n_success: usize,
    pub all: Option<WerReport>,
    pub successful: Option<WerReport>,
}

pub fn duration_bucket_report(outcomes: &[DecodeOutcome], edges: &[f64]) -> Result<Vec<BucketRow>> {
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Config("bucket edges must be at least two increasing values".into()));
    }
    edges
        .windows(2)
        .map(|w| {
            let inside: Vec<&DecodeOutcome> = outcomes
                .iter()
                .filter(|o| o.duration_seconds > w[0] && o.duration_seconds <= w[1])
                .collect();
            let all: Vec<WerReport> = inside.iter().map(|o| o.report).collect();
            let ok: Vec<WerReport> = inside.iter().filter(|o| o.success).map(|o| o.report).collect();
            Ok(BucketRow {
                lo: w[0],
                hi: w[1],
                n_all: all.len(),
                n_success: ok.len(),
                all: if all.is_empty() { None } else { Some(pool(&all)?) },
                successful: if ok.is_empty() { None } else { Some(pool(&ok)?) },
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub overall: WerReport,
    pub n_utterances: usize,
    pub n_success: usize,
    pub success_rule: String,
    pub buckets: Vec<BucketRow>,
    pub outcomes: Vec<DecodeOutcome>,
}

impl EvalReport {
    pub fn new(outcomes: Vec<DecodeOutcome>, edges: &[f64]) -> Result<Self> {
        let reports: Vec<WerReport> = outcomes.iter().map(|o| o.report).collect();
        Ok(Self {
            overall: pool(&reports)?,
            n_utterances: outcomes.len(),
            n_success: outcomes.iter().filter(|o| o.success).count(),
            success_rule: SUCCESS_RULE.to_string(),
            buckets: duration_bucket_report(&outcomes, edges)?,
            outcomes,
        })
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let o = &self.overall;
        let _ = writeln!(
            s,
            "%WER {:.2}  %Del {:.2}  (S={} I={} D={} N={})  utterances {} ({} successful)",
            o.wer_percent, o.del_percent, o.substitutions, o.insertions, o.deletions, o.n_ref_words, self.n_utterances, self.n_success
        );
        let _ = writeln!(s, "{}", self.success_rule);
        let _ = writeln!(s, "{:>16} {:>6} {:>10} {:>10} {:>6} {:>10}", "duration (s)", "n", "%WER all", "%Del all", "n ok", "%WER ok");
        let pct = |r: &Option<WerReport>, f: fn(&WerReport) -> f64| r.as_ref().map_or("-".to_string(), |r| format!("{:.2}", f(r)));
        for b in &self.buckets {
            let _ = writeln!(
                s,
                "{:>16} {:>6} {:>10} {:>10} {:>6} {:>10}",
                format!("({}, {}]", b.lo, b.hi),
                b.n_all,
                pct(&b.all, |r| r.wer_percent),
                pct(&b.all, |r| r.del_percent),
                b.n_success,
                pct(&b.successful, |r| r.wer_percent),
            );
        }
        s
    }
}
