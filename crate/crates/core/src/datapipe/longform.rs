use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::concat::join_records;
use super::UtteranceRecord;
use crate::connectors::FeatureSequence;
use crate::error::{Error, Result};
use crate::numcore::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LongformSpec {
    pub t_test: f64,
}

/// Appends zero frames up to the next multiple of `w`.
pub fn pad_to_window<F: Real>(x: &FeatureSequence<F>, w: usize) -> Result<FeatureSequence<F>> {
    if w == 0 {
        return Err(Error::Config("window length must be >= 1".into()));
    }
    let n = x.n_x().div_ceil(w).max(1) * w;
    let n = n.max(x.n_x());
    let mut data = x.data().to_vec();
    data.resize(n * x.d_x(), F::zero());
    FeatureSequence::new(n, x.d_x(), data, x.frame_rate_hz)
}

/// Greedy in-order packing of each chapter into groups of at most `t_test`
/// seconds. An utterance longer than `t_test` forms its own group.
pub fn group_longform(records: &[UtteranceRecord], spec: &LongformSpec) -> Result<Vec<Vec<UtteranceRecord>>> {
    if !(spec.t_test > 0.0) {
        return Err(Error::Config("T_test must be positive".into()));
    }
    let mut chapters: BTreeMap<&str, Vec<&UtteranceRecord>> = BTreeMap::new();
    for r in records {
        let (Some(ch), Some(_)) = (&r.chapter_id, r.order_in_chapter) else {
            return Err(Error::Config(format!("{}: long-form sets need chapter and order", r.id)));
        };
        chapters.entry(ch.as_str()).or_default().push(r);
    }
    let mut groups = Vec::new();
    for (_, mut utts) in chapters {
        utts.sort_by_key(|r| r.order_in_chapter);
        let mut current: Vec<UtteranceRecord> = Vec::new();
        let mut total = 0.0;
        for r in utts {
            if !current.is_empty() && total + r.duration_seconds > spec.t_test + 1e-9 {
                groups.push(std::mem::take(&mut current));
                total = 0.0;
            }
            total += r.duration_seconds;
            current.push(r.clone());
        }
        if !current.is_empty() {
            groups.push(current);
        }
    }
    Ok(groups)
}

/// [`group_longform`] with each group joined into one record.
pub fn build_longform_testset(records: &[UtteranceRecord], spec: &LongformSpec) -> Result<Vec<UtteranceRecord>> {
    Ok(group_longform(records, spec)?.iter().map(|g| join_records(g)).collect())
}
