use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Source, UtteranceRecord};
use crate::error::{Error, Result};

/// Durations are sums of frame counts divided by a frame rate; comparisons
/// allow for the rounding of those sums.
const DURATION_SLACK: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConcatPolicy {
    pub t_max_upper: f64,
    pub enabled: bool,
}

impl ConcatPolicy {
    pub fn disabled() -> Self {
        Self {
            t_max_upper: 0.0,
            enabled: false,
        }
    }

    pub fn up_to(seconds: f64) -> Self {
        Self {
            t_max_upper: seconds,
            enabled: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.enabled && !(self.t_max_upper > 0.0) {
            return Err(Error::Config("concatenation upper bound must be positive".into()));
        }
        Ok(())
    }
}

/// The utterances joined into one training sample, base first.
#[derive(Clone, Debug, PartialEq)]
pub struct ConcatSample {
    pub parts: Vec<UtteranceRecord>,
    pub drawn_t: f64,
}

impl ConcatSample {
    pub fn duration(&self) -> f64 {
        self.parts.iter().map(|r| r.duration_seconds).sum()
    }

    pub fn transcript(&self) -> String {
        self.parts.iter().map(|r| r.transcript.as_str()).collect::<Vec<_>>().join(" ")
    }

    /// A single record standing for the whole sample.
    pub fn record(&self) -> UtteranceRecord {
        join_records(&self.parts)
    }
}

/// Joins records in order. Synthetic sources merge into a [`Source::Concat`].
pub fn join_records(parts: &[UtteranceRecord]) -> UtteranceRecord {
    if parts.len() == 1 {
        return parts[0].clone();
    }
    let mut ids = Vec::new();
    let mut synthetic = true;
    for p in parts {
        match &p.source {
            Source::Synthetic(i) => ids.push(*i),
            Source::Concat(more) => ids.extend(more),
            _ => synthetic = false,
        }
    }
    UtteranceRecord {
        id: parts.iter().map(|r| r.id.as_str()).collect::<Vec<_>>().join("+"),
        source: if synthetic {
            Source::Concat(ids)
        } else {
            parts[0].source.clone()
        },
        duration_seconds: parts.iter().map(|r| r.duration_seconds).sum(),
        transcript: parts.iter().map(|r| r.transcript.as_str()).collect::<Vec<_>>().join(" "),
        chapter_id: parts[0].chapter_id.clone(),
        order_in_chapter: parts[0].order_in_chapter,
    }
}

/// Draws `T ~ U[0, t_max_upper]`, then appends uniformly chosen pool entries
/// (with replacement) while the total stays within `T`. A base longer than
/// `T` is returned alone.
pub fn random_concat_sample<R: Rng + ?Sized>(
    pool: &[UtteranceRecord],
    base: &UtteranceRecord,
    policy: &ConcatPolicy,
    rng: &mut R,
) -> Result<ConcatSample> {
    policy.validate()?;
    if !policy.enabled {
        return Ok(ConcatSample {
            parts: vec![base.clone()],
            drawn_t: base.duration_seconds,
        });
    }
    if pool.is_empty() {
        return Err(Error::EmptyInput("concatenation pool"));
    }
    let t = rng.random_range(0.0..=policy.t_max_upper);
    Ok(concat_until(base, t, || pool.choose(rng).expect("non-empty pool").clone()))
}

/// The append loop of [`random_concat_sample`] with the limit and the draws
/// supplied by the caller.
pub fn concat_until<Next>(base: &UtteranceRecord, t: f64, mut next: Next) -> ConcatSample
where
    Next: FnMut() -> UtteranceRecord,
{
    let mut parts = vec![base.clone()];
    let mut total = base.duration_seconds;
    if total <= t + DURATION_SLACK {
        loop {
            let cand = next();
            if total + cand.duration_seconds > t + DURATION_SLACK {
                break;
            }
            total += cand.duration_seconds;
            parts.push(cand);
        }
    }
    ConcatSample { parts, drawn_t: t }
}
