use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pooled edit counts against `n_ref_words` reference words.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WerReport {
    pub n_ref_words: usize,
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
    pub wer_percent: f64,
    pub del_percent: f64,
}

impl WerReport {
    pub fn from_counts(n_ref_words: usize, substitutions: usize, insertions: usize, deletions: usize) -> Result<Self> {
        if n_ref_words == 0 {
            return Err(Error::EmptyInput("reference words"));
        }
        let n = n_ref_words as f64;
        Ok(Self {
            n_ref_words,
            substitutions,
            insertions,
            deletions,
            wer_percent: 100.0 * (substitutions + insertions + deletions) as f64 / n,
            del_percent: 100.0 * deletions as f64 / n,
        })
    }

    pub fn errors(&self) -> usize {
        self.substitutions + self.insertions + self.deletions
    }
}

/// Unit-cost Levenshtein alignment. Among minimum-cost alignments the one
/// with the most substitutions wins; since `I - D` is fixed by the lengths,
/// this fixes all three counts and keeps them symmetric when reference and
/// hypothesis swap. Remaining path ties prefer insertion over deletion.
pub fn align_and_score<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> Result<WerReport> {
    if reference.is_empty() {
        return Err(Error::EmptyInput("reference"));
    }
    let (s, i, d) = edit_ops(reference, hypothesis);
    WerReport::from_counts(reference.len(), s, i, d)
}

/// `(substitutions, insertions, deletions)` of the preferred alignment.
pub fn edit_ops<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> (usize, usize, usize) {
    let (n, m) = (reference.len(), hypothesis.len());
    let w = m + 1;
    // (edits, insertions + deletions), compared lexicographically
    let mut cost = vec![(0usize, 0usize); (n + 1) * w];
    for j in 0..=m {
        cost[j] = (j, j);
    }
    let step = |(e, g): (usize, usize), de: usize, dg: usize| (e + de, g + dg);
    for i in 1..=n {
        cost[i * w] = (i, i);
        for j in 1..=m {
            let diag = step(cost[(i - 1) * w + j - 1], usize::from(reference[i - 1] != hypothesis[j - 1]), 0);
            let ins = step(cost[i * w + j - 1], 1, 1);
            let del = step(cost[(i - 1) * w + j], 1, 1);
            cost[i * w + j] = diag.min(ins).min(del);
        }
    }
    let (mut i, mut j) = (n, m);
    let (mut s, mut ins, mut del) = (0, 0, 0);
    while i > 0 || j > 0 {
        let here = cost[i * w + j];
        if i > 0 && j > 0 {
            let mismatch = usize::from(reference[i - 1] != hypothesis[j - 1]);
            if step(cost[(i - 1) * w + j - 1], mismatch, 0) == here {
                s += mismatch;
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if j > 0 && step(cost[i * w + j - 1], 1, 1) == here {
            ins += 1;
            j -= 1;
        } else {
            del += 1;
            i -= 1;
        }
    }
    (s, ins, del)
}

/// Lowercased whitespace tokens.
pub fn normalize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

pub fn score_text(reference: &str, hypothesis: &str) -> Result<WerReport> {
    align_and_score(&normalize(reference), &normalize(hypothesis))
}

/// Counts pooled over all pairs, not a mean of per-pair rates.
pub fn corpus_score<'a, I>(pairs: I) -> Result<WerReport>
where
    I: IntoIterator<Item = (&'a str, &'a str)>,
{
    let mut reports = Vec::new();
    for (r, h) in pairs {
        reports.push(score_text(r, h)?);
    }
    pool(&reports)
}

pub fn pool(reports: &[WerReport]) -> Result<WerReport> {
    if reports.is_empty() {
        return Err(Error::EmptyInput("scored pairs"));
    }
    let sum = |f: fn(&WerReport) -> usize| reports.iter().map(f).sum::<usize>();
    WerReport::from_counts(
        sum(|r| r.n_ref_words),
        sum(|r| r.substitutions),
        sum(|r| r.insertions),
        sum(|r| r.deletions),
    )
}
