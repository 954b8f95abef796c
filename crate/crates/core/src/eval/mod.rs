//! WER and deletion-rate scoring with per-duration breakdowns.

mod report;
mod wer;

pub use report::{duration_bucket_report, is_success, BucketRow, DecodeOutcome, EvalReport, SUCCESS_MAX_DEL_PERCENT, SUCCESS_RULE};
pub use wer::{align_and_score, corpus_score, edit_ops, normalize, pool, score_text, WerReport};
