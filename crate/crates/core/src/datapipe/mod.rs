//! Manifests, random concatenation, window padding, long-form test sets,
//! batching and log-mel extraction for real audio.

mod batch;
mod concat;
mod logmel;
mod longform;
mod manifest;
mod record;

pub use batch::{make_batches, Batch, BatchStream};
pub use concat::{concat_until, join_records, random_concat_sample, ConcatPolicy, ConcatSample};
pub use logmel::{extract_logmel, frame_count, logmel_from_wav, mel_filterbank, read_wav};
pub use longform::{build_longform_testset, group_longform, pad_to_window, LongformSpec};
pub use manifest::{format_line, load_manifest, parse_line, read_manifest, save_manifest, synthetic_indices, write_manifest};
pub use record::{Source, UtteranceRecord};
