//! Frozen stand-ins for the pretrained speech encoder and language model,
//! plus the synthetic task that drives them.

mod decoder;
mod encoder;
mod pretrain;
mod task;

pub use decoder::{argmax, Decoded, DecoderConfig, TeacherForced, ToyDecoder};
pub use encoder::{random_orthogonal, EncoderConfig, ToyEncoder};
pub use pretrain::{perplexity, pretrain_toy_lm, PretrainConfig, PretrainReport};
pub use task::{generate_utterance, SyntheticTask, TaskSpec, Vocab};
