pub mod connectors;
pub mod datapipe;
pub mod error;
pub mod eval;
pub mod frozen_stubs;
pub mod numcore;

pub use connectors::{Connector, ConnectorConfig, ConnectorKind, ConnectorSpec, FeatureSequence, QformerSpec, SpeechTokens};
pub use error::{Error, Result};
pub use numcore::{ParamStore, Tape, Tensor};
