//! Question-attended span extraction (QASE) on a tiny encoder-decoder
//! language model, with the data, metric and training pipeline around it.
//!
//! The tagging head reads the encoder's hidden states, lets context tokens
//! attend over the question, and predicts an IO tag per context token. It
//! is trained jointly with the language model and ignored at inference,
//! where answers come from greedy decoding alone.

pub mod data;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod numcore;
pub mod plm;
pub mod qase;
pub mod rng;
pub mod spans;

pub use data::{DatasetKind, PromptOrder, PromptTemplate, RawExample, TokenizedExample, Vocab};
pub use error::{Error, Result};
pub use harness::{TrainConfig, TrainState};
pub use metrics::MetricReport;
pub use model::{ModelConfig, QaseModel};
pub use qase::HeadKind;
pub use spans::{IoTag, SpanSet};
