//! Hierarchical interaction networks for summary-aware document sentiment
//! classification, with reward-based sample reweighting during training.

pub mod config;
pub mod data;
pub mod encoder;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod parallel;
pub mod pipeline;
pub mod run;
pub mod synthetic;
pub mod text;
pub mod trainer;

pub use encoder::{EncoderConfig, PairEncoder, PairEncoding, Padding};
pub use error::{Error, Result};
pub use model::{HinModel, Mode, ModelConfig};
pub use pipeline::{PipelineConfig, PreparedSample, TextPipeline};
pub use text::{Sample, Vocabulary};
pub use trainer::{train, TrainConfig, TrainOutcome};
