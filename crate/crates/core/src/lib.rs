//! Memory-based semi-supervised video object segmentation: encoders, pixel and
//! object memory, object transformer, decoder, test-time augmentation fusion
//! and J&F evaluation.

mod error;
mod init;

pub mod config;
pub mod decoder;
pub mod encoders;
pub mod fusion;
pub mod memory;
pub mod metrics;
pub mod numerics;
pub mod object_memory;
pub mod par;
pub mod pipeline;
pub mod transformer;

pub use config::{EncoderMode, ModelConfig};
pub use error::{Error, Result};
pub use fusion::{Scale, SegmentationResult};
pub use memory::MemoryConfig;
pub use numerics::Tensor;
pub use pipeline::{PipelineConfig, Segmenter, VideoTask};
