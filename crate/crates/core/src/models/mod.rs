//! Image-only, meteorological-only and the three fusion models.

pub mod config;
pub mod model;

pub use config::{
    Combiner, ConvStage, FusionConfig, ImageExtractorConfig, LearnableMode, ModelConfig, MsmeConfig,
    Variant,
};
pub use model::{FusionModel, HybridOutputs, ImageExtractor, MsmeExtractor, Outputs, ProjectionHead};
