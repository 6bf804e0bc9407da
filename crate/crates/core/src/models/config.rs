use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ops::conv_output_size;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    ImageOnly,
    MeteoOnly,
    Concat,
    Hybrid,
    LearnableParam,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::ImageOnly,
        Variant::MeteoOnly,
        Variant::Concat,
        Variant::Hybrid,
        Variant::LearnableParam,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::ImageOnly => "image_only",
            Variant::MeteoOnly => "meteo_only",
            Variant::Concat => "concat",
            Variant::Hybrid => "hybrid",
            Variant::LearnableParam => "learnable_param",
        }
    }

    pub fn uses_image(self) -> bool {
        self != Variant::MeteoOnly
    }

    pub fn uses_meteo(self) -> bool {
        self != Variant::ImageOnly
    }

    /// Variants with the fused predictor (combiner, post-fusion stack).
    pub fn fuses_features(self) -> bool {
        matches!(self, Variant::Concat | Variant::Hybrid)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == norm)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown variant `{s}` (expected one of image_only, meteo_only, concat, hybrid, learnable_param)"
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Combiner {
    Concatenate,
    Add,
    Multiply,
}

impl Combiner {
    pub const ALL: [Combiner; 3] = [Combiner::Concatenate, Combiner::Add, Combiner::Multiply];

    pub fn name(self) -> &'static str {
        match self {
            Combiner::Concatenate => "concatenate",
            Combiner::Add => "add",
            Combiner::Multiply => "multiply",
        }
    }
}

impl fmt::Display for Combiner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnableMode {
    /// Independent α and β.
    Dual,
    /// One free weight α; the image predictor gets 1 − α.
    SingleComplementary,
}

impl LearnableMode {
    pub fn name(self) -> &'static str {
        match self {
            LearnableMode::Dual => "dual",
            LearnableMode::SingleComplementary => "single_complementary",
        }
    }
}

impl fmt::Display for LearnableMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvStage {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImageExtractorConfig {
    /// Square input resolution the stages are sized for.
    pub input_size: usize,
    pub stages: Vec<ConvStage>,
}

impl Default for ImageExtractorConfig {
    fn default() -> Self {
        let stage = |out_channels, kernel, stride| ConvStage {
            out_channels,
            kernel,
            stride,
        };
        Self {
            input_size: 64,
            stages: vec![stage(16, 5, 2), stage(32, 3, 2), stage(64, 3, 2)],
        }
    }
}

impl ImageExtractorConfig {
    /// Feature width `n`: channels of the last stage.
    pub fn output_dim(&self) -> usize {
        self.stages.last().map_or(0, |s| s.out_channels)
    }

    /// Spatial size after each stage.
    pub fn spatial_sizes(&self) -> Result<Vec<usize>> {
        let mut size = self.input_size;
        let mut out = Vec::with_capacity(self.stages.len());
        for (i, s) in self.stages.iter().enumerate() {
            if s.kernel == 0 || s.stride == 0 || s.out_channels == 0 {
                return Err(Error::Config(format!(
                    "conv stage {i}: channels, kernel and stride must be positive"
                )));
            }
            size = conv_output_size(size, s.kernel, s.stride).ok_or_else(|| {
                Error::Config(format!(
                    "conv stage {i}: kernel {} exceeds spatial size {size}",
                    s.kernel
                ))
            })?;
            out.push(size);
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::Config("image extractor needs at least one conv stage".into()));
        }
        self.spatial_sizes().map(|_| ())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MsmeConfig {
    /// Feature count `k`.
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    /// Representation width `m`.
    pub output_dim: usize,
    pub dropout: f64,
    pub batchnorm: bool,
}

impl Default for MsmeConfig {
    fn default() -> Self {
        Self {
            input_dim: 8,
            hidden: vec![64, 32],
            output_dim: 16,
            dropout: 0.2,
            batchnorm: true,
        }
    }
}

impl MsmeConfig {
    /// Widths of every dense block, ending with `m`.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = self.hidden.clone();
        w.push(self.output_dim);
        w
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::Config("meteorological extractor widths must be positive".into()));
        }
        check_rate(self.dropout)
    }
}

fn check_rate(p: f64) -> Result<()> {
    if (0.0..1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::Config(format!("dropout rate {p} outside [0, 1)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    pub variant: Variant,
    pub combiner: Combiner,
    /// Dense widths between the fused batch norm and the scalar head.
    pub post_fusion: Vec<usize>,
    /// Hidden width of the image projection used by add/multiply.
    pub projection_hidden: usize,
    pub projection_dropout: f64,
    pub learnable_mode: LearnableMode,
    pub alpha_init: f64,
    pub beta_init: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Hybrid,
            combiner: Combiner::Concatenate,
            post_fusion: vec![32, 16],
            projection_hidden: 32,
            projection_dropout: 0.2,
            learnable_mode: LearnableMode::Dual,
            alpha_init: 1.0,
            beta_init: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub image: ImageExtractorConfig,
    pub meteo: MsmeConfig,
    pub fusion: FusionConfig,
}

impl ModelConfig {
    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.fusion.variant = variant;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.fusion.variant;
        if v.uses_image() {
            self.image.validate()?;
        }
        if v.uses_meteo() {
            self.meteo.validate()?;
        }
        if v.fuses_features() {
            if self.fusion.post_fusion.contains(&0) || self.fusion.projection_hidden == 0 {
                return Err(Error::Config("fusion widths must be positive".into()));
            }
            check_rate(self.fusion.projection_dropout)?;
        }
        if v == Variant::LearnableParam
            && !(self.fusion.alpha_init.is_finite() && self.fusion.beta_init.is_finite())
        {
            return Err(Error::Config("initial α and β must be finite".into()));
        }
        Ok(())
    }

    /// Width of the fused vector: `n + m` for concatenation, `m` otherwise.
    pub fn fused_dim(&self) -> usize {
        match self.fusion.combiner {
            Combiner::Concatenate => self.image.output_dim() + self.meteo.output_dim,
            Combiner::Add | Combiner::Multiply => self.meteo.output_dim,
        }
    }

    /// Reduced dimensions for gradient checks and fast tests:
    /// 8×8 patches, n = 8, m = 4, k = 4.
    pub fn small(variant: Variant) -> Self {
        Self {
            image: ImageExtractorConfig {
                input_size: 8,
                stages: vec![
                    ConvStage {
                        out_channels: 4,
                        kernel: 3,
                        stride: 1,
                    },
                    ConvStage {
                        out_channels: 8,
                        kernel: 3,
                        stride: 2,
                    },
                ],
            },
            meteo: MsmeConfig {
                input_dim: 4,
                hidden: vec![6],
                output_dim: 4,
                dropout: 0.0,
                batchnorm: true,
            },
            fusion: FusionConfig {
                variant,
                post_fusion: vec![6, 4],
                projection_hidden: 6,
                projection_dropout: 0.0,
                ..FusionConfig::default()
            },
        }
    }
}
