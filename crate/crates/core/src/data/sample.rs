use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use super::meteo::{MeteoVar, StationId};
use crate::error::{Error, Result};
use crate::nn::Tensor;

/// RGB pixel grid stored row-major as `[height, width, 3]`, values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f64>,
}

impl Patch {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != height * width * 3 {
            return Err(Error::dim("patch", &[height, width, 3], &[pixels.len()]));
        }
        if pixels.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Contract("pixel values must lie in [0, 1]".into()));
        }
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Self {
            height,
            width,
            pixels: vec![value; height * width * 3],
        }
    }

    pub fn at(&self, y: usize, x: usize, c: usize) -> f64 {
        self.pixels[(y * self.width + x) * 3 + c]
    }

    pub fn mean_brightness(&self) -> f64 {
        self.pixels.iter().sum::<f64>() / self.pixels.len().max(1) as f64
    }

    /// Appends the patch in channel-major (`[3, H, W]`) order.
    pub fn extend_chw(&self, out: &mut Vec<f64>) {
        for c in 0..3 {
            for y in 0..self.height {
                for x in 0..self.width {
                    out.push(self.at(y, x, c));
                }
            }
        }
    }

    /// Bilinear resampling to `height × width` (pixel-centre aligned).
    pub fn resized(&self, height: usize, width: usize) -> Patch {
        if height == self.height && width == self.width {
            return self.clone();
        }
        let sy = self.height as f64 / height as f64;
        let sx = self.width as f64 / width as f64;
        let mut pixels = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (self.height - 1) as f64);
            let (y0, ty) = (fy.floor() as usize, fy - fy.floor());
            let y1 = (y0 + 1).min(self.height - 1);
            for x in 0..width {
                let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (self.width - 1) as f64);
                let (x0, tx) = (fx.floor() as usize, fx - fx.floor());
                let x1 = (x0 + 1).min(self.width - 1);
                for c in 0..3 {
                    let top = self.at(y0, x0, c) * (1.0 - tx) + self.at(y0, x1, c) * tx;
                    let bottom = self.at(y1, x0, c) * (1.0 - tx) + self.at(y1, x1, c) * tx;
                    pixels.push((top * (1.0 - ty) + bottom * ty).clamp(0.0, 1.0));
                }
            }
        }
        Patch {
            height,
            width,
            pixels,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Normalization {
    Raw,
    /// Z-scored with the statistics whose fingerprint is recorded.
    ZScored { stats_fingerprint: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub normalization: Normalization,
}

impl FeatureVector {
    pub fn raw(values: Vec<f64>) -> Self {
        Self {
            values,
            normalization: Normalization::Raw,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub patch: Patch,
    pub features: FeatureVector,
    /// Volumetric water content, cm³/cm³.
    pub target_vwc: f64,
    pub station_id: StationId,
    pub timestamp: NaiveDateTime,
}

/// Per-station soil and moisture statistics used to calibrate synthetic data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationProfile {
    pub station_id: StationId,
    pub sand: f64,
    pub silt: f64,
    pub clay: f64,
    pub vwc_min: f64,
    pub vwc_max: f64,
    pub vwc_mean: f64,
    pub vwc_std: f64,
}

impl StationProfile {
    pub fn validate(&self) -> Result<()> {
        if !(self.vwc_min < self.vwc_max) {
            return Err(Error::Config(format!(
                "{}: vwc range min {} must be below max {}",
                self.station_id, self.vwc_min, self.vwc_max
            )));
        }
        if !(self.vwc_min < self.vwc_mean && self.vwc_mean < self.vwc_max) {
            return Err(Error::Config(format!(
                "{}: vwc mean {} outside ({}, {})",
                self.station_id, self.vwc_mean, self.vwc_min, self.vwc_max
            )));
        }
        if !(self.vwc_std > 0.0) {
            return Err(Error::Config(format!("{}: vwc std must be positive", self.station_id)));
        }
        let texture = self.sand + self.silt + self.clay;
        if (texture - 100.0).abs() > 0.5 {
            return Err(Error::Config(format!(
                "{}: sand/silt/clay sum to {texture}, expected 100 ± 0.5",
                self.station_id
            )));
        }
        Ok(())
    }

    /// The three monitoring stations' soil texture and VWC statistics.
    pub fn reference() -> Vec<StationProfile> {
        vec![
            StationProfile {
                station_id: StationId::Station1,
                sand: 18.0,
                silt: 56.5,
                clay: 25.6,
                vwc_min: 0.158,
                vwc_max: 0.417,
                vwc_mean: 0.3085,
                vwc_std: 0.0496,
            },
            StationProfile {
                station_id: StationId::Station2,
                sand: 28.8,
                silt: 45.2,
                clay: 26.0,
                vwc_min: 0.118,
                vwc_max: 0.435,
                vwc_mean: 0.2455,
                vwc_std: 0.0646,
            },
            StationProfile {
                station_id: StationId::Station3,
                sand: 19.5,
                silt: 54.2,
                clay: 26.3,
                vwc_min: 0.151,
                vwc_max: 0.423,
                vwc_mean: 0.3126,
                vwc_std: 0.0582,
            },
        ]
    }
}

/// Model-ready mini-batch.
#[derive(Debug, Clone)]
pub struct Batch {
    /// `[B, 3, H, W]`
    pub patches: Tensor,
    /// `[B, k]`
    pub features: Tensor,
    /// `[B]`
    pub targets: Tensor,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    /// Assembles a batch. Patches must already have a common resolution.
    pub fn from_samples(samples: &[&Sample]) -> Result<Self> {
        let (h, w) = samples
            .first()
            .map_or((1, 1), |s| (s.patch.height, s.patch.width));
        let k = samples.first().map_or(0, |s| s.features.values.len());
        let mut pix = Vec::with_capacity(samples.len() * 3 * h * w);
        let mut feats = Vec::with_capacity(samples.len() * k);
        let mut targets = Vec::with_capacity(samples.len());
        for s in samples {
            if s.patch.height != h || s.patch.width != w {
                return Err(Error::dim(
                    "batch patches",
                    &[h, w],
                    &[s.patch.height, s.patch.width],
                ));
            }
            if s.features.values.len() != k {
                return Err(Error::dim("batch features", &[k], &[s.features.values.len()]));
            }
            s.patch.extend_chw(&mut pix);
            feats.extend_from_slice(&s.features.values);
            targets.push(s.target_vwc);
        }
        let b = samples.len();
        Ok(Self {
            patches: Tensor::new(vec![b, 3, h, w], pix)?,
            features: Tensor::new(vec![b, k], feats)?,
            targets: Tensor::from_vec(targets),
        })
    }
}

/// Feature list carried alongside a set of samples.
pub fn feature_names(vars: &[MeteoVar]) -> Vec<String> {
    vars.iter().map(|v| v.column().to_string()).collect()
}
