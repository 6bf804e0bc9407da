//! Patch cropping and image file IO.

use std::path::Path;

use image::{ImageFormat, Rgb, RgbImage};

use super::bbox::BoundingBox;
use crate::data::sample::Patch;
use crate::error::{Error, Result};

/// Confidence below which detected boxes are not cropped.
pub const DEFAULT_MIN_CONFIDENCE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub enum Crop {
    Kept(Patch),
    /// The box's confidence fell below the threshold.
    Skipped { confidence: f64 },
}

impl Crop {
    pub fn patch(self) -> Option<Patch> {
        match self {
            Crop::Kept(p) => Some(p),
            Crop::Skipped { .. } => None,
        }
    }
}

fn round_half_up(v: f64) -> f64 {
    (v + 0.5).floor()
}

/// Integer pixel window `(x0, y0, x1, y1)` after half-up rounding, checked
/// against an image of `width × height`.
pub fn pixel_window(bbox: &BoundingBox, width: usize, height: usize) -> Result<[usize; 4]> {
    let r = bbox.coords().map(round_half_up);
    let out_of_bounds = || Error::OutOfBounds {
        bbox: bbox.coords(),
        width,
        height,
    };
    if r[0] < 0.0 || r[1] < 0.0 || r[2] > width as f64 || r[3] > height as f64 {
        return Err(out_of_bounds());
    }
    if !(r[0] < r[2] && r[1] < r[3]) {
        return Err(Error::Contract(format!(
            "box {:?} collapses to zero size after rounding",
            bbox.coords()
        )));
    }
    Ok(r.map(|v| v as usize))
}

/// Crops the rounded box out of `image`, or returns [`Crop::Skipped`] when
/// the box confidence is below `min_confidence`.
pub fn crop_patch(image: &Patch, bbox: &BoundingBox, min_confidence: f64) -> Result<Crop> {
    bbox.validate()?;
    if bbox.confidence < min_confidence {
        return Ok(Crop::Skipped {
            confidence: bbox.confidence,
        });
    }
    let [x0, y0, x1, y1] = pixel_window(bbox, image.width, image.height)?;
    let mut pixels = Vec::with_capacity((x1 - x0) * (y1 - y0) * 3);
    for y in y0..y1 {
        let start = (y * image.width + x0) * 3;
        let end = (y * image.width + x1) * 3;
        pixels.extend_from_slice(&image.pixels[start..end]);
    }
    Ok(Crop::Kept(Patch {
        height: y1 - y0,
        width: x1 - x0,
        pixels,
    }))
}

/// Reads a PNG or binary PPM into a [0, 1] pixel grid.
pub fn read_image(path: &Path) -> Result<Patch> {
    if !path.exists() {
        return Err(Error::MissingPath(path.to_path_buf()));
    }
    let img = image::open(path)?.to_rgb8();
    let (w, h) = img.dimensions();
    let pixels = img.as_raw().iter().map(|&v| f64::from(v) / 255.0).collect();
    Ok(Patch {
        height: h as usize,
        width: w as usize,
        pixels,
    })
}

fn to_rgb8(patch: &Patch) -> RgbImage {
    let quantize = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    RgbImage::from_fn(patch.width as u32, patch.height as u32, |x, y| {
        let (x, y) = (x as usize, y as usize);
        Rgb([
            quantize(patch.at(y, x, 0)),
            quantize(patch.at(y, x, 1)),
            quantize(patch.at(y, x, 2)),
        ])
    })
}

/// Writes an 8-bit RGB PNG.
pub fn write_png(path: &Path, patch: &Patch) -> Result<()> {
    to_rgb8(patch).save_with_format(path, ImageFormat::Png)?;
    Ok(())
}

/// Writes a binary (P6) PPM.
pub fn write_ppm(path: &Path, patch: &Patch) -> Result<()> {
    to_rgb8(patch).save_with_format(path, ImageFormat::Pnm)?;
    Ok(())
}
