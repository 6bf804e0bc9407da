//! Builds an on-disk dataset from a patch manifest and a meteorological table.

use std::collections::HashMap;
use std::path::Path;

use chrono::NaiveDateTime;

use super::manifest::read_manifest;
use super::meteo::{load_meteo_table, MeteoRecord, MeteoSchema, MeteoVar, StationId};
use super::sample::{FeatureVector, Sample};
use super::store::{write_dataset, DatasetMeta, PatchOrigin, SplitOptions};
use crate::error::{Error, Result};
use crate::patch::{crop_patch, read_image, Crop, DEFAULT_MIN_CONFIDENCE};

#[derive(Debug, Clone, PartialEq)]
pub struct PrepareOptions {
    pub min_confidence: f64,
    pub features: Vec<MeteoVar>,
    /// Cropped patches are resampled to `patch_size × patch_size`.
    pub patch_size: usize,
    pub split: SplitOptions,
}

impl Default for PrepareOptions {
    fn default() -> Self {
        Self {
            min_confidence: DEFAULT_MIN_CONFIDENCE,
            features: MeteoVar::DEFAULT_FEATURES.to_vec(),
            patch_size: 64,
            split: SplitOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrepareSummary {
    pub images: usize,
    pub boxes: usize,
    pub skipped_low_confidence: usize,
    /// Patches whose (station, timestamp) has no meteorological row.
    pub unpaired: usize,
    pub rejected_meteo_rows: usize,
    pub meta: DatasetMeta,
}

/// Crops every above-threshold box, pairs it with the meteorological row
/// sharing its station and timestamp exactly, and writes the dataset.
pub fn prepare_dataset(
    manifest: &Path,
    meteo_csv: &Path,
    schema: &MeteoSchema,
    out: &Path,
    options: &PrepareOptions,
) -> Result<PrepareSummary> {
    if options.patch_size == 0 {
        return Err(Error::Config("patch size must be positive".into()));
    }
    let entries = read_manifest(manifest)?;
    let table = load_meteo_table(meteo_csv, schema)?;
    let lookup: HashMap<(StationId, NaiveDateTime), &MeteoRecord> = table
        .records
        .iter()
        .map(|r| ((r.station_id.clone(), r.timestamp), r))
        .collect();

    let mut samples = Vec::new();
    let mut origins = Vec::new();
    let (mut boxes, mut skipped, mut unpaired) = (0, 0, 0);
    for entry in &entries {
        let record = lookup.get(&(entry.station_id.clone(), entry.timestamp));
        let image = read_image(&entry.image)?;
        for bbox in &entry.boxes {
            boxes += 1;
            let patch = match crop_patch(&image, bbox, options.min_confidence)? {
                Crop::Kept(p) => p,
                Crop::Skipped { .. } => {
                    skipped += 1;
                    continue;
                }
            };
            let Some(record) = record else {
                unpaired += 1;
                continue;
            };
            samples.push(Sample {
                patch: patch.resized(options.patch_size, options.patch_size),
                features: FeatureVector::raw(record.features(&options.features)),
                target_vwc: entry.vwc,
                station_id: entry.station_id.clone(),
                timestamp: entry.timestamp,
            });
            origins.push(PatchOrigin {
                source_image: entry.image.display().to_string(),
                bbox: bbox.coords(),
            });
        }
    }
    if unpaired > 0 {
        log::warn!("{unpaired} patches had no meteorological row with the same station and timestamp");
    }
    if samples.is_empty() {
        return Err(Error::Empty(format!(
            "no patch could be paired with a meteorological row ({unpaired} unpaired, {skipped} below confidence)"
        )));
    }
    let meta = write_dataset(out, &samples, &origins, &options.features, options.split, "prepared")?;
    Ok(PrepareSummary {
        images: entries.len(),
        boxes,
        skipped_low_confidence: skipped,
        unpaired,
        rejected_meteo_rows: table.rejected.len(),
        meta,
    })
}
