//! MAE/MAPE, residual-band analysis and station-wise reports.
//!
//! Residuals are `prediction − target`; band endpoints are inclusive; MAPE
//! is in percent.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::normalize::NormalizerStats;
use crate::data::sample::{Batch, Normalization, Sample};
use crate::error::{Error, Result};
use crate::models::FusionModel;

pub const DEFAULT_BAND: (f64, f64) = (-0.05, 0.05);
const HIST_MIN: f64 = -0.2;
const HIST_BIN: f64 = 0.01;
const HIST_BINS: usize = 40;

fn check_pairs(predictions: &[f64], targets: &[f64], op: &'static str) -> Result<()> {
    if predictions.len() != targets.len() {
        return Err(Error::dim(op, &[predictions.len()], &[targets.len()]));
    }
    if predictions.is_empty() {
        return Err(Error::Empty(format!("{op} of an empty set")));
    }
    Ok(())
}

pub fn mae(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    check_pairs(predictions, targets, "mae")?;
    let sum: f64 = predictions.iter().zip(targets).map(|(p, t)| (p - t).abs()).sum();
    Ok(sum / predictions.len() as f64)
}

pub fn mape(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    check_pairs(predictions, targets, "mape")?;
    if let Some(index) = targets.iter().position(|t| *t == 0.0) {
        return Err(Error::UndefinedMape { index });
    }
    let sum: f64 = predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| ((p - t) / t).abs())
        .sum();
    Ok(100.0 * sum / predictions.len() as f64)
}

pub fn residuals(predictions: &[f64], targets: &[f64]) -> Vec<f64> {
    predictions.iter().zip(targets).map(|(p, t)| p - t).collect()
}

/// Fixed-width histogram of residuals over `[min, min + bins·width)`, with
/// out-of-range values counted separately.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub min: f64,
    pub bin_width: f64,
    pub counts: Vec<usize>,
    pub underflow: usize,
    pub overflow: usize,
}

impl Histogram {
    pub fn of(values: &[f64]) -> Self {
        let mut h = Histogram {
            min: HIST_MIN,
            bin_width: HIST_BIN,
            counts: vec![0; HIST_BINS],
            underflow: 0,
            overflow: 0,
        };
        for &v in values {
            let pos = ((v - h.min) / h.bin_width).floor();
            if pos < 0.0 {
                h.underflow += 1;
            } else if pos >= HIST_BINS as f64 {
                h.overflow += 1;
            } else {
                h.counts[pos as usize] += 1;
            }
        }
        h
    }

    pub fn bin_start(&self, i: usize) -> f64 {
        self.min + i as f64 * self.bin_width
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandAnalysis {
    pub band: (f64, f64),
    /// Fraction of residuals inside the closed band.
    pub fraction: f64,
    pub histogram: Histogram,
}

pub fn band_fraction(residuals: &[f64], band: (f64, f64)) -> f64 {
    let inside = residuals
        .iter()
        .filter(|r| **r >= band.0 && **r <= band.1)
        .count();
    inside as f64 / residuals.len().max(1) as f64
}

pub fn residual_band_analysis(
    predictions: &[f64],
    targets: &[f64],
    band: (f64, f64),
) -> Result<BandAnalysis> {
    check_pairs(predictions, targets, "residual_band_analysis")?;
    if !(band.0 < band.1) {
        return Err(Error::Config(format!("band {band:?} needs lo < hi")));
    }
    let r = residuals(predictions, targets);
    Ok(BandAnalysis {
        band,
        fraction: band_fraction(&r, band),
        histogram: Histogram::of(&r),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationReport {
    pub n_samples: usize,
    pub mae: f64,
    pub mape: f64,
    pub band_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_samples: usize,
    pub mae: f64,
    pub mape: f64,
    pub band: (f64, f64),
    pub band_fraction: f64,
    pub histogram: Histogram,
    pub per_station: BTreeMap<String, StationReport>,
    pub residuals: Vec<f64>,
}

impl EvalReport {
    /// Builds a report from already computed predictions.
    pub fn from_predictions(
        stations: &[String],
        predictions: &[f64],
        targets: &[f64],
        band: (f64, f64),
    ) -> Result<Self> {
        check_pairs(predictions, targets, "eval_report")?;
        if stations.len() != targets.len() {
            return Err(Error::dim("eval_report stations", &[targets.len()], &[stations.len()]));
        }
        let analysis = residual_band_analysis(predictions, targets, band)?;
        let mut groups: BTreeMap<&str, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
        for ((s, p), t) in stations.iter().zip(predictions).zip(targets) {
            let e = groups.entry(s).or_default();
            e.0.push(*p);
            e.1.push(*t);
        }
        let mut per_station = BTreeMap::new();
        for (s, (p, t)) in groups {
            per_station.insert(
                s.to_string(),
                StationReport {
                    n_samples: p.len(),
                    mae: mae(&p, &t)?,
                    mape: mape(&p, &t)?,
                    band_fraction: band_fraction(&residuals(&p, &t), band),
                },
            );
        }
        Ok(EvalReport {
            n_samples: predictions.len(),
            mae: mae(predictions, targets)?,
            mape: mape(predictions, targets)?,
            band,
            band_fraction: analysis.fraction,
            histogram: analysis.histogram,
            per_station,
            residuals: residuals(predictions, targets),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    /// One `overall` row followed by one row per station.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["scope", "n_samples", "mae", "mape", "band_fraction"])?;
        w.write_record([
            "overall".to_string(),
            self.n_samples.to_string(),
            self.mae.to_string(),
            self.mape.to_string(),
            self.band_fraction.to_string(),
        ])?;
        for (s, r) in &self.per_station {
            w.write_record([
                s.clone(),
                r.n_samples.to_string(),
                r.mae.to_string(),
                r.mape.to_string(),
                r.band_fraction.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs one eval-mode inference pass over `samples` and reports overall and
/// per-station metrics. Every sample must carry features z-scored with
/// `normalizer`.
pub fn stationwise_report(
    model: &FusionModel,
    samples: &[Sample],
    normalizer: &NormalizerStats,
) -> Result<EvalReport> {
    let expected = Normalization::ZScored {
        stats_fingerprint: normalizer.fingerprint(),
    };
    if let Some(i) = samples.iter().position(|s| s.features.normalization != expected) {
        return Err(Error::Contract(format!(
            "sample {i} was not normalized with the supplied training statistics"
        )));
    }
    let refs: Vec<&Sample> = samples.iter().collect();
    let batch = Batch::from_samples(&refs)?;
    let preds = model.predict(&batch)?;
    let stations: Vec<String> = samples.iter().map(|s| s.station_id.to_string()).collect();
    EvalReport::from_predictions(&stations, &preds, batch.targets.data(), DEFAULT_BAND)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mae_examples() {
        assert_eq!(mae(&[0.2, 0.4], &[0.2, 0.4]).unwrap(), 0.0);
        assert!((mae(&[0.25, 0.35], &[0.2, 0.4]).unwrap() - 0.05).abs() < 1e-15);
        assert!((mae(&[0.3], &[0.26]).unwrap() - 0.04).abs() < 1e-15);
        assert!(matches!(mae(&[], &[]), Err(Error::Empty(_))));
    }

    #[test]
    fn mape_examples() {
        assert_eq!(mape(&[0.3], &[0.3]).unwrap(), 0.0);
        assert!((mape(&[0.30, 0.20], &[0.25, 0.25]).unwrap() - 20.0).abs() < 1e-12);
        assert!(matches!(
            mape(&[0.1, 0.2], &[0.1, 0.0]),
            Err(Error::UndefinedMape { index: 1 })
        ));
    }

    #[test]
    fn band_counting() {
        let r = [-0.06, -0.02, 0.0, 0.03, 0.08];
        let targets = [0.3; 5];
        let preds: Vec<f64> = r.iter().map(|x| 0.3 + x).collect();
        let a = residual_band_analysis(&preds, &targets, DEFAULT_BAND).unwrap();
        assert!((a.fraction - 0.6).abs() < 1e-12);
        assert_eq!(band_fraction(&[0.05, -0.05], DEFAULT_BAND), 1.0);
        assert_eq!(band_fraction(&[0.0; 4], DEFAULT_BAND), 1.0);
    }

    #[test]
    fn histogram_counts_everything() {
        let h = Histogram::of(&[-0.5, -0.2, 0.0, 0.005, 0.199, 0.2, 3.0]);
        assert_eq!(h.underflow, 1);
        assert_eq!(h.overflow, 2);
        assert_eq!(h.counts.iter().sum::<usize>(), 4);
        assert_eq!(h.counts[20], 2);
    }

    #[test]
    fn single_station_matches_overall() {
        let st = vec!["Station1".to_string(); 3];
        let r = EvalReport::from_predictions(&st, &[0.2, 0.3, 0.25], &[0.21, 0.28, 0.3], DEFAULT_BAND).unwrap();
        let s = &r.per_station["Station1"];
        assert_eq!((s.mae, s.mape, s.n_samples), (r.mae, r.mape, r.n_samples));
    }

    #[test]
    fn station_maes_recombine() {
        let st: Vec<String> = ["a", "b", "a", "c", "b", "a"].iter().map(|s| s.to_string()).collect();
        let p = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6];
        let t = [0.15, 0.22, 0.2, 0.41, 0.45, 0.66];
        let r = EvalReport::from_predictions(&st, &p, &t, DEFAULT_BAND).unwrap();
        let weighted: f64 = r.per_station.values().map(|s| s.mae * s.n_samples as f64).sum::<f64>()
            / r.n_samples as f64;
        assert!((weighted - r.mae).abs() < 1e-12);
        assert_eq!(r.per_station.values().map(|s| s.n_samples).sum::<usize>(), 6);
    }
}
