//! Z-score normalization fitted on the training split.

use std::path::Path;

use super::sample::{FeatureVector, Normalization, Sample};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct NormalizerStats {
    pub features: Vec<String>,
    pub mean: Vec<f64>,
    /// Population standard deviation (ddof = 0); always positive.
    pub std: Vec<f64>,
}

impl NormalizerStats {
    /// Fits per-feature mean and population std over raw feature rows.
    pub fn fit(features: &[String], rows: &[&[f64]]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Empty("normalizer needs at least one row".into()));
        }
        let k = features.len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; k];
        for row in rows {
            if row.len() != k {
                return Err(Error::dim("normalizer", &[k], &[row.len()]));
            }
            for (m, v) in mean.iter_mut().zip(*row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; k];
        for row in rows {
            for ((s, v), m) in var.iter_mut().zip(*row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std: Vec<f64> = var.iter().map(|s| (s / n).sqrt()).collect();
        if let Some(j) = std.iter().position(|s| !(*s > 0.0)) {
            return Err(Error::Config(format!(
                "feature `{}` is constant on the training split",
                features[j]
            )));
        }
        Ok(Self {
            features: features.to_vec(),
            mean,
            std,
        })
    }

    pub fn fit_samples(features: &[String], train: &[Sample]) -> Result<Self> {
        if let Some(s) = train
            .iter()
            .find(|s| s.features.normalization != Normalization::Raw)
        {
            return Err(Error::Contract(format!(
                "normalizer must be fitted on raw features (sample at {})",
                s.timestamp
            )));
        }
        let rows: Vec<&[f64]> = train.iter().map(|s| s.features.values.as_slice()).collect();
        Self::fit(features, &rows)
    }

    /// FNV-1a hash over names and the bit patterns of every statistic.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for b in bytes {
                h ^= u64::from(*b);
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        for name in &self.features {
            eat(name.as_bytes());
            eat(&[0]);
        }
        for v in self.mean.iter().chain(&self.std) {
            eat(&v.to_bits().to_le_bytes());
        }
        h
    }

    pub fn transform(&self, values: &[f64]) -> Vec<f64> {
        values
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn apply(&self, features: &FeatureVector) -> Result<FeatureVector> {
        if features.normalization != Normalization::Raw {
            return Err(Error::Contract("features are already normalized".into()));
        }
        if features.values.len() != self.mean.len() {
            return Err(Error::dim(
                "apply_normalizer",
                &[self.mean.len()],
                &[features.values.len()],
            ));
        }
        Ok(FeatureVector {
            values: self.transform(&features.values),
            normalization: Normalization::ZScored {
                stats_fingerprint: self.fingerprint(),
            },
        })
    }

    pub fn apply_samples(&self, samples: &mut [Sample]) -> Result<()> {
        for s in samples {
            s.features = self.apply(&s.features)?;
        }
        Ok(())
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["feature", "mean", "std"])?;
        for ((f, m), s) in self.features.iter().zip(&self.mean).zip(&self.std) {
            w.write_record([f.clone(), m.to_string(), s.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingPath(path.to_path_buf()));
        }
        let mut rdr = csv::Reader::from_path(path)?;
        let (mut features, mut mean, mut std) = (Vec::new(), Vec::new(), Vec::new());
        for (i, row) in rdr.records().enumerate() {
            let row = row?;
            let num = |col: usize, name: &str| -> Result<f64> {
                row.get(col)
                    .unwrap_or("")
                    .parse()
                    .map_err(|e: std::num::ParseFloatError| Error::Parse {
                        row: i + 1,
                        column: name.into(),
                        message: e.to_string(),
                    })
            };
            features.push(row.get(0).unwrap_or("").to_string());
            mean.push(num(1, "mean")?);
            std.push(num(2, "std")?);
        }
        if std.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Config("stored std must be positive".into()));
        }
        Ok(Self {
            features,
            mean,
            std,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(k: usize) -> Vec<String> {
        (0..k).map(|i| format!("f{i}")).collect()
    }

    #[test]
    fn one_two_three() {
        let rows: Vec<&[f64]> = vec![&[1.0], &[2.0], &[3.0]];
        let stats = NormalizerStats::fit(&names(1), &rows).unwrap();
        assert_eq!(stats.mean, vec![2.0]);
        assert!((stats.std[0] - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
        let t: Vec<f64> = [1.0, 2.0, 3.0].iter().map(|v| stats.transform(&[*v])[0]).collect();
        assert!((t[0] + 1.2247).abs() < 1e-4 && t[1] == 0.0 && (t[2] - 1.2247).abs() < 1e-4);
    }

    #[test]
    fn mean_maps_to_zero() {
        let rows: Vec<&[f64]> = vec![&[4.0, 10.0], &[8.0, 30.0]];
        let stats = NormalizerStats::fit(&names(2), &rows).unwrap();
        assert_eq!(stats.transform(&[6.0, 20.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn constant_column_names_feature() {
        let rows: Vec<&[f64]> = vec![&[1.0, 5.0], &[2.0, 5.0]];
        let err = NormalizerStats::fit(&names(2), &rows).unwrap_err();
        assert!(err.to_string().contains("f1"), "{err}");
    }

    #[test]
    fn csv_roundtrip_preserves_fingerprint() {
        let rows: Vec<&[f64]> = vec![&[0.1, 1.0 / 3.0], &[0.7, 2.5], &[0.2, -1.0]];
        let stats = NormalizerStats::fit(&names(2), &rows).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("normalizer.csv");
        stats.save(&path).unwrap();
        let loaded = NormalizerStats::load(&path).unwrap();
        assert_eq!(loaded, stats);
        assert_eq!(loaded.fingerprint(), stats.fingerprint());
    }

    #[test]
    fn apply_tags_fingerprint() {
        let rows: Vec<&[f64]> = vec![&[1.0], &[3.0]];
        let stats = NormalizerStats::fit(&names(1), &rows).unwrap();
        let fv = stats.apply(&FeatureVector::raw(vec![2.0])).unwrap();
        assert_eq!(
            fv.normalization,
            Normalization::ZScored {
                stats_fingerprint: stats.fingerprint()
            }
        );
        assert!(stats.apply(&fv).is_err());
    }
}
