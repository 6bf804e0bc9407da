//! On-disk dataset layout shared by prepared and synthetic datasets.
//!
//! ```text
//! <root>/dataset.json        metadata (feature list, patch size, split settings)
//! <root>/patches/<id>.png    one 8-bit RGB patch per sample
//! <root>/patch_index.csv     sample_id, patch_path, source_image, box, station, timestamp, vwc
//! <root>/features.csv        sample_id, station_id, timestamp, vwc, z-scored features
//! <root>/normalizer.csv      feature, mean, std (fitted on the training split)
//! <root>/splits/{train,val,test}.csv   sample_id lists
//! ```

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::meteo::{format_timestamp, parse_timestamp, MeteoVar, StationId};
use super::normalize::NormalizerStats;
use super::sample::{feature_names, FeatureVector, Normalization, Sample};
use super::split::{split_indices, SplitIndices, SplitRatios, Splits};
use crate::error::{Error, Result};
use crate::patch::{read_image, write_png};

pub const META_FILE: &str = "dataset.json";
pub const PATCH_DIR: &str = "patches";
pub const INDEX_FILE: &str = "patch_index.csv";
pub const FEATURES_FILE: &str = "features.csv";
pub const NORMALIZER_FILE: &str = "normalizer.csv";
pub const SPLIT_DIR: &str = "splits";
pub const SPLIT_NAMES: [&str; 3] = ["train", "val", "test"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitOptions {
    pub ratios: SplitRatios,
    pub seed: u64,
    pub stratify: bool,
}

impl Default for SplitOptions {
    fn default() -> Self {
        Self {
            ratios: SplitRatios::default(),
            seed: 0,
            stratify: true,
        }
    }
}

/// Where a patch came from: the source image and the box it was cut from.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchOrigin {
    pub source_image: String,
    pub bbox: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub source: String,
    pub features: Vec<String>,
    pub n_samples: usize,
    pub patch_height: usize,
    pub patch_width: usize,
    pub stations: Vec<StationId>,
    pub split: SplitOptions,
}

impl DatasetMeta {
    pub fn feature_vars(&self) -> Result<Vec<MeteoVar>> {
        self.features.iter().map(|f| MeteoVar::from_str(f)).collect()
    }
}

#[derive(Debug, Clone)]
pub struct StoredDataset {
    pub meta: DatasetMeta,
    pub ids: Vec<String>,
    /// Samples with z-scored features, in id order.
    pub samples: Vec<Sample>,
    pub normalizer: NormalizerStats,
    pub splits: SplitIndices,
}

impl StoredDataset {
    pub fn partition(&self) -> Splits {
        let pick = |idx: &[usize]| idx.iter().map(|&i| self.samples[i].clone()).collect();
        Splits {
            train: pick(&self.splits.train),
            val: pick(&self.splits.val),
            test: pick(&self.splits.test),
        }
    }

    pub fn split(&self, name: &str) -> Result<Vec<Sample>> {
        let idx = match name {
            "train" => &self.splits.train,
            "val" => &self.splits.val,
            "test" => &self.splits.test,
            other => return Err(Error::Config(format!("unknown split `{other}`"))),
        };
        Ok(idx.iter().map(|&i| self.samples[i].clone()).collect())
    }
}

fn sample_id(i: usize) -> String {
    format!("{i:06}")
}

fn patch_path(id: &str) -> String {
    format!("{PATCH_DIR}/{id}.png")
}

/// Splits raw samples, fits the normalizer on the training part and writes
/// the full layout under `root`.
pub fn write_dataset(
    root: &Path,
    samples: &[Sample],
    origins: &[PatchOrigin],
    features: &[MeteoVar],
    split: SplitOptions,
    source: &str,
) -> Result<DatasetMeta> {
    if samples.len() != origins.len() {
        return Err(Error::dim("write_dataset", &[samples.len()], &[origins.len()]));
    }
    let first = samples
        .first()
        .ok_or_else(|| Error::Empty("no samples to write".into()))?;
    let (h, w) = (first.patch.height, first.patch.width);
    if let Some(s) = samples.iter().find(|s| s.patch.height != h || s.patch.width != w) {
        return Err(Error::dim("write_dataset patches", &[h, w], &[s.patch.height, s.patch.width]));
    }
    let groups: Vec<StationId> = samples.iter().map(|s| s.station_id.clone()).collect();
    let idx = split_indices(&groups, split.ratios, split.seed, split.stratify)?;
    let names = feature_names(features);
    let train: Vec<Sample> = idx.train.iter().map(|&i| samples[i].clone()).collect();
    let normalizer = NormalizerStats::fit_samples(&names, &train)?;

    std::fs::create_dir_all(root.join(PATCH_DIR))?;
    std::fs::create_dir_all(root.join(SPLIT_DIR))?;

    let mut index = csv::Writer::from_path(root.join(INDEX_FILE))?;
    index.write_record([
        "sample_id",
        "patch_path",
        "source_image",
        "x_min",
        "y_min",
        "x_max",
        "y_max",
        "station_id",
        "timestamp",
        "vwc",
    ])?;
    let mut table = csv::Writer::from_path(root.join(FEATURES_FILE))?;
    let mut header = vec![
        "sample_id".to_string(),
        "station_id".into(),
        "timestamp".into(),
        "vwc".into(),
    ];
    header.extend(names.iter().cloned());
    table.write_record(&header)?;

    for (i, (s, o)) in samples.iter().zip(origins).enumerate() {
        let id = sample_id(i);
        let rel = patch_path(&id);
        write_png(&root.join(&rel), &s.patch)?;
        let ts = format_timestamp(&s.timestamp);
        let mut row = vec![id.clone(), rel, o.source_image.clone()];
        row.extend(o.bbox.iter().map(f64::to_string));
        row.extend([s.station_id.to_string(), ts.clone(), s.target_vwc.to_string()]);
        index.write_record(&row)?;

        let z = normalizer.apply(&s.features)?;
        let mut row = vec![id, s.station_id.to_string(), ts, s.target_vwc.to_string()];
        row.extend(z.values.iter().map(f64::to_string));
        table.write_record(&row)?;
    }
    index.flush()?;
    table.flush()?;
    normalizer.save(&root.join(NORMALIZER_FILE))?;

    for (name, ids) in SPLIT_NAMES.iter().zip([&idx.train, &idx.val, &idx.test]) {
        let mut w = csv::Writer::from_path(root.join(SPLIT_DIR).join(format!("{name}.csv")))?;
        w.write_record(["sample_id"])?;
        for &i in ids {
            w.write_record([sample_id(i)])?;
        }
        w.flush()?;
    }

    let mut stations: Vec<StationId> = groups;
    stations.sort();
    stations.dedup();
    let meta = DatasetMeta {
        source: source.to_string(),
        features: names,
        n_samples: samples.len(),
        patch_height: h,
        patch_width: w,
        stations,
        split,
    };
    let mut json = serde_json::to_string_pretty(&meta)?;
    json.push('\n');
    std::fs::write(root.join(META_FILE), json)?;
    Ok(meta)
}

fn require(path: PathBuf) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Error::MissingPath(path))
    }
}

fn parse_error(row: usize, column: &str, message: impl ToString) -> Error {
    Error::Parse {
        row,
        column: column.to_string(),
        message: message.to_string(),
    }
}

fn read_ids(path: &Path, lookup: &HashMap<String, usize>) -> Result<Vec<usize>> {
    let mut rdr = csv::Reader::from_path(require(path.to_path_buf())?)?;
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let id = row.get(0).unwrap_or("");
        let &k = lookup
            .get(id)
            .ok_or_else(|| parse_error(i + 1, "sample_id", format!("unknown sample `{id}`")))?;
        out.push(k);
    }
    Ok(out)
}

/// Loads a dataset written by [`write_dataset`].
pub fn read_dataset(root: &Path) -> Result<StoredDataset> {
    let meta: DatasetMeta =
        serde_json::from_str(&std::fs::read_to_string(require(root.join(META_FILE))?)?)?;
    let normalizer = NormalizerStats::load(&root.join(NORMALIZER_FILE))?;
    if normalizer.features != meta.features {
        return Err(Error::Schema(format!(
            "normalizer features {:?} differ from dataset features {:?}",
            normalizer.features, meta.features
        )));
    }
    let tag = Normalization::ZScored {
        stats_fingerprint: normalizer.fingerprint(),
    };
    let k = meta.features.len();

    let mut paths = HashMap::new();
    let mut rdr = csv::Reader::from_path(require(root.join(INDEX_FILE))?)?;
    for row in rdr.records() {
        let row = row?;
        paths.insert(row.get(0).unwrap_or("").to_string(), row.get(1).unwrap_or("").to_string());
    }

    let mut rdr = csv::Reader::from_path(require(root.join(FEATURES_FILE))?)?;
    let headers = rdr.headers()?.clone();
    if headers.len() != 4 + k || headers.iter().skip(4).ne(meta.features.iter().map(String::as_str)) {
        return Err(Error::Schema(format!(
            "{FEATURES_FILE} columns do not match features {:?}",
            meta.features
        )));
    }
    let (mut ids, mut samples) = (Vec::new(), Vec::new());
    for (i, row) in rdr.records().enumerate() {
        let row_no = i + 1;
        let row = row?;
        let num = |col: usize| -> Result<f64> {
            row.get(col)
                .unwrap_or("")
                .parse()
                .map_err(|e| parse_error(row_no, headers.get(col).unwrap_or("?"), e))
        };
        let id = row.get(0).unwrap_or("").to_string();
        let rel = paths
            .get(&id)
            .ok_or_else(|| parse_error(row_no, "sample_id", format!("`{id}` missing from {INDEX_FILE}")))?;
        let patch = read_image(&root.join(rel))?;
        let values = (4..4 + k).map(num).collect::<Result<Vec<_>>>()?;
        samples.push(Sample {
            patch,
            features: FeatureVector {
                values,
                normalization: tag,
            },
            target_vwc: num(3)?,
            station_id: StationId::from(row.get(1).unwrap_or("")),
            timestamp: parse_timestamp(row.get(2).unwrap_or(""))
                .map_err(|e| parse_error(row_no, "timestamp", e))?,
        });
        ids.push(id);
    }
    let lookup: HashMap<String, usize> = ids.iter().cloned().enumerate().map(|(i, id)| (id, i)).collect();
    let split_path = |name: &str| root.join(SPLIT_DIR).join(format!("{name}.csv"));
    let splits = SplitIndices {
        train: read_ids(&split_path("train"), &lookup)?,
        val: read_ids(&split_path("val"), &lookup)?,
        test: read_ids(&split_path("test"), &lookup)?,
    };
    Ok(StoredDataset {
        meta,
        ids,
        samples,
        normalizer,
        splits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::sample::StationProfile;
    use crate::data::synth::{generate_synthetic_data, SynthConfig};

    #[test]
    fn write_then_read() {
        let cfg = SynthConfig {
            n_per_station: 10,
            patch_size: 4,
            ..SynthConfig::default()
        };
        let data = generate_synthetic_data(&StationProfile::reference(), &cfg).unwrap();
        let vars = MeteoVar::DEFAULT_FEATURES.to_vec();
        let samples = data.samples(&vars);
        let origins = vec![
            PatchOrigin {
                source_image: "synthetic".into(),
                bbox: [0.0, 0.0, 4.0, 4.0]
            };
            samples.len()
        ];
        let dir = tempfile::tempdir().unwrap();
        let meta = write_dataset(dir.path(), &samples, &origins, &vars, SplitOptions::default(), "synthetic").unwrap();
        assert_eq!(meta.n_samples, 30);
        let back = read_dataset(dir.path()).unwrap();
        assert_eq!(back.samples.len(), 30);
        assert_eq!(back.splits.train.len() + back.splits.val.len() + back.splits.test.len(), 30);
        let z = back.normalizer.apply(&samples[7].features).unwrap();
        for (a, b) in z.values.iter().zip(&back.samples[7].features.values) {
            assert_eq!(a, b);
        }
        assert_eq!(back.samples[7].target_vwc, samples[7].target_vwc);
        assert_eq!(back.samples[7].timestamp, samples[7].timestamp);
    }

    #[test]
    fn missing_root_is_missing_path() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(read_dataset(&dir.path().join("nope")), Err(Error::MissingPath(_))));
    }
}
