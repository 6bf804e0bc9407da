use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::meteo::StationId;
use super::sample::Sample;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.65,
            val: 0.15,
            test: 0.20,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let all = [self.train, self.val, self.test];
        if all.iter().any(|r| !(*r > 0.0)) {
            return Err(Error::Config("split ratios must be positive".into()));
        }
        if (all.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config("split ratios must sum to 1".into()));
        }
        Ok(())
    }

    /// `(train, val, test)` counts for `n` items: train and val are rounded
    /// to the nearest integer, test takes the remainder.
    pub fn counts(&self, n: usize) -> (usize, usize, usize) {
        let train = ((self.train * n as f64).round() as usize).min(n);
        let val = ((self.val * n as f64).round() as usize).min(n - train);
        (train, val, n - train - val)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded partition of `0..groups.len()`. With `stratify`, every group
/// (station) is split separately so per-group proportions are preserved.
/// Each returned list is sorted ascending.
pub fn split_indices(
    groups: &[StationId],
    ratios: SplitRatios,
    seed: u64,
    stratify: bool,
) -> Result<SplitIndices> {
    ratios.validate()?;
    if groups.len() < 3 {
        return Err(Error::Empty(format!(
            "{} samples cannot fill three partitions",
            groups.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let buckets: Vec<Vec<usize>> = if stratify {
        let mut by: BTreeMap<&StationId, Vec<usize>> = BTreeMap::new();
        for (i, g) in groups.iter().enumerate() {
            by.entry(g).or_default().push(i);
        }
        by.into_values().collect()
    } else {
        vec![(0..groups.len()).collect()]
    };
    let mut out = SplitIndices::default();
    for mut bucket in buckets {
        bucket.shuffle(&mut rng);
        let (tr, va, _) = ratios.counts(bucket.len());
        out.train.extend_from_slice(&bucket[..tr]);
        out.val.extend_from_slice(&bucket[tr..tr + va]);
        out.test.extend_from_slice(&bucket[tr + va..]);
    }
    out.train.sort_unstable();
    out.val.sort_unstable();
    out.test.sort_unstable();
    Ok(out)
}

#[derive(Debug, Clone, Default)]
pub struct Splits {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

pub fn split_dataset(
    samples: Vec<Sample>,
    ratios: SplitRatios,
    seed: u64,
    stratify_by_station: bool,
) -> Result<Splits> {
    let groups: Vec<StationId> = samples.iter().map(|s| s.station_id.clone()).collect();
    let idx = split_indices(&groups, ratios, seed, stratify_by_station)?;
    let mut slots: Vec<Option<Sample>> = samples.into_iter().map(Some).collect();
    let mut take = |ids: &[usize]| -> Vec<Sample> {
        ids.iter()
            .map(|&i| slots[i].take().expect("partitions are disjoint"))
            .collect()
    };
    Ok(Splits {
        train: take(&idx.train),
        val: take(&idx.val),
        test: take(&idx.test),
    })
}
