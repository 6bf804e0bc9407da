//! Ablation and transfer experiment drivers.
//!
//! Every cell builds and trains its own model from the same seed, so cells
//! are independent and may run on a thread pool sized by `MISME_THREADS`
//! (default 1). Results come back in grid order regardless of scheduling.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::loss::HybridCoefficients;
use super::trainer::{train_model, TrainingConfig, TrainingLog};
use crate::data::meteo::StationId;
use crate::data::sample::{Batch, Sample};
use crate::data::split::Splits;
use crate::error::{Error, Result};
use crate::evaluation::{mae, mape};
use crate::models::{Combiner, FusionModel, LearnableMode, ModelConfig, Variant};

pub const THREADS_ENV: &str = "MISME_THREADS";

/// Test metrics of one trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunScore {
    pub mae: f64,
    pub mape: f64,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub final_weights: Option<(f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct TrainedRun {
    pub model: FusionModel,
    pub log: TrainingLog,
    pub score: RunScore,
}

pub fn score_predictions(model: &FusionModel, test: &[Sample]) -> Result<(f64, f64)> {
    let refs: Vec<&Sample> = test.iter().collect();
    let batch = Batch::from_samples(&refs)?;
    let preds = model.predict(&batch)?;
    Ok((mae(&preds, batch.targets.data())?, mape(&preds, batch.targets.data())?))
}

/// Builds a model from `model_config`, trains it and scores it on `test`.
pub fn train_and_score(
    model_config: &ModelConfig,
    training: &TrainingConfig,
    train: &[Sample],
    val: &[Sample],
    test: &[Sample],
) -> Result<TrainedRun> {
    let mut model = FusionModel::new(model_config.clone(), training.seed)?;
    let log = train_model(&mut model, train, val, training)?;
    let (mae, mape) = score_predictions(&model, test)?;
    let score = RunScore {
        mae,
        mape,
        epochs_run: log.epochs_run(),
        best_epoch: log.best_epoch,
        final_weights: log.final_weights,
    };
    Ok(TrainedRun { model, log, score })
}

/// Thread count from `MISME_THREADS`, at least 1.
pub fn thread_budget() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|n| *n > 0)
        .unwrap_or(1)
}

/// Maps `f` over `cells` on a pool of [`thread_budget`] threads, keeping order.
pub fn run_cells<T, R, F>(cells: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    let threads = thread_budget();
    if threads == 1 {
        return cells.iter().map(&f).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(pool) => pool.install(|| cells.par_iter().map(&f).collect()),
        Err(e) => {
            log::warn!("thread pool unavailable ({e}); running cells sequentially");
            cells.iter().map(&f).collect()
        }
    }
}

/// One experiment cell: its label, and either a score or the error text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub label: Vec<(String, String)>,
    pub score: std::result::Result<RunScore, String>,
}

impl CellResult {
    fn new(label: Vec<(&str, String)>, score: Result<RunScore>) -> Self {
        if let Err(e) = &score {
            log::warn!("experiment cell {label:?} failed: {e}");
        }
        Self {
            label: label.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
            score: score.map_err(|e| e.to_string()),
        }
    }
}

/// Writes a tidy table: label columns, then mae, mape, epochs_run,
/// best_epoch, alpha, beta, error.
pub fn write_cells_csv(path: &Path, cells: &[CellResult]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = cells
        .first()
        .map(|c| c.label.iter().map(|(k, _)| k.clone()).collect())
        .unwrap_or_default();
    header.extend(
        ["mae", "mape", "epochs_run", "best_epoch", "alpha", "beta", "error"]
            .iter()
            .map(|s| s.to_string()),
    );
    w.write_record(&header)?;
    for c in cells {
        let mut row: Vec<String> = c.label.iter().map(|(_, v)| v.clone()).collect();
        match &c.score {
            Ok(s) => {
                let (a, b) = s
                    .final_weights
                    .map(|(a, b)| (a.to_string(), b.to_string()))
                    .unwrap_or_default();
                row.extend([
                    s.mae.to_string(),
                    s.mape.to_string(),
                    s.epochs_run.to_string(),
                    s.best_epoch.to_string(),
                    a,
                    b,
                    String::new(),
                ]);
            }
            Err(e) => {
                row.extend(std::iter::repeat_n(String::new(), 6));
                row.push(e.clone());
            }
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Simplex sweep with step 0.25 (all-zero excluded) plus the named cells
/// (1,1,1), (0.9,0,0.1), (0.9,0.1,0) and (0.8,0.2,0).
pub fn default_coefficient_grid() -> Vec<HybridCoefficients> {
    let mut grid = vec![
        HybridCoefficients::new(1.0, 1.0, 1.0),
        HybridCoefficients::new(0.9, 0.0, 0.1),
        HybridCoefficients::new(0.9, 0.1, 0.0),
        HybridCoefficients::new(0.8, 0.2, 0.0),
    ];
    for i in 0..=4 {
        for j in 0..=(4 - i) {
            let k = 4 - i - j;
            let c = HybridCoefficients::new(i as f64 / 4.0, j as f64 / 4.0, k as f64 / 4.0);
            if !grid.contains(&c) {
                grid.push(c);
            }
        }
    }
    grid
}

fn fusing(model_config: &ModelConfig) -> ModelConfig {
    let mut c = model_config.clone();
    if !c.fusion.variant.fuses_features() {
        c.fusion.variant = Variant::Hybrid;
    }
    c
}

/// Trains one hybrid model per coefficient triple with a shared seed and
/// reports test MAE/MAPE. Failed cells are recorded, not fatal.
pub fn run_coefficient_grid(
    model_config: &ModelConfig,
    training: &TrainingConfig,
    grid: &[HybridCoefficients],
    splits: &Splits,
) -> Result<Vec<CellResult>> {
    if grid.is_empty() {
        return Err(Error::Empty("coefficient grid is empty".into()));
    }
    let cfg = model_config.clone().with_variant(Variant::Hybrid);
    Ok(run_cells(grid, |c| {
        let t = TrainingConfig {
            coefficients: *c,
            ..training.clone()
        };
        let score = train_and_score(&cfg, &t, &splits.train, &splits.val, &splits.test).map(|r| r.score);
        CellResult::new(
            vec![
                ("delta", c.delta.to_string()),
                ("gamma", c.gamma.to_string()),
                ("lambda", c.lambda.to_string()),
            ],
            score,
        )
    }))
}

/// Concatenate / add / multiply with everything else fixed.
pub fn run_combiner_ablation(
    model_config: &ModelConfig,
    training: &TrainingConfig,
    splits: &Splits,
) -> Vec<CellResult> {
    let base = fusing(model_config);
    run_cells(&Combiner::ALL, |c| {
        let mut cfg = base.clone();
        cfg.fusion.combiner = *c;
        let score = train_and_score(&cfg, training, &splits.train, &splits.val, &splits.test).map(|r| r.score);
        CellResult::new(
            vec![("variant", cfg.fusion.variant.to_string()), ("combiner", c.to_string())],
            score,
        )
    })
}

/// Dual α/β against a single complementary weight.
pub fn run_learnable_mode_ablation(
    model_config: &ModelConfig,
    training: &TrainingConfig,
    splits: &Splits,
) -> Vec<CellResult> {
    let base = model_config.clone().with_variant(Variant::LearnableParam);
    run_cells(&[LearnableMode::Dual, LearnableMode::SingleComplementary], |m| {
        let mut cfg = base.clone();
        cfg.fusion.learnable_mode = *m;
        let score = train_and_score(&cfg, training, &splits.train, &splits.val, &splits.test).map(|r| r.score);
        CellResult::new(vec![("learnable_mode", m.to_string())], score)
    })
}

/// Fractions of the target station's data added to training: 0, 1/3, 2/3, 1.
pub fn default_fractions() -> Vec<f64> {
    vec![0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FractionPoint {
    pub target_station: StationId,
    pub fraction: f64,
    pub n_target_train: usize,
    pub n_target_val: usize,
    pub score: std::result::Result<RunScore, String>,
}

/// Training/validation sets for one fraction: every non-target sample plus
/// the first `round(f·n)` target samples of a seeded shuffle.
#[derive(Debug, Clone)]
pub struct FractionSplit {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
    pub n_target_train: usize,
    pub n_target_val: usize,
}

fn take_fraction(samples: &[Sample], target: &StationId, fraction: f64, seed: u64) -> (Vec<Sample>, usize) {
    let mut own: Vec<&Sample> = samples.iter().filter(|s| s.station_id == *target).collect();
    own.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let k = ((fraction * own.len() as f64).round() as usize).min(own.len());
    let mut out: Vec<Sample> = samples.iter().filter(|s| s.station_id != *target).cloned().collect();
    out.extend(own[..k].iter().map(|s| (*s).clone()));
    (out, k)
}

pub fn fraction_split(splits: &Splits, target: &StationId, fraction: f64, seed: u64) -> Result<FractionSplit> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Config(format!("fraction {fraction} outside [0, 1]")));
    }
    let (train, n_target_train) = take_fraction(&splits.train, target, fraction, seed);
    let (val, n_target_val) = take_fraction(&splits.val, target, fraction, seed.wrapping_add(1));
    let test: Vec<Sample> = splits.test.iter().filter(|s| s.station_id == *target).cloned().collect();
    Ok(FractionSplit {
        train,
        val,
        test,
        n_target_train,
        n_target_val,
    })
}

/// For each fraction, trains on the other stations plus that fraction of
/// the target station and scores on the target station's test split.
pub fn run_station_fraction_experiment(
    model_config: &ModelConfig,
    training: &TrainingConfig,
    splits: &Splits,
    target: &StationId,
    fractions: &[f64],
) -> Result<Vec<FractionPoint>> {
    let mut stations: Vec<&StationId> = splits
        .train
        .iter()
        .chain(&splits.val)
        .chain(&splits.test)
        .map(|s| &s.station_id)
        .collect();
    stations.sort();
    stations.dedup();
    if !stations.contains(&target) {
        return Err(Error::UnknownStation(target.to_string()));
    }
    if stations.len() < 2 {
        return Err(Error::Config("station-fraction experiment needs at least two stations".into()));
    }
    let parts = fractions
        .iter()
        .map(|&f| fraction_split(splits, target, f, training.seed))
        .collect::<Result<Vec<_>>>()?;
    let cells: Vec<(f64, FractionSplit)> = fractions.iter().copied().zip(parts).collect();
    Ok(run_cells(&cells, |(f, part)| {
        let score = train_and_score(model_config, training, &part.train, &part.val, &part.test).map(|r| r.score);
        if let Err(e) = &score {
            log::warn!("fraction {f} for {target} failed: {e}");
        }
        FractionPoint {
            target_station: target.clone(),
            fraction: *f,
            n_target_train: part.n_target_train,
            n_target_val: part.n_target_val,
            score: score.map_err(|e| e.to_string()),
        }
    }))
}

pub fn write_fraction_csv(path: &Path, points: &[FractionPoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["target_station", "fraction", "n_target_train", "n_target_val", "mae", "mape", "error"])?;
    for p in points {
        let (mae, mape, err) = match &p.score {
            Ok(s) => (s.mae.to_string(), s.mape.to_string(), String::new()),
            Err(e) => (String::new(), String::new(), e.clone()),
        };
        w.write_record([
            p.target_station.to_string(),
            p.fraction.to_string(),
            p.n_target_train.to_string(),
            p.n_target_val.to_string(),
            mae,
            mape,
            err,
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_contents() {
        let g = default_coefficient_grid();
        for c in [
            HybridCoefficients::new(1.0, 1.0, 1.0),
            HybridCoefficients::new(0.9, 0.0, 0.1),
            HybridCoefficients::new(0.9, 0.1, 0.0),
            HybridCoefficients::new(0.8, 0.2, 0.0),
            HybridCoefficients::new(0.25, 0.5, 0.25),
        ] {
            assert!(g.contains(&c), "{c:?}");
        }
        assert!(g.iter().all(|c| c.validate().is_ok()));
        assert_eq!(g.len(), 4 + 15);
    }

    #[test]
    fn default_fraction_values() {
        let f = default_fractions();
        assert_eq!(f.len(), 4);
        assert!((f[1] - 0.3333).abs() < 1e-4 && (f[2] - 0.6666).abs() < 1e-4);
        assert_eq!((f[0], f[3]), (0.0, 1.0));
    }

    #[test]
    fn run_cells_preserves_order() {
        let v: Vec<usize> = (0..10).collect();
        assert_eq!(run_cells(&v, |x| x * 2), (0..10).map(|x| x * 2).collect::<Vec<_>>());
    }
}
