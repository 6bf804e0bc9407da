//! Mini-batch training loop with early stopping on validation loss.

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{base_loss, hybrid_loss_node, loss_node, HybridCoefficients, LossKind};
use crate::data::sample::{Batch, Sample};
use crate::error::{Error, Result};
use crate::models::{FusionModel, Variant};
use crate::nn::{Graph, NodeId, Optimizer, OptimizerKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub loss: LossKind,
    /// Stop after this many epochs without a validation improvement.
    pub patience: usize,
    /// Loss weights; used by the hybrid variant only.
    pub coefficients: HybridCoefficients,
    /// Fill the `seconds` column of the log. Off by default so logs are
    /// byte-identical across reruns.
    pub record_time: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 32,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::adam(),
            seed: 0,
            loss: LossKind::Mse,
            patience: 15,
            coefficients: HybridCoefficients::default(),
            record_time: false,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch size must be at least 2 for batch norm".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        self.coefficients.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub l_concat: Option<f64>,
    pub l_meteo: Option<f64>,
    pub l_image: Option<f64>,
    /// Effective modality weights at the start of the epoch.
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub seconds: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
    /// Effective (α, β) of the returned model, learnable variant only.
    pub final_weights: Option<(f64, f64)>,
}

pub const LOG_COLUMNS: [&str; 9] = [
    "epoch",
    "train_loss",
    "val_loss",
    "l_concat",
    "l_meteo",
    "l_image",
    "alpha",
    "beta",
    "seconds",
];

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl TrainingLog {
    pub fn epochs_run(&self) -> usize {
        self.records.len()
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(LOG_COLUMNS)?;
        for r in &self.records {
            w.write_record([
                r.epoch.to_string(),
                r.train_loss.to_string(),
                r.val_loss.to_string(),
                cell(r.l_concat),
                cell(r.l_meteo),
                cell(r.l_image),
                cell(r.alpha),
                cell(r.beta),
                cell(r.seconds),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// Reads the per-epoch rows of a log CSV.
pub fn read_log_csv(path: &Path) -> Result<Vec<EpochRecord>> {
    if !path.exists() {
        return Err(Error::MissingPath(path.to_path_buf()));
    }
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let opt = |c: usize| -> Result<Option<f64>> {
            let s = row.get(c).unwrap_or("");
            if s.is_empty() {
                return Ok(None);
            }
            s.parse().map(Some).map_err(|e: std::num::ParseFloatError| Error::Parse {
                row: i + 1,
                column: LOG_COLUMNS[c].into(),
                message: e.to_string(),
            })
        };
        let req = |c: usize| -> Result<f64> {
            opt(c)?.ok_or_else(|| Error::Parse {
                row: i + 1,
                column: LOG_COLUMNS[c].into(),
                message: "empty".into(),
            })
        };
        out.push(EpochRecord {
            epoch: req(0)? as usize,
            train_loss: req(1)?,
            val_loss: req(2)?,
            l_concat: opt(3)?,
            l_meteo: opt(4)?,
            l_image: opt(5)?,
            alpha: opt(6)?,
            beta: opt(7)?,
            seconds: opt(8)?,
        });
    }
    Ok(out)
}

/// All samples stacked once; mini-batches gather rows from it.
pub(crate) struct Stacked {
    pub batch: Batch,
}

impl Stacked {
    pub fn new(samples: &[Sample]) -> Result<Self> {
        let refs: Vec<&Sample> = samples.iter().collect();
        Ok(Self {
            batch: Batch::from_samples(&refs)?,
        })
    }

    pub fn gather(&self, idx: &[usize]) -> Batch {
        Batch {
            patches: self.batch.patches.gather_rows(idx),
            features: self.batch.features.gather_rows(idx),
            targets: self.batch.targets.gather_rows(idx),
        }
    }
}

/// Splits a shuffled order into batches; a trailing batch of one sample is
/// merged into the previous one so batch norm always sees ≥ 2 samples.
pub fn batch_ranges(n: usize, batch_size: usize) -> Vec<std::ops::Range<usize>> {
    let mut out: Vec<std::ops::Range<usize>> = (0..n)
        .step_by(batch_size.max(1))
        .map(|s| s..(s + batch_size).min(n))
        .collect();
    if out.len() > 1 && out.last().is_some_and(|r| r.len() == 1) {
        let last = out.pop().expect("non-empty");
        out.last_mut().expect("two or more").end = last.end;
    }
    out
}

/// Terms recorded for one mini-batch.
pub(crate) struct StepLoss {
    pub total: f64,
    pub terms: Option<[f64; 3]>,
}

/// Records the training loss of `model` on `g`.
pub(crate) fn training_loss(
    model: &FusionModel,
    g: &mut Graph,
    batch: &Batch,
    config: &TrainingConfig,
) -> Result<(NodeId, Option<[NodeId; 3]>)> {
    let out = model.forward(g, &batch.patches, &batch.features)?;
    if model.variant() == Variant::Hybrid {
        let (total, terms) = hybrid_loss_node(g, &out, &batch.targets, config.coefficients, config.loss)?;
        Ok((total, Some(terms)))
    } else {
        Ok((loss_node(g, out.prediction, &batch.targets, config.loss)?, None))
    }
}

fn train_step(
    model: &mut FusionModel,
    optimizer: &mut Optimizer,
    batch: &Batch,
    config: &TrainingConfig,
    dropout_seed: u64,
    epoch: usize,
    batch_no: usize,
) -> Result<StepLoss> {
    model.store.zero_grad();
    let mut g = Graph::train(dropout_seed);
    let (loss, terms) = training_loss(model, &mut g, batch, config)?;
    let total = g.value(loss).data()[0];
    if !total.is_finite() {
        return Err(Error::Divergence {
            epoch,
            batch: batch_no,
            loss: total,
        });
    }
    g.backward(loss, &mut model.store)?;
    g.commit_buffers(&mut model.store);
    optimizer.step(&mut model.store);
    Ok(StepLoss {
        total,
        terms: terms.map(|t| t.map(|id| g.value(id).data()[0])),
    })
}

/// Validation loss: base loss of the deployed prediction in eval mode.
fn validation_loss(model: &FusionModel, val: &Batch, kind: LossKind) -> Result<f64> {
    let preds = model.predict(val)?;
    base_loss(&preds, val.targets.data(), kind)
}

/// Trains `model` in place and returns the per-epoch log. The model ends
/// holding the parameters of its best validation epoch.
pub fn train_model(
    model: &mut FusionModel,
    train: &[Sample],
    val: &[Sample],
    config: &TrainingConfig,
) -> Result<TrainingLog> {
    config.validate()?;
    if train.len() < 2 {
        return Err(Error::Empty("training needs at least two samples".into()));
    }
    if val.is_empty() {
        return Err(Error::Empty("validation split is empty".into()));
    }
    let train_data = Stacked::new(train)?;
    let val_batch = Stacked::new(val)?.batch;
    let mut optimizer = Optimizer::new(config.optimizer, config.learning_rate)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();

    let mut log = TrainingLog {
        records: Vec::new(),
        best_epoch: 0,
        best_val_loss: f64::INFINITY,
        stopped_early: false,
        final_weights: None,
    };
    let mut best = model.store.snapshot();
    let mut stale = 0;

    for epoch in 1..=config.epochs {
        let started = Instant::now();
        let weights = model.modality_weights();
        order.shuffle(&mut rng);
        let (mut total, mut terms, mut seen) = (0.0, [0.0; 3], 0usize);
        let mut has_terms = false;
        for (b, range) in batch_ranges(order.len(), config.batch_size).into_iter().enumerate() {
            let batch = train_data.gather(&order[range]);
            let n = batch.len();
            let step = train_step(model, &mut optimizer, &batch, config, rng.random(), epoch, b + 1)?;
            total += step.total * n as f64;
            if let Some(t) = step.terms {
                has_terms = true;
                for (acc, v) in terms.iter_mut().zip(t) {
                    *acc += v * n as f64;
                }
            }
            seen += n;
        }
        let val_loss = validation_loss(model, &val_batch, config.loss)?;
        if !val_loss.is_finite() {
            return Err(Error::Divergence {
                epoch,
                batch: 0,
                loss: val_loss,
            });
        }
        let mean = |v: f64| v / seen as f64;
        log.records.push(EpochRecord {
            epoch,
            train_loss: mean(total),
            val_loss,
            l_concat: has_terms.then(|| mean(terms[0])),
            l_meteo: has_terms.then(|| mean(terms[1])),
            l_image: has_terms.then(|| mean(terms[2])),
            alpha: weights.map(|w| w.0),
            beta: weights.map(|w| w.1),
            seconds: config.record_time.then(|| started.elapsed().as_secs_f64()),
        });
        log::debug!("epoch {epoch}: train {:.6} val {val_loss:.6}", mean(total));

        if val_loss < log.best_val_loss {
            log.best_val_loss = val_loss;
            log.best_epoch = epoch;
            best = model.store.snapshot();
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                log.stopped_early = epoch < config.epochs;
                break;
            }
        }
    }
    model.store.restore(&best);
    log.final_weights = model.modality_weights();
    Ok(log)
}
