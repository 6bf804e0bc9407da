//! Subcommand implementations.

use std::fs;
use std::path::{Path, PathBuf};

use misme::data::{
    generate_synthetic_data, prepare_dataset, read_dataset, write_dataset, Batch, DatasetMeta, MeteoSchema,
    MeteoVar, NormalizerStats, PatchOrigin, PrepareOptions, Sample, StationId, StationProfile, StoredDataset,
    SynthConfig,
};
use misme::evaluation::stationwise_report;
use misme::models::{FusionModel, ModelConfig};
use misme::nn::{load_checkpoint, save_checkpoint};
use misme::training::{
    default_fractions, run_coefficient_grid, run_combiner_ablation, run_learnable_mode_ablation,
    run_station_fraction_experiment, train_model, write_cells_csv, write_fraction_csv, CellResult,
};
use serde::{Deserialize, Serialize};

use crate::config::{require_paths, RunConfig};
use crate::svg::BarChart;
use crate::Failure;

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const MODEL_FILE: &str = "model.json";
pub const RUN_NORMALIZER_FILE: &str = "normalizer.csv";
pub const LOG_FILE: &str = "training_log.csv";
pub const TRAIN_SUMMARY_FILE: &str = "training_summary.json";
pub const EVAL_JSON: &str = "eval_report.json";
pub const EVAL_CSV: &str = "eval_report.csv";
pub const PREDICTIONS_FILE: &str = "predictions.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationKind {
    Coefficients,
    Combiners,
    #[value(name = "learnable_mode", alias = "learnable-mode")]
    LearnableMode,
    #[value(name = "station_fraction", alias = "station-fraction")]
    StationFraction,
}

impl AblationKind {
    pub fn name(self) -> &'static str {
        match self {
            AblationKind::Coefficients => "coefficients",
            AblationKind::Combiners => "combiners",
            AblationKind::LearnableMode => "learnable_mode",
            AblationKind::StationFraction => "station_fraction",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Self::Coefficients, Self::Combiners, Self::LearnableMode, Self::StationFraction]
            .into_iter()
            .find(|k| k.name() == s.trim().replace('-', "_"))
    }
}

fn create_out(cfg: &RunConfig) -> Result<PathBuf, Failure> {
    let out = cfg.out_dir()?.to_path_buf();
    fs::create_dir_all(&out)?;
    Ok(out)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Failure::runtime(e.to_string()))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn required<'a>(value: &'a Option<PathBuf>, what: &str) -> Result<&'a Path, Failure> {
    value
        .as_deref()
        .ok_or_else(|| Failure::usage(format!("{what} is required")))
}

#[derive(Serialize)]
struct PrepareReport<'a> {
    images: usize,
    boxes: usize,
    skipped_low_confidence: usize,
    unpaired: usize,
    rejected_meteo_rows: usize,
    samples: usize,
    dataset: &'a DatasetMeta,
}

pub fn prepare(cfg: &RunConfig) -> Result<(), Failure> {
    let manifest = required(&cfg.data.manifest, "--manifest")?;
    let meteo = required(&cfg.data.meteo, "--meteo")?;
    require_paths(&[manifest, meteo])?;
    let features = cfg.feature_vars()?.unwrap_or_else(|| MeteoVar::DEFAULT_FEATURES.to_vec());
    let out = create_out(cfg)?;
    let options = PrepareOptions {
        min_confidence: cfg.prepare.min_confidence,
        features,
        patch_size: cfg.prepare.patch_size,
        split: cfg.split_options(),
    };
    let s = prepare_dataset(manifest, meteo, &MeteoSchema::default(), &out, &options)?;
    println!(
        "prepared {} samples from {} images ({} boxes, {} below confidence, {} unpaired, {} meteo rows rejected)",
        s.meta.n_samples, s.images, s.boxes, s.skipped_low_confidence, s.unpaired, s.rejected_meteo_rows
    );
    write_json(
        &out.join("prepare_summary.json"),
        &PrepareReport {
            images: s.images,
            boxes: s.boxes,
            skipped_low_confidence: s.skipped_low_confidence,
            unpaired: s.unpaired,
            rejected_meteo_rows: s.rejected_meteo_rows,
            samples: s.meta.n_samples,
            dataset: &s.meta,
        },
    )?;
    cfg.echo(&out, "prepare")
}

#[derive(Deserialize)]
struct ProfileFile {
    station: Vec<StationProfile>,
}

fn load_profiles(spec: &str) -> Result<Vec<StationProfile>, Failure> {
    if spec == "reference" {
        return Ok(StationProfile::reference());
    }
    let path = Path::new(spec);
    require_paths(&[path])?;
    let text = fs::read_to_string(path)?;
    let bad = |e: String| Failure::input(format!("{}: {e}", path.display()));
    let profiles = if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str::<Vec<StationProfile>>(&text).map_err(|e| bad(e.to_string()))?
    } else {
        toml::from_str::<ProfileFile>(&text).map_err(|e| bad(e.to_string()))?.station
    };
    if profiles.is_empty() {
        return Err(bad("no station profiles".into()));
    }
    Ok(profiles)
}

pub fn synth(cfg: &RunConfig) -> Result<(), Failure> {
    let profiles = load_profiles(&cfg.synth.profiles)?;
    for p in &profiles {
        p.validate()?;
    }
    let features = cfg.feature_vars()?.unwrap_or_else(|| MeteoVar::DEFAULT_FEATURES.to_vec());
    let synth = SynthConfig {
        n_per_station: cfg.synth.n_per_station,
        seed: cfg.seed,
        patch_size: cfg.synth.patch_size,
        coupling: cfg.synth.coupling.clone(),
    };
    let data = generate_synthetic_data(&profiles, &synth)?;
    let samples = data.samples(&features);
    let origins: Vec<PatchOrigin> = samples
        .iter()
        .map(|s| PatchOrigin {
            source_image: "synthetic".into(),
            bbox: [0.0, 0.0, s.patch.width as f64, s.patch.height as f64],
        })
        .collect();
    let out = create_out(cfg)?;
    let meta = write_dataset(&out, &samples, &origins, &features, cfg.split_options(), "synthetic")?;
    println!(
        "wrote {} synthetic samples across {} stations to {}",
        meta.n_samples,
        meta.stations.len(),
        out.display()
    );
    cfg.echo(&out, "synth")
}

fn open_dataset(cfg: &RunConfig) -> Result<StoredDataset, Failure> {
    let root = required(&cfg.data.dataset, "--data")?;
    require_paths(&[root])?;
    let ds = read_dataset(root)?;
    if let Some(wanted) = cfg.feature_vars()? {
        let have = ds.meta.feature_vars()?;
        if wanted != have {
            return Err(Failure::input(format!(
                "dataset features {:?} differ from requested {:?}",
                ds.meta.features,
                wanted.iter().map(|v| v.column()).collect::<Vec<_>>()
            )));
        }
    }
    Ok(ds)
}

/// Sizes the model inputs to the dataset.
fn fit_model_config(mut model: ModelConfig, meta: &DatasetMeta) -> Result<ModelConfig, Failure> {
    if meta.patch_height != meta.patch_width {
        return Err(Failure::input(format!(
            "patches are {}x{}; square patches are required",
            meta.patch_height, meta.patch_width
        )));
    }
    model.meteo.input_dim = meta.features.len();
    model.image.input_size = meta.patch_height;
    model.validate()?;
    Ok(model)
}

#[derive(Serialize)]
struct TrainSummary {
    variant: String,
    epochs_run: usize,
    best_epoch: usize,
    best_val_loss: f64,
    stopped_early: bool,
    alpha: Option<f64>,
    beta: Option<f64>,
}

pub fn train(cfg: &RunConfig) -> Result<(), Failure> {
    let ds = open_dataset(cfg)?;
    let model_config = fit_model_config(cfg.model.clone(), &ds.meta)?;
    cfg.training.validate()?;
    let out = create_out(cfg)?;
    let splits = ds.partition();
    let mut model = FusionModel::new(model_config.clone(), cfg.training.seed)?;
    let log = train_model(&mut model, &splits.train, &splits.val, &cfg.training)?;
    save_checkpoint(&out.join(CHECKPOINT_FILE), &model.store)?;
    write_json(&out.join(MODEL_FILE), &model_config)?;
    ds.normalizer.save(&out.join(RUN_NORMALIZER_FILE))?;
    log.save_csv(&out.join(LOG_FILE))?;
    write_json(
        &out.join(TRAIN_SUMMARY_FILE),
        &TrainSummary {
            variant: model_config.fusion.variant.to_string(),
            epochs_run: log.epochs_run(),
            best_epoch: log.best_epoch,
            best_val_loss: log.best_val_loss,
            stopped_early: log.stopped_early,
            alpha: log.final_weights.map(|w| w.0),
            beta: log.final_weights.map(|w| w.1),
        },
    )?;
    println!(
        "trained {} for {} epochs; best validation loss {:.6} at epoch {}",
        model_config.fusion.variant,
        log.epochs_run(),
        log.best_val_loss,
        log.best_epoch
    );
    let mut echoed = cfg.clone();
    echoed.model = model_config;
    echoed.echo(&out, "train")
}

fn split_ids(ds: &StoredDataset, split: &str) -> Result<Vec<String>, Failure> {
    let idx = match split {
        "train" => &ds.splits.train,
        "val" => &ds.splits.val,
        "test" => &ds.splits.test,
        other => return Err(Failure::input(format!("unknown split `{other}`"))),
    };
    Ok(idx.iter().map(|&i| ds.ids[i].clone()).collect())
}

pub fn evaluate(cfg: &RunConfig) -> Result<(), Failure> {
    let checkpoint = required(&cfg.data.checkpoint, "--checkpoint")?;
    require_paths(&[checkpoint])?;
    let ds = open_dataset(cfg)?;
    let run_dir = checkpoint.parent().unwrap_or(Path::new("."));
    let model_file = run_dir.join(MODEL_FILE);
    let model_config = if model_file.is_file() {
        let text = fs::read_to_string(&model_file)?;
        serde_json::from_str(&text).map_err(|e| Failure::input(format!("{}: {e}", model_file.display())))?
    } else {
        fit_model_config(cfg.model.clone(), &ds.meta)?
    };
    let norm_file = run_dir.join(RUN_NORMALIZER_FILE);
    if norm_file.is_file() && NormalizerStats::load(&norm_file)?.fingerprint() != ds.normalizer.fingerprint() {
        return Err(Failure::input(
            "the dataset was normalized with different statistics than the training run",
        ));
    }
    let mut model = FusionModel::new(model_config, 0)?;
    load_checkpoint(checkpoint, &mut model.store)?;

    let split = cfg.data.split.as_deref().unwrap_or("test");
    let ids = split_ids(&ds, split)?;
    let samples = ds.split(split)?;
    let report = stationwise_report(&model, &samples, &ds.normalizer)?;
    let out = create_out(cfg)?;
    report.write_json(&out.join(EVAL_JSON))?;
    report.write_csv(&out.join(EVAL_CSV))?;
    write_predictions(&out.join(PREDICTIONS_FILE), &model, &ids, &samples)?;
    println!(
        "{split}: {} samples, MAE {:.5}, MAPE {:.3}%, {:.1}% of residuals within [{}, {}]",
        report.n_samples,
        report.mae,
        report.mape,
        100.0 * report.band_fraction,
        report.band.0,
        report.band.1
    );
    cfg.echo(&out, "evaluate")
}

fn write_predictions(path: &Path, model: &FusionModel, ids: &[String], samples: &[Sample]) -> Result<(), Failure> {
    let refs: Vec<&Sample> = samples.iter().collect();
    let batch = Batch::from_samples(&refs)?;
    let preds = model.predict(&batch)?;
    let mut w = csv::Writer::from_path(path).map_err(misme::Error::from)?;
    let mut rows = vec![["sample_id", "station_id", "target", "prediction", "residual"].map(String::from)];
    for ((id, s), p) in ids.iter().zip(samples).zip(&preds) {
        rows.push([
            id.clone(),
            s.station_id.to_string(),
            s.target_vwc.to_string(),
            p.to_string(),
            (p - s.target_vwc).to_string(),
        ]);
    }
    for r in rows {
        w.write_record(&r).map_err(misme::Error::from)?;
    }
    w.flush()?;
    Ok(())
}

pub fn ablation_csv(kind: AblationKind) -> String {
    format!("ablation_{}.csv", kind.name())
}

pub fn ablation_svg(kind: AblationKind) -> String {
    format!("ablation_{}.svg", kind.name())
}

pub fn ablate(cfg: &RunConfig, kind: AblationKind) -> Result<(), Failure> {
    let ds = open_dataset(cfg)?;
    let model_config = fit_model_config(cfg.model.clone(), &ds.meta)?;
    cfg.training.validate()?;
    let out = create_out(cfg)?;
    let splits = ds.partition();
    let csv_path = out.join(ablation_csv(kind));
    let svg_path = out.join(ablation_svg(kind));
    let (ok, total) = match kind {
        AblationKind::StationFraction => {
            let targets: Vec<StationId> = if cfg.experiment.targets.is_empty() {
                ds.meta.stations.clone()
            } else {
                cfg.experiment.targets.iter().map(|s| StationId::from(s.as_str())).collect()
            };
            let fractions = cfg.experiment.fractions.clone().unwrap_or_else(default_fractions);
            let mut points = Vec::new();
            for t in &targets {
                points.extend(run_station_fraction_experiment(
                    &model_config,
                    &cfg.training,
                    &splits,
                    t,
                    &fractions,
                )?);
            }
            write_fraction_csv(&csv_path, &points)?;
            let rows = crate::report::read_fraction_rows(&csv_path)?;
            fs::write(&svg_path, crate::report::fraction_chart(&rows))?;
            (points.iter().filter(|p| p.score.is_ok()).count(), points.len())
        }
        _ => {
            let cells: Vec<CellResult> = match kind {
                AblationKind::Coefficients => run_coefficient_grid(
                    &model_config,
                    &cfg.training,
                    &cfg.experiment.coefficient_grid(),
                    &splits,
                )?,
                AblationKind::Combiners => run_combiner_ablation(&model_config, &cfg.training, &splits),
                _ => run_learnable_mode_ablation(&model_config, &cfg.training, &splits),
            };
            write_cells_csv(&csv_path, &cells)?;
            fs::write(&svg_path, cells_chart(kind, &cells))?;
            (cells.iter().filter(|c| c.score.is_ok()).count(), cells.len())
        }
    };
    println!("{}: {ok}/{total} cells succeeded; table in {}", kind.name(), csv_path.display());
    cfg.echo(&out, "ablate")?;
    if ok == 0 {
        return Err(Failure::runtime("every experiment cell failed"));
    }
    Ok(())
}

fn cells_chart(kind: AblationKind, cells: &[CellResult]) -> String {
    let bars = cells
        .iter()
        .map(|c| {
            let label = c.label.iter().map(|(_, v)| v.as_str()).collect::<Vec<_>>().join("/");
            (label, c.score.as_ref().map(|s| s.mape).unwrap_or(f64::NAN))
        })
        .collect();
    let title = format!("Test MAPE by {}", kind.name().replace('_', " "));
    BarChart { title: &title, y_label: "MAPE (%)", bars }.render()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ablation_kind_names_parse_back() {
        for k in [
            AblationKind::Coefficients,
            AblationKind::Combiners,
            AblationKind::LearnableMode,
            AblationKind::StationFraction,
        ] {
            assert_eq!(AblationKind::parse(k.name()), Some(k));
        }
        assert_eq!(AblationKind::parse("station-fraction"), Some(AblationKind::StationFraction));
        assert_eq!(AblationKind::parse("bogus"), None);
    }

    #[test]
    fn bundled_profiles_and_bad_paths() {
        assert_eq!(load_profiles("reference").unwrap().len(), 3);
        assert_eq!(load_profiles("/nonexistent/profiles.toml").unwrap_err().code, 2);
    }
}
