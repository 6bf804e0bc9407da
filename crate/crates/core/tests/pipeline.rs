use misme::data::{
    generate_synthetic_data, read_dataset, write_dataset, MeteoVar, PatchOrigin, SplitOptions,
    StationProfile, SynthConfig,
};
use misme::evaluation::stationwise_report;
use misme::models::{FusionModel, ModelConfig, Variant};
use misme::nn::{load_checkpoint, save_checkpoint};
use misme::training::{read_log_csv, train_model, TrainingConfig};

fn features() -> Vec<MeteoVar> {
    MeteoVar::DEFAULT_FEATURES[..4].to_vec()
}

fn write_small_dataset(root: &std::path::Path) {
    let cfg = SynthConfig {
        n_per_station: 20,
        seed: 3,
        patch_size: 8,
        ..SynthConfig::default()
    };
    let data = generate_synthetic_data(&StationProfile::reference(), &cfg).unwrap();
    let samples = data.samples(&features());
    let origins: Vec<PatchOrigin> = (0..samples.len())
        .map(|i| PatchOrigin {
            source_image: format!("synthetic_{i}"),
            bbox: [0.0, 0.0, 8.0, 8.0],
        })
        .collect();
    write_dataset(root, &samples, &origins, &features(), SplitOptions::default(), "synthetic").unwrap();
}

#[test]
fn dataset_train_checkpoint_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    write_small_dataset(dir.path());
    let ds = read_dataset(dir.path()).unwrap();
    assert_eq!(ds.meta.n_samples, 60);
    assert_eq!(ds.meta.stations.len(), 3);
    let splits = ds.partition();
    assert_eq!(splits.train.len() + splits.val.len() + splits.test.len(), 60);

    let mut model = FusionModel::new(ModelConfig::small(Variant::LearnableParam), 1).unwrap();
    let training = TrainingConfig {
        epochs: 3,
        batch_size: 8,
        ..TrainingConfig::default()
    };
    let log = train_model(&mut model, &splits.train, &splits.val, &training).unwrap();
    assert_eq!(log.epochs_run(), 3);

    let log_path = dir.path().join("log.csv");
    log.save_csv(&log_path).unwrap();
    let rows = read_log_csv(&log_path).unwrap();
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r.alpha.is_some() && r.beta.is_some()));

    let ckpt = dir.path().join("model.ckpt");
    save_checkpoint(&ckpt, &model.store).unwrap();
    let mut restored = FusionModel::new(ModelConfig::small(Variant::LearnableParam), 99).unwrap();
    load_checkpoint(&ckpt, &mut restored.store).unwrap();

    let a = stationwise_report(&model, &splits.test, &ds.normalizer).unwrap();
    let b = stationwise_report(&restored, &splits.test, &ds.normalizer).unwrap();
    assert_eq!(a.residuals, b.residuals);
    assert_eq!(a.n_samples, splits.test.len());
    let per_station: usize = a.per_station.values().map(|s| s.n_samples).sum();
    assert_eq!(per_station, a.n_samples);
}

#[test]
fn raw_samples_are_rejected_by_the_report() {
    let dir = tempfile::tempdir().unwrap();
    write_small_dataset(dir.path());
    let ds = read_dataset(dir.path()).unwrap();
    let cfg = SynthConfig {
        n_per_station: 2,
        patch_size: 8,
        ..SynthConfig::default()
    };
    let raw = generate_synthetic_data(&StationProfile::reference(), &cfg)
        .unwrap()
        .samples(&features());
    let model = FusionModel::new(ModelConfig::small(Variant::Concat), 1).unwrap();
    assert!(stationwise_report(&model, &raw, &ds.normalizer).is_err());
}

#[test]
fn dataset_layout_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    write_small_dataset(a.path());
    write_small_dataset(b.path());
    for name in [
        "dataset.json",
        "normalizer.csv",
        "features.csv",
        "patch_index.csv",
        "splits/train.csv",
        "splits/test.csv",
        "patches/000000.png",
    ] {
        let read = |root: &std::path::Path| std::fs::read(root.join(name)).unwrap();
        assert_eq!(read(a.path()), read(b.path()), "{name}");
    }
}
