use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use chrono::{Duration, NaiveDate};
use misme::data::{format_timestamp, write_meteo_table, MeteoRecord, MeteoVar, Patch};
use misme::patch::write_png;

const CONFIG: &str = r#"
seed = 2
[synth]
n_per_station = 12
patch_size = 8
[prepare]
patch_size = 8
[model.image]
stages = [{ out_channels = 4, kernel = 3, stride = 2 }]
[model.meteo]
hidden = [4]
output_dim = 4
[model.fusion]
post_fusion = [4]
projection_hidden = 4
[training]
epochs = 2
batch_size = 8
[experiment]
grid = [[1.0, 1.0, 1.0], [1.0, 0.0, 0.0], [0.5, 0.5, 0.0]]
fractions = [0.0, 1.0]
"#;

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("run.toml"), CONFIG).unwrap();
        Self { dir }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_misme"))
            .arg("--config")
            .arg(self.path("run.toml"))
            .args(args)
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> Output {
        let out = self.run(args);
        assert!(
            out.status.success(),
            "misme {args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        out
    }

    fn synth(&self) -> String {
        let data = self.path("data");
        self.ok(&["synth", "--out", data.to_str().unwrap()]);
        data.to_str().unwrap().to_string()
    }
}

fn csv_rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path)
        .unwrap()
        .records()
        .collect::<Result<_, _>>()
        .unwrap()
}

fn header(path: &Path) -> Vec<String> {
    csv::Reader::from_path(path)
        .unwrap()
        .headers()
        .unwrap()
        .iter()
        .map(String::from)
        .collect()
}

#[test]
fn usage_errors_exit_1() {
    let f = Fixture::new();
    assert_eq!(f.run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(f.run(&["train", "--variant", "bogus"]).status.code(), Some(1));
    assert_eq!(f.run(&["ablate", "--out", "x"]).status.code(), Some(1));
}

#[test]
fn missing_inputs_exit_2() {
    let f = Fixture::new();
    let out = f.path("out");
    let out = out.to_str().unwrap();
    assert_eq!(f.run(&["train", "--data", "/nonexistent/data", "--out", out]).status.code(), Some(2));
    assert_eq!(
        f.run(&["evaluate", "--checkpoint", "/nonexistent/model.ckpt", "--data", "/nonexistent", "--out", out])
            .status
            .code(),
        Some(2)
    );
    let missing_config = Command::new(env!("CARGO_BIN_EXE_misme"))
        .args(["--config", "/nonexistent.toml", "synth", "--out", out])
        .output()
        .unwrap();
    assert_eq!(missing_config.status.code(), Some(2));
    let empty = tempfile::tempdir().unwrap();
    assert_eq!(f.run(&["report", empty.path().to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn synth_is_deterministic() {
    let f = Fixture::new();
    f.synth();
    let again = f.path("again");
    f.ok(&["synth", "--out", again.to_str().unwrap()]);
    let rows = csv_rows(&f.path("data/features.csv"));
    assert_eq!(rows.len(), 36);
    for name in ["features.csv", "patch_index.csv", "normalizer.csv", "splits/train.csv"] {
        assert_eq!(
            std::fs::read(f.path("data").join(name)).unwrap(),
            std::fs::read(again.join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn train_evaluate_report() {
    let f = Fixture::new();
    let data = f.synth();
    let train = f.path("run/train");
    f.ok(&["train", "--data", &data, "--out", train.to_str().unwrap(), "--variant", "learnable_param"]);
    let log = train.join("training_log.csv");
    assert_eq!(csv_rows(&log).len(), 2);
    let cols = header(&log);
    assert!(cols.contains(&"alpha".to_string()) && cols.contains(&"beta".to_string()));
    assert!(train.join("model.ckpt").is_file());
    assert!(train.join("train_config.toml").is_file());

    let eval = f.path("run/eval");
    let ckpt = train.join("model.ckpt");
    f.ok(&["evaluate", "--checkpoint", ckpt.to_str().unwrap(), "--data", &data, "--out", eval.to_str().unwrap()]);
    let rows = csv_rows(&eval.join("eval_report.csv"));
    assert_eq!(&rows[0][0], "overall");
    assert_eq!(rows.len(), 4, "overall plus three stations");
    let total: usize = rows[1..].iter().map(|r| r[1].parse::<usize>().unwrap()).sum();
    assert_eq!(total, rows[0][1].parse::<usize>().unwrap());

    let run = f.path("run");
    f.ok(&["report", run.to_str().unwrap()]);
    for name in ["report.md", "train_loss_curve.svg", "train_alpha_beta.svg", "eval_residual_histogram.svg"] {
        assert!(run.join(name).is_file(), "{name}");
    }
}

#[test]
fn evaluate_rejects_mismatched_features() {
    let f = Fixture::new();
    let data = f.synth();
    let train = f.path("train");
    f.ok(&["train", "--data", &data, "--out", train.to_str().unwrap(), "--epochs", "1"]);
    let ckpt = train.join("model.ckpt");
    let out = f.run(&[
        "evaluate",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--data",
        &data,
        "--out",
        f.path("eval").to_str().unwrap(),
        "--features",
        "all",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn ablations_write_one_row_per_cell() {
    let f = Fixture::new();
    let data = f.synth();
    let out = f.path("ablate");
    let out_s = out.to_str().unwrap();
    f.ok(&["ablate", "--kind", "coefficients", "--data", &data, "--out", out_s]);
    assert_eq!(csv_rows(&out.join("ablation_coefficients.csv")).len(), 3);
    assert!(out.join("ablation_coefficients.svg").is_file());

    f.ok(&["ablate", "--kind", "station_fraction", "--data", &data, "--out", out_s, "--target", "Station1"]);
    let rows = csv_rows(&out.join("ablation_station_fraction.csv"));
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| &r[0] == "Station1"));

    let unknown = f.run(&["ablate", "--kind", "station_fraction", "--data", &data, "--out", out_s, "--target", "nowhere"]);
    assert_eq!(unknown.status.code(), Some(2));
}

fn write_prepare_fixture(root: &Path) -> (PathBuf, PathBuf) {
    let images = root.join("images");
    std::fs::create_dir_all(&images).unwrap();
    let start = NaiveDate::from_ymd_opt(2023, 6, 1).unwrap().and_hms_opt(10, 0, 0).unwrap();
    let stations = ["WE", "NE", "SE"];
    let mut lines = Vec::new();
    let mut records = Vec::new();
    for i in 0..10 {
        let station = stations[i % 3];
        let ts = start + Duration::hours(i as i64);
        let name = format!("img{i}.png");
        write_png(&images.join(&name), &Patch::filled(32, 32, 0.1 * (i as f64 + 1.0) / 10.0)).unwrap();
        lines.push(format!(
            r#"{{"image":"images/{name}","station_id":"{station}","timestamp":"{}","vwc":{},"boxes":[{{"x_min":2,"y_min":2,"x_max":18,"y_max":18,"confidence":0.9}},{{"x_min":10,"y_min":10,"x_max":30,"y_max":30,"confidence":0.1}}]}}"#,
            format_timestamp(&ts),
            0.1 + 0.02 * i as f64
        ));
        let mut values = [0.0; MeteoVar::COUNT];
        for (j, v) in values.iter_mut().enumerate() {
            *v = (i * 7 + j * 3) as f64 % 11.0 + j as f64;
        }
        records.push(MeteoRecord {
            station_id: station.into(),
            timestamp: ts,
            values,
            vwc: 0.1 + 0.02 * i as f64,
        });
    }
    let manifest = root.join("manifest.jsonl");
    std::fs::write(&manifest, lines.join("\n") + "\n").unwrap();
    let meteo = root.join("meteo.csv");
    write_meteo_table(std::fs::File::create(&meteo).unwrap(), &records).unwrap();
    (manifest, meteo)
}

#[test]
fn prepare_filters_low_confidence_boxes() {
    let f = Fixture::new();
    let (manifest, meteo) = write_prepare_fixture(f.dir.path());
    let out = f.path("prepared");
    f.ok(&[
        "prepare",
        "--manifest",
        manifest.to_str().unwrap(),
        "--meteo",
        meteo.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("prepare_summary.json")).unwrap()).unwrap();
    assert_eq!(summary["images"], 10);
    assert_eq!(summary["samples"], 10);
    assert_eq!(summary["skipped_low_confidence"], 10);
    assert_eq!(csv_rows(&out.join("features.csv")).len(), 10);
    assert_eq!(std::fs::read_dir(out.join("patches")).unwrap().count(), 10);

    let missing = f.run(&["prepare", "--manifest", "/nonexistent.jsonl", "--meteo", meteo.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(missing.status.code(), Some(2));
}
