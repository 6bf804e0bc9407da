//! Consolidated markdown report and figures rendered from run artifacts.

use std::collections::BTreeMap;
use std::fmt::Write;
use std::fs;
use std::path::{Path, PathBuf};

use misme::evaluation::EvalReport;
use misme::training::{read_log_csv, EpochRecord};

use crate::commands::{ablation_csv, AblationKind, EVAL_JSON, LOG_FILE};
use crate::svg::{BarChart, LineChart, Series};
use crate::Failure;

pub const REPORT_FILE: &str = "report.md";

const ABLATIONS: [AblationKind; 4] = [
    AblationKind::Coefficients,
    AblationKind::Combiners,
    AblationKind::LearnableMode,
    AblationKind::StationFraction,
];

#[derive(Debug, Clone, PartialEq)]
pub struct FractionRow {
    pub station: String,
    pub fraction: f64,
    pub mae: Option<f64>,
    pub mape: Option<f64>,
}

fn parse_opt(s: &str) -> Option<f64> {
    s.trim().parse().ok()
}

fn csv_rows(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>), Failure> {
    let mut rdr = csv::Reader::from_path(path).map_err(misme::Error::from)?;
    let header = rdr.headers().map_err(misme::Error::from)?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for r in rdr.records() {
        rows.push(r.map_err(misme::Error::from)?.iter().map(String::from).collect());
    }
    Ok((header, rows))
}

fn column(header: &[String], name: &str, path: &Path) -> Result<usize, Failure> {
    header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Failure::input(format!("{}: missing column `{name}`", path.display())))
}

pub fn read_fraction_rows(path: &Path) -> Result<Vec<FractionRow>, Failure> {
    let (header, rows) = csv_rows(path)?;
    let (s, f, mae, mape) = (
        column(&header, "target_station", path)?,
        column(&header, "fraction", path)?,
        column(&header, "mae", path)?,
        column(&header, "mape", path)?,
    );
    rows.iter()
        .map(|r| {
            Ok(FractionRow {
                station: r[s].clone(),
                fraction: parse_opt(&r[f])
                    .ok_or_else(|| Failure::input(format!("{}: bad fraction `{}`", path.display(), r[f])))?,
                mae: parse_opt(&r[mae]),
                mape: parse_opt(&r[mape]),
            })
        })
        .collect()
}

pub fn fraction_chart(rows: &[FractionRow]) -> String {
    let mut by_station: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
    for r in rows {
        if let Some(m) = r.mape {
            by_station.entry(&r.station).or_default().push((100.0 * r.fraction, m));
        }
    }
    let series = by_station
        .into_iter()
        .map(|(name, points)| Series { name: name.to_string(), points })
        .collect();
    LineChart {
        title: "Target-station MAPE vs share of its data in training",
        x_label: "target-station data used (%)",
        y_label: "MAPE (%)",
        series,
    }
    .render()
}

/// One labelled experiment cell read back from an ablation table.
struct CellRow {
    label: String,
    mae: Option<f64>,
    mape: Option<f64>,
    error: String,
}

fn read_cell_rows(path: &Path) -> Result<Vec<CellRow>, Failure> {
    let (header, rows) = csv_rows(path)?;
    let mae = column(&header, "mae", path)?;
    let mape = column(&header, "mape", path)?;
    let error = column(&header, "error", path)?;
    Ok(rows
        .iter()
        .map(|r| CellRow {
            label: r[..mae].join("/"),
            mae: parse_opt(&r[mae]),
            mape: parse_opt(&r[mape]),
            error: r[error].clone(),
        })
        .collect())
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.map(|x| format!("{x:.digits$}")).unwrap_or_else(|| "n/a".into())
}

struct Writer {
    out: PathBuf,
    md: String,
    files: Vec<String>,
}

impl Writer {
    fn figure(&mut self, name: String, svg: String, caption: &str) -> Result<(), Failure> {
        fs::write(self.out.join(&name), svg)?;
        let _ = writeln!(self.md, "![{caption}]({name})\n");
        self.files.push(name);
        Ok(())
    }
}

fn training_section(w: &mut Writer, dir: &Path, prefix: &str, title: &str) -> Result<bool, Failure> {
    let path = dir.join(LOG_FILE);
    if !path.is_file() {
        return Ok(false);
    }
    let records = read_log_csv(&path)?;
    let _ = writeln!(w.md, "## Training: {title}\n");
    let Some(last) = records.last() else {
        let _ = writeln!(w.md, "The training log is empty.\n");
        return Ok(true);
    };
    let best = records
        .iter()
        .min_by(|a, b| a.val_loss.total_cmp(&b.val_loss))
        .unwrap_or(last);
    let _ = writeln!(
        w.md,
        "{} epochs; best validation loss {:.6} at epoch {}; final training loss {:.6}.\n",
        records.len(),
        best.val_loss,
        best.epoch,
        last.train_loss
    );
    let epoch = |f: &dyn Fn(&EpochRecord) -> Option<f64>| -> Vec<(f64, f64)> {
        records.iter().filter_map(|r| f(r).map(|v| (r.epoch as f64, v))).collect()
    };
    let mut series = vec![
        Series { name: "train".into(), points: epoch(&|r| Some(r.train_loss)) },
        Series { name: "validation".into(), points: epoch(&|r| Some(r.val_loss)) },
    ];
    let terms: [(&str, fn(&EpochRecord) -> Option<f64>); 3] = [
        ("combined term", |r| r.l_concat),
        ("meteo term", |r| r.l_meteo),
        ("image term", |r| r.l_image),
    ];
    for (name, f) in terms {
        let pts = epoch(&f);
        if !pts.is_empty() {
            series.push(Series { name: name.into(), points: pts });
        }
    }
    let chart = LineChart { title: "Loss per epoch", x_label: "epoch", y_label: "loss", series }.render();
    w.figure(format!("{prefix}loss_curve.svg"), chart, "loss curves")?;
    let alpha = epoch(&|r| r.alpha);
    let beta = epoch(&|r| r.beta);
    if !alpha.is_empty() {
        let a = alpha.last().map(|p| p.1);
        let b = beta.last().map(|p| p.1);
        let _ = writeln!(
            w.md,
            "Modality weights at the start of the last epoch: alpha {}, beta {}.\n",
            fmt_opt(a, 4),
            fmt_opt(b, 4)
        );
        let chart = LineChart {
            title: "Learnable modality weights",
            x_label: "epoch",
            y_label: "weight",
            series: vec![
                Series { name: "alpha (meteo)".into(), points: alpha },
                Series { name: "beta (image)".into(), points: beta },
            ],
        }
        .render();
        w.figure(format!("{prefix}alpha_beta.svg"), chart, "alpha/beta trajectory")?;
    }
    Ok(true)
}

fn evaluation_section(w: &mut Writer, dir: &Path, prefix: &str, title: &str) -> Result<bool, Failure> {
    let path = dir.join(EVAL_JSON);
    if !path.is_file() {
        return Ok(false);
    }
    let text = fs::read_to_string(&path)?;
    let r: EvalReport =
        serde_json::from_str(&text).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
    let _ = writeln!(w.md, "## Evaluation: {title}\n");
    let _ = writeln!(w.md, "| scope | n | MAE | MAPE (%) | within band |\n|---|---|---|---|---|");
    let _ = writeln!(
        w.md,
        "| overall | {} | {:.5} | {:.3} | {:.1}% |",
        r.n_samples,
        r.mae,
        r.mape,
        100.0 * r.band_fraction
    );
    for (s, st) in &r.per_station {
        let _ = writeln!(
            w.md,
            "| {s} | {} | {:.5} | {:.3} | {:.1}% |",
            st.n_samples,
            st.mae,
            st.mape,
            100.0 * st.band_fraction
        );
    }
    let _ = writeln!(w.md, "\nResidual band: [{}, {}].\n", r.band.0, r.band.1);
    let h = &r.histogram;
    let mut bars = vec![(format!("<{:.2}", h.min), h.underflow as f64)];
    bars.extend(
        h.counts
            .iter()
            .enumerate()
            .map(|(i, c)| (format!("{:.2}", h.bin_start(i)), *c as f64)),
    );
    bars.push((format!(">={:.2}", h.bin_start(h.counts.len())), h.overflow as f64));
    let chart = BarChart { title: "Residuals (prediction - target)", y_label: "count", bars }.render();
    w.figure(format!("{prefix}residual_histogram.svg"), chart, "residual histogram")?;
    Ok(true)
}

fn ablation_section(
    w: &mut Writer,
    dir: &Path,
    prefix: &str,
    title: &str,
    kind: AblationKind,
) -> Result<bool, Failure> {
    let path = dir.join(ablation_csv(kind));
    if !path.is_file() {
        return Ok(false);
    }
    let _ = writeln!(w.md, "## Ablation `{}`: {title}\n", kind.name());
    if kind == AblationKind::StationFraction {
        let rows = read_fraction_rows(&path)?;
        let _ = writeln!(w.md, "| target station | fraction | MAE | MAPE (%) |\n|---|---|---|---|");
        for r in &rows {
            let _ = writeln!(
                w.md,
                "| {} | {:.3} | {} | {} |",
                r.station,
                r.fraction,
                fmt_opt(r.mae, 5),
                fmt_opt(r.mape, 3)
            );
        }
        let _ = writeln!(w.md);
        w.figure(format!("{prefix}fraction_curves.svg"), fraction_chart(&rows), "station fraction curves")?;
        return Ok(true);
    }
    let rows = read_cell_rows(&path)?;
    let _ = writeln!(w.md, "| cell | MAE | MAPE (%) | error |\n|---|---|---|---|");
    for r in &rows {
        let _ = writeln!(w.md, "| {} | {} | {} | {} |", r.label, fmt_opt(r.mae, 5), fmt_opt(r.mape, 3), r.error);
    }
    let _ = writeln!(w.md);
    let bars = rows.iter().map(|r| (r.label.clone(), r.mape.unwrap_or(f64::NAN))).collect();
    let chart_title = format!("Test MAPE by {}", kind.name().replace('_', " "));
    let chart = BarChart { title: &chart_title, y_label: "MAPE (%)", bars }.render();
    w.figure(format!("{prefix}{}_mape.svg", kind.name()), chart, kind.name())?;
    Ok(true)
}

/// Scans `run` and its immediate subdirectories for logs, evaluation
/// reports and ablation tables, and writes `report.md` plus figures to `out`.
/// Returns the names of the files written.
pub fn render_report(run: &Path, out: &Path) -> Result<Vec<String>, Failure> {
    if !run.is_dir() {
        return Err(Failure::missing(run));
    }
    let mut dirs = vec![(run.to_path_buf(), String::new(), ".".to_string())];
    let mut subdirs: Vec<PathBuf> = fs::read_dir(run)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    subdirs.sort();
    for d in subdirs {
        let name = d.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        dirs.push((d, format!("{name}_"), name));
    }

    fs::create_dir_all(out)?;
    let mut w = Writer {
        out: out.to_path_buf(),
        md: String::from("# Run report\n\n"),
        files: Vec::new(),
    };
    let (mut logs, mut evals) = (0, 0);
    let mut ablations = 0;
    for (dir, prefix, title) in &dirs {
        logs += training_section(&mut w, dir, prefix, title)? as usize;
        evals += evaluation_section(&mut w, dir, prefix, title)? as usize;
        for kind in ABLATIONS {
            ablations += ablation_section(&mut w, dir, prefix, title, kind)? as usize;
        }
    }
    let mut missing = Vec::new();
    if logs == 0 {
        missing.push(LOG_FILE.to_string());
    }
    if evals == 0 {
        missing.push(EVAL_JSON.to_string());
    }
    if ablations == 0 {
        missing.push("ablation_*.csv".to_string());
    }
    if logs + evals + ablations == 0 {
        return Err(Failure::input(format!(
            "no run artifacts found in {} (looked for {})",
            run.display(),
            missing.join(", ")
        )));
    }
    if !missing.is_empty() {
        let _ = writeln!(w.md, "## Not found\n");
        for m in &missing {
            let _ = writeln!(w.md, "- `{m}`");
        }
        let _ = writeln!(w.md);
    }
    fs::write(out.join(REPORT_FILE), &w.md)?;
    w.files.push(REPORT_FILE.to_string());
    Ok(w.files)
}
