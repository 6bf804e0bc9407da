//! JSON-lines patch manifest: one source image per line with its detected
//! boxes and the VWC reading already paired with it.

use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use super::meteo::{format_timestamp, parse_timestamp, StationId};
use crate::error::{Error, Result};
use crate::patch::BoundingBox;

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub image: PathBuf,
    pub station_id: StationId,
    pub timestamp: NaiveDateTime,
    pub boxes: Vec<BoundingBox>,
    pub vwc: f64,
}

#[derive(Serialize, Deserialize)]
struct RawEntry {
    image: PathBuf,
    station_id: StationId,
    timestamp: String,
    #[serde(default)]
    boxes: Vec<BoundingBox>,
    vwc: f64,
}

fn parse_line(line: &str, row: usize, base: &Path) -> Result<ManifestEntry> {
    let raw: RawEntry = serde_json::from_str(line).map_err(|e| Error::Parse {
        row,
        column: "json".into(),
        message: e.to_string(),
    })?;
    let timestamp = parse_timestamp(&raw.timestamp).map_err(|e| Error::Parse {
        row,
        column: "timestamp".into(),
        message: e.to_string(),
    })?;
    for b in &raw.boxes {
        b.validate().map_err(|e| Error::Parse {
            row,
            column: "boxes".into(),
            message: e.to_string(),
        })?;
    }
    if !(raw.vwc > 0.0 && raw.vwc < 1.0) {
        return Err(Error::Parse {
            row,
            column: "vwc".into(),
            message: format!("{} outside (0, 1)", raw.vwc),
        });
    }
    let image = if raw.image.is_absolute() {
        raw.image
    } else {
        base.join(raw.image)
    };
    Ok(ManifestEntry {
        image,
        station_id: raw.station_id,
        timestamp,
        boxes: raw.boxes,
        vwc: raw.vwc,
    })
}

/// Reads a manifest; relative image paths resolve against the manifest's
/// directory. Blank lines are skipped; rows are numbered from 1.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    if !path.exists() {
        return Err(Error::MissingPath(path.to_path_buf()));
    }
    let base = path.parent().unwrap_or(Path::new("."));
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_line(&line, i + 1, base)?);
    }
    Ok(out)
}

pub fn write_manifest<W: Write>(mut writer: W, entries: &[ManifestEntry]) -> Result<()> {
    for e in entries {
        let raw = RawEntry {
            image: e.image.clone(),
            station_id: e.station_id.clone(),
            timestamp: format_timestamp(&e.timestamp),
            boxes: e.boxes.clone(),
            vwc: e.vwc,
        };
        serde_json::to_writer(&mut writer, &raw)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let entry = ManifestEntry {
            image: PathBuf::from("img/a.png"),
            station_id: StationId::Station2,
            timestamp: parse_timestamp("2021-05-01T10:00:00").unwrap(),
            boxes: vec![BoundingBox::new(1.0, 2.0, 5.0, 6.0, 0.7).unwrap()],
            vwc: 0.25,
        };
        let path = dir.path().join("manifest.jsonl");
        write_manifest(std::fs::File::create(&path).unwrap(), &[entry.clone()]).unwrap();
        let back = read_manifest(&path).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].image, dir.path().join("img/a.png"));
        assert_eq!(back[0].boxes, entry.boxes);
        assert_eq!(back[0].timestamp, entry.timestamp);
    }

    #[test]
    fn bad_line_reports_row() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        std::fs::write(
            &path,
            "{\"image\":\"a.png\",\"station_id\":\"Station1\",\"timestamp\":\"2021-01-01\",\"boxes\":[],\"vwc\":0.2}\n\
             {\"image\":\"b.png\",\"station_id\":\"Station1\",\"timestamp\":\"2021-01-01\",\"boxes\":[],\"vwc\":1.2}\n",
        )
        .unwrap();
        match read_manifest(&path) {
            Err(Error::Parse { row, column, .. }) => assert_eq!((row, column.as_str()), (2, "vwc")),
            other => panic!("{other:?}"),
        }
    }
}
