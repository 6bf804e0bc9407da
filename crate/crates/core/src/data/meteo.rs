//! Meteorological station records and CSV ingestion.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The sixteen station variables, in table order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MeteoVar {
    /// Air temperature, °C.
    TAir,
    /// Internal module temperature, °C.
    TMod,
    /// Humidity-sensor temperature, °C.
    THs,
    /// Relative humidity, %.
    Rh,
    /// Internal module humidity, %.
    RhMod,
    /// Precipitation, mm.
    Precip,
    /// Solar radiation flux, W/m².
    SolarFlux,
    /// Vapor pressure, kPa.
    VaporPressure,
    /// Barometric pressure, hPa.
    BarPressure,
    /// Wind speed, m/s.
    WindSpeed,
    /// Gust speed, m/s.
    GustSpeed,
    /// North wind component, m/s.
    WindNorth,
    /// East wind component, m/s.
    WindEast,
    /// Wind direction, degrees.
    WindDir,
    /// North-south station tilt, degrees.
    TiltNs,
    /// East-west station tilt, degrees.
    TiltWe,
}

impl MeteoVar {
    pub const COUNT: usize = 16;

    pub const ALL: [MeteoVar; 16] = [
        MeteoVar::TAir,
        MeteoVar::TMod,
        MeteoVar::THs,
        MeteoVar::Rh,
        MeteoVar::RhMod,
        MeteoVar::Precip,
        MeteoVar::SolarFlux,
        MeteoVar::VaporPressure,
        MeteoVar::BarPressure,
        MeteoVar::WindSpeed,
        MeteoVar::GustSpeed,
        MeteoVar::WindNorth,
        MeteoVar::WindEast,
        MeteoVar::WindDir,
        MeteoVar::TiltNs,
        MeteoVar::TiltWe,
    ];

    /// Default eight-variable model input.
    pub const DEFAULT_FEATURES: [MeteoVar; 8] = [
        MeteoVar::TAir,
        MeteoVar::Rh,
        MeteoVar::Precip,
        MeteoVar::BarPressure,
        MeteoVar::SolarFlux,
        MeteoVar::TiltNs,
        MeteoVar::TiltWe,
        MeteoVar::WindSpeed,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Column name used in CSV headers.
    pub fn column(self) -> &'static str {
        match self {
            MeteoVar::TAir => "T_air",
            MeteoVar::TMod => "T_mod",
            MeteoVar::THs => "T_hs",
            MeteoVar::Rh => "RH",
            MeteoVar::RhMod => "RH_mod",
            MeteoVar::Precip => "P",
            MeteoVar::SolarFlux => "Phi_solar",
            MeteoVar::VaporPressure => "P_vapor",
            MeteoVar::BarPressure => "P_bar",
            MeteoVar::WindSpeed => "v_wind",
            MeteoVar::GustSpeed => "v_gust",
            MeteoVar::WindNorth => "v_north",
            MeteoVar::WindEast => "v_east",
            MeteoVar::WindDir => "theta_wind",
            MeteoVar::TiltNs => "Tilt_NS",
            MeteoVar::TiltWe => "Tilt_WE",
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            MeteoVar::TAir | MeteoVar::TMod | MeteoVar::THs => "°C",
            MeteoVar::Rh | MeteoVar::RhMod => "%",
            MeteoVar::Precip => "mm",
            MeteoVar::SolarFlux => "W/m²",
            MeteoVar::VaporPressure => "kPa",
            MeteoVar::BarPressure => "hPa",
            MeteoVar::WindSpeed
            | MeteoVar::GustSpeed
            | MeteoVar::WindNorth
            | MeteoVar::WindEast => "m/s",
            MeteoVar::WindDir | MeteoVar::TiltNs | MeteoVar::TiltWe => "degrees",
        }
    }
}

impl fmt::Display for MeteoVar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.column())
    }
}

impl FromStr for MeteoVar {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        MeteoVar::ALL
            .into_iter()
            .find(|v| v.column().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown meteorological variable `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum StationId {
    Station1,
    Station2,
    Station3,
    Custom(String),
}

impl StationId {
    pub fn as_str(&self) -> &str {
        match self {
            StationId::Station1 => "Station1",
            StationId::Station2 => "Station2",
            StationId::Station3 => "Station3",
            StationId::Custom(s) => s,
        }
    }
}

impl fmt::Display for StationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl From<&str> for StationId {
    fn from(s: &str) -> Self {
        match s.trim() {
            "Station1" => StationId::Station1,
            "Station2" => StationId::Station2,
            "Station3" => StationId::Station3,
            other => StationId::Custom(other.to_string()),
        }
    }
}

impl From<StationId> for String {
    fn from(s: StationId) -> Self {
        s.as_str().to_string()
    }
}

impl TryFrom<String> for StationId {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        if s.trim().is_empty() {
            return Err(Error::Config("empty station id".into()));
        }
        Ok(StationId::from(s.as_str()))
    }
}

pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

/// Parses ISO-8601 timestamps with or without an offset; offsets are
/// converted to UTC.
pub fn parse_timestamp(s: &str) -> Result<NaiveDateTime> {
    let s = s.trim();
    if let Ok(dt) = chrono::DateTime::parse_from_rfc3339(s) {
        return Ok(dt.naive_utc());
    }
    for fmt in [TIMESTAMP_FORMAT, "%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Ok(dt);
        }
    }
    if let Ok(d) = chrono::NaiveDate::parse_from_str(s, "%Y-%m-%d") {
        return Ok(d.and_hms_opt(0, 0, 0).expect("midnight"));
    }
    Err(Error::Config(format!("unparseable timestamp `{s}`")))
}

pub fn format_timestamp(ts: &NaiveDateTime) -> String {
    ts.format(TIMESTAMP_FORMAT).to_string()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeteoRecord {
    pub station_id: StationId,
    pub timestamp: NaiveDateTime,
    /// Indexed by [`MeteoVar::index`].
    pub values: [f64; MeteoVar::COUNT],
    /// Volumetric water content, cm³/cm³.
    pub vwc: f64,
}

impl MeteoRecord {
    pub fn get(&self, var: MeteoVar) -> f64 {
        self.values[var.index()]
    }

    pub fn set(&mut self, var: MeteoVar, value: f64) {
        self.values[var.index()] = value;
    }

    /// Physical-range checks; returns a description of the first violation.
    pub fn violation(&self) -> Option<String> {
        for var in [MeteoVar::Rh, MeteoVar::RhMod] {
            let v = self.get(var);
            if !(0.0..=100.0).contains(&v) {
                return Some(format!("{var} = {v} outside [0, 100]"));
            }
        }
        for var in [MeteoVar::Precip, MeteoVar::SolarFlux] {
            let v = self.get(var);
            if v < 0.0 {
                return Some(format!("{var} = {v} is negative"));
            }
        }
        if !(self.vwc > 0.0 && self.vwc < 1.0) {
            return Some(format!("vwc = {} outside (0, 1)", self.vwc));
        }
        if let Some(var) = MeteoVar::ALL.iter().find(|v| !self.get(**v).is_finite()) {
            return Some(format!("{var} is not finite"));
        }
        None
    }

    pub fn features(&self, vars: &[MeteoVar]) -> Vec<f64> {
        vars.iter().map(|v| self.get(*v)).collect()
    }
}

/// Maps each variable (and the bookkeeping columns) to a CSV header name.
#[derive(Debug, Clone, PartialEq)]
pub struct MeteoSchema {
    pub columns: BTreeMap<MeteoVar, String>,
    pub station_id: String,
    pub timestamp: String,
    pub vwc: String,
}

impl Default for MeteoSchema {
    fn default() -> Self {
        Self {
            columns: MeteoVar::ALL
                .into_iter()
                .map(|v| (v, v.column().to_string()))
                .collect(),
            station_id: "station_id".into(),
            timestamp: "timestamp".into(),
            vwc: "vwc".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RejectedRow {
    /// 1-based data row number (header excluded).
    pub row: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct MeteoTable {
    pub records: Vec<MeteoRecord>,
    pub rejected: Vec<RejectedRow>,
}

pub fn load_meteo_table(path: &Path, schema: &MeteoSchema) -> Result<MeteoTable> {
    if !path.exists() {
        return Err(Error::MissingPath(path.to_path_buf()));
    }
    read_meteo_table(std::fs::File::open(path)?, schema)
}

pub fn read_meteo_table<R: std::io::Read>(reader: R, schema: &MeteoSchema) -> Result<MeteoTable> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("missing required column `{name}`")))
    };
    let station_col = find(&schema.station_id)?;
    let ts_col = find(&schema.timestamp)?;
    let vwc_col = find(&schema.vwc)?;
    let mut var_cols = [0usize; MeteoVar::COUNT];
    for var in MeteoVar::ALL {
        let name = schema
            .columns
            .get(&var)
            .map(String::as_str)
            .unwrap_or(var.column());
        var_cols[var.index()] = find(name)?;
    }

    let mut table = MeteoTable::default();
    for (i, row) in rdr.records().enumerate() {
        let row_no = i + 1;
        let row = row?;
        let cell = |col: usize| row.get(col).unwrap_or("");
        let number = |col: usize| -> Result<f64> {
            cell(col).parse::<f64>().map_err(|e| Error::Parse {
                row: row_no,
                column: headers.get(col).unwrap_or("?").to_string(),
                message: e.to_string(),
            })
        };
        let timestamp = parse_timestamp(cell(ts_col)).map_err(|e| Error::Parse {
            row: row_no,
            column: schema.timestamp.clone(),
            message: e.to_string(),
        })?;
        let mut values = [0.0; MeteoVar::COUNT];
        for var in MeteoVar::ALL {
            values[var.index()] = number(var_cols[var.index()])?;
        }
        let record = MeteoRecord {
            station_id: StationId::from(cell(station_col)),
            timestamp,
            values,
            vwc: number(vwc_col)?,
        };
        if let Some(reason) = record.violation() {
            log::warn!("meteo row {row_no} rejected: {reason}");
            table.rejected.push(RejectedRow {
                row: row_no,
                reason,
            });
        } else {
            table.records.push(record);
        }
    }
    Ok(table)
}

/// Writes records with the default column names.
pub fn write_meteo_table<W: std::io::Write>(writer: W, records: &[MeteoRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["station_id".to_string(), "timestamp".to_string()];
    header.extend(MeteoVar::ALL.iter().map(|v| v.column().to_string()));
    header.push("vwc".into());
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![r.station_id.to_string(), format_timestamp(&r.timestamp)];
        row.extend(r.values.iter().map(|v| v.to_string()));
        row.push(r.vwc.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(rh: f64) -> MeteoRecord {
        let mut values = [1.0; MeteoVar::COUNT];
        values[MeteoVar::Rh.index()] = rh;
        MeteoRecord {
            station_id: StationId::Station1,
            timestamp: parse_timestamp("2021-03-01T12:00:00").unwrap(),
            values,
            vwc: 0.3,
        }
    }

    fn csv_of(records: &[MeteoRecord]) -> Vec<u8> {
        let mut buf = Vec::new();
        write_meteo_table(&mut buf, records).unwrap();
        buf
    }

    #[test]
    fn well_formed_three_rows() {
        let bytes = csv_of(&[record(50.0), record(60.0), record(70.0)]);
        let table = read_meteo_table(bytes.as_slice(), &MeteoSchema::default()).unwrap();
        assert_eq!(table.records.len(), 3);
        assert!(table.rejected.is_empty());
        assert_eq!(table.records[1].get(MeteoVar::Rh), 60.0);
    }

    #[test]
    fn out_of_range_humidity_row_is_rejected() {
        let bytes = csv_of(&[record(50.0), record(120.0), record(70.0)]);
        let table = read_meteo_table(bytes.as_slice(), &MeteoSchema::default()).unwrap();
        assert_eq!(table.records.len(), 2);
        assert_eq!(table.rejected.len(), 1);
        assert_eq!(table.rejected[0].row, 2);
    }

    #[test]
    fn missing_column_is_schema_error() {
        let bytes = csv_of(&[record(50.0)]);
        let text = String::from_utf8(bytes).unwrap().replacen("T_air", "T_other", 1);
        let err = read_meteo_table(text.as_bytes(), &MeteoSchema::default()).unwrap_err();
        assert!(matches!(err, Error::Schema(ref m) if m.contains("T_air")), "{err}");
    }

    #[test]
    fn unparseable_cell_reports_row_and_column() {
        let bytes = csv_of(&[record(50.0), record(60.0)]);
        let text = String::from_utf8(bytes).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        lines[2] = lines[2].replacen(",60,", ",sixty,", 1);
        let err = read_meteo_table(lines.join("\n").as_bytes(), &MeteoSchema::default()).unwrap_err();
        match err {
            Error::Parse { row, column, .. } => {
                assert_eq!(row, 2);
                assert_eq!(column, "RH");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn variable_names_round_trip() {
        for v in MeteoVar::ALL {
            assert_eq!(v.column().parse::<MeteoVar>().unwrap(), v);
        }
        assert_eq!(MeteoVar::ALL.iter().map(|v| v.index()).collect::<Vec<_>>(), (0..16).collect::<Vec<_>>());
    }

    #[test]
    fn timestamps_with_offset() {
        let a = parse_timestamp("2021-03-01T12:00:00Z").unwrap();
        let b = parse_timestamp("2021-03-01T12:00:00").unwrap();
        assert_eq!(a, b);
        assert_eq!(format_timestamp(&a), "2021-03-01T12:00:00");
    }
}
