//! Correlation-driven feature selection.

use serde::{Deserialize, Serialize};

use super::meteo::{MeteoRecord, MeteoVar};
use crate::error::{Error, Result};

/// Pearson product-moment correlation of two equal-length sequences.
pub fn pearson_correlation(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::dim("pearson_correlation", &[x.len()], &[y.len()]));
    }
    if x.len() < 2 {
        return Err(Error::UndefinedCorrelation(
            "need at least two observations".into(),
        ));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("constant sequence".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Named feature lists.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeaturePreset {
    /// T_air, RH, P, P_bar, Phi_solar, Tilt_NS, Tilt_WE, v_wind.
    #[serde(rename = "default")]
    Standard,
    All,
}

impl FeaturePreset {
    pub fn features(self) -> Vec<MeteoVar> {
        match self {
            FeaturePreset::Standard => MeteoVar::DEFAULT_FEATURES.to_vec(),
            FeaturePreset::All => MeteoVar::ALL.to_vec(),
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name.trim() {
            "default" => Some(FeaturePreset::Standard),
            "all" => Some(FeaturePreset::All),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionThresholds {
    pub min_abs_r: f64,
    pub redundancy_r: f64,
}

impl Default for SelectionThresholds {
    fn default() -> Self {
        Self {
            min_abs_r: 0.08,
            redundancy_r: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationReport {
    /// `r(feature, vwc)`; `None` for constant columns.
    pub target_r: Vec<(MeteoVar, Option<f64>)>,
    /// Features dropped because a more target-correlated feature was kept:
    /// `(dropped, kept_instead, mutual r)`.
    pub redundant: Vec<(MeteoVar, MeteoVar, f64)>,
    pub constant: Vec<MeteoVar>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeatureSelection {
    /// Kept features in table order.
    pub features: Vec<MeteoVar>,
    pub report: CorrelationReport,
}

/// Keeps features with `|r(feature, vwc)| >= min_abs_r`, then prunes
/// mutually redundant pairs (`|r| >= redundancy_r`) in favour of the one
/// more correlated with the target; ties go to the earlier variable.
pub fn select_features(
    records: &[MeteoRecord],
    thresholds: SelectionThresholds,
) -> Result<FeatureSelection> {
    if records.len() < 2 {
        return Err(Error::Empty(
            "feature selection needs at least two records".into(),
        ));
    }
    let target: Vec<f64> = records.iter().map(|r| r.vwc).collect();
    let columns: Vec<Vec<f64>> = MeteoVar::ALL
        .iter()
        .map(|v| records.iter().map(|r| r.get(*v)).collect())
        .collect();

    let mut report = CorrelationReport {
        target_r: Vec::new(),
        redundant: Vec::new(),
        constant: Vec::new(),
    };
    let mut candidates: Vec<(MeteoVar, f64)> = Vec::new();
    for var in MeteoVar::ALL {
        match pearson_correlation(&columns[var.index()], &target) {
            Ok(r) => {
                report.target_r.push((var, Some(r)));
                if r.abs() >= thresholds.min_abs_r {
                    candidates.push((var, r));
                }
            }
            Err(Error::UndefinedCorrelation(_)) => {
                log::warn!("feature {var} is constant and was excluded");
                report.target_r.push((var, None));
                report.constant.push(var);
            }
            Err(e) => return Err(e),
        }
    }

    // Strongest first; the sort is stable so ties keep table order.
    candidates.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()));
    let mut kept: Vec<MeteoVar> = Vec::new();
    for (var, _) in candidates {
        let clash = kept.iter().find_map(|k| {
            let r = pearson_correlation(&columns[var.index()], &columns[k.index()]).ok()?;
            (r.abs() >= thresholds.redundancy_r).then_some((*k, r))
        });
        match clash {
            Some((k, r)) => report.redundant.push((var, k, r)),
            None => kept.push(var),
        }
    }
    kept.sort();
    Ok(FeatureSelection {
        features: kept,
        report,
    })
}
