//! Run configuration: a TOML file merged with command-line overrides.

use std::path::{Path, PathBuf};

use misme::data::{FeaturePreset, MeteoVar, SignalCoupling, SplitOptions, SplitRatios};
use misme::models::{ModelConfig, Variant};
use misme::training::{HybridCoefficients, TrainingConfig};
use serde::{Deserialize, Serialize};

use crate::Failure;

/// Name of the echoed configuration written by `command`.
pub fn echo_file(command: &str) -> String {
    format!("{command}_config.toml")
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Dataset directory written by `prepare` or `synth`.
    pub dataset: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub meteo: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    /// Split scored by `evaluate`.
    pub split: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrepareSection {
    pub min_confidence: f64,
    pub patch_size: usize,
    pub ratios: SplitRatios,
    pub stratify: bool,
}

impl Default for PrepareSection {
    fn default() -> Self {
        Self {
            min_confidence: misme::patch::DEFAULT_MIN_CONFIDENCE,
            patch_size: 64,
            ratios: SplitRatios::default(),
            stratify: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    /// `reference` or a path to a TOML/JSON file of station profiles.
    pub profiles: String,
    pub n_per_station: usize,
    pub patch_size: usize,
    pub coupling: SignalCoupling,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self {
            profiles: "reference".into(),
            n_per_station: 300,
            patch_size: 64,
            coupling: SignalCoupling::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub kind: Option<String>,
    /// `[delta, gamma, lambda]` triples; the built-in grid when absent.
    pub grid: Option<Vec<[f64; 3]>>,
    pub fractions: Option<Vec<f64>>,
    /// Target stations of the station-fraction experiment; all when empty.
    pub targets: Vec<String>,
}

impl ExperimentSection {
    pub fn coefficient_grid(&self) -> Vec<HybridCoefficients> {
        match &self.grid {
            Some(g) => g.iter().map(|c| HybridCoefficients::new(c[0], c[1], c[2])).collect(),
            None => misme::training::default_coefficient_grid(),
        }
    }
}

/// Everything a command needs, after merging file values and flags.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: Option<PathBuf>,
    /// Preset name (`default`, `all`) or comma-separated column names.
    pub features: Option<String>,
    pub data: DataSection,
    pub prepare: PrepareSection,
    pub synth: SynthSection,
    pub model: ModelConfig,
    pub training: TrainingConfig,
    pub experiment: ExperimentSection,
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub variant: Option<Variant>,
    pub features: Option<String>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, Failure> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        if !path.is_file() {
            return Err(Failure::missing(path));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(out) = &o.out {
            self.out = Some(out.clone());
        }
        if let Some(v) = o.variant {
            self.model.fusion.variant = v;
        }
        if let Some(f) = &o.features {
            self.features = Some(f.clone());
        }
        self.training.seed = self.seed;
    }

    pub fn out_dir(&self) -> Result<&Path, Failure> {
        self.out
            .as_deref()
            .ok_or_else(|| Failure::usage("an output directory is required (--out or `out` in the config)"))
    }

    pub fn feature_vars(&self) -> Result<Option<Vec<MeteoVar>>, Failure> {
        self.features.as_deref().map(parse_features).transpose()
    }

    pub fn split_options(&self) -> SplitOptions {
        SplitOptions {
            ratios: self.prepare.ratios,
            seed: self.seed,
            stratify: self.prepare.stratify,
        }
    }

    /// Writes the effective configuration into `dir`.
    pub fn echo(&self, dir: &Path, command: &str) -> Result<(), Failure> {
        let text = toml::to_string(self).map_err(|e| Failure::runtime(format!("cannot serialize config: {e}")))?;
        std::fs::write(dir.join(echo_file(command)), text)?;
        Ok(())
    }
}

pub fn parse_features(spec: &str) -> Result<Vec<MeteoVar>, Failure> {
    if let Some(p) = FeaturePreset::parse(spec) {
        return Ok(p.features());
    }
    let vars = spec
        .split(',')
        .map(|s| s.trim().parse::<MeteoVar>())
        .collect::<misme::Result<Vec<_>>>()?;
    if vars.is_empty() {
        return Err(Failure::input("empty feature list"));
    }
    Ok(vars)
}

/// Fails with exit code 2 unless every path exists.
pub fn require_paths(paths: &[&Path]) -> Result<(), Failure> {
    match paths.iter().find(|p| !p.exists()) {
        Some(p) => Err(Failure::missing(p)),
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_fills_defaults() {
        let cfg: RunConfig = toml::from_str(
            "seed = 4\n[training]\nepochs = 3\n[model.fusion]\nvariant = \"concat\"\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 4);
        assert_eq!(cfg.training.epochs, 3);
        assert_eq!(cfg.training.batch_size, TrainingConfig::default().batch_size);
        assert_eq!(cfg.model.fusion.variant, Variant::Concat);
        assert_eq!(cfg.synth.profiles, "reference");
    }

    #[test]
    fn flags_override_file() {
        let mut cfg: RunConfig = toml::from_str("seed = 4\nout = \"a\"\n").unwrap();
        cfg.apply(&Overrides {
            seed: Some(9),
            out: Some("b".into()),
            variant: Some(Variant::MeteoOnly),
            features: None,
        });
        assert_eq!((cfg.seed, cfg.training.seed), (9, 9));
        assert_eq!(cfg.out.as_deref(), Some(Path::new("b")));
        assert_eq!(cfg.model.fusion.variant, Variant::MeteoOnly);
    }

    #[test]
    fn echo_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.features = Some("all".into());
        cfg.experiment.grid = Some(vec![[1.0, 0.0, 0.0]]);
        let text = toml::to_string(&cfg).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<RunConfig>("sed = 1\n").is_err());
    }

    #[test]
    fn feature_specs() {
        assert_eq!(parse_features("default").unwrap().len(), 8);
        assert_eq!(parse_features("all").unwrap().len(), 16);
        assert_eq!(parse_features("T_air, RH").unwrap(), vec![MeteoVar::TAir, MeteoVar::Rh]);
        assert!(parse_features("T_air,bogus").is_err());
    }
}
