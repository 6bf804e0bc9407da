//! Synthetic station data calibrated to per-station VWC statistics.
//!
//! VWC is drawn from a truncated normal per station. Every meteorological
//! variable is an affine map of a latent `c·z + sqrt(1 − c²)·ε`, where `z`
//! is VWC standardized against a fixed reference and `c` is the variable's
//! loading, so `c` directly controls its correlation with VWC. Patches are
//! textured noise around a brightness that falls as VWC rises.
//!
//! An optional station shift adds a station-specific offset to `z` in both
//! modalities and tints one colour channel per station, so a model only
//! learns the offset if it has seen that station.

use chrono::{Duration, NaiveDate, NaiveDateTime};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::meteo::{MeteoRecord, MeteoVar};
use super::sample::{FeatureVector, Patch, Sample, StationProfile};
use crate::error::{Error, Result};

const REFERENCE_MEAN: f64 = 0.29;
const REFERENCE_STD: f64 = 0.06;
/// Offsets applied (times `station_shift`) to the i-th station, cycling.
const STATION_SIGNATURE: [f64; 3] = [1.0, -1.5, 0.75];
const SOIL_COLOUR: [f64; 3] = [1.1, 0.95, 0.8];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SignalCoupling {
    /// Correlation loading of each variable on VWC, indexed by
    /// [`MeteoVar::index`]. Derived variables (`T_mod`, `T_hs`, `v_gust`)
    /// follow their parent and ignore their own entry.
    pub meteo_loadings: [f64; MeteoVar::COUNT],
    /// Multiplier on every loading; 0 makes the meteorological data pure noise.
    pub meteo_gain: f64,
    /// Brightness drop per unit of standardized VWC, in tenths of full scale.
    pub image_signal: f64,
    /// Per-patch brightness noise, same units as `image_signal`.
    pub image_noise: f64,
    /// Per-pixel noise standard deviation.
    pub pixel_noise: f64,
    /// Strength of the per-station offset and tint.
    pub station_shift: f64,
}

impl Default for SignalCoupling {
    fn default() -> Self {
        let mut meteo_loadings = [0.0; MeteoVar::COUNT];
        for (var, c) in [
            (MeteoVar::TAir, -0.6),
            (MeteoVar::Rh, 0.8),
            (MeteoVar::Precip, 0.3),
            (MeteoVar::BarPressure, 0.4),
            (MeteoVar::SolarFlux, 0.35),
            (MeteoVar::TiltNs, 0.25),
            (MeteoVar::TiltWe, 0.3),
            (MeteoVar::WindSpeed, 0.2),
        ] {
            meteo_loadings[var.index()] = c;
        }
        Self {
            meteo_loadings,
            meteo_gain: 1.0,
            image_signal: 1.0,
            image_noise: 0.5,
            pixel_noise: 0.05,
            station_shift: 0.0,
        }
    }
}

impl SignalCoupling {
    /// Meteorological variables carry no information about VWC.
    pub fn meteo_noise_only(mut self) -> Self {
        self.meteo_gain = 0.0;
        self
    }

    /// Patch brightness carries no information about VWC.
    pub fn image_noise_only(mut self) -> Self {
        self.image_signal = 0.0;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_per_station: usize,
    pub seed: u64,
    pub patch_size: usize,
    pub coupling: SignalCoupling,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_per_station: 300,
            seed: 0,
            patch_size: 64,
            coupling: SignalCoupling::default(),
        }
    }
}

/// Raw generator output: one meteorological record and one patch per sample.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub records: Vec<MeteoRecord>,
    pub patches: Vec<Patch>,
}

impl SyntheticData {
    /// Pairs records and patches into samples carrying raw `features`.
    pub fn samples(&self, features: &[MeteoVar]) -> Vec<Sample> {
        self.records
            .iter()
            .zip(&self.patches)
            .map(|(r, p)| Sample {
                patch: p.clone(),
                features: FeatureVector::raw(r.features(features)),
                target_vwc: r.vwc,
                station_id: r.station_id.clone(),
                timestamp: r.timestamp,
            })
            .collect()
    }
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

/// Rejection sampling from N(mean, std) restricted to `[min, max]`.
fn truncated_normal<R: Rng + ?Sized>(rng: &mut R, p: &StationProfile) -> f64 {
    loop {
        let v = p.vwc_mean + p.vwc_std * normal(rng);
        if v >= p.vwc_min && v <= p.vwc_max {
            return v;
        }
    }
}

fn start_time() -> NaiveDateTime {
    NaiveDate::from_ymd_opt(2020, 10, 1)
        .expect("valid date")
        .and_hms_opt(9, 0, 0)
        .expect("valid time")
}

/// Hourly slots between 09:00 and 17:00, day after day.
fn timestamp(j: usize) -> NaiveDateTime {
    let day = (j / 9) as i64;
    let hour = (j % 9) as i64;
    start_time() + Duration::days(day) + Duration::hours(hour)
}

fn meteo_values<R: Rng + ?Sized>(
    rng: &mut R,
    z: f64,
    coupling: &SignalCoupling,
) -> [f64; MeteoVar::COUNT] {
    let mut latent = |var: MeteoVar| {
        let c = (coupling.meteo_gain * coupling.meteo_loadings[var.index()]).clamp(-0.99, 0.99);
        c * z + (1.0 - c * c).sqrt() * normal(rng)
    };
    let t_air = 15.0 + 8.0 * latent(MeteoVar::TAir);
    let rh = (65.0 + 15.0 * latent(MeteoVar::Rh)).clamp(0.0, 100.0);
    let rh_mod = (35.0 + 6.0 * latent(MeteoVar::RhMod)).clamp(0.0, 100.0);
    let precip = (1.5 + 1.5 * latent(MeteoVar::Precip)).max(0.0);
    let solar = (420.0 + 160.0 * latent(MeteoVar::SolarFlux)).max(0.0);
    let vapor = 1.2 + 0.3 * latent(MeteoVar::VaporPressure);
    let bar = 975.0 + 6.0 * latent(MeteoVar::BarPressure);
    let wind = (3.5 + 1.2 * latent(MeteoVar::WindSpeed)).max(0.0);
    let north = 2.0 * latent(MeteoVar::WindNorth);
    let east = 2.0 * latent(MeteoVar::WindEast);
    let dir = (180.0 + 90.0 * latent(MeteoVar::WindDir)).rem_euclid(360.0);
    let tilt_ns = 0.5 * latent(MeteoVar::TiltNs);
    let tilt_we = 0.5 * latent(MeteoVar::TiltWe);

    let t_mod = t_air + 2.0 + 0.4 * normal(rng);
    let t_hs = t_air + 0.2 * normal(rng);
    let gust = wind * 1.4 + 0.3 * normal(rng).abs();

    let mut v = [0.0; MeteoVar::COUNT];
    for (var, x) in [
        (MeteoVar::TAir, t_air),
        (MeteoVar::TMod, t_mod),
        (MeteoVar::THs, t_hs),
        (MeteoVar::Rh, rh),
        (MeteoVar::RhMod, rh_mod),
        (MeteoVar::Precip, precip),
        (MeteoVar::SolarFlux, solar),
        (MeteoVar::VaporPressure, vapor),
        (MeteoVar::BarPressure, bar),
        (MeteoVar::WindSpeed, wind),
        (MeteoVar::GustSpeed, gust),
        (MeteoVar::WindNorth, north),
        (MeteoVar::WindEast, east),
        (MeteoVar::WindDir, dir),
        (MeteoVar::TiltNs, tilt_ns),
        (MeteoVar::TiltWe, tilt_we),
    ] {
        v[var.index()] = x;
    }
    v
}

fn patch<R: Rng + ?Sized>(
    rng: &mut R,
    size: usize,
    z: f64,
    station_index: usize,
    coupling: &SignalCoupling,
) -> Patch {
    let brightness =
        0.5 - 0.1 * coupling.image_signal * z + 0.1 * coupling.image_noise * normal(rng);
    let mut tint = [1.0; 3];
    tint[station_index % 3] += 0.15 * coupling.station_shift;
    let freq_x = rng.random_range(1.0..4.0);
    let freq_y = rng.random_range(1.0..4.0);
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let mut pixels = Vec::with_capacity(size * size * 3);
    for y in 0..size {
        for x in 0..size {
            let u = (freq_x * x as f64 + freq_y * y as f64) / size as f64;
            let texture = 0.03 * (std::f64::consts::TAU * u + phase).sin();
            for c in 0..3 {
                let v = brightness * SOIL_COLOUR[c] * tint[c]
                    + texture
                    + coupling.pixel_noise * normal(rng);
                pixels.push(v.clamp(0.0, 1.0));
            }
        }
    }
    Patch {
        height: size,
        width: size,
        pixels,
    }
}

/// Generates `n_per_station` records and patches for every profile.
pub fn generate_synthetic_data(
    profiles: &[StationProfile],
    config: &SynthConfig,
) -> Result<SyntheticData> {
    if config.n_per_station == 0 {
        return Err(Error::Config("n_per_station must be at least 1".into()));
    }
    if config.patch_size == 0 {
        return Err(Error::Config("patch size must be positive".into()));
    }
    for p in profiles {
        p.validate()?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let coupling = &config.coupling;
    let mut out = SyntheticData {
        records: Vec::with_capacity(profiles.len() * config.n_per_station),
        patches: Vec::with_capacity(profiles.len() * config.n_per_station),
    };
    for (si, profile) in profiles.iter().enumerate() {
        let signature = STATION_SIGNATURE[si % 3] * (1 + si / 3) as f64;
        for j in 0..config.n_per_station {
            let vwc = truncated_normal(&mut rng, profile);
            let z = (vwc - REFERENCE_MEAN) / REFERENCE_STD + coupling.station_shift * signature;
            let values = meteo_values(&mut rng, z, coupling);
            out.patches
                .push(patch(&mut rng, config.patch_size, z, si, coupling));
            out.records.push(MeteoRecord {
                station_id: profile.station_id.clone(),
                timestamp: timestamp(j),
                values,
                vwc,
            });
        }
    }
    Ok(out)
}

/// Generates samples with raw values for `features`.
pub fn generate_synthetic_dataset(
    profiles: &[StationProfile],
    config: &SynthConfig,
    features: &[MeteoVar],
) -> Result<Vec<Sample>> {
    Ok(generate_synthetic_data(profiles, config)?.samples(features))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::stats::pearson_correlation;

    fn brightness_vs_vwc(coupling: SignalCoupling, n: usize) -> f64 {
        let cfg = SynthConfig {
            n_per_station: n,
            seed: 5,
            patch_size: 4,
            coupling,
        };
        let data = generate_synthetic_data(&StationProfile::reference(), &cfg).unwrap();
        let b: Vec<f64> = data.patches.iter().map(Patch::mean_brightness).collect();
        let v: Vec<f64> = data.records.iter().map(|r| r.vwc).collect();
        pearson_correlation(&b, &v).unwrap()
    }

    #[test]
    fn station1_statistics() {
        let profile = StationProfile::reference().remove(0);
        let cfg = SynthConfig {
            n_per_station: 10_000,
            seed: 1,
            patch_size: 2,
            ..SynthConfig::default()
        };
        let data = generate_synthetic_data(std::slice::from_ref(&profile), &cfg).unwrap();
        let vwc: Vec<f64> = data.records.iter().map(|r| r.vwc).collect();
        let mean = vwc.iter().sum::<f64>() / vwc.len() as f64;
        assert!((mean - 0.3085).abs() < 0.01, "mean {mean}");
        assert!(vwc.iter().all(|v| (0.158..=0.417).contains(v)));
    }

    #[test]
    fn zero_image_signal_decouples_brightness() {
        let r = brightness_vs_vwc(SignalCoupling::default().image_noise_only(), 3334);
        assert!(r.abs() < 0.05, "r = {r}");
    }

    #[test]
    fn default_coupling_darkens_wet_soil() {
        let r = brightness_vs_vwc(SignalCoupling::default(), 3334);
        assert!(r < -0.5, "r = {r}");
    }

    #[test]
    fn records_respect_invariants() {
        let cfg = SynthConfig {
            n_per_station: 500,
            patch_size: 3,
            ..SynthConfig::default()
        };
        let data = generate_synthetic_data(&StationProfile::reference(), &cfg).unwrap();
        assert!(data.records.iter().all(|r| r.violation().is_none()));
        assert!(data
            .patches
            .iter()
            .all(|p| p.pixels.iter().all(|v| (0.0..=1.0).contains(v))));
    }

    #[test]
    fn meteo_signs_follow_loadings() {
        let cfg = SynthConfig {
            n_per_station: 2000,
            patch_size: 1,
            ..SynthConfig::default()
        };
        let data = generate_synthetic_data(&StationProfile::reference(), &cfg).unwrap();
        let vwc: Vec<f64> = data.records.iter().map(|r| r.vwc).collect();
        let col = |v: MeteoVar| -> Vec<f64> { data.records.iter().map(|r| r.get(v)).collect() };
        assert!(pearson_correlation(&col(MeteoVar::TAir), &vwc).unwrap() < -0.3);
        assert!(pearson_correlation(&col(MeteoVar::Rh), &vwc).unwrap() > 0.3);
    }

    #[test]
    fn zero_samples_rejected() {
        let cfg = SynthConfig {
            n_per_station: 0,
            ..SynthConfig::default()
        };
        assert!(generate_synthetic_data(&StationProfile::reference(), &cfg).is_err());
    }

    #[test]
    fn invalid_profile_rejected() {
        let mut profiles = StationProfile::reference();
        profiles[1].vwc_max = profiles[1].vwc_min;
        assert!(matches!(
            generate_synthetic_data(&profiles, &SynthConfig::default()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn seeded_output_is_reproducible() {
        let cfg = SynthConfig {
            n_per_station: 20,
            patch_size: 5,
            ..SynthConfig::default()
        };
        let a = generate_synthetic_data(&StationProfile::reference(), &cfg).unwrap();
        let b = generate_synthetic_data(&StationProfile::reference(), &cfg).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.patches, b.patches);
    }
}
