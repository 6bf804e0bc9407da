//! Meteorological ingestion, feature selection, normalization, splitting,
//! synthetic generation and the on-disk dataset layout.

pub mod manifest;
pub mod meteo;
pub mod normalize;
pub mod prepare;
pub mod sample;
pub mod split;
pub mod stats;
pub mod store;
pub mod synth;

pub use manifest::{read_manifest, write_manifest, ManifestEntry};
pub use meteo::{
    format_timestamp, load_meteo_table, parse_timestamp, read_meteo_table, write_meteo_table,
    MeteoRecord, MeteoSchema, MeteoTable, MeteoVar, RejectedRow, StationId,
};
pub use normalize::NormalizerStats;
pub use prepare::{prepare_dataset, PrepareOptions, PrepareSummary};
pub use sample::{feature_names, Batch, FeatureVector, Normalization, Patch, Sample, StationProfile};
pub use split::{split_dataset, split_indices, SplitIndices, SplitRatios, Splits};
pub use stats::{
    pearson_correlation, select_features, CorrelationReport, FeaturePreset, FeatureSelection,
    SelectionThresholds,
};
pub use store::{read_dataset, write_dataset, DatasetMeta, PatchOrigin, SplitOptions, StoredDataset};
pub use synth::{
    generate_synthetic_data, generate_synthetic_dataset, SignalCoupling, SynthConfig, SyntheticData,
};
