//! `misme`: prepare data, train, evaluate and ablate multimodal soil-moisture
//! models from the command line.
//!
//! Exit codes: 0 success, 1 usage, 2 missing or invalid input, 3 runtime
//! failure (including training divergence).

mod commands;
mod config;
mod report;
mod svg;

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use misme::models::Variant;

use crate::commands::AblationKind;
use crate::config::{Overrides, RunConfig};

/// Error carried to `main` with the process exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Self { code: 1, message: message.into() }
    }

    pub fn input(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Self { code: 3, message: message.into() }
    }

    pub fn missing(path: &Path) -> Self {
        Self::input(format!("missing input: {}", path.display()))
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<misme::Error> for Failure {
    fn from(e: misme::Error) -> Self {
        use misme::Error as E;
        let code = match &e {
            E::MissingPath(_)
            | E::Config(_)
            | E::Schema(_)
            | E::Parse { .. }
            | E::Checkpoint(_)
            | E::UnknownStation(_)
            | E::OutOfBounds { .. }
            | E::Json(_)
            | E::Csv(_)
            | E::Image(_) => 2,
            E::Io(io) if io.kind() == std::io::ErrorKind::NotFound => 2,
            _ => 3,
        };
        Self { code, message: e.to_string() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        misme::Error::from(e).into()
    }
}

#[derive(Parser)]
#[command(name = "misme", version, about = "Multimodal soil-moisture estimation from soil images and weather data")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// image_only, meteo_only, concat, hybrid or learnable_param.
    #[arg(long, global = true, value_name = "NAME", value_parser = parse_variant)]
    variant: Option<Variant>,
    /// Preset (`default`, `all`) or comma-separated column names.
    #[arg(long, global = true, value_name = "PRESET|LIST")]
    features: Option<String>,
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse::<Variant>().map_err(|e| e.to_string())
}

#[derive(Subcommand)]
enum Command {
    /// Crop soil patches, pair them with weather rows and write a dataset.
    Prepare {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        meteo: Option<PathBuf>,
        #[arg(long)]
        patch_size: Option<usize>,
        #[arg(long)]
        min_confidence: Option<f64>,
    },
    /// Generate a synthetic dataset in the same layout as `prepare`.
    Synth {
        /// `reference` or a TOML/JSON file of station profiles.
        #[arg(long)]
        profiles: Option<String>,
        /// Samples per station.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        patch_size: Option<usize>,
    },
    /// Train one model and write its checkpoint and epoch log.
    Train {
        #[arg(long, value_name = "DIR")]
        data: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Score a checkpoint on a dataset split.
    Evaluate {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_name = "DIR")]
        data: Option<PathBuf>,
        /// train, val or test.
        #[arg(long)]
        split: Option<String>,
    },
    /// Run an ablation or transfer experiment.
    Ablate {
        #[arg(long, value_enum)]
        kind: Option<AblationKind>,
        #[arg(long, value_name = "DIR")]
        data: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Target station for `station_fraction`; repeatable.
        #[arg(long = "target")]
        targets: Vec<String>,
    },
    /// Render report.md and figures from a run directory.
    Report {
        #[arg(value_name = "RUN_DIR")]
        run: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), Failure> {
    let c = cli.common;
    let mut cfg = RunConfig::load(c.config.as_deref())?;
    cfg.apply(&Overrides {
        seed: c.seed,
        out: c.out,
        variant: c.variant,
        features: c.features,
    });
    match cli.command {
        Command::Prepare { manifest, meteo, patch_size, min_confidence } => {
            cfg.data.manifest = manifest.or(cfg.data.manifest);
            cfg.data.meteo = meteo.or(cfg.data.meteo);
            if let Some(p) = patch_size {
                cfg.prepare.patch_size = p;
            }
            if let Some(m) = min_confidence {
                cfg.prepare.min_confidence = m;
            }
            commands::prepare(&cfg)
        }
        Command::Synth { profiles, n, patch_size } => {
            if let Some(p) = profiles {
                cfg.synth.profiles = p;
            }
            if let Some(n) = n {
                cfg.synth.n_per_station = n;
            }
            if let Some(p) = patch_size {
                cfg.synth.patch_size = p;
            }
            commands::synth(&cfg)
        }
        Command::Train { data, epochs } => {
            cfg.data.dataset = data.or(cfg.data.dataset);
            if let Some(e) = epochs {
                cfg.training.epochs = e;
            }
            commands::train(&cfg)
        }
        Command::Evaluate { checkpoint, data, split } => {
            cfg.data.checkpoint = checkpoint.or(cfg.data.checkpoint);
            cfg.data.dataset = data.or(cfg.data.dataset);
            cfg.data.split = split.or(cfg.data.split);
            commands::evaluate(&cfg)
        }
        Command::Ablate { kind, data, epochs, targets } => {
            cfg.data.dataset = data.or(cfg.data.dataset);
            if let Some(e) = epochs {
                cfg.training.epochs = e;
            }
            if !targets.is_empty() {
                cfg.experiment.targets = targets;
            }
            let kind = match (kind, cfg.experiment.kind.as_deref()) {
                (Some(k), _) => k,
                (None, Some(s)) => AblationKind::parse(s)
                    .ok_or_else(|| Failure::usage(format!("unknown experiment kind `{s}`")))?,
                (None, None) => return Err(Failure::usage("--kind is required")),
            };
            cfg.experiment.kind = Some(kind.name().to_string());
            commands::ablate(&cfg, kind)
        }
        Command::Report { run } => {
            let out = cfg.out.clone().unwrap_or_else(|| run.clone());
            let files = report::render_report(&run, &out)?;
            println!("wrote {} files to {}", files.len(), out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code)
        }
    }
}
