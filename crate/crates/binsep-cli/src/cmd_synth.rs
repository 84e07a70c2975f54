//! `binsep synth`: render a scene corpus to disk.

use std::path::PathBuf;

use clap::Args;
use serde::{Deserialize, Serialize};
use serde_json::json;

use binsep::scene::{synth_dataset, DatasetConfig};

use crate::config::{persist, resolve, usage, CliResult};

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// JSON config file; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory for audio and manifest.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Number of scenes to render.
    #[arg(long)]
    pub count: Option<usize>,
    /// Master seed; each scene derives its own stream from it.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Azimuth range in degrees as LO:HI, e.g. -80:80.
    #[arg(long)]
    pub angles: Option<String>,
    /// Dotted-key overrides, e.g. --set dataset.duration_s=1.5.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub out: Option<PathBuf>,
    pub count: usize,
    pub dataset: DatasetConfig,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            out: None,
            count: 10,
            dataset: DatasetConfig::default(),
        }
    }
}

fn parse_angles(spec: &str) -> CliResult<(f64, f64)> {
    let parsed = spec.split_once(':').and_then(|(lo, hi)| {
        Some((lo.trim().parse::<f64>().ok()?, hi.trim().parse::<f64>().ok()?))
    });
    parsed.ok_or_else(|| {
        usage(format!(
            "--angles {spec}: expected LO:HI degrees for dataset.azimuth_range_deg"
        ))
    })
}

pub fn run(args: SynthArgs) -> CliResult<()> {
    let mut overlay = json!({});
    if let Some(out) = &args.out {
        overlay["out"] = json!(out);
    }
    if let Some(count) = args.count {
        overlay["count"] = json!(count);
    }
    if let Some(seed) = args.seed {
        overlay["dataset"] = json!({ "seed": seed });
    }
    if let Some(spec) = &args.angles {
        let range = parse_angles(spec)?;
        overlay["dataset"]["azimuth_range_deg"] = json!(range);
    }
    let config: SynthConfig = resolve(args.config.as_deref(), overlay, &args.sets)?;
    let out = config
        .out
        .clone()
        .ok_or_else(|| usage("synth: --out (or config `out`) is required"))?;

    // Validate the angle range before touching the filesystem so a bad
    // range never leaves a half-written directory behind.
    let (lo, hi) = config.dataset.azimuth_range_deg;
    if !(lo < hi && (-90.0..=90.0).contains(&lo) && (-90.0..=90.0).contains(&hi)) {
        return Err(usage(format!(
            "dataset.azimuth_range_deg ({lo}, {hi}): need lo < hi inside [-90, 90]"
        )));
    }

    persist(&out, &config)?;
    let records = synth_dataset(&config.dataset, config.count, &out)?;
    println!(
        "synth: wrote {} scenes to {} (seed {})",
        records.len(),
        out.display(),
        config.dataset.seed
    );
    Ok(())
}
