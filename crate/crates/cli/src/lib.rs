//! Batch experiment runner: configs, presets, pipelines and run manifests.

pub mod config;
pub mod manifest;
pub mod model;
pub mod pipelines;
pub mod presets;

use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};

pub use config::{ExperimentConfig, Pipeline};
pub use manifest::{OutputSink, RunManifest};
pub use model::{validate, ValidationOutcome};
pub use presets::list_presets;

/// Environment variable naming the default output root.
pub const OUTPUT_ROOT_ENV: &str = "RGBSDE_OUTPUT_ROOT";

/// A parsed configuration and the name it was loaded under.
#[derive(Clone, Debug)]
pub struct Loaded {
    pub name: String,
    pub config: ExperimentConfig,
}

/// Loads a config file, or a preset by name when no such file exists.
pub fn load_config(source: &str, overrides: &[String]) -> Result<Loaded> {
    let path = Path::new(source);
    let (name, text) = if path.is_file() {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {source}"))?;
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("run").to_string();
        (stem, text)
    } else if let Some(p) = presets::find(source) {
        (p.name.to_string(), p.text.to_string())
    } else {
        return Err(anyhow!("'{source}' is neither a readable file nor a preset name"));
    };
    let config = if overrides.is_empty() {
        ExperimentConfig::from_toml(&text)
    } else {
        config::parse_with_overrides(&text, overrides).and_then(ExperimentConfig::from_value)
    }
    .with_context(|| format!("parsing {source}"))?;
    Ok(Loaded { name, config })
}

/// `--out`, then `output.dir`, then `$RGBSDE_OUTPUT_ROOT/<name>`, then `rgbsde-output/<name>`.
pub fn resolve_output_dir(loaded: &Loaded, out: Option<&Path>) -> PathBuf {
    if let Some(o) = out {
        return o.to_path_buf();
    }
    if let Some(d) = &loaded.config.output.dir {
        return d.clone();
    }
    let root = std::env::var_os(OUTPUT_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("rgbsde-output"));
    root.join(&loaded.name)
}

/// Runs every seed into `<out>/seed_<n>/` and writes `<out>/manifest.json`.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path) -> Result<RunManifest> {
    let mut sink = OutputSink::new(out)?;
    let mut summaries = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        sink.set_subdir(&format!("seed_{seed}"))?;
        let summary = sink
            .timed("pipeline", |s| pipelines::run_seed(cfg, seed, s))
            .with_context(|| format!("seed {seed}"))?;
        sink.write_json("summary.json", &summary)?;
        summaries.push(summary);
    }
    let (files, timings) = sink.finish();
    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        pipeline: serde_json::to_value(cfg.pipeline)?.as_str().unwrap_or_default().into(),
        config: serde_json::to_value(cfg)?,
        seeds: cfg.seeds.clone(),
        files,
        timings,
        summaries,
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    std::fs::write(out.join("manifest.json"), text).context("writing manifest.json")?;
    Ok(manifest)
}
