//! Experiment runner behind the `ntk-influence` binary.

pub mod config;

use std::fs;
use std::path::Path;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use ntk_influence::experiments;
use serde_json::{json, Map, Value};

use crate::config::Config;

pub const RESULTS_FILE: &str = "results.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Runs the configured experiment and writes `results.csv` and
/// `manifest.json` into the output directory. Returns the manifest.
pub fn execute(cfg: &Config) -> ntk_influence::Result<Value> {
    let started = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let clock = Instant::now();
    let outcome = experiments::run(cfg.experiment, &cfg.params)?;
    let wall = clock.elapsed().as_secs_f64();
    fs::create_dir_all(&cfg.out)?;
    let mut csv = Vec::new();
    outcome.table.write_csv(&mut csv)?;
    fs::write(cfg.out.join(RESULTS_FILE), csv)?;
    let echo: Map<String, Value> = cfg.echo().into_iter().map(|(k, v)| (k.to_string(), Value::String(v))).collect();
    let manifest = json!({
        "experiment": cfg.experiment.name(),
        "config": echo,
        "seeds": cfg.params.seeds,
        "versions": {
            "ntk-influence": ntk_influence::VERSION,
            "ntk-influence-cli": env!("CARGO_PKG_VERSION"),
        },
        "threads": rayon::current_num_threads(),
        "started_unix": started,
        "wall_time_seconds": wall,
        "results": RESULTS_FILE,
        "columns": outcome.table.header,
        "rows": outcome.table.rows.len(),
        "summary": outcome.summary,
    });
    write_json(&cfg.out.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

fn write_json(path: &Path, value: &Value) -> ntk_influence::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}
