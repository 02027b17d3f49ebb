//! Run directories.
//!
//! `<out>/<UTC timestamp>-<kind>-<config hash>/` holds
//!
//! - `config.toml`: the config file exactly as given;
//! - `resolved.toml`: the config after command-line overrides, which
//!   reproduces the run;
//! - one `<table>.csv` per table, or `result.json` with `config`, `records`
//!   and `summary` keys;
//! - `summary.txt`;
//! - `meta.json`: tool version, start time, wall time and thread count.
//!
//! Tables, `result.json` and `summary.txt` are pure functions of the
//! experiment parameters in `resolved.toml`, whatever the thread count.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use crate::config::Format;
use crate::error::{HarnessError, Result};
use crate::run::ExperimentResult;
use crate::summary::summarize;

#[derive(Debug, Clone, Serialize)]
pub struct RunMeta {
    pub tool_version: &'static str,
    pub started_utc: String,
    pub wall_seconds: f64,
    pub jobs: usize,
}

pub fn config_hash(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    digest[..6].iter().map(|b| format!("{b:02x}")).collect()
}

/// Creates a fresh directory under `base`; a numeric suffix resolves
/// collisions within the same millisecond.
pub fn create_run_dir(base: &Path, kind: &str, resolved: &str) -> Result<PathBuf> {
    fs::create_dir_all(base).map_err(|e| HarnessError::io(base, e))?;
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%S%.3fZ");
    let stem = format!("{stamp}-{kind}-{}", config_hash(resolved));
    for attempt in 0.. {
        let name = if attempt == 0 { stem.clone() } else { format!("{stem}-{attempt}") };
        let dir = base.join(name);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(HarnessError::io(dir, e)),
        }
    }
    unreachable!()
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| HarnessError::io(path, e))
}

/// The `config` key leaves out `jobs` and `out_dir`: they do not affect any
/// number, and `resolved.toml` / `meta.json` already record them.
pub fn result_json(result: &ExperimentResult) -> Value {
    let mut config = result.config.clone();
    config.jobs = None;
    config.out_dir = None;
    let mut records = Map::new();
    for t in result.all_tables() {
        records.insert(t.name.clone(), t.to_json());
    }
    let summary = summarize(result);
    json!({
        "config": serde_json::to_value(&config).expect("config serializes"),
        "records": records,
        "summary": {
            "pass": result.pass,
            "lines": summary.lines().collect::<Vec<_>>(),
        },
    })
}

/// Writes every artifact of a finished run into `dir`.
pub fn write_run(
    dir: &Path,
    result: &ExperimentResult,
    raw_config: &str,
    format: Format,
    meta: &RunMeta,
) -> Result<()> {
    write(&dir.join("config.toml"), raw_config)?;
    write(&dir.join("resolved.toml"), result.config.to_toml())?;
    match format {
        Format::Csv => {
            for t in result.all_tables() {
                let path = dir.join(format!("{}.csv", t.name));
                let file = fs::File::create(&path).map_err(|e| HarnessError::io(&path, e))?;
                t.write_csv(file).map_err(|e| match e.into_kind() {
                    csv::ErrorKind::Io(io) => HarnessError::io(&path, io),
                    other => HarnessError::Run(format!("{}: {other:?}", path.display())),
                })?;
            }
        }
        Format::Json => {
            let mut text = serde_json::to_string_pretty(&result_json(result)).expect("json");
            text.push('\n');
            write(&dir.join("result.json"), text)?;
        }
    }
    write(&dir.join("summary.txt"), summarize(result))?;
    let mut meta_text = serde_json::to_string_pretty(meta).expect("json");
    meta_text.push('\n');
    write(&dir.join("meta.json"), meta_text)?;
    Ok(())
}
