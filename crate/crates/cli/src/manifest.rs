use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, CliResult, ResultExt};

/// Record of one subcommand invocation, written once the run has finished.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub tool_version: String,
    /// Fully resolved configuration of the run.
    pub config: Value,
    pub inputs: BTreeMap<String, PathBuf>,
    pub outputs: BTreeMap<String, PathBuf>,
    pub seed: Option<u64>,
    pub deterministic: bool,
    pub threads: usize,
    /// Seconds since the Unix epoch.
    pub started: f64,
    pub finished: f64,
}

fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

impl RunManifest {
    pub fn begin(subcommand: &str, deterministic: bool) -> Self {
        RunManifest {
            subcommand: subcommand.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config: Value::Null,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            seed: None,
            deterministic,
            threads: rayon::current_num_threads(),
            started: now(),
            finished: 0.0,
        }
    }

    pub fn input(&mut self, key: &str, path: &Path) {
        self.inputs.insert(key.to_string(), path.to_path_buf());
    }

    pub fn output(&mut self, key: &str, path: &Path) {
        self.outputs.insert(key.to_string(), path.to_path_buf());
    }

    /// Stamps the end time and writes the manifest through a temporary file
    /// renamed into place.
    pub fn finish(mut self, path: &Path) -> CliResult<()> {
        self.finished = now();
        let text = serde_json::to_string_pretty(&self).expect("manifest serializes");
        write_atomic(path, text.as_bytes())
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).at(format!("reading {}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| CliError::io(format!("{}: not a run manifest: {e}", path.display())))
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).at(format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).at(format!("renaming into {}", path.display()))?;
    Ok(())
}

/// A `--config` file: either a bare configuration object or a manifest
/// written by the same subcommand, whose resolved config is used.
pub struct ConfigSource {
    pub config: Value,
    pub manifest: Option<RunManifest>,
}

pub fn load_config_source(path: &Path, subcommand: &str) -> CliResult<ConfigSource> {
    let text = fs::read_to_string(path).at(format!("reading {}", path.display()))?;
    let value: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::usage(format!("{}: invalid JSON: {e}", path.display())))?;
    let is_manifest = value.get("subcommand").is_some() && value.get("config").is_some();
    if !is_manifest {
        return Ok(ConfigSource {
            config: value,
            manifest: None,
        });
    }
    let manifest: RunManifest = serde_json::from_value(value)
        .map_err(|e| CliError::usage(format!("{}: malformed manifest: {e}", path.display())))?;
    if manifest.subcommand != subcommand {
        return Err(CliError::usage(format!(
            "{} is a '{}' manifest, not '{subcommand}'",
            path.display(),
            manifest.subcommand
        )));
    }
    Ok(ConfigSource {
        config: manifest.config.clone(),
        manifest: Some(manifest),
    })
}

/// Replaces the top-level keys of `base` with those present in `patch`.
pub fn overlay(base: &mut Value, patch: &Value) -> CliResult<()> {
    match (base.as_object_mut(), patch.as_object()) {
        (Some(b), Some(p)) => {
            for (k, v) in p {
                b.insert(k.clone(), v.clone());
            }
            Ok(())
        }
        _ => Err(CliError::usage("configuration must be a JSON object")),
    }
}

/// Rejects writing an output over one of the inputs.
pub fn ensure_distinct(input: &Path, output: &Path) -> CliResult<()> {
    let same = match (fs::canonicalize(input), fs::canonicalize(output)) {
        (Ok(a), Ok(b)) => a == b,
        _ => input == output,
    };
    if same {
        return Err(CliError::usage(format!(
            "output {} would overwrite the input",
            output.display()
        )));
    }
    Ok(())
}

/// `dir/stem<suffix>` next to `path`.
pub fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map_or_else(|| "out".into(), |s| s.to_string_lossy().into_owned());
    path.with_file_name(format!("{stem}{suffix}"))
}
