use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use infiniteboost::data::{write_all_atomic, Dataset};
use infiniteboost::ensemble::BoostConfig;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, Serialize)]
pub struct Fingerprint {
    pub role: String,
    pub path: PathBuf,
    pub rows: usize,
    pub features: usize,
    pub query_groups: Option<usize>,
    pub sha256: String,
}

impl Fingerprint {
    pub fn new(role: &str, path: &Path, bytes: &[u8], dataset: &Dataset) -> Self {
        Fingerprint {
            role: role.to_owned(),
            path: path.to_owned(),
            rows: dataset.n_samples(),
            features: dataset.n_features(),
            query_groups: dataset.query_groups().map(<[_]>::len),
            sha256: hex::encode(Sha256::digest(bytes)),
        }
    }
}

/// Everything needed to reproduce a run: the fully resolved configuration,
/// input fingerprints and the tool version, plus wall-clock timings.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub config: Option<BoostConfig>,
    pub seed: Option<u64>,
    /// Capacity the run started from (infinite modes).
    pub initial_capacity: Option<f64>,
    pub parameters: BTreeMap<&'static str, serde_json::Value>,
    pub inputs: Vec<Fingerprint>,
    pub outputs: Vec<PathBuf>,
    pub timings_ms: BTreeMap<&'static str, f64>,
    #[serde(skip)]
    started: Instant,
}

impl RunManifest {
    pub fn new(command: &'static str, config: Option<&BoostConfig>) -> Self {
        RunManifest {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command,
            config: config.cloned(),
            seed: config.map(|c| c.seed),
            initial_capacity: config.and_then(BoostConfig::initial_capacity),
            parameters: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            timings_ms: BTreeMap::new(),
            started: Instant::now(),
        }
    }

    pub fn param(&mut self, key: &'static str, value: impl Serialize) {
        self.parameters.insert(key, serde_json::to_value(value).expect("serializable parameter"));
    }

    /// Runs `f`, recording its duration under `phase`.
    pub fn timed<T>(&mut self, phase: &'static str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.timings_ms.insert(phase, start.elapsed().as_secs_f64() * 1e3);
        out
    }

    /// Writes the manifest next to `primary_output` and returns its path.
    pub fn write_beside(mut self, primary_output: &Path) -> Result<PathBuf, CliError> {
        self.timings_ms.insert("total", self.started.elapsed().as_secs_f64() * 1e3);
        let path = manifest_path(primary_output);
        let mut text = serde_json::to_string_pretty(&self).map_err(|e| CliError::Data(e.to_string()))?;
        text.push('\n');
        write_all_atomic(&path, text.as_bytes())?;
        Ok(path)
    }
}

/// `model.json` -> `model.manifest.json`.
pub fn manifest_path(output: &Path) -> PathBuf {
    output.with_extension("manifest.json")
}
