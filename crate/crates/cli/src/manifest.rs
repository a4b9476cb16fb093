//! Run manifests written next to every output.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;
use spectrec::{Format, ModelConfig};

#[derive(Debug, Clone, Serialize)]
pub struct DatasetInfo {
    pub path: String,
    pub format: Format,
    pub min_item_count: usize,
    pub max_events: usize,
    pub prefix: Option<f64>,
    pub n_events: usize,
    pub n_users: usize,
    pub n_items: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config: ModelConfig,
    pub dataset: Option<DatasetInfo>,
    pub determinism: &'static str,
    pub outputs: Vec<String>,
    pub details: BTreeMap<String, Value>,
}

const DETERMINISM: &str =
    "no random seed in the model path; identical inputs and flags give byte-identical outputs unless --timing is set";

impl RunManifest {
    pub fn new(command: &str, config: &ModelConfig, dataset: Option<DatasetInfo>, outputs: &[&Path]) -> Self {
        RunManifest {
            command: command.to_string(),
            config: config.clone(),
            dataset,
            determinism: DETERMINISM,
            outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
            details: BTreeMap::new(),
        }
    }

    pub fn set(&mut self, key: &str, value: Value) {
        self.details.insert(key.to_string(), value);
    }

    /// `<output>.manifest.json`
    pub fn path_for(output: &Path) -> PathBuf {
        let mut name = output.as_os_str().to_owned();
        name.push(".manifest.json");
        PathBuf::from(name)
    }

    pub fn write_next_to(&self, output: &Path) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes") + "\n";
        fs::write(Self::path_for(output), text)
    }
}
