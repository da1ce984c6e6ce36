use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::CliError;
use crate::pipeline::{AugmentConfig, NoiseRates, SplitConfig};
use crate::recognizer::{ModelConfig, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Desk,
    Paper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub preset: Preset,
    pub aux_loss_weight: f32,
    pub dropout_rate: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorSection {
    pub tau: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsSection {
    pub manifest: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub reports: Option<PathBuf>,
    pub verdicts: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSection {
    pub count: usize,
    pub alphabet_size: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub lines_per_page: usize,
    pub glyph_seed: u64,
    pub right_to_left: bool,
}

/// Every knob a command can read. Files and flags are layered on top of the
/// defaults; the result is echoed beside each command's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub deterministic: bool,
    pub paths: PathsSection,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub augment: AugmentConfig,
    pub detector: DetectorSection,
    pub noise: NoiseRates,
    pub split: SplitConfig,
    pub synth: SynthSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            deterministic: true,
            paths: PathsSection::default(),
            model: ModelSection {
                preset: Preset::Desk,
                aux_loss_weight: 0.1,
                dropout_rate: 0.2,
            },
            train: TrainConfig::desk(),
            augment: AugmentConfig::default(),
            detector: DetectorSection { tau: 0.25 },
            noise: NoiseRates::default(),
            split: SplitConfig::default(),
            synth: SynthSection {
                count: 500,
                alphabet_size: 10,
                min_len: 4,
                max_len: 8,
                lines_per_page: 10,
                glyph_seed: 1,
                right_to_left: false,
            },
        }
    }
}

fn flatten(prefix: &str, v: &Value, out: &mut Map<String, Value>) {
    match v {
        Value::Object(m) => {
            for (k, v) in m {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, out);
            }
        }
        leaf => {
            out.insert(prefix.to_string(), leaf.clone());
        }
    }
}

fn unflatten(flat: &Map<String, Value>) -> Value {
    let mut root = Map::new();
    for (key, v) in flat {
        let mut node = &mut root;
        let parts: Vec<&str> = key.split('.').collect();
        for p in &parts[..parts.len() - 1] {
            node = node
                .entry(p.to_string())
                .or_insert_with(|| Value::Object(Map::new()))
                .as_object_mut()
                .expect("dotted prefixes are objects");
        }
        node.insert(parts[parts.len() - 1].to_string(), v.clone());
    }
    Value::Object(root)
}

impl RunConfig {
    /// Flat `"section.key": value` view.
    pub fn to_flat(&self) -> Map<String, Value> {
        let mut out = Map::new();
        flatten("", &serde_json::to_value(self).expect("config serializes"), &mut out);
        out
    }

    /// Applies flat overrides; unknown keys and ill-typed values are usage
    /// errors.
    pub fn with_overrides(&self, overrides: &Map<String, Value>) -> Result<Self, CliError> {
        let mut flat = self.to_flat();
        for (k, v) in overrides {
            if !flat.contains_key(k) {
                return Err(CliError::Usage(format!("unknown config key {k:?}")));
            }
            flat.insert(k.clone(), v.clone());
        }
        serde_json::from_value(unflatten(&flat)).map_err(|e| CliError::Usage(format!("config: {e}")))
    }

    pub fn load_file(&self, path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        let value: Value = serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        let Value::Object(map) = value else {
            return Err(CliError::Usage(format!("{}: config must be a JSON object", path.display())));
        };
        if let Some((k, _)) = map.iter().find(|(_, v)| v.is_object()) {
            return Err(CliError::Usage(format!("config key {k:?}: use flat dotted keys, not nested objects")));
        }
        self.with_overrides(&map)
    }

    /// Writes the resolved flat config as `config.resolved.json` in `dir`.
    pub fn echo(&self, dir: &Path) -> Result<(), CliError> {
        let path = dir.join("config.resolved.json");
        let text = serde_json::to_string_pretty(&Value::Object(self.to_flat())).expect("config serializes");
        std::fs::write(&path, text + "\n").map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
    }

    /// Architecture for `alphabet_size`; input dims are filled in by training.
    pub fn model_config(&self, alphabet_size: usize) -> ModelConfig {
        let base = match self.model.preset {
            Preset::Desk => ModelConfig::desk(0, alphabet_size),
            Preset::Paper => ModelConfig::paper(0, 0, alphabet_size),
        };
        ModelConfig {
            aux_loss_weight: self.model.aux_loss_weight,
            dropout_rate: self.model.dropout_rate,
            ..base
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn flat_round_trip_and_unknown_keys() {
        let c = RunConfig::default();
        assert_eq!(c.with_overrides(&Map::new()).unwrap(), c);
        let flat = c.to_flat();
        assert!(flat.contains_key("train.max_epochs"));
        assert!(flat.contains_key("paths.manifest"));
        let mut o = Map::new();
        o.insert("train.max_epochs".into(), json!(3));
        o.insert("detector.tau".into(), json!(0.4));
        let c2 = c.with_overrides(&o).unwrap();
        assert_eq!((c2.train.max_epochs, c2.detector.tau), (3, 0.4));
        let mut bad = Map::new();
        bad.insert("train.max_epochz".into(), json!(3));
        assert!(matches!(c.with_overrides(&bad), Err(CliError::Usage(_))));
        let mut ill = Map::new();
        ill.insert("train.max_epochs".into(), json!("many"));
        assert!(matches!(c.with_overrides(&ill), Err(CliError::Usage(_))));
    }
}
