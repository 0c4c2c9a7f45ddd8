use std::fs;
use std::path::{Path, PathBuf};

use advcap_core::advtrain::{TrainConfig, TRAIN_CONFIG_KEYS};
use serde_json::{Map, Value};

use crate::error::CliError;

const PATH_KEYS: [&str; 3] = ["train", "val", "out_dir"];

/// A run: dataset paths, output directory and every training setting.
///
/// Relative paths are resolved against the directory holding the config
/// file.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train: PathBuf,
    pub val: PathBuf,
    pub out_dir: PathBuf,
    pub train_config: TrainConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self, CliError> {
        let value: Value = serde_json::from_str(text).map_err(|e| CliError::config(format!("invalid JSON: {e}")))?;
        let Value::Object(mut map) = value else {
            return Err(CliError::config("config must be a JSON object"));
        };
        let mut unknown: Vec<&String> =
            map.keys().filter(|k| !PATH_KEYS.contains(&k.as_str()) && !TRAIN_CONFIG_KEYS.contains(&k.as_str())).collect();
        unknown.sort();
        if let Some(k) = unknown.first() {
            return Err(CliError::config(format!("unknown key {k:?}")));
        }
        let mut path = |key: &str| -> Result<PathBuf, CliError> {
            match map.remove(key) {
                Some(Value::String(s)) => Ok(base.join(s)),
                Some(_) => Err(CliError::config(format!("{key} must be a string path"))),
                None => Err(CliError::config(format!("missing required key {key:?}"))),
            }
        };
        let (train, val, out_dir) = (path("train")?, path("val")?, path("out_dir")?);
        let defaulted: Vec<&str> = TRAIN_CONFIG_KEYS.iter().copied().filter(|k| !map.contains_key(*k)).collect();
        let train_config = train_config_from(map)?;
        if !defaulted.is_empty() {
            let defaults = serde_json::to_value(&train_config).expect("config serializes");
            let shown: Vec<String> = defaulted.iter().map(|k| format!("{k}={}", defaults[k])).collect();
            log::info!("defaulted config keys: {}", shown.join(", "));
        }
        Ok(Self { train, val, out_dir, train_config })
    }
}

fn train_config_from(map: Map<String, Value>) -> Result<TrainConfig, CliError> {
    for (key, v) in &map {
        let mut probe = Map::new();
        probe.insert(key.clone(), v.clone());
        if let Err(e) = serde_json::from_value::<TrainConfig>(Value::Object(probe)) {
            return Err(CliError::config(format!("invalid value for {key}: {e}")));
        }
    }
    let config: TrainConfig =
        serde_json::from_value(Value::Object(map)).map_err(|e| CliError::config(e.to_string()))?;
    config.validate()?;
    Ok(config)
}

/// First key whose value differs between two configs.
pub fn first_difference(a: &TrainConfig, b: &TrainConfig) -> Option<&'static str> {
    let (va, vb) = (serde_json::to_value(a).expect("serializes"), serde_json::to_value(b).expect("serializes"));
    TRAIN_CONFIG_KEYS.iter().copied().find(|k| va[k] != vb[k])
}
