//! Flat key-value run configuration: values come from an optional TOML file,
//! and command-line flags win over file entries. The fully resolved set is
//! written next to each run's outputs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::CliError;

/// A flat TOML table of primitive values.
#[derive(Debug, Default, Clone)]
pub struct FileConfig {
    values: BTreeMap<String, toml::Value>,
}

impl FileConfig {
    pub fn load(path: Option<&PathBuf>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Data(format!("cannot read config {}: {e}", path.display())))?;
        let table: toml::Table = text
            .parse()
            .map_err(|e| CliError::Data(format!("config {}: {e}", path.display())))?;
        Ok(FileConfig { values: table.into_iter().collect() })
    }

    pub fn take_u64(&self, key: &str) -> Option<u64> {
        self.values.get(key).and_then(|v| v.as_integer()).map(|v| v as u64)
    }

    pub fn take_usize(&self, key: &str) -> Option<usize> {
        self.values.get(key).and_then(|v| v.as_integer()).map(|v| v as usize)
    }

    pub fn take_f64(&self, key: &str) -> Option<f64> {
        self.values.get(key).and_then(|v| {
            v.as_float().or_else(|| v.as_integer().map(|i| i as f64))
        })
    }

    pub fn take_str(&self, key: &str) -> Option<String> {
        self.values.get(key).and_then(|v| v.as_str()).map(str::to_string)
    }

    pub fn take_bool(&self, key: &str) -> Option<bool> {
        self.values.get(key).and_then(|v| v.as_bool())
    }
}

/// Resolve one setting: flag beats file beats default.
pub fn resolve<T: Clone>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

/// Serialize resolved settings as a TOML table next to the outputs.
pub fn write_resolved(
    out_dir: &Path,
    entries: &[(&str, toml::Value)],
) -> Result<(), CliError> {
    let mut table = toml::Table::new();
    for (k, v) in entries {
        table.insert((*k).to_string(), v.clone());
    }
    let text = toml::to_string(&table)
        .map_err(|e| CliError::Data(format!("cannot serialize resolved config: {e}")))?;
    std::fs::write(out_dir.join("resolved_config.toml"), text)
        .map_err(|e| CliError::Data(format!("cannot write resolved config: {e}")))?;
    Ok(())
}

pub fn ensure_out_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", path.display())))
}
