//! Scenario corpus files: JSON Lines, one scenario per line, schema-versioned.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use super::{Scenario, SceneError};

pub fn serialize_scenario(s: &Scenario) -> Vec<u8> {
    serde_json::to_vec(s).expect("scenario serialization cannot fail")
}

pub fn load_scenario(bytes: &[u8]) -> Result<Scenario, SceneError> {
    let s: Scenario =
        serde_json::from_slice(bytes).map_err(|e| SceneError::Parse(e.to_string()))?;
    s.validate()?;
    Ok(s)
}

pub fn write_corpus(path: &Path, scenarios: &[Scenario]) -> Result<(), SceneError> {
    let mut f = std::fs::File::create(path)?;
    for s in scenarios {
        f.write_all(&serialize_scenario(s))?;
        f.write_all(b"\n")?;
    }
    Ok(())
}

pub fn load_corpus(path: &Path) -> Result<Vec<Scenario>, SceneError> {
    let f = std::fs::File::open(path)?;
    let reader = BufReader::new(f);
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let s = load_scenario(line.as_bytes())
            .map_err(|e| SceneError::Parse(format!("line {}: {e}", lineno + 1)))?;
        out.push(s);
    }
    Ok(out)
}
