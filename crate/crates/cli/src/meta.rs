//! Provenance stamped into every artifact.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;
use simaudit::fsutil::write_atomic;

use crate::error::{CliError, CliResult};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub version: String,
    pub config_hash: String,
    pub seeds: BTreeMap<String, u64>,
}

impl Provenance {
    pub fn new(config_hash: impl Into<String>) -> Self {
        Provenance {
            version: format!("simaudit {VERSION}"),
            config_hash: config_hash.into(),
            seeds: BTreeMap::new(),
        }
    }

    pub fn seed(mut self, name: &str, value: u64) -> Self {
        self.seeds.insert(name.to_string(), value);
        self
    }

    /// `# ` comment lines for CSV files and XML comments in SVG.
    pub fn lines(&self) -> Vec<String> {
        let seeds: Vec<String> = self.seeds.iter().map(|(k, v)| format!("{k}={v}")).collect();
        vec![
            self.version.clone(),
            format!("config {}", self.config_hash),
            format!("seeds {}", seeds.join(" ")),
        ]
    }
}

/// Pretty JSON `{"meta": ..., "<key>": body}` written atomically.
pub fn write_json<T: Serialize>(path: &Path, meta: &Provenance, key: &str, body: &T) -> CliResult<()> {
    let mut obj = serde_json::Map::new();
    obj.insert("meta".into(), to_value(meta)?);
    obj.insert(key.into(), to_value(body)?);
    let mut text = serde_json::to_string_pretty(&Value::Object(obj))
        .map_err(|e| CliError::Data(e.to_string()))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

fn to_value<T: Serialize>(v: &T) -> CliResult<Value> {
    serde_json::to_value(v).map_err(|e| CliError::Data(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lines_list_sorted_seeds() {
        let p = Provenance::new("abc").seed("tie", 7).seed("baseline", 1);
        assert_eq!(
            p.lines(),
            vec![format!("simaudit {VERSION}"), "config abc".into(), "seeds baseline=1 tie=7".into()]
        );
    }

    #[test]
    fn json_is_wrapped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.json");
        write_json(&path, &Provenance::new("h"), "rows", &vec![1, 2]).unwrap();
        let v: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(v["meta"]["config_hash"], "h");
        assert_eq!(v["rows"][1], 2);
    }
}
