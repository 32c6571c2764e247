use std::path::{Path, PathBuf};

use nvolo::harness::{OloSpec, SweepSpec};
use nvolo::rabi::RabiConfig;
use nvolo::{RateParams, SequenceConfig};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::CliError;

/// One run, one file. Sections are named after the library modules.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub photophysics: Option<RateParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sequence: Option<SequenceConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub olo: Option<OloSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rabi: Option<RabiConfig>,
}

impl RunConfig {
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, overrides)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    /// Parses `text` and applies `section.key=value` overrides. Without
    /// overrides the original text is deserialized so diagnostics carry
    /// its line numbers.
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self, String> {
        if overrides.is_empty() {
            return toml::from_str(text).map_err(|e| e.to_string());
        }
        let mut table: Table = toml::from_str(text).map_err(|e| e.to_string())?;
        for item in overrides {
            apply_override(&mut table, item)?;
        }
        let merged = toml::to_string(&table).map_err(|e| e.to_string())?;
        toml::from_str(&merged).map_err(|e| format!("after --set overrides: {e}"))
    }

    pub fn params(&self) -> RateParams {
        self.photophysics.unwrap_or_default()
    }

    pub fn require<'a, T>(section: &'a Option<T>, name: &str) -> Result<&'a T, CliError> {
        section
            .as_ref()
            .ok_or_else(|| CliError::Config(format!("missing `[{name}]` section in config")))
    }
}

fn apply_override(table: &mut Table, item: &str) -> Result<(), String> {
    let (path, raw) = item
        .split_once('=')
        .ok_or_else(|| format!("--set expects KEY=VALUE, got `{item}`"))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(format!("--set: malformed key `{path}`"));
    }
    let value = parse_value(raw.trim());
    let (last, parents) = keys.split_last().expect("split yields at least one key");
    let mut cur = table;
    for k in parents {
        let entry = cur
            .entry(k.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| format!("--set: `{k}` in `{path}` is not a table"))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

/// A TOML literal if it parses as one, otherwise a bare string.
fn parse_value(raw: &str) -> Value {
    #[derive(Deserialize)]
    struct Wrap {
        v: Value,
    }
    toml::from_str::<Wrap>(&format!("v = {raw}"))
        .map(|w| w.v)
        .unwrap_or_else(|_| Value::String(raw.to_string()))
}
