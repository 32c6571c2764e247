use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Serialize;
use sha2::{Digest, Sha256};
use toml::{Table, Value};

use crate::config::RunConfig;
use crate::CliError;

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Files written by one command, each replaced atomically.
pub struct Outputs {
    dir: PathBuf,
    digests: BTreeMap<String, String>,
}

impl Outputs {
    pub fn new(dir: PathBuf) -> Self {
        Self {
            dir,
            digests: BTreeMap::new(),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<(), CliError> {
        self.put(name, contents)?;
        self.digests
            .insert(name.to_string(), sha256_hex(contents.as_bytes()));
        Ok(())
    }

    fn put(&self, name: &str, contents: &str) -> Result<(), CliError> {
        fs::create_dir_all(&self.dir).map_err(|e| io_err(&self.dir, e))?;
        let path = self.dir.join(name);
        let tmp = self.dir.join(format!(".{name}.tmp"));
        fs::write(&tmp, contents).map_err(|e| io_err(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| io_err(&path, e))
    }

    /// Writes `<command>_manifest.toml` (deterministic) and
    /// `<command>_timing.toml` (wall time, varies between runs).
    pub fn finish(
        &mut self,
        command: &str,
        cfg: &RunConfig,
        elapsed: Duration,
    ) -> Result<(), CliError> {
        #[derive(Serialize)]
        struct Manifest<'a> {
            command: &'a str,
            version: &'a str,
            core_version: &'a str,
            seed: u64,
            config_digest: String,
            timing_file: String,
            outputs: &'a BTreeMap<String, String>,
            config: &'a RunConfig,
        }
        let config_text = toml::to_string(cfg).map_err(|e| CliError::Runtime(e.to_string()))?;
        let timing_file = format!("{command}_timing.toml");
        let manifest = Manifest {
            command,
            version: env!("CARGO_PKG_VERSION"),
            core_version: nvolo::VERSION,
            seed: cfg.seed,
            config_digest: format!("sha256:{}", sha256_hex(config_text.as_bytes())),
            timing_file: timing_file.clone(),
            outputs: &self.digests,
            config: cfg,
        };
        let text = toml::to_string(&manifest).map_err(|e| CliError::Runtime(e.to_string()))?;
        self.put(&format!("{command}_manifest.toml"), &text)?;

        let mut timing = Summary::default();
        timing.text("command", command);
        timing.num("wall_time_s", elapsed.as_secs_f64());
        self.put(&timing_file, &timing.to_toml()?)
    }
}

/// Flat key/value record rendered as TOML.
#[derive(Default)]
pub struct Summary(Table);

impl Summary {
    pub fn num(&mut self, key: &str, v: f64) {
        self.0.insert(key.into(), Value::Float(v));
    }

    pub fn opt(&mut self, key: &str, v: Option<f64>) {
        if let Some(v) = v {
            self.num(key, v);
        }
    }

    pub fn int(&mut self, key: &str, v: i64) {
        self.0.insert(key.into(), Value::Integer(v));
    }

    pub fn bool(&mut self, key: &str, v: bool) {
        self.0.insert(key.into(), Value::Boolean(v));
    }

    pub fn text(&mut self, key: &str, v: &str) {
        self.0.insert(key.into(), Value::String(v.into()));
    }

    pub fn table(&mut self, key: &str, t: Summary) {
        self.0.insert(key.into(), Value::Table(t.0));
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(&self.0).map_err(|e| CliError::Runtime(e.to_string()))
    }
}
