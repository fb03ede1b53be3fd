use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use minseg::Result;
use serde::Serialize;

use crate::data::absolute;

pub const RUN_ROOT_ENV: &str = "MINSEG_RUN_ROOT";

/// Everything needed to repeat a command.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub cwd: PathBuf,
    pub config: Option<String>,
    pub hyperparams: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<PathBuf>,
    pub output_dir: PathBuf,
    pub engine_version: String,
    pub threads: usize,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        RunManifest {
            command: command.to_string(),
            argv: std::env::args().collect(),
            cwd: std::env::current_dir().unwrap_or_default(),
            config: None,
            hyperparams: serde_json::Value::Null,
            seeds: BTreeMap::new(),
            inputs: Vec::new(),
            output_dir: PathBuf::new(),
            engine_version: env!("CARGO_PKG_VERSION").to_string(),
            threads: rayon::current_num_threads(),
        }
    }

    pub fn seed(mut self, name: &str, value: u64) -> Self {
        self.seeds.insert(name.to_string(), value);
        self
    }

    pub fn inputs(mut self, paths: impl IntoIterator<Item = PathBuf>) -> Self {
        self.inputs.extend(paths.into_iter().map(|p| absolute(&p)));
        self
    }

    /// Creates the run directory and writes `manifest.json` into it.
    pub fn start(mut self, run_dir: Option<&Path>) -> Result<PathBuf> {
        let dir = match run_dir {
            Some(d) => d.to_path_buf(),
            None => fresh_dir(&self.command),
        };
        std::fs::create_dir_all(&dir)?;
        self.output_dir = absolute(&dir);
        std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&self)? + "\n")?;
        eprintln!("run directory: {}", dir.display());
        Ok(dir)
    }
}

fn fresh_dir(command: &str) -> PathBuf {
    let root = std::env::var_os(RUN_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"));
    let stamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis()).unwrap_or(0);
    let base = root.join(format!("{command}-{stamp}"));
    let mut dir = base.clone();
    let mut n = 1;
    while dir.exists() {
        dir = PathBuf::from(format!("{}-{n}", base.display()));
        n += 1;
    }
    dir
}
