use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::failure::{Failure, Outcome};

#[derive(Debug, Serialize)]
struct Artifact {
    path: String,
    sha256: String,
}

/// `manifest.json`: what ran, with which settings, and what it produced.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    command: String,
    args: Vec<String>,
    config: serde_json::Value,
    seed: Option<u64>,
    inputs: Vec<String>,
    outputs: Vec<Artifact>,
    wall_clock_secs: f64,
    #[serde(skip)]
    started: Option<Instant>,
}

impl RunManifest {
    pub fn start(command: &str) -> Self {
        Self {
            command: command.into(),
            args: std::env::args().skip(1).collect(),
            config: serde_json::Value::Null,
            seed: None,
            inputs: vec![],
            outputs: vec![],
            wall_clock_secs: 0.0,
            started: Some(Instant::now()),
        }
    }

    pub fn config(&mut self, config: serde_json::Value, seed: Option<u64>) {
        self.config = config;
        self.seed = seed;
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.display().to_string());
    }

    /// Writes `bytes` atomically to `path` and records its checksum.
    pub fn write(&mut self, path: &Path, bytes: &[u8]) -> Outcome<()> {
        genad_core::io::atomic_write(path, bytes)?;
        self.outputs
            .push(Artifact { path: path.display().to_string(), sha256: format!("{:x}", Sha256::digest(bytes)) });
        Ok(())
    }

    pub fn finish(mut self, out_dir: &Path) -> Outcome<PathBuf> {
        self.wall_clock_secs = self.started.map_or(0.0, |s| s.elapsed().as_secs_f64());
        let path = out_dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&self).map_err(|e| Failure::Data(e.to_string()))?;
        genad_core::io::atomic_write(&path, text.as_bytes())?;
        Ok(path)
    }
}
