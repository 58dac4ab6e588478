use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub config: serde_json::Value,
    pub seed: u64,
    pub tasks: Vec<String>,
    pub git_describe: String,
    pub wall_clock_secs: f64,
    pub outputs: Vec<String>,
}

pub fn git_describe() -> String {
    Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into())
}

/// An output directory that collects artifacts and closes with a manifest.
pub struct RunDir {
    root: PathBuf,
    outputs: Vec<String>,
    started: Instant,
}

impl RunDir {
    /// Creates `root`, refusing to touch a directory that already holds files.
    pub fn create(root: &Path) -> Result<Self> {
        if root.exists() {
            let occupied = fs::read_dir(root)
                .with_context(|| format!("reading {}", root.display()))?
                .next()
                .is_some();
            if occupied {
                anyhow::bail!(crate::UsageError(format!(
                    "output directory {} is not empty; choose a fresh --out",
                    root.display()
                )));
            }
        }
        fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        Ok(Self {
            root: root.to_path_buf(),
            outputs: Vec::new(),
            started: Instant::now(),
        })
    }

    /// Path for a new artifact, recorded in the manifest.
    pub fn file(&mut self, name: &str) -> PathBuf {
        self.outputs.push(name.to_string());
        self.root.join(name)
    }

    pub fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        let p = self.file(name);
        fs::write(&p, contents).with_context(|| format!("writing {}", p.display()))
    }

    pub fn finish(mut self, command: &str, config: serde_json::Value, seed: u64, tasks: Vec<String>) -> Result<RunManifest> {
        self.outputs.sort();
        let m = RunManifest {
            command: command.to_string(),
            argv: std::env::args().collect(),
            config,
            seed,
            tasks,
            git_describe: git_describe(),
            wall_clock_secs: self.started.elapsed().as_secs_f64(),
            outputs: self.outputs,
        };
        let json = serde_json::to_string_pretty(&m)?;
        let path = self.root.join(MANIFEST_FILE);
        fs::write(&path, json + "\n")?;
        log::info!("wrote {} ({} artifacts)", path.display(), m.outputs.len());
        Ok(m)
    }
}
