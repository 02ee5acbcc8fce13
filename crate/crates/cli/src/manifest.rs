use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SNAPSHOT_FILE: &str = "config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Versions {
    pub adr_bench: String,
    pub format: u32,
}

impl Default for Versions {
    fn default() -> Self {
        Versions {
            adr_bench: env!("CARGO_PKG_VERSION").to_string(),
            format: 1,
        }
    }
}

/// One `run` invocation against the directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Invocation {
    pub started: String,
    pub finished: String,
    pub methods: Vec<String>,
    pub envs: Vec<String>,
    pub settings: Vec<String>,
    pub seeds: Vec<u64>,
    pub jobs: usize,
    pub cells_run: usize,
    pub cells_skipped: usize,
    pub failed_records: usize,
}

/// Describes a run directory. Together with the configuration snapshot next
/// to it, it is enough to reproduce every record in the directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    /// Configuration file the run was started from, if any.
    pub config_path: Option<PathBuf>,
    /// Resolved configuration, relative to the run directory.
    pub snapshot: PathBuf,
    /// Seed offset already folded into the snapshot's seeds.
    pub seed_offset: u64,
    pub versions: Versions,
    pub started: String,
    pub finished: String,
    pub invocations: Vec<Invocation>,
}

impl RunManifest {
    pub fn new(run_id: String, config_path: Option<PathBuf>, seed_offset: u64, now: String) -> Self {
        RunManifest {
            run_id,
            config_path,
            snapshot: PathBuf::from(SNAPSHOT_FILE),
            seed_offset,
            versions: Versions::default(),
            started: now.clone(),
            finished: now,
            invocations: Vec::new(),
        }
    }

    pub fn load(dir: &Path) -> Result<Option<Self>> {
        let path = dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        let m = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        Ok(Some(m))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self)?;
        fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))
    }
}

/// Writes the snapshot, or checks that an existing one is identical.
pub fn write_snapshot(dir: &Path, toml: &str) -> Result<()> {
    let path = dir.join(SNAPSHOT_FILE);
    if path.exists() {
        let old = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        if old != toml {
            bail!("{} differs from the resolved configuration; refusing to mix runs", path.display());
        }
        return Ok(());
    }
    fs::write(&path, toml).with_context(|| format!("writing {}", path.display()))
}

pub fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}
