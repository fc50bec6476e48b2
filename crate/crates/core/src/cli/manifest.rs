//! Run manifests: what was run, on which bytes, producing which bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const INCOMPLETE_MARKER: &str = "_INCOMPLETE";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path, display: String) -> Result<Self> {
        let data = fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
        Ok(FileDigest {
            path: display,
            bytes: data.len() as u64,
            sha256: format!("{:x}", Sha256::digest(&data)),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Arguments after the program name, as given.
    pub argv: Vec<String>,
    /// Working directory the relative paths in `argv` resolve against.
    pub cwd: String,
    pub config: serde_json::Value,
    pub inputs: Vec<FileDigest>,
    /// Paths relative to the output directory.
    pub outputs: Vec<FileDigest>,
    pub seeds: BTreeMap<String, u64>,
    pub tool_version: String,
    /// Unix seconds; `SOURCE_DATE_EPOCH` overrides the clock.
    pub timestamp: u64,
    pub wall_seconds: f64,
}

/// An output directory being filled. Carries an incomplete marker until
/// [`OutputDir::finish`] writes the manifest.
pub struct OutputDir {
    pub root: PathBuf,
    command: String,
    argv: Vec<String>,
    inputs: Vec<PathBuf>,
    outputs: Vec<String>,
    seeds: BTreeMap<String, u64>,
    config: serde_json::Value,
    started: Instant,
}

impl OutputDir {
    pub fn create(root: &Path, command: &str, argv: &[String]) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        fs::write(root.join(INCOMPLETE_MARKER), b"")?;
        let stale = root.join(MANIFEST_FILE);
        if stale.exists() {
            fs::remove_file(&stale)?;
        }
        Ok(OutputDir {
            root: root.to_path_buf(),
            command: command.to_string(),
            argv: argv.to_vec(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            seeds: BTreeMap::new(),
            config: serde_json::Value::Null,
            started: Instant::now(),
        })
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    pub fn seed(&mut self, name: &str, value: u64) {
        self.seeds.insert(name.to_string(), value);
    }

    pub fn config<T: Serialize>(&mut self, value: &T) -> Result<()> {
        self.config = serde_json::to_value(value)?;
        Ok(())
    }

    /// Path for an output file, recorded for the manifest.
    pub fn file(&mut self, name: &str) -> PathBuf {
        if !self.outputs.iter().any(|o| o == name) {
            self.outputs.push(name.to_string());
        }
        self.root.join(name)
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.file(name);
        cotkd::io::write_atomic(&path, bytes).with_context(|| format!("writing {}", path.display()))
    }

    pub fn write_json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    pub fn finish(self) -> Result<RunManifest> {
        let inputs = self
            .inputs
            .iter()
            .map(|p| FileDigest::of(p, p.display().to_string()))
            .collect::<Result<_>>()?;
        let mut names = self.outputs.clone();
        names.sort();
        let outputs = names
            .iter()
            .map(|n| FileDigest::of(&self.root.join(n), n.clone()))
            .collect::<Result<_>>()?;
        let manifest = RunManifest {
            command: self.command,
            argv: self.argv,
            cwd: std::env::current_dir()?.display().to_string(),
            config: self.config,
            inputs,
            outputs,
            seeds: self.seeds,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp: timestamp(),
            wall_seconds: self.started.elapsed().as_secs_f64(),
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        cotkd::io::write_atomic(&self.root.join(MANIFEST_FILE), text.as_bytes())?;
        fs::remove_file(self.root.join(INCOMPLETE_MARKER))?;
        Ok(manifest)
    }
}

fn timestamp() -> u64 {
    if let Some(t) = std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|v| v.parse().ok()) {
        return t;
    }
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

pub fn read_manifest(path: &Path) -> Result<RunManifest> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Output digests that differ between two manifests, by relative path.
pub fn diff_outputs(expected: &RunManifest, actual: &RunManifest) -> Vec<String> {
    let want: BTreeMap<_, _> = expected.outputs.iter().map(|d| (&d.path, &d.sha256)).collect();
    let got: BTreeMap<_, _> = actual.outputs.iter().map(|d| (&d.path, &d.sha256)).collect();
    let mut keys: Vec<_> = want.keys().chain(got.keys()).collect();
    keys.sort();
    keys.dedup();
    keys.into_iter()
        .filter(|k| want.get(*k) != got.get(*k))
        .map(|k| k.to_string())
        .collect()
}
