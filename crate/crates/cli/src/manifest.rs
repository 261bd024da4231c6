//! Run manifests: what a command was asked to do, what it read and what it
//! wrote, recorded so the command can be re-run exactly.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub manifest_version: u32,
    pub tool_version: String,
    pub command: String,
    /// Arguments after the program name, as given.
    pub argv: Vec<String>,
    /// Fully resolved settings (flags, config file and defaults merged).
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    /// Input path -> sha256 of its contents.
    pub inputs: BTreeMap<PathBuf, String>,
    /// Output path -> sha256 of its contents.
    pub artifacts: BTreeMap<PathBuf, String>,
    pub exit_status: i32,
    pub error: Option<String>,
    pub started: String,
    pub finished: String,
}

impl RunManifest {
    pub fn new(command: &str, argv: Vec<String>) -> Self {
        Self {
            manifest_version: MANIFEST_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            argv,
            config: serde_json::Value::Null,
            seeds: BTreeMap::new(),
            inputs: BTreeMap::new(),
            artifacts: BTreeMap::new(),
            exit_status: 0,
            error: None,
            started: now(),
            finished: String::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> io::Result<()> {
        self.inputs.insert(path.to_path_buf(), hash_path(path)?);
        Ok(())
    }

    pub fn artifact(&mut self, path: &Path) -> io::Result<()> {
        self.artifacts.insert(path.to_path_buf(), hash_path(path)?);
        Ok(())
    }

    pub fn load(path: &Path) -> io::Result<Self> {
        let bytes = fs::read(path)?;
        serde_json::from_slice(&bytes).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
    }

    pub fn save(&mut self, path: &Path) -> io::Result<()> {
        self.finished = now();
        let json = serde_json::to_vec_pretty(self).expect("manifest serialises");
        write_atomic(path, &json)
    }
}

pub fn now() -> String {
    humantime::format_rfc3339_seconds(std::time::SystemTime::now()).to_string()
}

/// Writes via a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

/// sha256 of a file, or of every file under a directory (relative path and
/// contents, in sorted order).
pub fn hash_path(path: &Path) -> io::Result<String> {
    if path.is_file() {
        return Ok(hex::encode(Sha256::digest(fs::read(path)?)));
    }
    let mut files = Vec::new();
    collect_files(path, path, &mut files)?;
    files.sort();
    let mut h = Sha256::new();
    for rel in files {
        h.update(rel.to_string_lossy().as_bytes());
        h.update([0]);
        h.update(Sha256::digest(fs::read(path.join(&rel))?));
    }
    Ok(hex::encode(h.finalize()))
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> io::Result<()> {
    for entry in fs::read_dir(dir)? {
        let p = entry?.path();
        if p.is_dir() {
            collect_files(root, &p, out)?;
        } else {
            out.push(p.strip_prefix(root).expect("under root").to_path_buf());
        }
    }
    Ok(())
}

/// `<path>.run.json`
pub fn default_manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".run.json");
    PathBuf::from(s)
}
