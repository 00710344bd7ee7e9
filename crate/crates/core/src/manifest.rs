//! Run manifests: what a command produced, from which inputs and seeds.
//!
//! Wall-clock timings are recorded but excluded from the manifest digest,
//! so reruns with identical inputs digest identically.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

fn hex(bytes: [u8; 32]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// SHA-256 of a file's contents, hex-encoded.
pub fn file_digest(path: &Path) -> Result<String> {
    let display = path.display().to_string();
    let file = File::open(path).map_err(|e| Error::io(&display, e))?;
    let mut reader = BufReader::new(file);
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = reader.read(&mut buf).map_err(|e| Error::io(&display, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex(hasher.finalize().into()))
}

/// One produced file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Path relative to the output directory.
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

/// Machine-readable record of one command run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub command: String,
    pub config_digest: String,
    /// Digests of the corpora the run consumed, keyed by role.
    pub corpus_digests: BTreeMap<String, String>,
    pub seeds: BTreeMap<String, u64>,
    pub outputs: Vec<ManifestEntry>,
    /// Free-form audit facts (contamination counts, selected lr, ...).
    pub notes: BTreeMap<String, String>,
    /// Wall-clock seconds per stage; excluded from `digest()`.
    pub stage_seconds: BTreeMap<String, f64>,
    /// Digest of everything above except `stage_seconds`.
    pub manifest_digest: String,
}

impl RunManifest {
    pub fn new(command: &str, config_digest: &str) -> Self {
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config_digest: config_digest.to_string(),
            corpus_digests: BTreeMap::new(),
            seeds: BTreeMap::new(),
            outputs: Vec::new(),
            notes: BTreeMap::new(),
            stage_seconds: BTreeMap::new(),
            manifest_digest: String::new(),
        }
    }

    /// Record a file under `root`, keyed by its path relative to `root`.
    pub fn record_output(&mut self, root: &Path, path: &Path) -> Result<()> {
        let display = path.display().to_string();
        let meta = std::fs::metadata(path).map_err(|e| Error::io(&display, e))?;
        let rel = path.strip_prefix(root).unwrap_or(path);
        self.outputs.push(ManifestEntry {
            path: rel.to_string_lossy().replace('\\', "/"),
            bytes: meta.len(),
            sha256: file_digest(path)?,
        });
        Ok(())
    }

    /// Digest over the timing-independent fields.
    pub fn digest(&self) -> String {
        let mut stable = self.clone();
        stable.stage_seconds = BTreeMap::new();
        stable.manifest_digest = String::new();
        let bytes = serde_json::to_vec(&stable).expect("manifest serializes");
        hex(Sha256::digest(&bytes).into())
    }

    /// Seal and write as pretty JSON.
    pub fn write(&mut self, path: &Path) -> Result<()> {
        self.manifest_digest = self.digest();
        let display = path.display().to_string();
        let mut file = File::create(path).map_err(|e| Error::io(&display, e))?;
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        file.write_all(text.as_bytes())
            .map_err(|e| Error::io(&display, e))?;
        file.write_all(b"\n").map_err(|e| Error::io(&display, e))?;
        Ok(())
    }
}

pub fn load_manifest(path: &Path) -> Result<RunManifest> {
    let display = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(&display, e))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Checkpoint(format!("{display}: malformed manifest: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_ignores_wall_clock_but_not_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("a.csv");
        std::fs::write(&f, "x,y\n1,2\n").unwrap();

        let mut a = RunManifest::new("phase", "cfg");
        a.record_output(dir.path(), &f).unwrap();
        a.stage_seconds.insert("train".to_string(), 1.25);

        let mut b = RunManifest::new("phase", "cfg");
        b.record_output(dir.path(), &f).unwrap();
        b.stage_seconds.insert("train".to_string(), 9.75);

        assert_eq!(a.digest(), b.digest());

        std::fs::write(&f, "x,y\n1,3\n").unwrap();
        let mut c = RunManifest::new("phase", "cfg");
        c.record_output(dir.path(), &f).unwrap();
        assert_ne!(a.digest(), c.digest());
    }

    #[test]
    fn entries_are_relative_and_sized() {
        let dir = tempfile::tempdir().unwrap();
        let sub = dir.path().join("reports");
        std::fs::create_dir(&sub).unwrap();
        let f = sub.join("m.csv");
        std::fs::write(&f, "abc").unwrap();

        let mut m = RunManifest::new("report", "cfg");
        m.record_output(dir.path(), &f).unwrap();
        assert_eq!(m.outputs[0].path, "reports/m.csv");
        assert_eq!(m.outputs[0].bytes, 3);
        assert_eq!(m.outputs[0].sha256.len(), 64);
    }

    #[test]
    fn write_seals_and_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("out.txt");
        std::fs::write(&f, "data").unwrap();
        let path = dir.path().join("manifest.json");

        let mut m = RunManifest::new("build-data", "cfgdigest");
        m.seeds.insert("pipeline".to_string(), 42);
        m.record_output(dir.path(), &f).unwrap();
        m.write(&path).unwrap();

        let back = load_manifest(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.manifest_digest, back.digest());
        assert!(matches!(
            load_manifest(&dir.path().join("missing.json")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn file_digest_matches_known_vector() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("v.txt");
        std::fs::write(&f, "abc").unwrap();
        assert_eq!(
            file_digest(&f).unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
