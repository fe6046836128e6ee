//! Artifact writing, `manifest.json` and `summary.txt`.

use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::hex;

/// Rounds a dB value to the three decimals used in every output.
pub fn db3(x: f64) -> f64 {
    if x.is_finite() {
        (x * 1000.0).round() / 1000.0 + 0.0
    } else {
        x
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub scenario: String,
    pub profile: String,
    pub config_sha256: String,
    pub seed: Option<u64>,
    pub files: Vec<FileEntry>,
}

/// Collects the files of one run in write order.
#[derive(Debug)]
pub struct Artifacts {
    dir: PathBuf,
    files: Vec<FileEntry>,
    summary: Vec<String>,
}

impl Artifacts {
    pub fn create(dir: &Path) -> io::Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
            summary: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write(&mut self, name: &str, contents: &str) -> io::Result<()> {
        std::fs::write(self.dir.join(name), contents)?;
        self.files.push(FileEntry {
            path: name.to_string(),
            bytes: contents.len(),
            sha256: hex(&Sha256::digest(contents.as_bytes())),
        });
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> io::Result<()> {
        let mut text = serde_json::to_string_pretty(value).map_err(io::Error::other)?;
        text.push('\n');
        self.write(name, &text)
    }

    pub fn note(&mut self, line: impl Into<String>) {
        self.summary.push(line.into());
    }

    pub fn files(&self) -> &[FileEntry] {
        &self.files
    }

    /// Writes `summary.txt` and then `manifest.json`, which lists every
    /// file before it.
    pub fn finish(
        mut self,
        scenario: &str,
        profile: &str,
        config_sha256: &str,
        seed: Option<u64>,
    ) -> io::Result<Manifest> {
        let mut text = self.summary.join("\n");
        text.push('\n');
        self.write("summary.txt", &text)?;
        let manifest = Manifest {
            scenario: scenario.to_string(),
            profile: profile.to_string(),
            config_sha256: config_sha256.to_string(),
            seed,
            files: self.files.clone(),
        };
        let mut json = serde_json::to_string_pretty(&manifest).map_err(io::Error::other)?;
        json.push('\n');
        std::fs::write(self.dir.join("manifest.json"), json)?;
        Ok(manifest)
    }
}

/// One line per stage on standard error.
pub fn log(scenario: &str, stage: &str) {
    eprintln!("[{scenario}] {stage}");
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounding_keeps_three_decimals() {
        assert_eq!(db3(-3.010299956), -3.01);
        assert_eq!(db3(-0.0004), 0.0);
        assert_eq!(db3(12.3456), 12.346);
        assert!(db3(f64::NEG_INFINITY).is_infinite());
    }

    #[test]
    fn manifest_lists_files_with_hashes() {
        let dir = std::env::temp_dir().join(format!("ssbm-sim-out-{}", std::process::id()));
        let mut a = Artifacts::create(&dir).unwrap();
        a.write("a.csv", "x\n1\n").unwrap();
        a.note("hello");
        let m = a.finish("plan", "ideal", "00", Some(3)).unwrap();
        assert_eq!(m.files.len(), 2);
        assert_eq!(m.files[0].path, "a.csv");
        assert_eq!(m.files[1].path, "summary.txt");
        assert_eq!(
            m.files[0].sha256,
            "daff832f802000e645771a60983c76c963f6ee602a6230e45237bd360e91cc1a"
        );
        assert!(dir.join("manifest.json").exists());
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
