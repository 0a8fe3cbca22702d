//! Run manifest: everything needed to reproduce a training run.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Where an input came from and the digest of its bytes.
#[derive(Debug, Clone)]
pub struct InputRecord {
    pub role: &'static str,
    pub source: String,
    pub sha256: String,
}

#[derive(Debug, Clone)]
pub struct RunManifest {
    pub version: &'static str,
    pub seed: u64,
    pub inputs: Vec<InputRecord>,
    /// Effective configuration in `key=value` form.
    pub config: String,
    pub outputs: Vec<(&'static str, PathBuf)>,
}

impl RunManifest {
    pub fn render(&self) -> String {
        let mut out = String::from("# aecl run manifest\n");
        let _ = writeln!(out, "version={}", self.version);
        let _ = writeln!(out, "seed={}", self.seed);
        for input in &self.inputs {
            let _ = writeln!(out, "input.{}={}", input.role, input.source);
            let _ = writeln!(out, "input.{}.sha256={}", input.role, input.sha256);
        }
        for line in self.config.lines() {
            let _ = writeln!(out, "config.{line}");
        }
        for (name, path) in &self.outputs {
            let _ = writeln!(out, "output.{name}={}", path.display());
        }
        out
    }

    /// Writes to a temporary sibling first, then renames over `path`.
    pub fn write_atomic(&self, path: &Path) -> io::Result<()> {
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.render())?;
        fs::rename(&tmp, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_of_empty_input() {
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }

    #[test]
    fn atomic_write_leaves_no_temp_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.txt");
        let m = RunManifest {
            version: "0.0.0",
            seed: 3,
            inputs: vec![InputRecord {
                role: "view0",
                source: "a.emb".into(),
                sha256: sha256_hex(b"x"),
            }],
            config: "m=4\nseed=3\n".into(),
            outputs: vec![("report", dir.path().join("report.csv"))],
        };
        m.write_atomic(&path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.contains("config.m=4\n"));
        assert!(text.contains("input.view0.sha256="));
        assert!(!dir.path().join("manifest.tmp").exists());
    }
}
