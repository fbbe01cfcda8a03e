//! Run manifests: the exact argument vector, resolved configuration and
//! input digests of one command, written beside its outputs.
//!
//! ```text
//! # seatrack-manifest v1
//! version=0.1.0
//! command=train
//! seed=0
//! arg=train
//! arg=--input
//! arg=data/trajectories.txt
//! config.ell=12
//! input=data/trajectories.txt sha256:9f86d0...
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MANIFEST_HEADER: &str = "# seatrack-manifest v1";
pub const MANIFEST_FILE: &str = "manifest.txt";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunManifest {
    pub command: String,
    /// Arguments after the program name, verbatim.
    pub argv: Vec<String>,
    pub config: Vec<(String, String)>,
    /// Input path as given, with its SHA-256 in hex.
    pub inputs: Vec<(String, String)>,
    pub seed: Option<u64>,
    pub version: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut s = String::with_capacity(64);
    for b in digest.iter() {
        let _ = write!(s, "{b:02x}");
    }
    s
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

impl RunManifest {
    pub fn new(command: &str, argv: &[String]) -> Self {
        RunManifest {
            command: command.to_string(),
            argv: argv.to_vec(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            ..Default::default()
        }
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.config.push((key.to_string(), value.to_string()));
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        let digest = file_digest(path)?;
        self.inputs.push((path.display().to_string(), digest));
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{MANIFEST_HEADER}");
        let _ = writeln!(s, "version={}", self.version);
        let _ = writeln!(s, "command={}", self.command);
        if let Some(seed) = self.seed {
            let _ = writeln!(s, "seed={seed}");
        }
        for a in &self.argv {
            let _ = writeln!(s, "arg={}", escape(a));
        }
        for (k, v) in &self.config {
            let _ = writeln!(s, "config.{k}={}", escape(v));
        }
        for (p, d) in &self.inputs {
            let _ = writeln!(s, "input={} sha256:{d}", escape(p));
        }
        s
    }

    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, l)) if l.trim_end() == MANIFEST_HEADER => {}
            _ => return Err(Error::parse(source, 1, "not a seatrack manifest")),
        }
        let mut m = RunManifest::default();
        for (i, line) in lines {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let perr = |msg: &str| Error::parse(source, i + 1, msg);
            let (k, v) = line.split_once('=').ok_or_else(|| perr("expected key=value"))?;
            match k {
                "version" => m.version = v.to_string(),
                "command" => m.command = v.to_string(),
                "seed" => m.seed = Some(v.parse().map_err(|_| perr("bad seed"))?),
                "arg" => m.argv.push(unescape(v)),
                "input" => {
                    let (p, d) = v.rsplit_once(" sha256:").ok_or_else(|| perr("bad input line"))?;
                    m.inputs.push((unescape(p), d.to_string()));
                }
                k if k.starts_with("config.") => {
                    m.config.push((k["config.".len()..].to_string(), unescape(v)))
                }
                _ => return Err(perr("unknown manifest key")),
            }
        }
        if m.command.is_empty() || m.argv.is_empty() {
            return Err(Error::InvalidInput(format!("{source}: manifest has no command")));
        }
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn save(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(MANIFEST_FILE);
        std::fs::write(&path, self.to_text()).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    /// Fails when any recorded input file has changed since the run.
    pub fn verify_inputs(&self) -> Result<()> {
        for (p, d) in &self.inputs {
            let now = file_digest(Path::new(p))?;
            if &now != d {
                return Err(Error::ConfigMismatch(format!(
                    "input {p} changed since the recorded run (sha256 {now}, manifest {d})"
                )));
            }
        }
        Ok(())
    }
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('\n', "\\n")
}

fn unescape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next() {
                Some('n') => out.push('\n'),
                Some(o) => out.push(o),
                None => out.push('\\'),
            }
        } else {
            out.push(c);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_known_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn text_round_trip() {
        let mut m = RunManifest::new("train", &["train".into(), "--out".into(), "a\\b\nc".into()]);
        m.seed = Some(7);
        m.set("ell", 12);
        m.inputs.push(("x y.txt".into(), "00ff".into()));
        let back = RunManifest::parse(&m.to_text(), "m").unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn rejects_foreign_files() {
        assert!(RunManifest::parse("hello\n", "m").is_err());
        assert!(RunManifest::parse(&format!("{MANIFEST_HEADER}\nbogus=1\n"), "m").is_err());
    }

    #[test]
    fn detects_changed_input() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("in.txt");
        std::fs::write(&f, "one").unwrap();
        let mut m = RunManifest::new("x", &["x".into()]);
        m.add_input(&f).unwrap();
        m.verify_inputs().unwrap();
        std::fs::write(&f, "two").unwrap();
        assert_eq!(m.verify_inputs().unwrap_err().kind(), "config_mismatch");
    }
}
