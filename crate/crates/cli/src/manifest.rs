//! Run manifests: flat `key=value` text recording everything needed to rerun
//! a command and check that it reproduced the same bytes.
//!
//! ```text
//! version=0.1.0
//! command=augment
//! arg.input=train.bin
//! arg.radius=4
//! input.sha256=train.bin:3f1c...
//! output.sha256=train_aug.bin:9ab0...
//! ```
//!
//! `arg.*` entries appear in command-line order and may repeat.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub version: String,
    pub command: String,
    pub args: Vec<(String, String)>,
    pub inputs: Vec<(PathBuf, String)>,
    pub outputs: Vec<(PathBuf, String)>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl Manifest {
    pub fn new(command: &str) -> Self {
        Self {
            version: rfcaug_core::VERSION.to_string(),
            command: command.to_string(),
            ..Default::default()
        }
    }

    pub fn arg(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.args.push((key.to_string(), value.to_string()));
        self
    }

    pub fn opt_arg<T: ToString>(&mut self, key: &str, value: Option<T>) -> &mut Self {
        if let Some(v) = value {
            self.arg(key, v);
        }
        self
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        let hash = sha256_file(path)?;
        self.inputs.push((path.to_path_buf(), hash));
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<()> {
        let hash = sha256_file(path)?;
        self.outputs.push((path.to_path_buf(), hash));
        Ok(())
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "version={}", self.version);
        let _ = writeln!(out, "command={}", self.command);
        for (k, v) in &self.args {
            let _ = writeln!(out, "arg.{k}={v}");
        }
        for (p, h) in &self.inputs {
            let _ = writeln!(out, "input.sha256={}:{h}", p.display());
        }
        for (p, h) in &self.outputs {
            let _ = writeln!(out, "output.sha256={}:{h}", p.display());
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut m = Manifest::default();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .with_context(|| format!("manifest line {}: expected key=value", n + 1))?;
            let hashed = |v: &str| -> Result<(PathBuf, String)> {
                let (path, hash) = v
                    .rsplit_once(':')
                    .with_context(|| format!("manifest line {}: expected path:hash", n + 1))?;
                Ok((PathBuf::from(path), hash.to_string()))
            };
            match key {
                "version" => m.version = value.to_string(),
                "command" => m.command = value.to_string(),
                "input.sha256" => m.inputs.push(hashed(value)?),
                "output.sha256" => m.outputs.push(hashed(value)?),
                k => match k.strip_prefix("arg.") {
                    Some(name) => m.args.push((name.to_string(), value.to_string())),
                    None => bail!("manifest line {}: unknown key {k:?}", n + 1),
                },
            }
        }
        if m.command.is_empty() {
            bail!("manifest has no command");
        }
        Ok(m)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.render()).with_context(|| format!("writing manifest {}", path.display()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading manifest {}", path.display()))?;
        Self::parse(&text)
    }

    /// Command line equivalent to this run, program name first.
    pub fn argv(&self) -> Vec<String> {
        let mut argv = vec!["rfcaug".to_string(), self.command.clone()];
        for (k, v) in &self.args {
            argv.push(format!("--{k}"));
            argv.push(v.clone());
        }
        argv
    }
}

/// `<path>.manifest` unless overridden.
pub fn default_path(output: &Path, explicit: Option<&Path>) -> PathBuf {
    explicit.map(Path::to_path_buf).unwrap_or_else(|| {
        let mut s = output.as_os_str().to_owned();
        s.push(".manifest");
        PathBuf::from(s)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_parse_round_trip() {
        let mut m = Manifest::new("eval-ood");
        m.arg("seed", 0).arg("ood", "noise=a.npy").arg("ood", "svhn=b.npy");
        m.inputs.push((PathBuf::from("dir:x/in.bin"), "ab".into()));
        m.outputs.push((PathBuf::from("out.csv"), "cd".into()));
        let parsed = Manifest::parse(&m.render()).unwrap();
        assert_eq!(parsed, m);
        assert_eq!(
            parsed.argv(),
            [
                "rfcaug",
                "eval-ood",
                "--seed",
                "0",
                "--ood",
                "noise=a.npy",
                "--ood",
                "svhn=b.npy"
            ]
        );
    }

    #[test]
    fn rejects_garbage() {
        assert!(Manifest::parse("nonsense").is_err());
        assert!(Manifest::parse("version=1\n").is_err());
        assert!(Manifest::parse("command=x\nbogus=1\n").is_err());
    }

    #[test]
    fn default_manifest_path() {
        assert_eq!(
            default_path(Path::new("a/b.bin"), None),
            PathBuf::from("a/b.bin.manifest")
        );
        assert_eq!(
            default_path(Path::new("a/b.bin"), Some(Path::new("m.txt"))),
            PathBuf::from("m.txt")
        );
    }
}
