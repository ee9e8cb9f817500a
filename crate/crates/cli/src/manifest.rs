//! Plain-text `key = value` run manifests.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};

#[derive(Debug, Clone, Default)]
pub struct Manifest {
    entries: Vec<(String, String)>,
}

impl Manifest {
    /// Starts a manifest with the standard header fields.
    pub fn new(subcommand: &str, argv: &[String]) -> Self {
        let mut m = Self::default();
        m.set("subcommand", subcommand);
        m.set("argv", serde_json::to_string(argv).expect("strings serialize"));
        m.set("version", env!("CARGO_PKG_VERSION"));
        if let Ok(dir) = std::env::current_dir() {
            m.set("cwd", dir.display());
        }
        m
    }

    pub fn set(&mut self, key: &str, value: impl std::fmt::Display) {
        let value = value.to_string().replace('\n', " ");
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(e) => e.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn argv(&self) -> Result<Vec<String>> {
        let raw = self
            .get("argv")
            .ok_or_else(|| anyhow!("manifest has no argv entry"))?;
        serde_json::from_str(raw).context("manifest argv is not a JSON string array")
    }

    pub fn render(&self) -> String {
        let mut s = String::from("# fractfield run manifest\n");
        for (k, v) in &self.entries {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut m = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once(" = ")
                .ok_or_else(|| anyhow!("manifest line {}: expected `key = value`", n + 1))?;
            m.entries.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(m)
    }

    pub fn read(path: &str) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("cannot read manifest {path}"))?;
        Self::parse(&text).with_context(|| format!("in manifest {path}"))
    }

    /// Writes `<output>.manifest` via a temporary file and rename.
    pub fn write_next_to(&self, output: &str) -> Result<PathBuf> {
        let path = manifest_path(output);
        write_atomic(&path, self.render().as_bytes())?;
        Ok(path)
    }
}

pub fn manifest_path(output: &str) -> PathBuf {
    let base = output
        .strip_suffix(".vh")
        .or_else(|| output.strip_suffix(".vraw"))
        .unwrap_or(output);
    PathBuf::from(format!("{base}.manifest"))
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp{}",
        path.extension().and_then(|e| e.to_str()).unwrap_or(""),
        std::process::id()
    ));
    let mut f = fs::File::create(&tmp).with_context(|| format!("cannot create {}", tmp.display()))?;
    f.write_all(bytes)?;
    f.sync_all()?;
    fs::rename(&tmp, path).with_context(|| format!("cannot move manifest into {}", path.display()))?;
    Ok(())
}
