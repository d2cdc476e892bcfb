use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

pub const TOOL: &str = "lamcloak";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Serialize)]
pub struct Meta {
    pub tool: &'static str,
    pub version: &'static str,
    pub config_hash: String,
}

impl Meta {
    /// Hash of the fully resolved settings, so equal settings give equal files.
    pub fn for_settings(settings: &impl Serialize) -> Result<Self> {
        let bytes = serde_json::to_vec(settings)?;
        let hash = hex::encode(Sha256::digest(&bytes));
        Ok(Meta { tool: TOOL, version: VERSION, config_hash: hash })
    }
}

/// Output directory plus the stamp written into every file.
pub struct Sink {
    dir: PathBuf,
    meta: Meta,
    written: Vec<PathBuf>,
}

impl Sink {
    pub fn new(dir: &Path, meta: Meta) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Sink { dir: dir.to_path_buf(), meta, written: Vec::new() })
    }

    /// Writes `body` as pretty JSON with a `meta` key added at the top level.
    pub fn json(&mut self, name: &str, body: &impl Serialize) -> Result<()> {
        let mut v = serde_json::to_value(body)?;
        match &mut v {
            Value::Object(map) => {
                map.insert("meta".into(), serde_json::to_value(&self.meta)?);
            }
            other => {
                let inner = std::mem::take(other);
                *other = serde_json::json!({ "meta": self.meta, "data": inner });
            }
        }
        let mut text = serde_json::to_string_pretty(&v)?;
        text.push('\n');
        let path = self.dir.join(name);
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        self.written.push(path);
        Ok(())
    }

    /// CSV with a leading comment line carrying version and config hash.
    pub fn csv<F>(&mut self, name: &str, fill: F) -> Result<()>
    where
        F: FnOnce(&mut BufWriter<File>) -> lamcloak::Result<()>,
    {
        let path = self.dir.join(name);
        let file = File::create(&path).with_context(|| format!("writing {}", path.display()))?;
        let mut w = BufWriter::new(file);
        writeln!(w, "# {TOOL} {VERSION} config {}", self.meta.config_hash)?;
        fill(&mut w)?;
        w.flush()?;
        self.written.push(path);
        Ok(())
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }
}

/// Reads a JSON document, dropping the `meta` stamp, and unwraps `key` if present.
pub fn read_json(path: &Path, key: &str) -> Result<Value> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut v: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if let Value::Object(map) = &mut v {
        map.remove("meta");
        if let Some(inner) = map.remove(key) {
            return Ok(inner);
        }
    }
    Ok(v)
}
