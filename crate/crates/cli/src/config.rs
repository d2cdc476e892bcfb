use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

/// Bad flags or config values. Mapped to exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Lamination scale: a number, a fraction `a/b`, or `auto`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EpsChoice {
    Auto,
    Value(f64),
}

impl Default for EpsChoice {
    fn default() -> Self {
        EpsChoice::Value(1.0 / 50.0)
    }
}

impl FromStr for EpsChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("auto") {
            return Ok(EpsChoice::Auto);
        }
        let v = match s.split_once('/') {
            Some((a, b)) => {
                let a: f64 = a.trim().parse().map_err(|_| format!("bad numerator in {s:?}"))?;
                let b: f64 = b.trim().parse().map_err(|_| format!("bad denominator in {s:?}"))?;
                a / b
            }
            None => s.parse().map_err(|_| format!("expected a number, a/b or auto, got {s:?}"))?,
        };
        if !(v > 0.0 && v.is_finite()) {
            return Err(format!("epsilon must be positive, got {s:?}"));
        }
        Ok(EpsChoice::Value(v))
    }
}

impl<'de> Deserialize<'de> for EpsChoice {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => format!("{v:e}").parse(),
            Raw::Text(s) => s.parse(),
        }
        .map_err(serde::de::Error::custom)
    }
}

/// Comma separated floats, e.g. `32,15`.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatList(pub Vec<f64>);

impl FromStr for FloatList {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        s.split(',')
            .map(|t| t.trim().parse::<f64>().map_err(|_| format!("bad number {t:?} in list")))
            .collect::<Result<_, _>>()
            .map(FloatList)
    }
}

pub fn parse_shell_order(s: &str) -> Result<[usize; 3], String> {
    let v: Vec<usize> = s
        .split(',')
        .map(|t| t.trim().parse::<usize>().map_err(|_| format!("bad index {t:?} in shell order")))
        .collect::<Result<_, _>>()?;
    v.try_into().map_err(|_| "shell order needs exactly three indices".to_string())
}

/// Flat key/value file. Every key is optional; command-line flags win.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub out: Option<PathBuf>,
    pub dim: Option<u32>,
    pub layers: Option<usize>,
    pub order: Option<usize>,
    pub rho: Option<f64>,
    pub eps: Option<EpsChoice>,
    pub alpha: Option<f64>,
    pub gamma: Option<Vec<f64>>,
    pub safety: Option<f64>,
    pub k_max: Option<u32>,
    pub seed: Option<u64>,
    pub max_iterations: Option<usize>,
    pub tolerance: Option<f64>,
    pub max_materials: Option<usize>,
    pub split: Option<bool>,
    pub enhanced: Option<bool>,
    pub uncoated: Option<bool>,
    pub shell_order: Option<[usize; 3]>,
    pub points: Option<usize>,
    pub profile: Option<PathBuf>,
    pub laminate: Option<PathBuf>,
    pub betas: Option<Vec<f64>>,
    pub beta: Option<f64>,
    pub rho_min: Option<f64>,
    pub rho_max: Option<f64>,
    pub eps_min_exp: Option<i32>,
    pub eps_max_exp: Option<i32>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).map_err(|e| usage(format!("config {}: {e}", path.display())))
    }
}

pub const OUT_ENV: &str = "LAMCLOAK_OUT";

/// Flag, then environment, then file, then `out`.
pub fn output_dir(flag: Option<PathBuf>, file: &FileConfig) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUT_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
        .or_else(|| file.out.clone())
        .unwrap_or_else(|| PathBuf::from("out"))
}
