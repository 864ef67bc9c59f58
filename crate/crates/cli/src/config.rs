//! Run configuration: per-command defaults, an optional plain-text overlay
//! file, and repeatable `--set key=value` overrides. Keys use dotted paths;
//! anything outside the command's registry is rejected.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use recomb_core::recombine::MaskPolicy;
use recomb_core::{Error, Result};

#[derive(Debug, Clone)]
pub struct ConfigMap {
    values: BTreeMap<String, String>,
}

impl ConfigMap {
    pub fn with_defaults(defaults: &[(&str, &str)]) -> Self {
        Self {
            values: defaults
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        }
    }

    fn set_known(&mut self, key: &str, value: &str, source: &str) -> Result<()> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.to_string();
                Ok(())
            }
            None => {
                let known: Vec<&str> = self.values.keys().map(String::as_str).collect();
                Err(Error::InvalidConfig(format!(
                    "unknown key {key:?} in {source}; known keys: {}",
                    known.join(", ")
                )))
            }
        }
    }

    /// Overlays `key = value` lines; `#` starts a comment.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("reading {}: {e}", path.display())))?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::InvalidConfig(format!(
                    "{} line {}: expected key = value, got {raw:?}",
                    path.display(),
                    lineno + 1
                )));
            };
            self.set_known(key.trim(), value.trim(), &path.display().to_string())?;
        }
        Ok(())
    }

    /// Applies one `--set key=value` override.
    pub fn apply_set(&mut self, assignment: &str) -> Result<()> {
        let Some((key, value)) = assignment.split_once('=') else {
            return Err(Error::InvalidConfig(format!(
                "--set expects key=value, got {assignment:?}"
            )));
        };
        self.set_known(key.trim(), value.trim(), "--set")
    }

    /// The fully resolved key space, echoed into reports.
    pub fn values(&self) -> &BTreeMap<String, String> {
        &self.values
    }

    fn raw(&self, key: &str) -> Result<&str> {
        self.values
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::InvalidConfig(format!("key {key:?} not registered")))
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str, kind: &str) -> Result<T> {
        let raw = self.raw(key)?;
        raw.parse().map_err(|_| {
            Error::InvalidConfig(format!("key {key:?} holds {raw:?}, expected {kind}"))
        })
    }

    pub fn get_usize(&self, key: &str) -> Result<usize> {
        self.parsed(key, "a nonnegative integer")
    }

    pub fn get_u64(&self, key: &str) -> Result<u64> {
        self.parsed(key, "a nonnegative integer")
    }

    pub fn get_f64(&self, key: &str) -> Result<f64> {
        self.parsed(key, "a real number")
    }

    pub fn get_string(&self, key: &str) -> Result<String> {
        Ok(self.raw(key)?.to_string())
    }

    pub fn get_policy(&self, key: &str) -> Result<MaskPolicy> {
        match self.raw(key)? {
            "iid-half" => Ok(MaskPolicy::IidHalf),
            "proper" => Ok(MaskPolicy::Proper),
            other => Err(Error::InvalidConfig(format!(
                "key {key:?} holds {other:?}, expected iid-half or proper"
            ))),
        }
    }

    pub fn get_f64_list(&self, key: &str) -> Result<Vec<f64>> {
        let raw = self.raw(key)?;
        raw.split(',')
            .map(|v| {
                v.trim().parse().map_err(|_| {
                    Error::InvalidConfig(format!("key {key:?}: {v:?} is not a real number"))
                })
            })
            .collect()
    }

    pub fn get_u64_list(&self, key: &str) -> Result<Vec<u64>> {
        let raw = self.raw(key)?;
        raw.split(',')
            .map(|v| {
                v.trim().parse().map_err(|_| {
                    Error::InvalidConfig(format!("key {key:?}: {v:?} is not an integer"))
                })
            })
            .collect()
    }

    /// Path value resolved against the output directory when relative.
    pub fn get_path(&self, key: &str, out: &Path) -> Result<PathBuf> {
        let raw = self.raw(key)?;
        if raw.is_empty() {
            return Err(Error::InvalidConfig(format!("key {key:?} holds an empty path")));
        }
        let p = PathBuf::from(raw);
        Ok(if p.is_absolute() { p } else { out.join(p) })
    }

    /// Like [`get_path`](Self::get_path) but treats "" as absent.
    pub fn get_optional_path(&self, key: &str, out: &Path) -> Result<Option<PathBuf>> {
        if self.raw(key)?.is_empty() {
            Ok(None)
        } else {
            self.get_path(key, out).map(Some)
        }
    }
}
