//! Flat key=value run configuration with `#` comments.
//!
//! Every key must be known; required keys missing from the file are reported
//! together. List-valued entries (comma-separated numbers) are only legal for
//! the sweepable keys and are expanded by the sweep mode.

use anyhow::{anyhow, bail, Result};
use std::collections::BTreeMap;
use std::path::Path;

/// Full key vocabulary. Everything else is rejected by name.
pub const KNOWN_KEYS: &[&str] = &[
    "k",
    "T",
    "grid.ny",
    "grid.cfl",
    "partition.mode",
    "partition.split_time",
    "follower.sigma",
    "follower.tol",
    "follower.max_iter",
    "target.v2",
    "target.v0",
    "target.v1",
    "leader.rho0",
    "leader.rho1",
    "leader.delta",
    "leader.tol",
    "leader.max_iter",
    "leader.theta",
    "leader.picard_tol",
    "leader.picard_max",
    "leader.slack",
    "leader.override_speed_check",
    "init.v0",
    "init.v1",
    "simulate.w1",
    "simulate.w2",
    "run.mode",
    "run.seed",
    "output.dir",
    "sweep.mode",
    "debug.flip_flux_sign",
];

pub const REQUIRED_KEYS: &[&str] = &["k", "T", "grid.ny"];

/// Keys whose values may be comma-separated lists for sweeps.
pub const SWEEPABLE_KEYS: &[&str] = &[
    "k",
    "T",
    "grid.ny",
    "follower.sigma",
    "leader.rho0",
    "leader.rho1",
    "leader.theta",
];

#[derive(Debug, Clone)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(i) => &raw[..i],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("config line {}: expected key=value, got '{line}'", lineno + 1))?;
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if !KNOWN_KEYS.contains(&key.as_str()) {
                bail!("config error: unknown key '{key}' (line {})", lineno + 1);
            }
            if values.insert(key.clone(), value).is_some() {
                bail!("config error: duplicate key '{key}' (line {})", lineno + 1);
            }
        }
        let missing: Vec<&str> = REQUIRED_KEYS
            .iter()
            .filter(|k| !values.contains_key(**k))
            .copied()
            .collect();
        if !missing.is_empty() {
            bail!(
                "config error: missing required keys {:?} (required: {:?})",
                missing,
                REQUIRED_KEYS
            );
        }
        Ok(RunConfig { values })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow!("cannot read config {}: {e}", path.display()))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: String) {
        self.values.insert(key.to_string(), value);
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|s| s.as_str())
    }

    pub fn str_or(&self, key: &str, default: &str) -> String {
        self.raw(key).unwrap_or(default).to_string()
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| anyhow!("config error: key '{key}' must be a number, got '{v}'")),
        }
    }

    pub fn f64_req(&self, key: &str) -> Result<f64> {
        self.raw(key)
            .ok_or_else(|| anyhow!("config error: missing required key '{key}'"))?
            .parse()
            .map_err(|_| anyhow!("config error: key '{key}' must be a number"))
    }

    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| anyhow!("config error: key '{key}' must be an integer, got '{v}'")),
        }
    }

    pub fn u64_or(&self, key: &str, default: u64) -> Result<u64> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| anyhow!("config error: key '{key}' must be an integer, got '{v}'")),
        }
    }

    pub fn bool_or(&self, key: &str, default: bool) -> Result<bool> {
        match self.raw(key) {
            None => Ok(default),
            Some("true") | Some("1") | Some("yes") => Ok(true),
            Some("false") | Some("0") | Some("no") => Ok(false),
            Some(v) => bail!("config error: key '{key}' must be a boolean, got '{v}'"),
        }
    }

    /// Echo of every resolved key, for the summary.
    pub fn echo(&self) -> BTreeMap<String, String> {
        self.values.clone()
    }


    /// Cartesian product over the list-valued sweepable keys; single-valued
    /// configs expand to exactly one point.
    pub fn expand_sweep(&self) -> Result<Vec<(Vec<(String, String)>, RunConfig)>> {
        let mut axes: Vec<(String, Vec<String>)> = Vec::new();
        for (k, v) in &self.values {
            if v.contains(',') {
                if !SWEEPABLE_KEYS.contains(&k.as_str()) {
                    bail!("config error: key '{k}' does not accept a list value");
                }
                let items: Vec<String> = v.split(',').map(|s| s.trim().to_string()).collect();
                if items.iter().any(|s| s.is_empty()) {
                    bail!("config error: key '{k}' has an empty list entry");
                }
                axes.push((k.clone(), items));
            }
        }
        let mut points = vec![Vec::new()];
        for (key, items) in &axes {
            let mut next = Vec::with_capacity(points.len() * items.len());
            for p in &points {
                for item in items {
                    let mut q = p.clone();
                    q.push((key.clone(), item.clone()));
                    next.push(q);
                }
            }
            points = next;
        }
        Ok(points
            .into_iter()
            .map(|assign| {
                let mut cfg = self.clone();
                for (k, v) in &assign {
                    cfg.set(k, v.clone());
                }
                (assign, cfg)
            })
            .collect())
    }
}
