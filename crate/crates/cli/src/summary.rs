use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, Serialize)]
pub struct Invariant {
    pub name: String,
    pub value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    pub pass: bool,
    #[serde(skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct SeedReport {
    pub master: u64,
    pub batch: usize,
    pub derivation: &'static str,
    pub trajectory_seeds: Vec<u64>,
}

pub const SEED_DERIVATION: &str = "trajectory i uses ChaCha8 keyed by splitmix64(master, i); \
     channel c draws from stream c of that generator";

/// Tolerances applied by one command: `default * scale`, unless overridden.
pub struct Tolerances {
    scale: f64,
    overrides: BTreeMap<String, f64>,
    applied: BTreeMap<String, f64>,
}

impl Tolerances {
    pub fn new(scale: f64, overrides: &BTreeMap<String, f64>) -> Result<Self, CliError> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(CliError::Input(format!("--tol-scale must be positive, got {scale}")));
        }
        Ok(Self { scale, overrides: overrides.clone(), applied: BTreeMap::new() })
    }

    pub fn get(&mut self, name: &str, default: f64) -> f64 {
        let value = self.overrides.get(name).copied().unwrap_or(default) * self.scale;
        self.applied.insert(name.to_string(), value);
        value
    }

    pub fn unused_overrides(&self) -> Vec<String> {
        self.overrides.keys().filter(|k| !self.applied.contains_key(*k)).cloned().collect()
    }
}

pub struct Report {
    pub invariants: Vec<Invariant>,
    pub outputs: Vec<PathBuf>,
    pub seeds: Option<SeedReport>,
}

impl Report {
    pub fn new() -> Self {
        Self { invariants: Vec::new(), outputs: Vec::new(), seeds: None }
    }

    pub fn check(&mut self, name: impl Into<String>, value: f64, tolerance: f64, pass: bool, detail: impl Into<String>) {
        self.invariants.push(Invariant {
            name: name.into(),
            value,
            tolerance: Some(tolerance),
            pass,
            detail: detail.into(),
        });
    }

    /// `value < tolerance`.
    pub fn below(&mut self, name: impl Into<String>, value: f64, tolerance: f64) {
        self.check(name, value, tolerance, value < tolerance, "");
    }

    pub fn flag(&mut self, name: impl Into<String>, pass: bool, detail: impl Into<String>) {
        self.invariants.push(Invariant {
            name: name.into(),
            value: if pass { 1.0 } else { 0.0 },
            tolerance: None,
            pass,
            detail: detail.into(),
        });
    }

    pub fn passed(&self) -> bool {
        self.invariants.iter().all(|i| i.pass)
    }
}

#[derive(Serialize)]
struct Summary<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    config_sha256: String,
    config: serde_json::Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    seeds: Option<&'a SeedReport>,
    tolerances: &'a BTreeMap<String, f64>,
    tol_scale: f64,
    invariants: &'a [Invariant],
    outputs: Vec<String>,
    passed: bool,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn write_summary(
    dir: &Path,
    command: &str,
    config_json: &str,
    tolerances: &Tolerances,
    report: &Report,
) -> Result<PathBuf, CliError> {
    let summary = Summary {
        tool: "qmfs",
        version: env!("CARGO_PKG_VERSION"),
        command,
        config_sha256: sha256_hex(config_json.as_bytes()),
        config: serde_json::from_str(config_json).expect("config is valid JSON"),
        seeds: report.seeds.as_ref(),
        tolerances: &tolerances.applied,
        tol_scale: tolerances.scale,
        invariants: &report.invariants,
        outputs: report
            .outputs
            .iter()
            .map(|p| p.strip_prefix(dir).unwrap_or(p).display().to_string())
            .collect(),
        passed: report.passed(),
    };
    let path = dir.join("summary.json");
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    std::fs::write(&path, text + "\n")?;
    Ok(path)
}
