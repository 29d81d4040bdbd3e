//! Named benchmark presets with expected values and tolerances.

use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{parse_config_with, BenchSettings, Overrides, RunConfig};
use crate::manifest::{RunManifest, RunStatus};
use crate::run::{run, Log};

pub const PRESETS: [&str; 6] = ["example1", "example2", "rotor", "inverted-1d", "harmonic", "golden"];

const EXPECTATIONS: &str = include_str!("../bench/expectations.json");

pub fn preset_text(name: &str) -> Option<&'static str> {
    Some(match name {
        "example1" => include_str!("../bench/example1.toml"),
        "example2" => include_str!("../bench/example2.toml"),
        "rotor" => include_str!("../bench/rotor.toml"),
        "inverted-1d" => include_str!("../bench/inverted-1d.toml"),
        "harmonic" => include_str!("../bench/harmonic.toml"),
        "golden" => include_str!("../bench/golden.toml"),
        _ => return None,
    })
}

/// Acceptance rule for one manifest estimate. A value passes when it lies
/// within `absolute_tolerance` or `relative_tolerance`·|expected| of
/// `expected`, and strictly above `lower_bound`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Expectation {
    pub preset: String,
    pub estimate: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relative_tolerance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub absolute_tolerance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower_bound: Option<f64>,
}

impl Expectation {
    pub fn accepts(&self, value: f64) -> bool {
        if !value.is_finite() {
            return false;
        }
        if let Some(expected) = self.expected {
            let tol = self.absolute_tolerance.unwrap_or(0.0) + self.relative_tolerance.unwrap_or(0.0) * expected.abs();
            if (value - expected).abs() > tol {
                return false;
            }
        }
        self.lower_bound.is_none_or(|b| value > b)
    }

    pub fn describe(&self) -> String {
        let mut parts = Vec::new();
        if let Some(e) = self.expected {
            match (self.absolute_tolerance, self.relative_tolerance) {
                (_, Some(r)) => parts.push(format!("{e} ± {}%", r * 100.0)),
                (Some(a), None) => parts.push(format!("{e} ± {a:e}")),
                (None, None) => parts.push(format!("= {e}")),
            }
        }
        if let Some(b) = self.lower_bound {
            parts.push(format!("> {b}"));
        }
        parts.join(", ")
    }
}

pub fn expectations() -> Vec<Expectation> {
    serde_json::from_str(EXPECTATIONS).expect("embedded expectations are valid JSON")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub preset: String,
    pub estimate: String,
    pub value: Option<f64>,
    pub rule: String,
    pub pass: bool,
    pub status: RunStatus,
}

/// Validated configuration of a preset, writing into `out`.
pub fn preset_config(name: &str, seed: u64, out: &Path) -> Option<RunConfig> {
    let overrides = Overrides {
        seed: Some(seed),
        out: Some(out.to_path_buf()),
        ..Default::default()
    };
    parse_config_with(preset_text(name)?, &overrides).ok()
}

pub(crate) fn run_bench(s: &BenchSettings, seed: u64, dir: &Path, m: &mut RunManifest, log: &Log) -> io::Result<()> {
    let rules = expectations();
    let mut results = Vec::new();
    let mut failed = Vec::new();
    for name in &s.presets {
        let Some(config) = preset_config(name, seed, &dir.join(name)) else {
            failed.push(format!("{name}: preset does not parse"));
            continue;
        };
        log.line(format!("bench preset {name}"));
        let sub = run(&config, log.quiet)?;
        m.record_file(dir, &format!("{name}/manifest.json"))?;
        if sub.status == RunStatus::DiagnosticFailure {
            failed.push(format!("{name}: {}", sub.diagnostic.clone().unwrap_or_default()));
        }
        for rule in rules.iter().filter(|r| &r.preset == name) {
            let value = sub.value(&rule.estimate);
            let pass = value.is_some_and(|v| rule.accepts(v));
            m.estimate(format!("{name}.{}", rule.estimate), value.unwrap_or(f64::NAN), None);
            let line = format!(
                "{} {name} {} = {} (expected {})",
                if pass { "PASS" } else { "FAIL" },
                rule.estimate,
                value.map_or("missing".to_string(), |v| format!("{v:.6e}")),
                rule.describe()
            );
            if !log.quiet {
                println!("{line}");
            }
            results.push(BenchResult {
                preset: name.clone(),
                estimate: rule.estimate.clone(),
                value,
                rule: rule.describe(),
                pass,
                status: sub.status,
            });
        }
    }
    let passed = results.iter().filter(|r| r.pass).count() as u64;
    m.event("expectations_passed", passed);
    m.event("expectations_failed", results.len() as u64 - passed);
    let text = serde_json::to_string_pretty(&results).map_err(io::Error::other)?;
    fs::write(dir.join("bench.json"), text + "\n")?;
    m.record_file(dir, "bench.json")?;
    if !failed.is_empty() {
        m.fail(failed.join("; "));
    }
    Ok(())
}
