//! Run configuration: a TOML document with top-level `engine`, `seed` and
//! `out` keys and one section per engine. Every problem found is reported,
//! each with the line it came from.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::PathBuf;

use hjks_core::systems::{continuous_model, kick_function};
use serde::Serialize;
use toml::{Table, Value};

pub const SECTIONS: [&str; 5] = ["continuous", "kicked", "oracle", "rotor-quantum", "bench"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Engine {
    Continuous,
    Kicked,
    RotorQuantum,
    Oracle,
    Bench,
}

impl Engine {
    pub fn name(self) -> &'static str {
        match self {
            Engine::Continuous => "continuous",
            Engine::Kicked => "kicked",
            Engine::RotorQuantum => "rotor-quantum",
            Engine::Oracle => "oracle",
            Engine::Bench => "bench",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "continuous" => Engine::Continuous,
            "kicked" => Engine::Kicked,
            "rotor-quantum" => Engine::RotorQuantum,
            "oracle" => Engine::Oracle,
            "bench" => Engine::Bench,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InitialCondition {
    Explicit {
        q: Vec<f64>,
        p: Vec<f64>,
    },
    /// Seeded draw on H = energy (continuous) or T|p|²/2 + f(q) = energy
    /// (kicked).
    EnergySurface {
        energy: f64,
        half_width: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContinuousSettings {
    pub model: String,
    pub dim: usize,
    pub param: f64,
    pub initial: InitialCondition,
    pub t_max: f64,
    pub dt: f64,
    pub sample_every: f64,
    pub switch_threshold: f64,
    pub escape_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KickedSettings {
    pub model: String,
    pub dim: usize,
    pub param: f64,
    #[serde(rename = "T")]
    pub period: f64,
    pub steps: u64,
    pub initial: InitialCondition,
    pub sample_every: u64,
    pub escape_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "system", rename_all = "kebab-case")]
pub enum OracleTarget {
    Continuous(ContinuousSettings),
    Kicked(KickedSettings),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleSettings {
    pub target: OracleTarget,
    pub renorm_interval: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RotorInitial {
    Uniform,
    Gaussian { center: f64, width: f64 },
    PlaneWave { m: i64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum OrbitStarts {
    Explicit(Vec<f64>),
    /// This many starts drawn from |ψ₀|².
    Sampled(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuantumSettings {
    pub grid: usize,
    pub hbar: f64,
    #[serde(rename = "K")]
    pub strength: f64,
    #[serde(rename = "T")]
    pub period: f64,
    pub periods: usize,
    pub substeps: usize,
    pub tolerance: f64,
    pub initial: RotorInitial,
    pub orbits: OrbitStarts,
    /// Classical (q₀, p₀) for the hybrid estimate.
    pub hybrid: Option<(f64, f64)>,
    pub hybrid_tolerance: f64,
    pub ensemble: usize,
    pub ensemble_periods: usize,
    pub ensemble_tolerance: f64,
    pub record: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchSettings {
    pub presets: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Settings {
    Continuous(ContinuousSettings),
    Kicked(KickedSettings),
    Oracle(OracleSettings),
    RotorQuantum(QuantumSettings),
    Bench(BenchSettings),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub engine: Engine,
    pub seed: u64,
    pub out: PathBuf,
    pub settings: Settings,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    /// 1-based line in the config text; `None` for command-line values and
    /// keys that are absent.
    pub line: Option<usize>,
    pub key: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "line {line}: {}: {}", self.key, self.message),
            None => write!(f, "{}: {}", self.key, self.message),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigErrors(pub Vec<ConfigError>);

impl ConfigErrors {
    pub fn mentions(&self, key: &str) -> bool {
        self.0
            .iter()
            .any(|e| e.key == key || e.key.ends_with(&format!(".{key}")))
    }
}

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigErrors {}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub engine: Option<Engine>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    /// `section.key=value` assignments; the value is read as a TOML value,
    /// or as a bare string when it does not parse as one.
    pub set: Vec<String>,
}

pub fn parse_config(text: &str) -> Result<RunConfig, ConfigErrors> {
    parse_config_with(text, &Overrides::default())
}

pub fn parse_config_with(text: &str, overrides: &Overrides) -> Result<RunConfig, ConfigErrors> {
    let mut errors = Vec::new();
    let (mut table, mut lines) = parse_document(text, &mut errors);
    if !errors.is_empty() {
        return Err(ConfigErrors(errors));
    }
    for assignment in &overrides.set {
        apply_assignment(&mut table, &mut lines, assignment, &mut errors);
    }
    if let Some(engine) = overrides.engine {
        table.insert("engine".into(), Value::String(engine.name().into()));
        lines.remove("engine");
    }
    if let Some(seed) = overrides.seed {
        table.insert("seed".into(), Value::Integer(seed as i64));
        lines.remove("seed");
    }
    if let Some(out) = &overrides.out {
        table.insert("out".into(), Value::String(out.display().to_string()));
        lines.remove("out");
    }
    let config = build(&table, &lines, &mut errors);
    match config {
        Some(c) if errors.is_empty() => Ok(c),
        _ => Err(ConfigErrors(errors)),
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

/// Parses the document and records the line of every key as `section.key`.
fn parse_document(text: &str, errors: &mut Vec<ConfigError>) -> (Table, BTreeMap<String, usize>) {
    let (doc, parse_errors) = toml::de::DeTable::parse_recoverable(text);
    if !parse_errors.is_empty() {
        for e in parse_errors {
            errors.push(ConfigError {
                line: e.span().map(|s| line_of(text, s.start)),
                key: "syntax".into(),
                message: e.message().to_string(),
            });
        }
        return (Table::new(), BTreeMap::new());
    }
    let mut lines = BTreeMap::new();
    for (key, value) in doc.get_ref() {
        let name = key.get_ref().to_string();
        lines.insert(name.clone(), line_of(text, key.span().start));
        if let toml::de::DeValue::Table(inner) = value.get_ref() {
            for (k, _) in inner {
                lines.insert(format!("{name}.{}", k.get_ref()), line_of(text, k.span().start));
            }
        }
    }
    match toml::from_str::<Table>(text) {
        Ok(table) => (table, lines),
        Err(e) => {
            errors.push(ConfigError {
                line: e.span().map(|s| line_of(text, s.start)),
                key: "syntax".into(),
                message: e.message().to_string(),
            });
            (Table::new(), lines)
        }
    }
}

fn apply_assignment(
    table: &mut Table,
    lines: &mut BTreeMap<String, usize>,
    assignment: &str,
    errors: &mut Vec<ConfigError>,
) {
    let Some((path, raw)) = assignment.split_once('=') else {
        errors.push(ConfigError {
            line: None,
            key: assignment.to_string(),
            message: "expected key=value".into(),
        });
        return;
    };
    let path = path.trim();
    let raw = raw.trim();
    let value = toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()));
    lines.remove(path);
    match path.split_once('.') {
        None => {
            table.insert(path.to_string(), value);
        }
        Some((section, key)) => {
            let entry = table
                .entry(section.to_string())
                .or_insert_with(|| Value::Table(Table::new()));
            match entry {
                Value::Table(t) => {
                    t.insert(key.to_string(), value);
                }
                _ => errors.push(ConfigError {
                    line: None,
                    key: section.to_string(),
                    message: "is not a section".into(),
                }),
            }
        }
    }
}

/// Typed access to one table that remembers which keys were read.
struct Section<'a> {
    prefix: &'a str,
    table: &'a Table,
    lines: &'a BTreeMap<String, usize>,
    used: BTreeSet<String>,
    errors: &'a mut Vec<ConfigError>,
}

impl<'a> Section<'a> {
    fn new(
        prefix: &'a str,
        table: &'a Table,
        lines: &'a BTreeMap<String, usize>,
        errors: &'a mut Vec<ConfigError>,
    ) -> Self {
        Self {
            prefix,
            table,
            lines,
            used: BTreeSet::new(),
            errors,
        }
    }

    fn path(&self, key: &str) -> String {
        if self.prefix.is_empty() {
            key.to_string()
        } else {
            format!("{}.{key}", self.prefix)
        }
    }

    fn fail(&mut self, key: &str, message: impl Into<String>) {
        let path = self.path(key);
        self.errors.push(ConfigError {
            line: self.lines.get(&path).copied(),
            key: path,
            message: message.into(),
        });
    }

    fn raw(&mut self, key: &str) -> Option<&'a Value> {
        self.used.insert(key.to_string());
        self.table.get(key)
    }

    fn has(&self, key: &str) -> bool {
        self.table.contains_key(key)
    }

    fn float_opt(&mut self, key: &str) -> Option<f64> {
        match self.raw(key)? {
            Value::Float(x) => Some(*x),
            Value::Integer(i) => Some(*i as f64),
            other => {
                self.fail(key, format!("expected a number, got {}", other.type_str()));
                None
            }
        }
    }

    fn float(&mut self, key: &str, default: Option<f64>, valid: impl Fn(f64) -> bool, rule: &str) -> f64 {
        let value = match self.float_opt(key) {
            Some(v) => v,
            None if self.has(key) => return f64::NAN,
            None => match default {
                Some(d) => return d,
                None => {
                    self.fail(key, "missing required key");
                    return f64::NAN;
                }
            },
        };
        if !(value.is_finite() && valid(value)) {
            self.fail(key, format!("{rule}, got {value}"));
        }
        value
    }

    fn int(&mut self, key: &str, default: Option<i64>, min: i64) -> i64 {
        match self.raw(key) {
            Some(Value::Integer(i)) => {
                if *i < min {
                    self.fail(key, format!("must be at least {min}, got {i}"));
                }
                *i
            }
            Some(other) => {
                self.fail(key, format!("expected an integer, got {}", other.type_str()));
                min
            }
            None => default.unwrap_or_else(|| {
                self.fail(key, "missing required key");
                min
            }),
        }
    }

    fn string(&mut self, key: &str, default: Option<&str>) -> String {
        match self.raw(key) {
            Some(Value::String(s)) => s.clone(),
            Some(other) => {
                self.fail(key, format!("expected a string, got {}", other.type_str()));
                String::new()
            }
            None => match default {
                Some(d) => d.to_string(),
                None => {
                    self.fail(key, "missing required key");
                    String::new()
                }
            },
        }
    }

    fn boolean(&mut self, key: &str, default: bool) -> bool {
        match self.raw(key) {
            Some(Value::Boolean(b)) => *b,
            Some(other) => {
                self.fail(key, format!("expected true or false, got {}", other.type_str()));
                default
            }
            None => default,
        }
    }

    fn floats(&mut self, key: &str) -> Option<Vec<f64>> {
        let items = match self.raw(key)? {
            Value::Array(items) => items,
            other => {
                self.fail(key, format!("expected an array of numbers, got {}", other.type_str()));
                return None;
            }
        };
        let mut out = Vec::with_capacity(items.len());
        for item in items {
            match item {
                Value::Float(x) if x.is_finite() => out.push(*x),
                Value::Integer(i) => out.push(*i as f64),
                _ => {
                    self.fail(key, "expected an array of finite numbers");
                    return None;
                }
            }
        }
        Some(out)
    }

    fn strings(&mut self, key: &str) -> Option<Vec<String>> {
        match self.raw(key)? {
            Value::String(s) => Some(vec![s.clone()]),
            Value::Array(items) if items.iter().all(Value::is_str) => {
                Some(items.iter().filter_map(|v| v.as_str().map(str::to_string)).collect())
            }
            _ => {
                self.fail(key, "expected a string or an array of strings");
                None
            }
        }
    }

    /// Reports keys that were never read.
    fn finish(mut self) {
        let unknown: Vec<String> = self
            .table
            .keys()
            .filter(|k| !self.used.contains(*k))
            .filter(|k| !(self.prefix.is_empty() && SECTIONS.contains(&k.as_str())))
            .cloned()
            .collect();
        for key in unknown {
            self.fail(&key, "unknown key");
        }
    }
}

fn positive(x: f64) -> bool {
    x > 0.0
}

fn non_negative(x: f64) -> bool {
    x >= 0.0
}

fn build(table: &Table, lines: &BTreeMap<String, usize>, errors: &mut Vec<ConfigError>) -> Option<RunConfig> {
    let mut top = Section::new("", table, lines, errors);
    let engine_name = top.string("engine", None);
    let seed = top.int("seed", Some(0), 0) as u64;
    let out = PathBuf::from(top.string("out", Some("hjks-out")));
    let engine = Engine::from_name(&engine_name);
    if engine.is_none() && top.has("engine") {
        top.fail(
            "engine",
            format!(
                "unknown engine {engine_name:?}; expected one of {}",
                SECTIONS.join(", ")
            ),
        );
    }
    for (key, value) in table {
        if SECTIONS.contains(&key.as_str()) && !value.is_table() {
            top.fail(key, "must be a section");
        }
    }
    top.finish();
    let engine = engine?;
    let empty = Table::new();
    let section = match table.get(engine.name()) {
        Some(Value::Table(t)) => t,
        _ => &empty,
    };
    let mut s = Section::new(engine.name(), section, lines, errors);
    let settings = match engine {
        Engine::Continuous => Settings::Continuous(continuous_settings(&mut s)),
        Engine::Kicked => Settings::Kicked(kicked_settings(&mut s)),
        Engine::Oracle => {
            let system = s.string("system", None);
            let target = match system.as_str() {
                "continuous" => OracleTarget::Continuous(continuous_settings(&mut s)),
                "kicked" => OracleTarget::Kicked(kicked_settings(&mut s)),
                "" => OracleTarget::Continuous(continuous_settings(&mut s)),
                other => {
                    s.fail(
                        "system",
                        format!("expected \"continuous\" or \"kicked\", got {other:?}"),
                    );
                    OracleTarget::Continuous(continuous_settings(&mut s))
                }
            };
            let renorm_interval = s.float("renorm_interval", Some(1.0), positive, "must be positive");
            Settings::Oracle(OracleSettings {
                target,
                renorm_interval,
            })
        }
        Engine::RotorQuantum => Settings::RotorQuantum(quantum_settings(&mut s)),
        Engine::Bench => {
            let presets = s
                .strings("presets")
                .unwrap_or_else(|| crate::bench::PRESETS.iter().map(|p| p.to_string()).collect());
            for p in &presets {
                if !crate::bench::PRESETS.contains(&p.as_str()) {
                    s.fail(
                        "presets",
                        format!(
                            "unknown preset {p:?}; expected one of {}",
                            crate::bench::PRESETS.join(", ")
                        ),
                    );
                }
            }
            Settings::Bench(BenchSettings { presets })
        }
    };
    s.finish();
    Some(RunConfig {
        engine,
        seed,
        out,
        settings,
    })
}

fn initial_condition(s: &mut Section, default_half_width: f64) -> InitialCondition {
    let explicit = s.has("q") || s.has("p");
    if explicit {
        let q = s.floats("q");
        let p = s.floats("p");
        if s.has("energy") {
            s.fail("energy", "give either q and p or energy, not both");
        }
        match (q, p) {
            (Some(q), Some(p)) => {
                if q.len() != p.len() {
                    s.fail("p", format!("has {} entries but q has {}", p.len(), q.len()));
                }
                InitialCondition::Explicit { q, p }
            }
            (None, _) if !s.has("q") => {
                s.fail("q", "missing required key (p is given)");
                InitialCondition::Explicit { q: vec![], p: vec![] }
            }
            (_, None) if !s.has("p") => {
                s.fail("p", "missing required key (q is given)");
                InitialCondition::Explicit { q: vec![], p: vec![] }
            }
            _ => InitialCondition::Explicit { q: vec![], p: vec![] },
        }
    } else if s.has("energy") {
        let energy = s.float("energy", None, |_| true, "must be finite");
        let half_width = s.float("half_width", Some(default_half_width), positive, "must be positive");
        InitialCondition::EnergySurface { energy, half_width }
    } else {
        s.fail("q", "missing initial condition: give q and p, or energy");
        InitialCondition::Explicit { q: vec![], p: vec![] }
    }
}

fn check_dimension(s: &mut Section, initial: &InitialCondition, dim: Option<usize>) {
    if let (InitialCondition::Explicit { q, .. }, Some(dim)) = (initial, dim) {
        if !q.is_empty() && q.len() != dim {
            s.fail(
                "q",
                format!("has {} entries but the model has dimension {dim}", q.len()),
            );
        }
    }
}

fn continuous_settings(s: &mut Section) -> ContinuousSettings {
    let model = s.string("model", None);
    let dim = s.int("dim", Some(1), 1) as usize;
    let param = s.float("param", Some(1.0), |_| true, "must be finite");
    let model_dim = if model.is_empty() {
        None
    } else {
        match continuous_model(&model, dim, param) {
            Ok(m) => Some(m.dim()),
            Err(e) => {
                s.fail("model", e.to_string());
                None
            }
        }
    };
    let initial = initial_condition(s, 2.0);
    check_dimension(s, &initial, model_dim);
    ContinuousSettings {
        model,
        dim,
        param,
        initial,
        t_max: s.float("t_max", None, positive, "must be positive"),
        dt: s.float("dt", Some(1e-3), positive, "must be positive"),
        sample_every: s.float("sample_every", Some(1.0), non_negative, "must be non-negative"),
        switch_threshold: s.float(
            "switch_threshold",
            Some(hjks_core::riccati::DEFAULT_SWITCH_THRESHOLD),
            |x| x > 1.0,
            "must exceed 1",
        ),
        escape_bound: s.float(
            "escape_bound",
            Some(hjks_core::riccati::DEFAULT_ESCAPE_BOUND),
            positive,
            "must be positive",
        ),
    }
}

fn kicked_settings(s: &mut Section) -> KickedSettings {
    let model = s.string("model", None);
    let dim = s.int("dim", Some(1), 1) as usize;
    let param = s.float("param", Some(1.0), |_| true, "must be finite");
    let model_dim = if model.is_empty() {
        None
    } else {
        match kick_function(&model, dim, param) {
            Ok(k) => Some(k.dim()),
            Err(e) => {
                s.fail("model", e.to_string());
                None
            }
        }
    };
    let period = s.float("T", None, positive, "must be positive");
    let initial = initial_condition(s, 2.5);
    check_dimension(s, &initial, model_dim);
    KickedSettings {
        model,
        dim,
        param,
        period,
        steps: s.int("steps", None, 1) as u64,
        initial,
        sample_every: s.int("sample_every", Some(0), 0) as u64,
        escape_bound: s.float("escape_bound", Some(1e6), positive, "must be positive"),
    }
}

fn quantum_settings(s: &mut Section) -> QuantumSettings {
    let grid = s.int("grid", Some(2048), 8) as usize;
    if !grid.is_power_of_two() {
        s.fail("grid", format!("must be a power of two, got {grid}"));
    }
    let initial = match s.string("initial", Some("uniform")).as_str() {
        "uniform" => RotorInitial::Uniform,
        "gaussian" => RotorInitial::Gaussian {
            center: s.float("center", Some(std::f64::consts::PI), |_| true, "must be finite"),
            width: s.float("width", None, positive, "must be positive"),
        },
        "plane-wave" => RotorInitial::PlaneWave {
            m: s.int("m", Some(0), i64::MIN),
        },
        other => {
            s.fail(
                "initial",
                format!("expected \"uniform\", \"gaussian\" or \"plane-wave\", got {other:?}"),
            );
            RotorInitial::Uniform
        }
    };
    let periods = s.int("periods", None, 1) as usize;
    let orbits = match s.floats("q0") {
        Some(q0) => {
            if s.has("orbits") {
                s.fail("orbits", "give either q0 or orbits, not both");
            }
            OrbitStarts::Explicit(q0)
        }
        None => OrbitStarts::Sampled(s.int("orbits", Some(1), 0) as usize),
    };
    let has_orbit =
        !matches!(&orbits, OrbitStarts::Explicit(v) if v.is_empty()) && !matches!(orbits, OrbitStarts::Sampled(0));
    if has_orbit && (periods as f64) < hjks_core::quantum::MIN_WINDOW_PERIODS {
        s.fail(
            "periods",
            format!(
                "orbit averages need at least {} periods, got {periods}",
                hjks_core::quantum::MIN_WINDOW_PERIODS
            ),
        );
    }
    let hybrid = match (s.float_opt("classical_q0"), s.float_opt("classical_p0")) {
        (Some(q), Some(p)) => Some((q, p)),
        (None, None) => None,
        (Some(_), None) => {
            s.fail("classical_p0", "missing (classical_q0 is given)");
            None
        }
        (None, Some(_)) => {
            s.fail("classical_q0", "missing (classical_p0 is given)");
            None
        }
    };
    let ensemble = s.int("ensemble", Some(0), 0) as usize;
    let ensemble_periods = s.int("ensemble_periods", Some(periods as i64), 1) as usize;
    if ensemble_periods > periods {
        s.fail(
            "ensemble_periods",
            format!("exceeds periods ({ensemble_periods} > {periods})"),
        );
    }
    QuantumSettings {
        grid,
        hbar: s.float("hbar", Some(1.0), positive, "must be positive"),
        strength: s.float("K", Some(5.0), |_| true, "must be finite"),
        period: s.float("T", Some(1.0), positive, "must be positive"),
        periods,
        substeps: s.int("substeps", Some(hjks_core::quantum::DEFAULT_SUBSTEPS as i64), 1) as usize,
        tolerance: s.float("tolerance", Some(1e-8), positive, "must be positive"),
        initial,
        orbits,
        hybrid,
        hybrid_tolerance: s.float(
            "hybrid_tolerance",
            Some(hjks_core::quantum::HYBRID_TOLERANCE),
            positive,
            "must be positive",
        ),
        ensemble,
        ensemble_periods,
        ensemble_tolerance: s.float("ensemble_tolerance", Some(1e-6), positive, "must be positive"),
        record: s.boolean("record", false),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "engine = \"continuous\"\n\n[continuous]\nmodel = \"quartic3\"\nenergy = 1.0\nt_max = 10.0\n";

    #[test]
    fn minimal_continuous_config_is_valid() {
        let c = parse_config(MINIMAL).unwrap();
        assert_eq!(c.engine, Engine::Continuous);
        assert_eq!(c.seed, 0);
        let Settings::Continuous(s) = c.settings else {
            panic!("wrong settings");
        };
        assert_eq!(s.model, "quartic3");
        assert_eq!(s.dt, 1e-3);
        assert_eq!(
            s.initial,
            InitialCondition::EnergySurface {
                energy: 1.0,
                half_width: 2.0
            }
        );
    }

    #[test]
    fn zero_dt_is_rejected_by_name_and_line() {
        let text = format!("{MINIMAL}dt = 0\n");
        let e = parse_config(&text).unwrap_err();
        assert!(e.mentions("dt"), "{e}");
        assert_eq!(e.0[0].line, Some(7));
        assert!(e.to_string().contains("line 7: continuous.dt"), "{e}");
    }

    #[test]
    fn kicked_without_period_names_t() {
        let text = "engine = \"kicked\"\n[kicked]\nmodel = \"kicked-quartic\"\nsteps = 10\nenergy = 1.0\n";
        let e = parse_config(text).unwrap_err();
        assert!(e.mentions("T"), "{e}");
    }

    #[test]
    fn all_errors_are_collected() {
        let text =
            "engine = \"kicked\"\nbogus = 1\n[kicked]\nmodel = \"nope\"\nsteps = 0\nenergy = 1.0\ncolor = \"red\"\n";
        let e = parse_config(text).unwrap_err();
        for key in ["bogus", "model", "steps", "T", "color"] {
            assert!(e.mentions(key), "missing {key} in {e}");
        }
        let line = |key: &str| e.0.iter().find(|x| x.key.ends_with(key)).unwrap().line;
        assert_eq!(line("bogus"), Some(2));
        assert_eq!(line("color"), Some(7));
        assert_eq!(line("kicked.T"), None);
    }

    #[test]
    fn syntax_errors_carry_lines() {
        let e = parse_config("engine = \"kicked\"\n[kicked\n").unwrap_err();
        assert_eq!(e.0[0].key, "syntax");
        assert_eq!(e.0[0].line, Some(2));
    }

    #[test]
    fn overrides_take_precedence() {
        let o = Overrides {
            seed: Some(9),
            set: vec!["continuous.t_max=5".into(), "continuous.model=free".into()],
            ..Default::default()
        };
        let c = parse_config_with(MINIMAL, &o).unwrap();
        assert_eq!(c.seed, 9);
        let Settings::Continuous(s) = c.settings else {
            panic!("wrong settings");
        };
        assert_eq!((s.t_max, s.model.as_str()), (5.0, "free"));
    }

    #[test]
    fn engine_override_selects_the_section() {
        let text = "[rotor-quantum]\nperiods = 20\n";
        let o = Overrides {
            engine: Some(Engine::RotorQuantum),
            ..Default::default()
        };
        let c = parse_config_with(text, &o).unwrap();
        let Settings::RotorQuantum(s) = c.settings else {
            panic!("wrong settings");
        };
        assert_eq!((s.grid, s.strength, s.hbar, s.period), (2048, 5.0, 1.0, 1.0));
        assert_eq!(s.orbits, OrbitStarts::Sampled(1));
    }

    #[test]
    fn explicit_state_must_match_model_dimension() {
        let text = "engine = \"continuous\"\n[continuous]\nmodel = \"quartic3\"\nq = [0.1]\np = [0.2]\nt_max = 1.0\n";
        let e = parse_config(text).unwrap_err();
        assert!(e.mentions("q"), "{e}");
    }

    #[test]
    fn bench_defaults_to_every_preset() {
        let c = parse_config("engine = \"bench\"\n").unwrap();
        let Settings::Bench(b) = c.settings else { panic!() };
        assert_eq!(b.presets, crate::bench::PRESETS);
    }

    #[test]
    fn oracle_reads_the_kicked_system() {
        let text = "engine = \"oracle\"\n[oracle]\nsystem = \"kicked\"\nmodel = \"rotor\"\nparam = 5.0\nT = 1.0\nsteps = 100\nq = [0.5]\np = [0.3]\nrenorm_interval = 2\n";
        let c = parse_config(text).unwrap();
        let Settings::Oracle(o) = c.settings else {
            panic!("wrong settings");
        };
        assert!(matches!(o.target, OracleTarget::Kicked(_)));
        assert_eq!(o.renorm_interval, 2.0);
    }
}
