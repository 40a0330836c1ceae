//! Sectioned `key = value` run configuration.
//!
//! Grammar, one item per line:
//!
//! ```text
//! # comment
//! [section]
//! key = value
//! ```
//!
//! Values are TOML literals: numbers (including `inf`), quoted strings,
//! booleans and arrays. Term lists are arrays of `[coefficient, exponent]`
//! pairs. Every problem found in a file is reported, each with its line.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};

use dynbc_core::mesh::Side;
use dynbc_core::stepper::{Scheme, StepperConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct ConfigError {
    /// 1-based line, 0 for whole-file problems.
    pub line: usize,
    pub msg: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.line > 0 {
            write!(f, "line {}: {}", self.line, self.msg)
        } else {
            f.write_str(&self.msg)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConfigErrors(pub Vec<ConfigError>);

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

#[derive(Clone, Debug, PartialEq)]
pub enum MeshConfig {
    Interval { length: f64, elements: usize },
    Annulus { r0: f64, r1: f64, nr: usize, nt: usize },
    Rectangle { lx: f64, ly: f64, nx: usize, ny: usize, side: Side },
    File(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Profile {
    Zero,
    /// `sin(k x)` on a rod when `k` is given, else the discrete lowest mode.
    Eigenmode { k: Option<f64> },
    Bump { center: Vec<f64>, radius: f64 },
    /// Nodal `node,u,v` CSV.
    File(PathBuf),
    NegativeEnergy { s_max: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct InitialConfig {
    pub profile: Profile,
    pub amplitude: f64,
    pub velocity_amplitude: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OutputConfig {
    pub directory: PathBuf,
    pub sample_every: usize,
    pub snapshot_every: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Target {
    Bulk,
    Boundary,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepConfig {
    pub source_exponents: Vec<f64>,
    pub damping_exponents: Vec<f64>,
    pub target: Target,
    pub alpha: f64,
    pub beta: f64,
    pub s_max: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub mesh: MeshConfig,
    /// Space dimension for the classifier; `None` means `max(2, mesh dim)`.
    pub dimension: Option<usize>,
    pub damping_bulk: Vec<(f64, f64)>,
    pub damping_boundary: Vec<(f64, f64)>,
    pub alpha: f64,
    pub beta: f64,
    pub source_bulk: Vec<(f64, f64)>,
    pub source_bulk_constant: f64,
    pub source_boundary: Vec<(f64, f64)>,
    pub source_boundary_constant: f64,
    pub initial: InitialConfig,
    /// Whether the file had an `[initial]` section.
    pub initial_given: bool,
    pub stepper: StepperConfig,
    pub t_end: f64,
    pub output: OutputConfig,
    pub sweep: Option<SweepConfig>,
}

const SECTIONS: &[(&str, &[&str])] = &[
    ("mesh", &["geometry", "length", "elements", "r0", "r1", "nr", "nt", "lx", "ly", "nx", "ny", "gamma1_side", "path"]),
    ("damping", &["bulk", "boundary", "exponent", "coefficient", "alpha", "beta"]),
    ("source", &["bulk", "boundary", "bulk_constant", "boundary_constant"]),
    ("regime", &["dimension"]),
    ("initial", &["profile", "k", "amplitude", "velocity_amplitude", "center", "radius", "path", "s_max"]),
    (
        "time",
        &[
            "dt_init", "dt_min", "dt_max", "t_end", "newton_tol", "newton_max_iters", "growth_cap",
            "truncation_radius", "scheme", "grow_after", "norm_limit",
        ],
    ),
    ("output", &["directory", "sample_every", "snapshot_every"]),
    ("sweep", &["source_exponents", "damping_exponents", "target", "alpha", "beta", "s_max"]),
];

struct Entry {
    line: usize,
    value: toml::Value,
}

struct Section {
    line: usize,
    entries: HashMap<String, Entry>,
}

struct Doc {
    sections: HashMap<String, Section>,
    errors: Vec<ConfigError>,
}

fn strip_comment(line: &str) -> &str {
    let mut in_str = false;
    let mut prev = '\0';
    for (i, c) in line.char_indices() {
        match c {
            '"' if prev != '\\' => in_str = !in_str,
            '#' if !in_str => return &line[..i],
            _ => {}
        }
        prev = c;
    }
    line
}

fn parse_value(text: &str) -> Result<toml::Value, String> {
    let table: toml::Table = format!("v = {text}").parse().map_err(|e: toml::de::Error| e.message().to_string())?;
    table.get("v").cloned().ok_or_else(|| "missing value".to_string())
}

fn lex(text: &str) -> Doc {
    let mut doc = Doc { sections: HashMap::new(), errors: Vec::new() };
    let mut current: Option<String> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = strip_comment(raw).trim();
        if content.is_empty() {
            continue;
        }
        let mut err = |msg: String| doc.errors.push(ConfigError { line, msg });
        if content.starts_with('[') {
            current = None;
            let Some(name) = content.strip_prefix('[').and_then(|s| s.strip_suffix(']')).map(str::trim) else {
                err(format!("malformed section header '{content}'"));
                continue;
            };
            if !SECTIONS.iter().any(|(s, _)| *s == name) {
                err(format!("unknown section [{name}]"));
            } else if let Some(prev) = doc.sections.get(name) {
                err(format!("duplicate section [{name}] (first defined on line {})", prev.line));
            } else {
                doc.sections.insert(name.to_string(), Section { line, entries: HashMap::new() });
                current = Some(name.to_string());
            }
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            err(format!("expected 'key = value' or '[section]', got '{content}'"));
            continue;
        };
        let key = key.trim();
        let Some(section) = current.as_deref() else {
            err(format!("key '{key}' outside of a valid section"));
            continue;
        };
        let allowed = SECTIONS.iter().find(|(s, _)| *s == section).map(|p| p.1).unwrap_or(&[]);
        if !allowed.contains(&key) {
            err(format!("unknown key '{key}' in [{section}]"));
            continue;
        }
        let value = match parse_value(value.trim()) {
            Ok(v) => v,
            Err(e) => {
                err(format!("invalid value for '{key}': {e}"));
                continue;
            }
        };
        let sec = doc.sections.get_mut(section).expect("current section exists");
        if let Some(prev) = sec.entries.get(key) {
            let first = prev.line;
            err(format!("duplicate key '{key}' (first set on line {first})"));
            continue;
        }
        sec.entries.insert(key.to_string(), Entry { line, value });
    }
    doc
}

fn as_f64(v: &toml::Value) -> Option<f64> {
    match v {
        toml::Value::Float(x) => Some(*x),
        toml::Value::Integer(i) => Some(*i as f64),
        _ => None,
    }
}

impl Doc {
    fn has(&self, sec: &str) -> bool {
        self.sections.contains_key(sec)
    }

    fn entry(&self, sec: &str, key: &str) -> Option<&Entry> {
        self.sections.get(sec).and_then(|s| s.entries.get(key))
    }

    fn section_line(&self, sec: &str) -> usize {
        self.sections.get(sec).map_or(0, |s| s.line)
    }

    fn push(&mut self, line: usize, msg: String) {
        self.errors.push(ConfigError { line, msg });
    }

    fn f64_opt(&mut self, sec: &str, key: &str, check: impl Fn(f64) -> Option<String>) -> Option<f64> {
        let (line, v) = {
            let e = self.entry(sec, key)?;
            (e.line, as_f64(&e.value))
        };
        match v {
            Some(x) => match check(x) {
                Some(msg) => {
                    self.push(line, format!("{key}: {msg}"));
                    None
                }
                None => Some(x),
            },
            None => {
                self.push(line, format!("{key} must be a number"));
                None
            }
        }
    }

    fn f64_or(&mut self, sec: &str, key: &str, default: f64, check: impl Fn(f64) -> Option<String>) -> f64 {
        self.f64_opt(sec, key, check).unwrap_or(default)
    }

    fn usize_opt(&mut self, sec: &str, key: &str, min: usize) -> Option<usize> {
        let (line, v) = {
            let e = self.entry(sec, key)?;
            (e.line, e.value.as_integer())
        };
        match v {
            Some(i) if i >= min as i64 => Some(i as usize),
            Some(i) => {
                self.push(line, format!("{key} must be >= {min}, got {i}"));
                None
            }
            None => {
                self.push(line, format!("{key} must be an integer"));
                None
            }
        }
    }

    fn string_opt(&mut self, sec: &str, key: &str) -> Option<String> {
        let (line, v) = {
            let e = self.entry(sec, key)?;
            (e.line, e.value.as_str().map(str::to_string))
        };
        if v.is_none() {
            self.push(line, format!("{key} must be a quoted string"));
        }
        v
    }

    fn require<T>(&mut self, sec: &str, key: &str, v: Option<T>, what: &str) -> Option<T> {
        if v.is_none() && self.entry(sec, key).is_none() {
            let line = self.section_line(sec);
            self.push(line, format!("[{sec}] requires '{key}' ({what})"));
        }
        v
    }

    fn f64_list(&mut self, sec: &str, key: &str, check: impl Fn(f64) -> Option<String>) -> Option<Vec<f64>> {
        let (line, arr) = {
            let e = self.entry(sec, key)?;
            (e.line, e.value.as_array().cloned())
        };
        let Some(arr) = arr else {
            self.push(line, format!("{key} must be an array of numbers"));
            return None;
        };
        let mut out = Vec::new();
        for item in &arr {
            match as_f64(item) {
                Some(x) => {
                    if let Some(msg) = check(x) {
                        self.push(line, format!("{key}: {msg}"));
                    }
                    out.push(x);
                }
                None => {
                    self.push(line, format!("{key} must be an array of numbers"));
                    return None;
                }
            }
        }
        Some(out)
    }

    /// `[[coefficient, exponent], ...]`
    fn terms(&mut self, sec: &str, key: &str, check: impl Fn(f64, f64) -> Option<String>) -> Option<Vec<(f64, f64)>> {
        let (line, arr) = {
            let e = self.entry(sec, key)?;
            (e.line, e.value.as_array().cloned())
        };
        let shape_err = format!("{key} must be an array of [coefficient, exponent] pairs");
        let Some(arr) = arr else {
            self.push(line, shape_err);
            return None;
        };
        let mut out = Vec::new();
        for item in &arr {
            let pair = item.as_array().filter(|p| p.len() == 2).and_then(|p| Some((as_f64(&p[0])?, as_f64(&p[1])?)));
            match pair {
                Some((c, e)) => {
                    if let Some(msg) = check(c, e) {
                        self.push(line, format!("{key}: {msg}"));
                    }
                    out.push((c, e));
                }
                None => {
                    self.push(line, shape_err);
                    return None;
                }
            }
        }
        Some(out)
    }

    fn reject_keys(&mut self, sec: &str, keys: &[&str], context: &str) {
        for key in keys {
            if let Some(e) = self.entry(sec, key) {
                let line = e.line;
                self.push(line, format!("key '{key}' does not apply to {context}"));
            }
        }
    }

    fn path(&mut self, sec: &str, key: &str, base: &Path) -> Option<PathBuf> {
        let line = self.entry(sec, key)?.line;
        let s = self.string_opt(sec, key)?;
        let p = base.join(s);
        if !p.exists() {
            self.push(line, format!("{key}: file '{}' does not exist", p.display()));
            return None;
        }
        Some(p)
    }
}

fn positive(x: f64) -> Option<String> {
    (!(x > 0.0 && x.is_finite())).then(|| format!("must be a positive number, got {x}"))
}

fn nonnegative(x: f64) -> Option<String> {
    (!(x >= 0.0 && x.is_finite())).then(|| format!("must be >= 0, got {x}"))
}

fn any_finite(x: f64) -> Option<String> {
    (!x.is_finite()).then(|| format!("must be finite, got {x}"))
}

fn damping_term(c: f64, e: f64) -> Option<String> {
    if !(e > 1.0 && e.is_finite()) {
        Some(format!("exponent must be > 1, got {e}"))
    } else if !(c >= 0.0 && c.is_finite()) {
        Some(format!("coefficient must be >= 0, got {c}"))
    } else {
        None
    }
}

fn source_term(c: f64, e: f64) -> Option<String> {
    if !(e >= 2.0 && e.is_finite()) {
        Some(format!("exponent must be >= 2, got {e}"))
    } else if !c.is_finite() {
        Some(format!("coefficient must be finite, got {c}"))
    } else {
        None
    }
}

fn parse_mesh(doc: &mut Doc, base: &Path) -> Option<MeshConfig> {
    let s = "mesh";
    let geometry = doc.string_opt(s, "geometry");
    let geometry = doc.require(s, "geometry", geometry, "interval, annulus, rectangle or file")?;
    let interval_keys = ["length", "elements"];
    let annulus_keys = ["r0", "r1", "nr", "nt"];
    let rect_keys = ["lx", "ly", "nx", "ny", "gamma1_side"];
    let context = format!("geometry \"{geometry}\"");
    match geometry.as_str() {
        "interval" => {
            doc.reject_keys(s, &annulus_keys, &context);
            doc.reject_keys(s, &rect_keys, &context);
            doc.reject_keys(s, &["path"], &context);
            let length = doc.f64_or(s, "length", 1.0, positive);
            let elements = doc.usize_opt(s, "elements", 2);
            let elements = doc.require(s, "elements", elements, "number of elements")?;
            Some(MeshConfig::Interval { length, elements })
        }
        "annulus" => {
            doc.reject_keys(s, &interval_keys, &context);
            doc.reject_keys(s, &rect_keys, &context);
            doc.reject_keys(s, &["path"], &context);
            let r0 = doc.f64_or(s, "r0", 0.5, positive);
            let r1 = doc.f64_or(s, "r1", 1.0, positive);
            if r0 >= r1 {
                let line = doc.section_line(s);
                doc.push(line, format!("annulus needs r0 < r1, got {r0} and {r1}"));
            }
            let nr = doc.usize_opt(s, "nr", 2);
            let nt = doc.usize_opt(s, "nt", 8);
            let nr = doc.require(s, "nr", nr, "radial subdivisions");
            let nt = doc.require(s, "nt", nt, "angular subdivisions");
            Some(MeshConfig::Annulus { r0, r1, nr: nr?, nt: nt? })
        }
        "rectangle" => {
            doc.reject_keys(s, &interval_keys, &context);
            doc.reject_keys(s, &annulus_keys, &context);
            doc.reject_keys(s, &["path"], &context);
            let lx = doc.f64_or(s, "lx", 1.0, positive);
            let ly = doc.f64_or(s, "ly", 1.0, positive);
            let nx = doc.usize_opt(s, "nx", 2);
            let ny = doc.usize_opt(s, "ny", 2);
            let nx = doc.require(s, "nx", nx, "subdivisions along x");
            let ny = doc.require(s, "ny", ny, "subdivisions along y");
            let side = match doc.string_opt(s, "gamma1_side") {
                Some(text) => match text.parse::<Side>() {
                    Ok(side) => Some(side),
                    Err(e) => {
                        let line = doc.entry(s, "gamma1_side").map_or(0, |e| e.line);
                        doc.push(line, e.to_string());
                        None
                    }
                },
                None => Some(Side::Top),
            };
            Some(MeshConfig::Rectangle { lx, ly, nx: nx?, ny: ny?, side: side? })
        }
        "file" => {
            doc.reject_keys(s, &interval_keys, &context);
            doc.reject_keys(s, &annulus_keys, &context);
            doc.reject_keys(s, &rect_keys, &context);
            let p = doc.path(s, "path", base);
            let p = doc.require(s, "path", p, "mesh CSV file")?;
            Some(MeshConfig::File(p))
        }
        other => {
            let line = doc.entry(s, "geometry").map_or(0, |e| e.line);
            doc.push(line, format!("unknown geometry \"{other}\" (expected interval, annulus, rectangle or file)"));
            None
        }
    }
}

fn parse_initial(doc: &mut Doc, base: &Path) -> Option<InitialConfig> {
    let s = "initial";
    let profile_name = doc.string_opt(s, "profile").unwrap_or_else(|| "zero".into());
    let amplitude = doc.f64_or(s, "amplitude", 1.0, any_finite);
    let velocity_amplitude = doc.f64_or(s, "velocity_amplitude", 0.0, any_finite);
    let context = format!("profile \"{profile_name}\"");
    let all = ["k", "center", "radius", "path", "s_max"];
    let keep = |used: &[&str]| all.iter().copied().filter(|k| !used.contains(k)).collect::<Vec<_>>();
    let profile = match profile_name.as_str() {
        "zero" => {
            doc.reject_keys(s, &keep(&[]), &context);
            Profile::Zero
        }
        "eigenmode" => {
            doc.reject_keys(s, &keep(&["k"]), &context);
            Profile::Eigenmode { k: doc.f64_opt(s, "k", positive) }
        }
        "bump" => {
            doc.reject_keys(s, &keep(&["center", "radius"]), &context);
            let center = doc.f64_list(s, "center", any_finite);
            let center = doc.require(s, "center", center, "bump center coordinates");
            let radius = doc.f64_opt(s, "radius", positive);
            let radius = doc.require(s, "radius", radius, "bump radius");
            Profile::Bump { center: center?, radius: radius? }
        }
        "file" => {
            doc.reject_keys(s, &keep(&["path"]), &context);
            doc.reject_keys(s, &["amplitude", "velocity_amplitude"], &context);
            let p = doc.path(s, "path", base);
            Profile::File(doc.require(s, "path", p, "nodal CSV with node,u,v columns")?)
        }
        "negative_energy" => {
            doc.reject_keys(s, &keep(&["s_max"]), &context);
            doc.reject_keys(s, &["amplitude", "velocity_amplitude"], &context);
            Profile::NegativeEnergy { s_max: doc.f64_or(s, "s_max", 1e6, positive) }
        }
        other => {
            let line = doc.entry(s, "profile").map_or(0, |e| e.line);
            doc.push(line, format!("unknown profile \"{other}\" (expected zero, eigenmode, bump, file or negative_energy)"));
            return None;
        }
    };
    Some(InitialConfig { profile, amplitude, velocity_amplitude })
}

fn parse_time(doc: &mut Doc) -> (StepperConfig, Option<f64>) {
    let s = "time";
    let d = StepperConfig::default();
    let t_end = doc.f64_opt(s, "t_end", positive);
    let t_end = doc.require(s, "t_end", t_end, "final time");
    let dt_init = doc.f64_or(s, "dt_init", d.dt_init, positive);
    let cfg = StepperConfig {
        dt_init,
        dt_min: doc.f64_or(s, "dt_min", d.dt_min.min(dt_init), positive),
        dt_max: doc.f64_or(s, "dt_max", d.dt_max.max(dt_init), positive),
        newton_tol: doc.f64_or(s, "newton_tol", d.newton_tol, positive),
        newton_max_iters: doc.usize_opt(s, "newton_max_iters", 1).unwrap_or(d.newton_max_iters),
        growth_cap: doc.f64_or(s, "growth_cap", d.growth_cap, |x| (!(x > 1.0)).then(|| format!("must be > 1, got {x}"))),
        truncation_radius: doc
            .f64_opt(s, "truncation_radius", |x| (!(x > 0.0)).then(|| format!("must be > 0 or inf, got {x}")))
            .filter(|r| r.is_finite()),
        scheme: match doc.string_opt(s, "scheme") {
            Some(text) => match text.parse::<Scheme>() {
                Ok(sch) => sch,
                Err(e) => {
                    let line = doc.entry(s, "scheme").map_or(0, |e| e.line);
                    doc.push(line, e.to_string());
                    d.scheme
                }
            },
            None => d.scheme,
        },
        grow_after: doc.usize_opt(s, "grow_after", 1).unwrap_or(d.grow_after),
        norm_limit: doc.f64_or(s, "norm_limit", d.norm_limit, positive),
    };
    if let Err(e) = cfg.validate() {
        let line = doc.section_line(s);
        doc.push(line, e.to_string());
    }
    (cfg, t_end)
}

/// Parses configuration text; relative paths resolve against `base`.
pub fn parse_config_str(text: &str, base: &Path) -> Result<RunConfig, ConfigErrors> {
    let mut doc = lex(text);
    for required in ["mesh", "time"] {
        if !doc.has(required) {
            doc.push(0, format!("missing section [{required}]"));
        }
    }
    let mesh = if doc.has("mesh") { parse_mesh(&mut doc, base) } else { None };
    let dimension = doc.usize_opt("regime", "dimension", 2);

    let d = "damping";
    let shorthand_exp = doc.f64_opt(d, "exponent", |e| damping_term(1.0, e));
    let shorthand_coef = doc.f64_or(d, "coefficient", 1.0, nonnegative);
    if shorthand_exp.is_none() {
        if let Some(e) = doc.entry(d, "coefficient") {
            let line = e.line;
            doc.push(line, "coefficient needs exponent".into());
        }
    }
    let shorthand: Vec<(f64, f64)> = shorthand_exp.map(|e| vec![(shorthand_coef, e)]).unwrap_or_default();
    if shorthand_exp.is_some() {
        doc.reject_keys(d, &["bulk", "boundary"], "the exponent shorthand");
    }
    let damping_bulk = doc.terms(d, "bulk", damping_term).unwrap_or_else(|| shorthand.clone());
    let damping_boundary = doc.terms(d, "boundary", damping_term).unwrap_or_else(|| shorthand.clone());
    let alpha = doc.f64_or(d, "alpha", 1.0, nonnegative);
    let beta = doc.f64_or(d, "beta", 1.0, nonnegative);

    let s = "source";
    let source_bulk = doc.terms(s, "bulk", source_term).unwrap_or_default();
    let source_boundary = doc.terms(s, "boundary", source_term).unwrap_or_default();
    let source_bulk_constant = doc.f64_or(s, "bulk_constant", 0.0, any_finite);
    let source_boundary_constant = doc.f64_or(s, "boundary_constant", 0.0, any_finite);

    let initial_given = doc.has("initial");
    let initial = parse_initial(&mut doc, base);
    let (stepper, t_end) = parse_time(&mut doc);

    let o = "output";
    let directory = doc.string_opt(o, "directory").map_or_else(|| PathBuf::from("out"), |p| base.join(p));
    let sample_every = doc.usize_opt(o, "sample_every", 1).unwrap_or(1);
    let snapshot_every = doc.usize_opt(o, "snapshot_every", 0).filter(|&k| k > 0);

    let sweep = if doc.has("sweep") {
        let w = "sweep";
        let src = doc.f64_list(w, "source_exponents", |e| (!(e >= 2.0)).then(|| format!("exponent must be >= 2, got {e}")));
        let src = doc.require(w, "source_exponents", src, "source exponent grid");
        let damp = doc.f64_list(w, "damping_exponents", |e| (!(e > 1.0)).then(|| format!("exponent must be > 1, got {e}")));
        let damp = doc.require(w, "damping_exponents", damp, "damping exponent grid");
        let target = match doc.string_opt(w, "target").as_deref() {
            None | Some("boundary") => Some(Target::Boundary),
            Some("bulk") => Some(Target::Bulk),
            Some(other) => {
                let line = doc.entry(w, "target").map_or(0, |e| e.line);
                doc.push(line, format!("unknown target \"{other}\" (expected bulk or boundary)"));
                None
            }
        };
        let alpha = doc.f64_or(w, "alpha", 1.0, nonnegative);
        let beta = doc.f64_or(w, "beta", 1.0, nonnegative);
        let s_max = doc.f64_or(w, "s_max", 1e6, positive);
        match (src, damp, target) {
            (Some(source_exponents), Some(damping_exponents), Some(target)) => Some(SweepConfig {
                source_exponents,
                damping_exponents,
                target,
                alpha,
                beta,
                s_max,
            }),
            _ => None,
        }
    } else {
        None
    };

    if !doc.errors.is_empty() {
        doc.errors.sort_by_key(|e| e.line);
        return Err(ConfigErrors(doc.errors));
    }
    Ok(RunConfig {
        mesh: mesh.expect("mesh parsed without errors"),
        dimension,
        damping_bulk,
        damping_boundary,
        alpha,
        beta,
        source_bulk,
        source_bulk_constant,
        source_boundary,
        source_boundary_constant,
        initial: initial.expect("initial parsed without errors"),
        initial_given,
        stepper,
        t_end: t_end.expect("t_end parsed without errors"),
        output: OutputConfig { directory, sample_every, snapshot_every },
        sweep,
    })
}

/// Reads and parses a configuration file.
pub fn parse_config(path: &Path) -> Result<RunConfig, ConfigErrors> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        ConfigErrors(vec![ConfigError { line: 0, msg: format!("cannot read '{}': {e}", path.display()) }])
    })?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    parse_config_str(&text, base)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<RunConfig, ConfigErrors> {
        parse_config_str(text, Path::new("."))
    }

    const MINIMAL: &str = "[mesh]\ngeometry = \"interval\"\nelements = 10\n\n[time]\nt_end = 1.0\n";

    #[test]
    fn minimal_file_gets_defaults() {
        let cfg = parse(MINIMAL).unwrap();
        assert_eq!(cfg.mesh, MeshConfig::Interval { length: 1.0, elements: 10 });
        assert!(cfg.damping_bulk.is_empty() && cfg.source_boundary.is_empty());
        assert_eq!(cfg.initial.profile, Profile::Zero);
        assert!(!cfg.initial_given);
        assert_eq!(cfg.stepper.newton_tol, 1e-10);
        assert_eq!(cfg.stepper.newton_max_iters, 50);
        assert_eq!(cfg.stepper.growth_cap, 10.0);
        assert_eq!(cfg.stepper.truncation_radius, None);
        assert_eq!(cfg.output.sample_every, 1);
        assert_eq!(cfg.dimension, None);
    }

    #[test]
    fn damping_exponent_range() {
        let text = format!("{MINIMAL}[damping]\nexponent = 0.5\n");
        let err = parse(&text).unwrap_err();
        assert_eq!(err.0.len(), 1);
        assert_eq!(err.0[0].line, 8);
        assert!(err.0[0].msg.contains("exponent must be > 1"), "{err}");
        let text = format!("{MINIMAL}[damping]\nbulk = [[1.0, 0.5]]\n");
        assert!(parse(&text).unwrap_err().to_string().contains("exponent must be > 1"));
    }

    #[test]
    fn duplicate_section_and_unknown_key_all_reported() {
        let text = "[mesh]\ngeometry = \"interval\"\nelements = 4\nfoo = 1\n[time]\nt_end = 1\n[mesh]\nelements = 5\n[bogus]\n";
        let err = parse(text).unwrap_err();
        let lines: Vec<usize> = err.0.iter().map(|e| e.line).collect();
        assert_eq!(lines, vec![4, 7, 8, 9], "{err}");
        assert!(err.to_string().contains("duplicate section [mesh]"));
        assert!(err.to_string().contains("unknown key 'foo'"));
    }

    #[test]
    fn missing_sections() {
        let err = parse("[damping]\nalpha = 1\n").unwrap_err();
        let text = err.to_string();
        assert!(text.contains("missing section [mesh]") && text.contains("missing section [time]"));
    }

    #[test]
    fn full_file() {
        let text = r#"
# blow-up scenario
[mesh]
geometry = "annulus"   # inner circle pinched
r0 = 0.5
r1 = 1.0
nr = 4
nt = 32

[damping]
bulk = [[1.0, 2.0]]
boundary = [[1.0, 2.0]]

[source]
boundary = [[1.0, 4.0]]

[regime]
dimension = 2

[initial]
profile = "negative_energy"
s_max = 1e5

[time]
t_end = 20
dt_init = 1e-3
truncation_radius = inf
scheme = "backward_euler"

[output]
sample_every = 5
snapshot_every = 0

[sweep]
source_exponents = [2.5, 3, 4]
damping_exponents = [2, 3, 5]
"#;
        let cfg = parse(text).unwrap();
        assert_eq!(cfg.mesh, MeshConfig::Annulus { r0: 0.5, r1: 1.0, nr: 4, nt: 32 });
        assert_eq!(cfg.source_boundary, vec![(1.0, 4.0)]);
        assert_eq!(cfg.initial.profile, Profile::NegativeEnergy { s_max: 1e5 });
        assert_eq!(cfg.stepper.scheme, Scheme::BackwardEuler);
        assert_eq!(cfg.stepper.truncation_radius, None);
        assert_eq!(cfg.output.snapshot_every, None);
        let sw = cfg.sweep.unwrap();
        assert_eq!(sw.source_exponents.len() * sw.damping_exponents.len(), 9);
        assert_eq!(sw.target, Target::Boundary);
    }

    #[test]
    fn geometry_specific_keys() {
        let text = "[mesh]\ngeometry = \"interval\"\nelements = 4\nnr = 3\n[time]\nt_end = 1\n";
        let err = parse(text).unwrap_err();
        assert_eq!(err.0[0].line, 4);
        let text = "[mesh]\ngeometry = \"file\"\npath = \"/definitely/not/here.csv\"\n[time]\nt_end = 1\n";
        assert!(parse(text).unwrap_err().to_string().contains("does not exist"));
    }

    #[test]
    fn bad_values() {
        let text = "[mesh]\ngeometry = \"interval\"\nelements = 1\n[time]\nt_end = -1\ndt_min = 1\nscheme = \"rk4\"\nwat\n";
        let err = parse(text).unwrap_err();
        let s = err.to_string();
        assert!(s.contains("line 3: elements must be >= 2"), "{s}");
        assert!(s.contains("line 5: t_end"), "{s}");
        assert!(s.contains("unknown scheme"), "{s}");
        assert!(s.contains("line 8: expected 'key = value'"), "{s}");
    }

    #[test]
    fn comment_inside_string_is_kept() {
        let text = "[mesh]\ngeometry = \"file\"\npath = \"a#b.csv\"\n[time]\nt_end = 1\n";
        let err = parse(text).unwrap_err();
        assert!(err.to_string().contains("a#b.csv"));
    }
}
