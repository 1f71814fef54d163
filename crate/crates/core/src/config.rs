//! Run configuration: a `key = value` text file plus command-line overrides.
//!
//! Rules:
//! - one `key = value` per line, `#` starts a comment, blank lines are ignored;
//! - `uniform density=<v>` is accepted as a synonym for `density = <v>`;
//! - every key may appear once per file; unknown keys are rejected;
//! - overrides from the command line replace file values (flags win, and a
//!   later flag wins over an earlier one); setting `trace` clears `synth`
//!   and the other way round;
//! - keys missing from both get the value in [`KEYS`]; keys without a
//!   default are required.
//!
//! [`RunConfig::to_text`] writes every set key back in table order, and
//! loading that text again yields the same configuration.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::churn::{load_trace, synth_trace, AvailabilityTrace};
use crate::master::MasterConfig;
use crate::radtrans::{read_f64_array, Grid, GridError, PhysicsParams};

/// One entry of the defaults table.
#[derive(Debug, Clone, Copy)]
pub struct KeyInfo {
    pub name: &'static str,
    /// `None` marks a required key; `Some("")` an optional key that is
    /// unset by default.
    pub default: Option<&'static str>,
    pub help: &'static str,
}

const fn key(name: &'static str, default: Option<&'static str>, help: &'static str) -> KeyInfo {
    KeyInfo { name, default, help }
}

/// The defaults table, in serialization order.
pub const KEYS: &[KeyInfo] = &[
    key("app", Some("stromgren"), "application: stromgren or uniform"),
    key("n", None, "cells per grid axis"),
    key("dx", Some("1"), "cell edge length"),
    key("source", Some("center"), "source position x,y,z or `center`"),
    key("density", Some(""), "uniform hydrogen density (or `uniform density=<v>`)"),
    key("density_file", Some(""), "little-endian binary64 density array, n^3 values"),
    key("Q", None, "source ionizing photon rate"),
    key("sigma", None, "photoionization cross-section"),
    key("alpha", None, "recombination coefficient"),
    key("eps_cut", Some("0.000001"), "ray cutoff as a fraction of a base ray's photons"),
    key("f_split", Some("1"), "footprint factor of the split test"),
    key("base_level", Some("1"), "cube-map level of the base rays"),
    key("tol", Some("0.0001"), "convergence tolerance on the largest neutral-fraction change"),
    key("max_epochs", Some("100"), "iteration cap"),
    key("tasks", Some("64"), "uniform app: number of tasks"),
    key("task_cost_s", Some("1"), "virtual seconds per task in simulation"),
    key("min_workers", Some("1"), "workers required before dispatch starts"),
    key("heartbeat_s", Some("1"), "heartbeat interval H"),
    key("death_multiplier", Some("3"), "death timeout T = multiplier * H"),
    key("max_attempts", Some("unlimited"), "abort when a task is attempted more often"),
    key("stall_timeout_s", Some("3600"), "abort after this long without usable workers"),
    key("listen", Some("127.0.0.1:7477"), "master listen endpoint"),
    key("latency_s", Some("0"), "simulated one-way message latency"),
    key("trace", Some(""), "availability trace CSV for simulate"),
    key("synth", Some(""), "synthetic trace n=..,spread=..,uptime=..,seed=.."),
    key("output_grid", Some(""), "binary64 neutral-fraction output"),
    key("output_csv", Some(""), "i,j,k,x CSV output"),
    key("report", Some(""), "report output"),
];

/// Where a value came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    Line(usize),
    Flag,
    Default,
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Origin::Line(n) => write!(f, "line {n}"),
            Origin::Flag => f.write_str("command line"),
            Origin::Default => f.write_str("defaults"),
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{origin}: expected `key = value`, got `{text}`")]
    Syntax { origin: Origin, text: String },
    #[error("{origin}: unknown key `{key}`")]
    Unknown { origin: Origin, key: String },
    #[error("{origin}: duplicate key `{key}` (first set on {first})")]
    Duplicate { origin: Origin, key: String, first: Origin },
    #[error("{origin}: `{key}` expects {expected}, got `{value}`")]
    Type {
        origin: Origin,
        key: String,
        expected: &'static str,
        value: String,
    },
    #[error("missing required key `{key}`")]
    Missing { key: String },
    #[error("{origin}: `{key}`: {msg}")]
    Invalid { origin: Origin, key: String, msg: String },
    #[error("invalid grid: {0}")]
    Grid(#[from] GridError),
}

impl ConfigError {
    /// Name of the offending key, if the error is about one.
    pub fn key(&self) -> Option<&str> {
        match self {
            ConfigError::Unknown { key, .. }
            | ConfigError::Duplicate { key, .. }
            | ConfigError::Type { key, .. }
            | ConfigError::Missing { key }
            | ConfigError::Invalid { key, .. } => Some(key),
            _ => None,
        }
    }
}

fn lookup(name: &str) -> Option<&'static KeyInfo> {
    KEYS.iter().find(|k| k.name == name)
}

/// Raw key/value pairs with their origins, before typing.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawConfig {
    values: BTreeMap<&'static str, (String, Origin)>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut raw = RawConfig::default();
        for (i, line) in text.lines().enumerate() {
            let origin = Origin::Line(i + 1);
            let content = line.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (k, v) = match content.strip_prefix("uniform ") {
                Some(rest) => match rest.trim().split_once('=') {
                    Some((k, v)) if k.trim() == "density" => ("density", v),
                    _ => {
                        return Err(ConfigError::Syntax {
                            origin,
                            text: content.to_string(),
                        })
                    }
                },
                None => content.split_once('=').ok_or_else(|| ConfigError::Syntax {
                    origin,
                    text: content.to_string(),
                })?,
            };
            let (k, v) = (k.trim(), v.trim());
            let info = lookup(k).ok_or_else(|| ConfigError::Unknown {
                origin,
                key: k.to_string(),
            })?;
            if let Some((_, first)) = raw.values.get(info.name) {
                return Err(ConfigError::Duplicate {
                    origin,
                    key: k.to_string(),
                    first: *first,
                });
            }
            raw.values.insert(info.name, (v.to_string(), origin));
        }
        Ok(raw)
    }

    /// Applies a `key=value` override from the command line.
    pub fn set(&mut self, assignment: &str) -> Result<(), ConfigError> {
        let (k, v) = assignment.split_once('=').ok_or_else(|| ConfigError::Syntax {
            origin: Origin::Flag,
            text: assignment.to_string(),
        })?;
        let info = lookup(k.trim()).ok_or_else(|| ConfigError::Unknown {
            origin: Origin::Flag,
            key: k.trim().to_string(),
        })?;
        // trace and synth are two spellings of one setting
        match info.name {
            "trace" => self.values.remove("synth"),
            "synth" => self.values.remove("trace"),
            _ => None,
        };
        self.values.insert(info.name, (v.trim().to_string(), Origin::Flag));
        Ok(())
    }

    fn get(&self, info: &KeyInfo) -> Result<Option<(&str, Origin)>, ConfigError> {
        match self.values.get(info.name) {
            Some((v, o)) => Ok(Some((v.as_str(), *o))),
            None => match info.default {
                None => Err(ConfigError::Missing {
                    key: info.name.to_string(),
                }),
                Some("") => Ok(None),
                Some(d) => Ok(Some((d, Origin::Default))),
            },
        }
    }
}

fn typed<T: FromStr>(name: &str, value: &str, origin: Origin, expected: &'static str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::Type {
        origin,
        key: name.to_string(),
        expected,
        value: value.to_string(),
    })
}

fn invalid(name: &str, origin: Origin, msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        origin,
        key: name.to_string(),
        msg: msg.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AppKind {
    Stromgren,
    Uniform,
}

impl FromStr for AppKind {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "stromgren" => Ok(AppKind::Stromgren),
            "uniform" => Ok(AppKind::Uniform),
            _ => Err(()),
        }
    }
}

impl fmt::Display for AppKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AppKind::Stromgren => "stromgren",
            AppKind::Uniform => "uniform",
        })
    }
}

/// Parameters of a generated churn trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSpec {
    pub n_workers: usize,
    pub spread_s: f64,
    pub mean_uptime_s: f64,
    pub seed: u64,
}

impl SynthSpec {
    pub fn trace(&self) -> AvailabilityTrace {
        synth_trace(self.n_workers, self.spread_s, self.mean_uptime_s, self.seed)
    }
}

impl FromStr for SynthSpec {
    type Err = String;

    /// Parses `n=..,spread=..,uptime=..,seed=..`; `spread`, `uptime` and
    /// `seed` default to 0.
    fn from_str(s: &str) -> Result<Self, String> {
        let mut spec = SynthSpec {
            n_workers: 0,
            spread_s: 0.0,
            mean_uptime_s: 0.0,
            seed: 0,
        };
        let mut have_n = false;
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| format!("expected name=value, got `{part}`"))?;
            let bad = |what: &str| format!("{k}: expected {what}, got `{v}`");
            match k.trim() {
                "n" => {
                    spec.n_workers = v.trim().parse().map_err(|_| bad("a count"))?;
                    have_n = true;
                }
                "spread" => spec.spread_s = v.trim().parse().map_err(|_| bad("seconds"))?,
                "uptime" => spec.mean_uptime_s = v.trim().parse().map_err(|_| bad("seconds"))?,
                "seed" => spec.seed = v.trim().parse().map_err(|_| bad("an integer"))?,
                other => return Err(format!("unknown synth parameter `{other}`")),
            }
        }
        if !have_n {
            return Err("synth needs n=<workers>".into());
        }
        if !(spec.spread_s >= 0.0 && spec.spread_s.is_finite() && spec.mean_uptime_s >= 0.0 && spec.mean_uptime_s.is_finite()) {
            return Err("spread and uptime must be non-negative".into());
        }
        Ok(spec)
    }
}

impl fmt::Display for SynthSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "n={},spread={},uptime={},seed={}",
            self.n_workers, self.spread_s, self.mean_uptime_s, self.seed
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DensitySource {
    Uniform(f64),
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub enum TraceSource {
    File(PathBuf),
    Synth(SynthSpec),
}

/// Typed, validated configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub app: AppKind,
    pub n: usize,
    pub dx: f64,
    /// `None` places the source at the grid center.
    pub source: Option<[f64; 3]>,
    pub density: DensitySource,
    pub physics: PhysicsParams<f64>,
    pub tasks: u64,
    pub task_cost_s: f64,
    pub master: MasterConfig,
    pub listen: String,
    pub latency_s: f64,
    pub trace: Option<TraceSource>,
    pub output_grid: Option<PathBuf>,
    pub output_csv: Option<PathBuf>,
    pub report: Option<PathBuf>,
    /// Directory that relative input paths are resolved against.
    pub base_dir: PathBuf,
}

fn float(raw: &RawConfig, name: &'static str) -> Result<Option<(f64, Origin)>, ConfigError> {
    let info = lookup(name).expect("known key");
    raw.get(info)?
        .map(|(v, o)| {
            let x: f64 = typed(name, v, o, "a number")?;
            if x.is_finite() {
                Ok((x, o))
            } else {
                Err(invalid(name, o, "must be finite"))
            }
        })
        .transpose()
}

fn positive(raw: &RawConfig, name: &'static str) -> Result<f64, ConfigError> {
    let (x, o) = float(raw, name)?.expect("key has a default or is required");
    if x > 0.0 {
        Ok(x)
    } else {
        Err(invalid(name, o, "must be positive"))
    }
}

fn integer<T: FromStr>(raw: &RawConfig, name: &'static str) -> Result<(T, Origin), ConfigError> {
    let info = lookup(name).expect("known key");
    let (v, o) = raw.get(info)?.expect("key has a default or is required");
    Ok((typed(name, v, o, "a non-negative integer")?, o))
}

fn text<'a>(raw: &'a RawConfig, name: &'static str) -> Result<Option<(&'a str, Origin)>, ConfigError> {
    raw.get(lookup(name).expect("known key"))
}

impl RunConfig {
    pub fn from_raw(raw: &RawConfig, base_dir: &Path) -> Result<Self, ConfigError> {
        let (app_text, app_origin) = text(raw, "app")?.expect("default");
        let app: AppKind = typed("app", app_text, app_origin, "`stromgren` or `uniform`")?;

        let (n, n_origin) = integer::<usize>(raw, "n")?;
        if n == 0 || n > 4096 {
            return Err(invalid("n", n_origin, "must be between 1 and 4096"));
        }
        let dx = positive(raw, "dx")?;
        let source = match text(raw, "source")?.expect("default") {
            ("center", _) => None,
            (v, o) => {
                let parts: Vec<&str> = v.split(',').map(str::trim).collect();
                let coords: Result<Vec<f64>, _> = parts.iter().map(|p| p.parse::<f64>()).collect();
                match coords {
                    Ok(c) if c.len() == 3 => Some([c[0], c[1], c[2]]),
                    _ => {
                        return Err(ConfigError::Type {
                            origin: o,
                            key: "source".into(),
                            expected: "x,y,z or `center`",
                            value: v.to_string(),
                        })
                    }
                }
            }
        };
        let density = match (float(raw, "density")?, text(raw, "density_file")?) {
            (Some((d, o)), None) => {
                if d < 0.0 {
                    return Err(invalid("density", o, "must be non-negative"));
                }
                DensitySource::Uniform(d)
            }
            (None, Some((p, _))) => DensitySource::File(PathBuf::from(p)),
            (None, None) => {
                return Err(ConfigError::Missing {
                    key: "density".into(),
                })
            }
            (Some(_), Some((_, o))) => return Err(invalid("density_file", o, "conflicts with `density`")),
        };

        let (q, q_origin) = float(raw, "Q")?.expect("required");
        if q < 0.0 {
            return Err(invalid("Q", q_origin, "must be non-negative"));
        }
        let (base_level, bl_origin) = integer::<u8>(raw, "base_level")?;
        let (max_epochs, me_origin) = integer::<u32>(raw, "max_epochs")?;
        if max_epochs == 0 {
            return Err(invalid("max_epochs", me_origin, "must be positive"));
        }
        let physics = PhysicsParams {
            eps_cut: positive(raw, "eps_cut")?,
            f_split: positive(raw, "f_split")?,
            base_level,
            tol: positive(raw, "tol")?,
            max_epochs,
            ..PhysicsParams::new(q, positive(raw, "sigma")?, positive(raw, "alpha")?)
        };
        if let Err(msg) = physics.validate() {
            let key = if msg.starts_with("tol") { "tol" } else { "base_level" };
            let origin = if key == "base_level" {
                bl_origin
            } else {
                float(raw, "tol")?.map(|(_, o)| o).unwrap_or(Origin::Default)
            };
            return Err(invalid(key, origin, msg));
        }

        let (tasks, _) = integer::<u64>(raw, "tasks")?;
        let (task_cost_s, tc_origin) = float(raw, "task_cost_s")?.expect("default");
        if task_cost_s < 0.0 {
            return Err(invalid("task_cost_s", tc_origin, "must be non-negative"));
        }
        let (min_workers, mw_origin) = integer::<usize>(raw, "min_workers")?;
        if min_workers == 0 {
            return Err(invalid("min_workers", mw_origin, "must be at least 1"));
        }
        let (dm, dm_origin) = float(raw, "death_multiplier")?.expect("default");
        if dm <= 1.0 {
            return Err(invalid("death_multiplier", dm_origin, "must exceed 1"));
        }
        let max_attempts = match text(raw, "max_attempts")?.expect("default") {
            ("unlimited", _) => None,
            (v, o) => Some(typed::<u32>("max_attempts", v, o, "a count or `unlimited`")?),
        };
        let master = MasterConfig {
            min_workers,
            heartbeat_s: positive(raw, "heartbeat_s")?,
            death_multiplier: dm,
            max_attempts,
            stall_timeout_s: positive(raw, "stall_timeout_s")?,
        };
        let (listen, _) = text(raw, "listen")?.expect("default");
        let (latency_s, lat_origin) = float(raw, "latency_s")?.expect("default");
        if latency_s < 0.0 {
            return Err(invalid("latency_s", lat_origin, "must be non-negative"));
        }
        let trace = match (text(raw, "trace")?, text(raw, "synth")?) {
            (Some((p, _)), None) => Some(TraceSource::File(PathBuf::from(p))),
            (None, Some((s, o))) => Some(TraceSource::Synth(s.parse().map_err(|msg: String| invalid("synth", o, msg))?)),
            (None, None) => None,
            (Some(_), Some((_, o))) => return Err(invalid("synth", o, "conflicts with `trace`")),
        };
        let path = |name| Ok::<_, ConfigError>(text(raw, name)?.map(|(p, _)| PathBuf::from(p)));
        Ok(Self {
            app,
            n,
            dx,
            source,
            density,
            physics,
            tasks,
            task_cost_s,
            master,
            listen: listen.to_string(),
            latency_s,
            trace,
            output_grid: path("output_grid")?,
            output_csv: path("output_csv")?,
            report: path("report")?,
            base_dir: base_dir.to_path_buf(),
        })
    }

    /// Parses config text with overrides applied on top.
    pub fn parse_with(text: &str, overrides: &[String], base_dir: &Path) -> Result<Self, ConfigError> {
        let mut raw = RawConfig::parse(text)?;
        for o in overrides {
            raw.set(o)?;
        }
        Self::from_raw(&raw, base_dir)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        Self::parse_with(text, &[], Path::new("."))
    }

    /// Reads a config file; relative paths inside it resolve against its
    /// directory.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse_with(&text, overrides, base)
    }

    /// Canonical text form: every key in table order, unset optional keys
    /// omitted.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        let p = &self.physics;
        put("app", self.app.to_string());
        put("n", self.n.to_string());
        put("dx", self.dx.to_string());
        put(
            "source",
            match self.source {
                None => "center".into(),
                Some([x, y, z]) => format!("{x},{y},{z}"),
            },
        );
        match &self.density {
            DensitySource::Uniform(d) => put("density", d.to_string()),
            DensitySource::File(f) => put("density_file", f.display().to_string()),
        }
        put("Q", p.source_rate.to_string());
        put("sigma", p.sigma.to_string());
        put("alpha", p.alpha.to_string());
        put("eps_cut", p.eps_cut.to_string());
        put("f_split", p.f_split.to_string());
        put("base_level", p.base_level.to_string());
        put("tol", p.tol.to_string());
        put("max_epochs", p.max_epochs.to_string());
        put("tasks", self.tasks.to_string());
        put("task_cost_s", self.task_cost_s.to_string());
        put("min_workers", self.master.min_workers.to_string());
        put("heartbeat_s", self.master.heartbeat_s.to_string());
        put("death_multiplier", self.master.death_multiplier.to_string());
        put(
            "max_attempts",
            self.master
                .max_attempts
                .map_or_else(|| "unlimited".into(), |m| m.to_string()),
        );
        put("stall_timeout_s", self.master.stall_timeout_s.to_string());
        put("listen", self.listen.clone());
        put("latency_s", self.latency_s.to_string());
        match &self.trace {
            Some(TraceSource::File(f)) => put("trace", f.display().to_string()),
            Some(TraceSource::Synth(s)) => put("synth", s.to_string()),
            None => {}
        }
        for (k, v) in [
            ("output_grid", &self.output_grid),
            ("output_csv", &self.output_csv),
            ("report", &self.report),
        ] {
            if let Some(v) = v {
                put(k, v.display().to_string());
            }
        }
        out
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Builds the initial, fully neutral grid.
    pub fn build_grid(&self) -> Result<Grid<f64>, ConfigError> {
        let cells = self.n * self.n * self.n;
        let density = match &self.density {
            DensitySource::Uniform(d) => vec![*d; cells],
            DensitySource::File(f) => {
                let path = self.resolve(f);
                let file = fs::File::open(&path).map_err(|source| ConfigError::Io {
                    path: path.clone(),
                    source,
                })?;
                read_f64_array(std::io::BufReader::new(file), cells)
                    .map_err(|source| ConfigError::Io { path, source })?
            }
        };
        let center = self.dx * self.n as f64 / 2.0;
        let source = self.source.unwrap_or([center; 3]);
        Ok(Grid::new(self.n, self.dx, density, vec![1.0; cells], source)?)
    }

    /// Loads the configured churn trace, if any.
    pub fn load_trace(&self) -> Result<Option<AvailabilityTrace>, ConfigError> {
        match &self.trace {
            None => Ok(None),
            Some(TraceSource::Synth(s)) => Ok(Some(s.trace())),
            Some(TraceSource::File(f)) => {
                let path = self.resolve(f);
                let text = fs::read_to_string(&path).map_err(|source| ConfigError::Io {
                    path: path.clone(),
                    source,
                })?;
                load_trace(&text)
                    .map(Some)
                    .map_err(|e| invalid("trace", Origin::Flag, format!("{}: {e}", path.display())))
            }
        }
    }
}

/// The defaults table as commented config text.
pub fn defaults_text() -> String {
    let mut out = String::new();
    for k in KEYS {
        let value = match k.default {
            None => "(required)".to_string(),
            Some("") => "(unset)".to_string(),
            Some(d) => d.to_string(),
        };
        out.push_str(&format!("{:<17} = {:<16} # {}\n", k.name, value, k.help));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "n = 8\nQ = 10\nsigma = 1\nalpha = 1\nuniform density=1\n";

    #[test]
    fn minimal_file_gets_defaults() {
        let c = RunConfig::parse(MINIMAL).unwrap();
        assert_eq!(c.physics.f_split, 1.0);
        assert_eq!(c.physics.eps_cut, 1e-6);
        assert_eq!(c.physics.base_level, 1);
        assert_eq!(c.physics.tol, 1e-4);
        assert_eq!(c.master.heartbeat_s, 1.0);
        assert_eq!(c.master.death_multiplier, 3.0);
        assert_eq!(c.master.max_attempts, None);
        assert_eq!(c.density, DensitySource::Uniform(1.0));
        assert_eq!(c.app, AppKind::Stromgren);
        assert_eq!(c.trace, None);
    }

    #[test]
    fn type_error_names_line_and_key() {
        let err = RunConfig::parse(&format!("{MINIMAL}tol = banana\n")).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 6") && msg.contains("tol") && msg.contains("banana"), "{msg}");
        assert_eq!(err.key(), Some("tol"));
    }

    #[test]
    fn duplicate_key_rejected() {
        let err = RunConfig::parse(&format!("{MINIMAL}n = 9\n")).unwrap_err();
        assert!(matches!(err, ConfigError::Duplicate { ref key, first: Origin::Line(1), .. } if key == "n"));
        let err = RunConfig::parse(&format!("{MINIMAL}density = 2\n")).unwrap_err();
        assert_eq!(err.key(), Some("density"));
    }

    #[test]
    fn unknown_key_rejected() {
        let err = RunConfig::parse(&format!("{MINIMAL}colour = red\n")).unwrap_err();
        assert!(err.to_string().contains("line 6: unknown key `colour`"), "{err}");
    }

    #[test]
    fn missing_q_is_named() {
        let err = RunConfig::parse("n = 8\nsigma = 1\nalpha = 1\nuniform density=1\n").unwrap_err();
        assert!(matches!(err, ConfigError::Missing { ref key } if key == "Q"));
        assert!(err.to_string().contains("`Q`"));
    }

    #[test]
    fn flags_override_file() {
        let c = RunConfig::parse_with(
            &format!("{MINIMAL}tol = 0.01\n"),
            &["tol=0.5".into(), "heartbeat_s = 2".into(), "tol=0.25".into(), "trace=t.csv".into()],
            Path::new("."),
        )
        .unwrap();
        assert_eq!(c.physics.tol, 0.25);
        assert_eq!(c.master.heartbeat_s, 2.0);
        assert_eq!(c.trace, Some(TraceSource::File("t.csv".into())));
        let c = RunConfig::parse_with(&format!("{MINIMAL}trace = a.csv\n"), &["synth=n=2".into()], Path::new("."))
            .unwrap();
        assert!(matches!(c.trace, Some(TraceSource::Synth(_))));
        let err = RunConfig::parse_with(MINIMAL, &["tol=x".into()], Path::new(".")).unwrap_err();
        assert!(err.to_string().starts_with("command line"));
    }

    #[test]
    fn comments_and_blank_lines() {
        let c = RunConfig::parse("# header\n\nn = 4 # cells\nQ=1\nsigma=2\nalpha=3\ndensity = 0.5\n").unwrap();
        assert_eq!(c.n, 4);
        assert_eq!(c.physics.alpha, 3.0);
    }

    #[test]
    fn serialization_is_a_fixed_point() {
        let text = format!(
            "{MINIMAL}source = 1.5,2,3.25\nmax_attempts = 4\nsynth = n=3,spread=10,uptime=2.5,seed=9\nreport = out.txt\ntol = 0.000123\n"
        );
        let c = RunConfig::parse(&text).unwrap();
        let once = c.to_text();
        let again = RunConfig::parse(&once).unwrap();
        assert_eq!(again, c);
        assert_eq!(again.to_text(), once);
    }

    #[test]
    fn validation_errors() {
        for (extra, key) in [
            ("tol = 2\n", "tol"),
            ("death_multiplier = 1\n", "death_multiplier"),
            ("min_workers = 0\n", "min_workers"),
            ("synth = spread=4\n", "synth"),
            ("density_file = d.bin\n", "density_file"),
            ("source = 1,2\n", "source"),
        ] {
            let err = RunConfig::parse(&format!("{MINIMAL}{extra}")).unwrap_err();
            assert_eq!(err.key(), Some(key), "{extra}: {err}");
        }
        let err = RunConfig::parse("n = 4\nQ = 1\nsigma = 1\nalpha = 1\n").unwrap_err();
        assert_eq!(err.key(), Some("density"));
    }

    #[test]
    fn bad_uniform_line() {
        let err = RunConfig::parse("uniform pressure=3\n").unwrap_err();
        assert!(matches!(err, ConfigError::Syntax { origin: Origin::Line(1), .. }));
    }

    #[test]
    fn grid_from_config() {
        let c = RunConfig::parse(&format!("{MINIMAL}dx = 0.5\n")).unwrap();
        let g = c.build_grid().unwrap();
        assert_eq!(g.source(), [2.0; 3]);
        assert_eq!(g.cells(), 512);
        let c = RunConfig::parse(&format!("{MINIMAL}source = 9,1,1\n")).unwrap();
        assert!(matches!(c.build_grid(), Err(ConfigError::Grid(GridError::Source))));
    }

    #[test]
    fn defaults_table_lists_every_key() {
        let t = defaults_text();
        assert_eq!(t.lines().count(), KEYS.len());
        assert!(t.contains("Q                 = (required)"));
        assert!(t.contains("f_split           = 1 "));
    }

    #[test]
    fn synth_spec_roundtrip() {
        let s: SynthSpec = "n=4,spread=100,uptime=50,seed=1".parse().unwrap();
        assert_eq!(s.to_string().parse::<SynthSpec>().unwrap(), s);
        assert!("n=4,bogus=1".parse::<SynthSpec>().is_err());
        assert_eq!(s.trace(), s.trace());
    }
}
