//! Run configurations.
//!
//! A config is a TOML file with the sections `surface`, `multiplier`,
//! `damping`, `feedback`, `initial`, `time`, `analyses` and `assertions`.
//! Relative paths inside it resolve against the config's directory.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use dampwave_core::mesh::MAX_ICOSPHERE_LEVEL;
use dampwave_core::ConfigEcho;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// Output directory relative to the output root (defaults to the name).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
    pub surface: SurfaceSpec,
    #[serde(default)]
    pub multiplier: MultiplierSpec,
    pub damping: DampingSpec,
    pub feedback: FeedbackSpec,
    pub initial: InitialSpec,
    pub time: TimeSpec,
    #[serde(default)]
    pub analyses: AnalysesSpec,
    #[serde(default)]
    pub assertions: AssertionsSpec,
    /// Directory of the config file.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
#[serde(tag = "generator", rename_all = "lowercase", deny_unknown_fields)]
pub enum SurfaceSpec {
    Icosphere {
        level: u32,
        #[serde(default = "one")]
        radius: f64,
    },
    Torus {
        major_radius: f64,
        minor_radius: f64,
        major_count: usize,
        minor_count: usize,
    },
    File {
        path: PathBuf,
    },
}

#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct MultiplierSpec {
    /// Uncovered area budget as a fraction of the surface area.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// `(θ₁, scalar, gradient)` margins.
    #[serde(default = "default_margins")]
    pub margins: [f64; 3],
}

impl Default for MultiplierSpec {
    fn default() -> Self {
        Self {
            epsilon: default_epsilon(),
            margins: default_margins(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DampingKind {
    None,
    Global,
    Local,
}

#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct DampingSpec {
    pub mode: DampingKind,
    #[serde(default = "one")]
    pub a0: f64,
    /// Collar width as a length.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub collar: Option<f64>,
    /// Collar width in multiples of the longest edge (default 3).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub collar_edges: Option<f64>,
    #[serde(default = "yes")]
    pub smooth: bool,
}

#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
#[serde(tag = "law", rename_all = "lowercase", deny_unknown_fields)]
pub enum FeedbackSpec {
    Linear {
        #[serde(default = "one")]
        slope: f64,
    },
    Power {
        exponent: f64,
    },
    /// `(s, g(s))` CSV pairs.
    Table {
        path: PathBuf,
    },
}

#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum InitialSpec {
    Random {
        #[serde(default)]
        seed: u64,
        #[serde(default = "one")]
        energy: f64,
    },
    /// The `index`-th nonconstant eigenmode (from 1), at rest.
    Eigenmode {
        index: usize,
        #[serde(default = "one")]
        energy: f64,
    },
    /// A snapshot file.
    File {
        path: PathBuf,
    },
}

#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    /// Step as a fraction of the stability budget (default 0.5).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt_fraction: Option<f64>,
    pub horizon: f64,
    #[serde(default)]
    pub snapshot_stride: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum FitChoice {
    Exponential,
    Polynomial,
    None,
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysesSpec {
    /// Defaults to exponential for linear feedback, polynomial otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitChoice>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit_window: Option<[f64; 2]>,
    #[serde(default)]
    pub envelope: bool,
    #[serde(default)]
    pub observability: bool,
    /// Defaults to `min(10, horizon)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observability_time: Option<f64>,
    /// Observability constant for the envelope; measured when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_obs: Option<f64>,
    #[serde(default)]
    pub identities: bool,
    #[serde(default)]
    pub main_inequality: bool,
    #[serde(default)]
    pub poincare: bool,
    #[serde(default)]
    pub write_final_state: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct AssertionsSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_r_squared: Option<f64>,
    #[serde(default)]
    pub positive_rate: bool,
    #[serde(default)]
    pub energy_identity: bool,
    #[serde(default)]
    pub certified: bool,
    #[serde(default)]
    pub envelope: bool,
    #[serde(default)]
    pub main_inequality: bool,
    #[serde(default)]
    pub poincare: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_identity_residual: Option<f64>,
}

fn one() -> f64 {
    1.0
}

fn yes() -> bool {
    true
}

fn default_epsilon() -> f64 {
    0.1
}

fn default_margins() -> [f64; 3] {
    [0.05; 3]
}

/// A config diagnostic, with the offending line when known.
#[derive(Debug)]
pub struct ConfigError {
    pub path: Option<PathBuf>,
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(p) = &self.path {
            write!(f, "{}", p.display())?;
        } else {
            f.write_str("<config>")?;
        }
        if let Some(l) = self.line {
            write!(f, ":{l}")?;
        }
        write!(f, ": {}", self.message)
    }
}

impl std::error::Error for ConfigError {}

/// 1-based line holding `key` inside `[section]` (top level when empty).
fn locate(text: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    let mut section_line = None;
    for (k, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = name.trim().to_string();
            if current == section {
                section_line = Some(k + 1);
            }
            continue;
        }
        if current == section {
            if let Some((lhs, _)) = line.split_once('=') {
                if lhs.trim() == key {
                    return Some(k + 1);
                }
            }
        }
    }
    section_line
}

/// Serde reports unknown keys of tagged tables at the table itself; narrow
/// that down to the key's own line.
fn unknown_key_line(text: &str, line: usize, message: &str) -> Option<usize> {
    let key = message.strip_prefix("unknown field `")?.split('`').next()?;
    let section = text
        .lines()
        .take(line)
        .filter_map(|l| l.trim().strip_prefix('[').and_then(|l| l.strip_suffix(']')))
        .last()
        .unwrap_or("")
        .trim();
    locate(text, section, key).filter(|&l| l >= line)
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| ConfigError {
            path: Some(path.to_path_buf()),
            line: None,
            message: format!("cannot read config: {e}"),
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut cfg = Self::parse(&text, &base).map_err(|mut e| {
            e.path = Some(path.to_path_buf());
            e
        })?;
        if cfg.name.is_none() {
            cfg.name = path.file_stem().map(|s| s.to_string_lossy().into_owned());
        }
        Ok(cfg)
    }

    /// Parses and validates `text`; relative paths resolve against `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1);
            ConfigError {
                path: None,
                line: line.map(|l| unknown_key_line(text, l, e.message()).unwrap_or(l)),
                message: e.message().to_string(),
            }
        })?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.validate(text)?;
        Ok(cfg)
    }

    fn validate(&self, text: &str) -> Result<(), ConfigError> {
        let fail = |section: &str, key: &str, message: String| ConfigError {
            path: None,
            line: locate(text, section, key),
            message,
        };
        let positive = |section: &str, key: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(fail(section, key, format!("{section}.{key} must be positive and finite, got {v}")))
            }
        };
        let exists = |section: &str, key: &str, p: &Path| {
            let full = self.resolve(p);
            if full.is_file() {
                Ok(())
            } else {
                Err(fail(section, key, format!("{section}.{key}: file {} does not exist", full.display())))
            }
        };

        match &self.surface {
            SurfaceSpec::Icosphere { level, radius } => {
                if *level > MAX_ICOSPHERE_LEVEL {
                    return Err(fail(
                        "surface",
                        "level",
                        format!("surface.level must be at most {MAX_ICOSPHERE_LEVEL}, got {level}"),
                    ));
                }
                positive("surface", "radius", *radius)?;
            }
            SurfaceSpec::Torus {
                major_radius,
                minor_radius,
                major_count,
                minor_count,
            } => {
                positive("surface", "minor_radius", *minor_radius)?;
                if major_radius <= minor_radius || !major_radius.is_finite() {
                    return Err(fail("surface", "major_radius", "surface.major_radius must exceed minor_radius".into()));
                }
                for (key, n) in [("major_count", major_count), ("minor_count", minor_count)] {
                    if *n < 3 {
                        return Err(fail("surface", key, format!("surface.{key} must be at least 3, got {n}")));
                    }
                }
            }
            SurfaceSpec::File { path } => exists("surface", "path", path)?,
        }

        let eps = self.multiplier.epsilon;
        if !(eps > 0.0 && eps < 1.0) {
            return Err(fail("multiplier", "epsilon", format!("multiplier.epsilon must lie in (0, 1), got {eps}")));
        }
        for m in self.multiplier.margins {
            positive("multiplier", "margins", m)?;
        }

        positive("damping", "a0", self.damping.a0)?;
        match (self.damping.collar, self.damping.collar_edges) {
            (Some(_), Some(_)) => {
                return Err(fail("damping", "collar", "give either damping.collar or damping.collar_edges, not both".into()))
            }
            (Some(c), None) => positive("damping", "collar", c)?,
            (None, Some(c)) => positive("damping", "collar_edges", c)?,
            (None, None) => {}
        }

        match &self.feedback {
            FeedbackSpec::Linear { slope } => positive("feedback", "slope", *slope)?,
            FeedbackSpec::Power { exponent } => {
                if !(*exponent > 1.0 && exponent.is_finite()) {
                    return Err(fail("feedback", "exponent", format!("feedback.exponent must exceed 1, got {exponent}")));
                }
            }
            FeedbackSpec::Table { path } => exists("feedback", "path", path)?,
        }

        match &self.initial {
            InitialSpec::Random { energy, .. } => positive("initial", "energy", *energy)?,
            InitialSpec::Eigenmode { index, energy } => {
                if *index == 0 {
                    return Err(fail("initial", "index", "initial.index counts from 1".into()));
                }
                positive("initial", "energy", *energy)?;
            }
            InitialSpec::File { path } => exists("initial", "path", path)?,
        }

        let t = &self.time;
        positive("time", "horizon", t.horizon)?;
        match (t.dt, t.dt_fraction) {
            (Some(_), Some(_)) => return Err(fail("time", "dt", "give either time.dt or time.dt_fraction, not both".into())),
            (Some(dt), None) => positive("time", "dt", dt)?,
            (None, Some(f)) => {
                if !(f > 0.0 && f <= 1.0) {
                    return Err(fail("time", "dt_fraction", format!("time.dt_fraction must lie in (0, 1], got {f}")));
                }
            }
            (None, None) => {}
        }

        let a = &self.analyses;
        let needs_snapshots = a.identities || a.main_inequality;
        if needs_snapshots && !(1..=10).contains(&t.snapshot_stride) {
            return Err(fail(
                "time",
                "snapshot_stride",
                "identity and inequality audits need time.snapshot_stride between 1 and 10".into(),
            ));
        }
        if let Some([lo, hi]) = a.fit_window {
            if !(lo >= 0.0 && lo < hi && hi <= t.horizon) {
                return Err(fail(
                    "analyses",
                    "fit_window",
                    format!("analyses.fit_window [{lo}, {hi}] must be an increasing range inside [0, {}]", t.horizon),
                ));
            }
        }
        if let Some(tobs) = a.observability_time {
            if !(tobs > 0.0 && tobs <= t.horizon) {
                return Err(fail(
                    "analyses",
                    "observability_time",
                    format!("analyses.observability_time must lie in (0, {}], got {tobs}", t.horizon),
                ));
            }
        }
        if let Some(c) = a.c_obs {
            positive("analyses", "c_obs", c)?;
        }
        if (a.observability || a.envelope && a.c_obs.is_none()) && self.damping.mode == DampingKind::None {
            return Err(fail("damping", "mode", "observability needs damping (mode global or local)".into()));
        }

        let s = &self.assertions;
        let fits = self.fit_choice() != FitChoice::None;
        let requires = [
            (s.min_r_squared.is_some() || s.positive_rate, fits, "min_r_squared", "a fit"),
            (s.envelope, a.envelope, "envelope", "analyses.envelope"),
            (s.main_inequality, a.main_inequality, "main_inequality", "analyses.main_inequality"),
            (s.poincare, a.poincare, "poincare", "analyses.poincare"),
            (s.max_identity_residual.is_some(), a.identities, "max_identity_residual", "analyses.identities"),
        ];
        for (asserted, available, key, what) in requires {
            if asserted && !available {
                return Err(fail("assertions", key, format!("assertions.{key} requires {what}")));
            }
        }
        if let Some(r) = s.min_r_squared {
            if !(0.0..=1.0).contains(&r) {
                return Err(fail("assertions", "min_r_squared", format!("assertions.min_r_squared must lie in [0, 1], got {r}")));
            }
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn name(&self) -> &str {
        self.name.as_deref().unwrap_or("run")
    }

    pub fn output_subdir(&self) -> &str {
        self.output_dir.as_deref().unwrap_or_else(|| self.name())
    }

    pub fn fit_choice(&self) -> FitChoice {
        self.analyses.fit.unwrap_or(match self.feedback {
            FeedbackSpec::Linear { .. } => FitChoice::Exponential,
            _ => FitChoice::Polynomial,
        })
    }

    pub fn needs_multiplier(&self) -> bool {
        self.damping.mode == DampingKind::Local || self.analyses.identities || self.analyses.main_inequality
    }

    /// Everything except damping, analyses, assertions and naming.
    pub fn same_setup(&self, other: &RunConfig) -> Vec<&'static str> {
        let mut diff = Vec::new();
        if self.surface != other.surface {
            diff.push("surface");
        }
        if self.multiplier != other.multiplier {
            diff.push("multiplier");
        }
        if self.feedback != other.feedback {
            diff.push("feedback");
        }
        if self.initial != other.initial {
            diff.push("initial");
        }
        if self.time != other.time {
            diff.push("time");
        }
        diff
    }

    /// Flattened `section.key = value` record of the resolved config.
    pub fn echo(&self) -> ConfigEcho {
        let mut echo = ConfigEcho::new().with("config", self.name());
        if let Ok(toml::Value::Table(t)) = toml::Value::try_from(self) {
            flatten("", &toml::Value::Table(t), &mut echo);
        }
        echo
    }
}

fn flatten(prefix: &str, v: &toml::Value, echo: &mut ConfigEcho) {
    match v {
        toml::Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, echo);
            }
        }
        other => echo.push(prefix, other),
    }
}
