//! Scenario configuration files (TOML).
//!
//! ```toml
//! name = "pendulum-solve"
//! output_dir = "out/pendulum-solve"   # relative to the config file
//!
//! [spec]
//! family = "pendulum"
//! params = { amplitude = 1.0 }
//! # dim = 1, kinetic = [1.0] (row-major), one_form = [0.0]
//!
//! [grid]
//! n_q = 256
//! n_t = 64
//! v_max = 3.0
//!
//! [tolerances]                         # every key optional
//! eps_schedule = [0.1, 0.03, 0.01]
//!
//! [experiment]
//! kind = "solve"                       # solve | barrier | coincidence | semicontinuity | cohomology
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use matherkit::experiments::{PerturbationSequence, Tolerances};
use matherkit::lagrangian::{KineticMatrix, LagrangianSpec, Potential, KNOWN_FAMILIES};
use matherkit::lax_oleinik::Grid;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationError {
    pub field: String,
    pub constraint: String,
}

impl ValidationError {
    fn new(field: &str, constraint: impl Into<String>) -> Self {
        Self {
            field: field.to_string(),
            constraint: constraint.into(),
        }
    }
}

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.constraint)
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("parse error at {0}")]
    Parse(ParseError),
    #[error("invalid config: {}", .0.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; "))]
    Validation(Vec<ValidationError>),
}

impl ConfigError {
    pub fn validation_errors(&self) -> &[ValidationError] {
        match self {
            ConfigError::Validation(v) => v,
            _ => &[],
        }
    }
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    name: String,
    output_dir: Option<PathBuf>,
    spec: RawSpec,
    grid: RawGrid,
    #[serde(default)]
    tolerances: RawTolerances,
    experiment: RawExperiment,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    #[serde(default = "one")]
    dim: usize,
    family: String,
    #[serde(default)]
    params: BTreeMap<String, f64>,
    kinetic: Option<Vec<f64>>,
    one_form: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    n_q: usize,
    n_t: usize,
    v_max: f64,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTolerances {
    tol_fix: Option<f64>,
    max_iters: Option<usize>,
    tol_dom: Option<f64>,
    tol_cal: Option<f64>,
    tol_aubry: Option<f64>,
    tol_class: Option<f64>,
    tol_rel: Option<f64>,
    eps_schedule: Option<Vec<f64>>,
    #[serde(alias = "T_min")]
    t_min: Option<usize>,
    #[serde(alias = "T_max")]
    t_max: Option<usize>,
    tol_tail: Option<f64>,
    n_cal: Option<usize>,
    lattice_q: Option<usize>,
    lattice_t: Option<usize>,
    max_samples: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDelta {
    family: String,
    #[serde(default)]
    params: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
enum RawExperiment {
    Solve {},
    Barrier {},
    Coincidence {},
    Semicontinuity {
        delta: RawDelta,
        amplitudes: Option<Vec<f64>>,
        scale: Option<f64>,
        count: Option<usize>,
        u_radius_cells: Option<f64>,
    },
    Cohomology {
        c_values: Vec<Vec<f64>>,
    },
}

/// A validated experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Experiment {
    Solve,
    Barrier,
    Coincidence,
    Semicontinuity {
        sequence: PerturbationSequence,
        u_radius_cells: f64,
    },
    Cohomology {
        c_values: Vec<Vec<f64>>,
    },
}

impl Experiment {
    pub fn kind(&self) -> &'static str {
        match self {
            Experiment::Solve => "solve",
            Experiment::Barrier => "barrier",
            Experiment::Coincidence => "coincidence",
            Experiment::Semicontinuity { .. } => "semicontinuity",
            Experiment::Cohomology { .. } => "cohomology",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioConfig {
    pub name: String,
    pub output_dir: PathBuf,
    pub spec: LagrangianSpec,
    pub grid: Grid,
    pub tolerances: Tolerances,
    pub experiment: Experiment,
    /// SHA-256 of the configuration text, hex encoded.
    pub config_hash: String,
}

pub const DEFAULT_U_RADIUS_CELLS: f64 = 3.0;
pub const DEFAULT_SEQUENCE_LENGTH: usize = 8;

fn line_of(text: &str, offset: usize) -> usize {
    1 + text[..offset.min(text.len())].bytes().filter(|b| *b == b'\n').count()
}

pub fn parse_config(path: &Path) -> Result<ScenarioConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_config_str(&text, base)
}

/// Parses and validates `text`; a relative `output_dir` is taken relative to `base`.
pub fn parse_config_str(text: &str, base: &Path) -> Result<ScenarioConfig, ConfigError> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| {
        ConfigError::Parse(ParseError {
            line: e.span().map(|s| line_of(text, s.start)).unwrap_or(0),
            message: e.message().to_string(),
        })
    })?;
    let hash = crate::run::sha256_hex(text.as_bytes());
    validate(raw, base, hash).map_err(ConfigError::Validation)
}

fn positive(errors: &mut Vec<ValidationError>, field: &str, x: Option<f64>) {
    if let Some(x) = x {
        if !(x.is_finite() && x > 0.0) {
            errors.push(ValidationError::new(field, "must be positive"));
        }
    }
}

fn build_potential(
    errors: &mut Vec<ValidationError>,
    field: &str,
    family: &str,
    params: &BTreeMap<String, f64>,
    dim: usize,
) -> Option<Potential> {
    if !KNOWN_FAMILIES.contains(&family) {
        errors.push(ValidationError::new(
            field,
            format!("unknown potential family \"{family}\" (known: {})", KNOWN_FAMILIES.join(", ")),
        ));
        return None;
    }
    match Potential::from_family(family, params, dim) {
        Ok(p) => Some(p),
        Err(e) => {
            errors.push(ValidationError::new(field, e.to_string()));
            None
        }
    }
}

fn tolerances(errors: &mut Vec<ValidationError>, raw: &RawTolerances) -> Tolerances {
    let d = Tolerances::default();
    for (field, x) in [
        ("tolerances.tol_fix", raw.tol_fix),
        ("tolerances.tol_dom", raw.tol_dom),
        ("tolerances.tol_cal", raw.tol_cal),
        ("tolerances.tol_aubry", raw.tol_aubry),
        ("tolerances.tol_class", raw.tol_class),
        ("tolerances.tol_rel", raw.tol_rel),
        ("tolerances.tol_tail", raw.tol_tail),
    ] {
        positive(errors, field, x);
    }
    for (field, x) in [
        ("tolerances.max_iters", raw.max_iters),
        ("tolerances.t_min", raw.t_min),
        ("tolerances.n_cal", raw.n_cal),
        ("tolerances.lattice_q", raw.lattice_q),
        ("tolerances.lattice_t", raw.lattice_t),
        ("tolerances.max_samples", raw.max_samples),
    ] {
        if x == Some(0) {
            errors.push(ValidationError::new(field, "must be positive"));
        }
    }
    let tol = Tolerances {
        tol_fix: raw.tol_fix.unwrap_or(d.tol_fix),
        max_iters: raw.max_iters.unwrap_or(d.max_iters),
        tol_dom: raw.tol_dom.unwrap_or(d.tol_dom),
        tol_cal: raw.tol_cal.unwrap_or(d.tol_cal),
        tol_aubry: raw.tol_aubry,
        tol_class: raw.tol_class,
        tol_rel: raw.tol_rel,
        eps_schedule: raw.eps_schedule.clone().unwrap_or(d.eps_schedule),
        t_min: raw.t_min.unwrap_or(d.t_min),
        t_max: raw.t_max.unwrap_or(d.t_max),
        tol_tail: raw.tol_tail.unwrap_or(d.tol_tail),
        n_cal: raw.n_cal.unwrap_or(d.n_cal),
        lattice_q: raw.lattice_q.unwrap_or(d.lattice_q),
        lattice_t: raw.lattice_t.unwrap_or(d.lattice_t),
        max_samples: raw.max_samples.unwrap_or(d.max_samples),
    };
    if tol.eps_schedule.is_empty() {
        errors.push(ValidationError::new("eps_schedule", "must be nonempty"));
    } else if tol.eps_schedule.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
        errors.push(ValidationError::new("eps_schedule", "must be positive"));
    } else if tol.eps_schedule.windows(2).any(|w| w[1] >= w[0]) {
        errors.push(ValidationError::new("eps_schedule", "must be decreasing"));
    }
    if tol.t_min > tol.t_max {
        errors.push(ValidationError::new("tolerances.t_max", "must be at least t_min"));
    }
    tol
}

fn validate(raw: RawConfig, base: &Path, config_hash: String) -> Result<ScenarioConfig, Vec<ValidationError>> {
    let mut errors = Vec::new();
    let name = raw.name.trim().to_string();
    if name.is_empty() || name.contains(['/', '\\']) {
        errors.push(ValidationError::new("name", "must be a nonempty file name"));
    }
    let dim = raw.spec.dim;
    if !(1..=2).contains(&dim) {
        errors.push(ValidationError::new("spec.dim", "must be 1 or 2"));
    }
    let dim = dim.clamp(1, 2);
    let potential = build_potential(&mut errors, "spec.family", &raw.spec.family, &raw.spec.params, dim);
    let kinetic = match &raw.spec.kinetic {
        None => Some(KineticMatrix::identity(dim)),
        Some(k) => match KineticMatrix::new(dim, k.clone()) {
            Ok(k) => Some(k),
            Err(e) => {
                errors.push(ValidationError::new("spec.kinetic", e.to_string()));
                None
            }
        },
    };
    let one_form = raw.spec.one_form.clone().unwrap_or(vec![0.0; dim]);
    let spec = match (kinetic, potential) {
        (Some(k), Some(p)) => match LagrangianSpec::new(k, p, one_form) {
            Ok(s) => Some(s),
            Err(e) => {
                errors.push(ValidationError::new("spec.one_form", e.to_string()));
                None
            }
        },
        _ => None,
    };
    let grid = match Grid::new(dim, raw.grid.n_q, raw.grid.n_t, raw.grid.v_max) {
        Ok(g) => Some(g),
        Err(e) => {
            errors.push(ValidationError::new("grid", e.to_string()));
            None
        }
    };
    let tol = tolerances(&mut errors, &raw.tolerances);

    let experiment = match raw.experiment {
        RawExperiment::Solve {} => Some(Experiment::Solve),
        RawExperiment::Barrier {} => Some(Experiment::Barrier),
        RawExperiment::Coincidence {} => Some(Experiment::Coincidence),
        RawExperiment::Cohomology { c_values } => {
            if c_values.is_empty() {
                errors.push(ValidationError::new("experiment.c_values", "must be nonempty"));
            }
            if c_values.iter().any(|c| c.len() != dim) {
                errors.push(ValidationError::new("experiment.c_values", format!("each entry must have {dim} components")));
            }
            if c_values.iter().flatten().any(|x| !x.is_finite()) {
                errors.push(ValidationError::new("experiment.c_values", "must be finite"));
            }
            Some(Experiment::Cohomology { c_values })
        }
        RawExperiment::Semicontinuity {
            delta,
            amplitudes,
            scale,
            count,
            u_radius_cells,
        } => {
            let u_radius_cells = u_radius_cells.unwrap_or(DEFAULT_U_RADIUS_CELLS);
            positive(&mut errors, "experiment.u_radius_cells", Some(u_radius_cells));
            let delta = build_potential(&mut errors, "experiment.delta.family", &delta.family, &delta.params, dim);
            let amplitudes = match (amplitudes, scale, count) {
                (Some(a), None, None) => Some(a),
                (None, s, c) => {
                    let s = s.unwrap_or(1.0);
                    let c = c.unwrap_or(DEFAULT_SEQUENCE_LENGTH);
                    if c == 0 {
                        errors.push(ValidationError::new("experiment.count", "must be positive"));
                    }
                    Some((1..=c).map(|k| s / k as f64).collect())
                }
                _ => {
                    errors.push(ValidationError::new(
                        "experiment.amplitudes",
                        "give either amplitudes or scale/count, not both",
                    ));
                    None
                }
            };
            match (spec.clone(), delta, amplitudes) {
                (Some(base), Some(delta), Some(a)) => match PerturbationSequence::new(base, delta, a) {
                    Ok(sequence) => Some(Experiment::Semicontinuity {
                        sequence,
                        u_radius_cells,
                    }),
                    Err(e) => {
                        errors.push(ValidationError::new("experiment.amplitudes", e.to_string()));
                        None
                    }
                },
                _ => None,
            }
        }
    };

    match (spec, grid, experiment) {
        (Some(spec), Some(grid), Some(experiment)) if errors.is_empty() => Ok(ScenarioConfig {
            output_dir: base.join(raw.output_dir.unwrap_or_else(|| PathBuf::from("out").join(&name))),
            name,
            spec,
            grid,
            tolerances: tol,
            experiment,
            config_hash,
        }),
        _ => Err(errors),
    }
}
