//! Mechanical Tonelli Lagrangians `L = v.Av/2 - V(t, q) + c.v` on `T^1 x T T^d`.

mod family;
mod flow;
mod potential;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use family::{validate_uniform_family, ConditionOutcome, Envelope, UniformFamilyParams, UniformFamilyReport, VelocityBound, Witness};
pub use flow::{
    el_flow, el_flow_visit, energy, flow_invariance_under_one_form, omega_max, DEFAULT_DT, FLOW_TOLERANCE,
    STABILITY_LIMIT,
};
pub use potential::{Potential, TrigTerm, KNOWN_FAMILIES};

/// Smallest admissible eigenvalue of the kinetic matrix.
pub const LAMBDA_MIN: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LagrangianError {
    #[error("dimension {0} not supported (expected 1 or 2)")]
    Dimension(usize),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("kinetic matrix is not symmetric")]
    NotSymmetric,
    #[error("kinetic matrix smallest eigenvalue {0} is below {LAMBDA_MIN}")]
    NotPositive(f64),
    #[error("unknown potential family `{name}` (known: {})", known.join(", "))]
    UnknownFamily { name: String, known: Vec<String> },
    #[error("unknown parameter `{param}` for family `{family}` (allowed: {})", allowed.join(", "))]
    UnknownParam {
        family: String,
        param: String,
        allowed: Vec<String>,
    },
    #[error("step {dt} too large: dt * omega_max = {product} exceeds {limit}")]
    StepTooLarge { dt: f64, product: f64, limit: f64 },
    #[error("integration step must be positive and finite, got {0}")]
    InvalidStep(f64),
    #[error("invalid uniform-family parameters: {0}")]
    Family(String),
}

/// Symmetric positive-definite `d x d` matrix, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct KineticMatrix {
    entries: Vec<f64>,
    dim: usize,
}

impl TryFrom<Vec<f64>> for KineticMatrix {
    type Error = LagrangianError;

    fn try_from(entries: Vec<f64>) -> Result<Self, Self::Error> {
        let dim = match entries.len() {
            1 => 1,
            4 => 2,
            n => return Err(LagrangianError::Shape(format!("kinetic matrix with {n} entries"))),
        };
        Self::new(dim, entries)
    }
}

impl From<KineticMatrix> for Vec<f64> {
    fn from(m: KineticMatrix) -> Self {
        m.entries
    }
}

impl KineticMatrix {
    pub fn new(dim: usize, entries: Vec<f64>) -> Result<Self, LagrangianError> {
        if !(1..=2).contains(&dim) {
            return Err(LagrangianError::Dimension(dim));
        }
        if entries.len() != dim * dim || entries.iter().any(|x| !x.is_finite()) {
            return Err(LagrangianError::Shape(format!(
                "kinetic matrix needs {} finite entries",
                dim * dim
            )));
        }
        if dim == 2 && entries[1] != entries[2] {
            return Err(LagrangianError::NotSymmetric);
        }
        let m = Self { entries, dim };
        let (lo, _) = m.eigen_range();
        if lo < LAMBDA_MIN {
            return Err(LagrangianError::NotPositive(lo));
        }
        Ok(m)
    }

    pub fn identity(dim: usize) -> Self {
        let mut e = vec![0.0; dim * dim];
        for i in 0..dim {
            e[i * dim + i] = 1.0;
        }
        Self::new(dim, e).expect("identity is SPD")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.dim + j]
    }

    /// `(lambda_min, lambda_max)`, closed form for `d <= 2`.
    pub fn eigen_range(&self) -> (f64, f64) {
        match self.dim {
            1 => (self.entries[0], self.entries[0]),
            _ => {
                let (a, b, d) = (self.entries[0], self.entries[1], self.entries[3]);
                let mean = 0.5 * (a + d);
                let r = (0.25 * (a - d).powi(2) + b * b).sqrt();
                (mean - r, mean + r)
            }
        }
    }

    /// `v . A v / 2`
    pub fn kinetic(&self, v: &[f64]) -> f64 {
        let d = self.dim;
        let mut s = 0.0;
        for i in 0..d {
            for j in 0..d {
                s += v[i] * self.entries[i * d + j] * v[j];
            }
        }
        0.5 * s
    }

    /// Solves `A x = rhs` in place.
    pub fn solve_in_place(&self, rhs: &mut [f64]) {
        match self.dim {
            1 => rhs[0] /= self.entries[0],
            _ => {
                let (a, b, c, d) = (self.entries[0], self.entries[1], self.entries[2], self.entries[3]);
                let det = a * d - b * c;
                let (x, y) = (rhs[0], rhs[1]);
                rhs[0] = (d * x - b * y) / det;
                rhs[1] = (a * y - c * x) / det;
            }
        }
    }
}

/// `L(t, q, v) = v.Av/2 - V(t, q) + c.v`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LagrangianSpec {
    dim: usize,
    kinetic: KineticMatrix,
    potential: Potential,
    one_form: Vec<f64>,
}

impl LagrangianSpec {
    pub fn new(
        kinetic: KineticMatrix,
        potential: Potential,
        one_form: Vec<f64>,
    ) -> Result<Self, LagrangianError> {
        let dim = kinetic.dim();
        if potential.dim() != dim || one_form.len() != dim {
            return Err(LagrangianError::Shape(format!(
                "kinetic is {dim}-dimensional but potential is {} and one-form has {} entries",
                potential.dim(),
                one_form.len()
            )));
        }
        if one_form.iter().any(|c| !c.is_finite()) {
            return Err(LagrangianError::Shape("non-finite one-form".into()));
        }
        Ok(Self {
            dim,
            kinetic,
            potential,
            one_form,
        })
    }

    /// Identity kinetic term, given potential, zero one-form.
    pub fn mechanical(potential: Potential) -> Self {
        let dim = potential.dim();
        Self::new(KineticMatrix::identity(dim), potential, vec![0.0; dim]).expect("consistent shapes")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kinetic(&self) -> &KineticMatrix {
        &self.kinetic
    }

    pub fn potential(&self) -> &Potential {
        &self.potential
    }

    pub fn one_form(&self) -> &[f64] {
        &self.one_form
    }

    pub fn with_one_form(&self, one_form: Vec<f64>) -> Result<Self, LagrangianError> {
        Self::new(self.kinetic.clone(), self.potential.clone(), one_form)
    }

    pub fn with_potential(&self, potential: Potential) -> Result<Self, LagrangianError> {
        Self::new(self.kinetic.clone(), potential, self.one_form.clone())
    }

    /// The Hessian of `L` in `v` is the kinetic matrix everywhere.
    pub fn velocity_hessian(&self) -> &KineticMatrix {
        &self.kinetic
    }
}

/// A point of `T^1 x T T^d`; `t` and `q` are kept in `[0, 1)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhasePoint {
    pub t: f64,
    pub q: Vec<f64>,
    pub v: Vec<f64>,
}

impl PhasePoint {
    pub fn new(t: f64, q: Vec<f64>, v: Vec<f64>) -> Self {
        let mut p = Self { t, q, v };
        p.reduce();
        p
    }

    pub fn reduce(&mut self) {
        self.t = wrap_unit(self.t);
        for x in &mut self.q {
            *x = wrap_unit(*x);
        }
    }
}

/// Reduces into `[0, 1)`; guards against `rem_euclid` rounding up to exactly 1.
pub fn wrap_unit(x: f64) -> f64 {
    let r = x.rem_euclid(1.0);
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

/// Signed nearest-image difference `b - a` on the unit circle, in `[-1/2, 1/2)`.
pub fn circle_delta(a: f64, b: f64) -> f64 {
    let d = (b - a).rem_euclid(1.0);
    if d >= 0.5 {
        d - 1.0
    } else {
        d
    }
}

pub fn eval_lagrangian(spec: &LagrangianSpec, t: f64, q: &[f64], v: &[f64]) -> f64 {
    let linear: f64 = spec.one_form.iter().zip(v).map(|(c, x)| c * x).sum();
    spec.kinetic.kinetic(v) - spec.potential.eval(t, q) + linear
}
