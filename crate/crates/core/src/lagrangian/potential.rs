//! Trigonometric potentials on `T^1 x T^d`.
//!
//! Every built-in family is a finite sum
//! `V(t, q) = offset + sum_j a_j cos(2 pi (m_j t + k_j . q) + phi_j)`
//! with integer frequencies, so periodicity and derivative bounds are exact.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::LagrangianError;

const TAU: f64 = 2.0 * PI;

/// One Fourier mode of a potential.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrigTerm {
    pub amplitude: f64,
    pub t_freq: i32,
    pub q_freq: Vec<i32>,
    pub phase: f64,
}

impl TrigTerm {
    fn argument(&self, t: f64, q: &[f64]) -> f64 {
        let mut s = self.t_freq as f64 * t;
        for (k, x) in self.q_freq.iter().zip(q) {
            s += *k as f64 * x;
        }
        TAU * s + self.phase
    }

    fn freq_sq(&self) -> (f64, f64) {
        let kq: f64 = self.q_freq.iter().map(|k| (*k as f64).powi(2)).sum();
        ((self.t_freq as f64).powi(2), kq)
    }
}

/// Names accepted by [`Potential::from_family`].
pub const KNOWN_FAMILIES: &[&str] = &[
    "free",
    "constant",
    "pendulum",
    "double_well",
    "forced_pendulum",
];

/// A periodic potential together with the family descriptor it was built from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Potential {
    pub family: String,
    pub params: BTreeMap<String, f64>,
    offset: f64,
    terms: Vec<TrigTerm>,
    dim: usize,
}

fn param(params: &BTreeMap<String, f64>, key: &str, default: f64) -> f64 {
    params.get(key).copied().unwrap_or(default)
}

fn axis_freq(dim: usize, axis: usize, k: i32) -> Vec<i32> {
    let mut f = vec![0; dim];
    f[axis] = k;
    f
}

impl Potential {
    pub fn from_terms(dim: usize, offset: f64, terms: Vec<TrigTerm>) -> Result<Self, LagrangianError> {
        if !(1..=2).contains(&dim) {
            return Err(LagrangianError::Dimension(dim));
        }
        if let Some(t) = terms.iter().find(|t| t.q_freq.len() != dim) {
            return Err(LagrangianError::Shape(format!(
                "trig term has {} spatial frequencies, expected {dim}",
                t.q_freq.len()
            )));
        }
        if !offset.is_finite() || terms.iter().any(|t| !t.amplitude.is_finite() || !t.phase.is_finite()) {
            return Err(LagrangianError::Shape("non-finite potential coefficient".into()));
        }
        Ok(Self {
            family: "trig".into(),
            params: BTreeMap::new(),
            offset,
            terms,
            dim,
        })
    }

    /// Builds a named family. Unknown names and unknown parameter keys are rejected.
    ///
    /// * `free`: `V = 0`
    /// * `constant { value }`
    /// * `pendulum { amplitude = 1, phase = 0 }`: `a cos(2 pi q_i)` summed over axes
    /// * `double_well { amplitude = 1, lift = 0 }`: `a cos(4 pi q) + lift (1 + cos 2 pi q) / 2`,
    ///   two equal maxima at `q = 0, 1/2` when `lift = 0`; `lift > 0` raises the one at `0`
    /// * `forced_pendulum { amplitude = 1, forcing = 0 }`: `a cos(2 pi q) + f cos(2 pi (q - t))`
    pub fn from_family(
        name: &str,
        params: &BTreeMap<String, f64>,
        dim: usize,
    ) -> Result<Self, LagrangianError> {
        let allowed: &[&str] = match name {
            "free" => &[],
            "constant" => &["value"],
            "pendulum" => &["amplitude", "phase"],
            "double_well" => &["amplitude", "lift"],
            "forced_pendulum" => &["amplitude", "forcing"],
            _ => {
                return Err(LagrangianError::UnknownFamily {
                    name: name.to_string(),
                    known: KNOWN_FAMILIES.iter().map(|s| s.to_string()).collect(),
                })
            }
        };
        if let Some(k) = params.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(LagrangianError::UnknownParam {
                family: name.to_string(),
                param: k.clone(),
                allowed: allowed.iter().map(|s| s.to_string()).collect(),
            });
        }
        let mut offset = 0.0;
        let mut terms = Vec::new();
        match name {
            "free" => {}
            "constant" => offset = param(params, "value", 0.0),
            "pendulum" => {
                let a = param(params, "amplitude", 1.0);
                let phase = param(params, "phase", 0.0);
                for axis in 0..dim {
                    terms.push(TrigTerm {
                        amplitude: a,
                        t_freq: 0,
                        q_freq: axis_freq(dim, axis, 1),
                        phase,
                    });
                }
            }
            "double_well" => {
                let a = param(params, "amplitude", 1.0);
                let lift = param(params, "lift", 0.0);
                for axis in 0..dim {
                    terms.push(TrigTerm {
                        amplitude: a,
                        t_freq: 0,
                        q_freq: axis_freq(dim, axis, 2),
                        phase: 0.0,
                    });
                }
                if lift != 0.0 {
                    offset += 0.5 * lift;
                    terms.push(TrigTerm {
                        amplitude: 0.5 * lift,
                        t_freq: 0,
                        q_freq: axis_freq(dim, 0, 1),
                        phase: 0.0,
                    });
                }
            }
            "forced_pendulum" => {
                let a = param(params, "amplitude", 1.0);
                let f = param(params, "forcing", 0.0);
                terms.push(TrigTerm {
                    amplitude: a,
                    t_freq: 0,
                    q_freq: axis_freq(dim, 0, 1),
                    phase: 0.0,
                });
                if f != 0.0 {
                    terms.push(TrigTerm {
                        amplitude: f,
                        t_freq: -1,
                        q_freq: axis_freq(dim, 0, 1),
                        phase: 0.0,
                    });
                }
            }
            _ => unreachable!(),
        }
        let mut p = Self::from_terms(dim, offset, terms)?;
        p.family = name.to_string();
        p.params = params.clone();
        Ok(p)
    }

    pub fn zero(dim: usize) -> Self {
        Self::from_family("free", &BTreeMap::new(), dim).expect("free family")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn terms(&self) -> &[TrigTerm] {
        &self.terms
    }

    pub fn is_autonomous(&self) -> bool {
        self.terms.iter().all(|t| t.t_freq == 0)
    }

    /// `self + scale * other`; the result is labelled `composite`.
    pub fn plus_scaled(&self, other: &Potential, scale: f64) -> Result<Potential, LagrangianError> {
        if other.dim != self.dim {
            return Err(LagrangianError::Shape("potential dimensions differ".into()));
        }
        let mut terms = self.terms.clone();
        terms.extend(other.terms.iter().map(|t| TrigTerm {
            amplitude: scale * t.amplitude,
            ..t.clone()
        }));
        let mut p = Self::from_terms(self.dim, self.offset + scale * other.offset, terms)?;
        p.family = "composite".into();
        p.params = BTreeMap::new();
        Ok(p)
    }

    /// Evaluates `V(t, q)`. Arguments are reduced into `[0, 1)` first, so
    /// values at `t` and `t + 1` agree bit for bit whenever the shifted
    /// argument is exactly representable.
    pub fn eval(&self, t: f64, q: &[f64]) -> f64 {
        let t = t.rem_euclid(1.0);
        let mut qr = [0.0; 2];
        for (dst, x) in qr.iter_mut().zip(q) {
            *dst = x.rem_euclid(1.0);
        }
        let qr = &qr[..self.dim];
        self.offset
            + self
                .terms
                .iter()
                .map(|term| term.amplitude * term.argument(t, qr).cos())
                .sum::<f64>()
    }

    /// Spatial gradient `dV/dq` written into `out`.
    pub fn gradient(&self, t: f64, q: &[f64], out: &mut [f64]) {
        let t = t.rem_euclid(1.0);
        let mut qr = [0.0; 2];
        for (dst, x) in qr.iter_mut().zip(q) {
            *dst = x.rem_euclid(1.0);
        }
        let qr = &qr[..self.dim];
        out.iter_mut().for_each(|g| *g = 0.0);
        for term in &self.terms {
            let s = term.amplitude * term.argument(t, qr).sin();
            for (g, k) in out.iter_mut().zip(&term.q_freq) {
                *g -= TAU * *k as f64 * s;
            }
        }
    }

    /// Upper bound on `sup |V|`.
    pub fn sup_bound(&self) -> f64 {
        self.offset.abs() + self.terms.iter().map(|t| t.amplitude.abs()).sum::<f64>()
    }

    /// Upper bound on the operator norm of the spatial Hessian of `V`.
    pub fn q_curvature_bound(&self) -> f64 {
        self.terms
            .iter()
            .map(|t| t.amplitude.abs() * TAU * TAU * t.freq_sq().1)
            .sum()
    }

    /// Upper bound on the norm of the full `(t, q)` Hessian of `V`.
    pub fn hessian_bound(&self) -> f64 {
        self.terms
            .iter()
            .map(|t| {
                let (mt, kq) = t.freq_sq();
                t.amplitude.abs() * TAU * TAU * (mt + kq)
            })
            .sum()
    }

    /// Upper bound on `sup |grad_q V|`.
    pub fn gradient_bound(&self) -> f64 {
        self.terms
            .iter()
            .map(|t| t.amplitude.abs() * TAU * t.freq_sq().1.sqrt())
            .sum()
    }
}
