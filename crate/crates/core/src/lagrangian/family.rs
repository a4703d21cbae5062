//! Sampled checks of the uniform-family conditions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{el_flow_visit, eval_lagrangian, LagrangianError, LagrangianSpec, PhasePoint};

/// `s -> a s^2 - b`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub a: f64,
    pub b: f64,
}

impl Envelope {
    pub fn eval(&self, s: f64) -> f64 {
        self.a * s * s - self.b
    }

    /// `(a s^2 - b, a s^2 + b)`
    pub fn symmetric(a: f64, b: f64) -> (Envelope, Envelope) {
        (Envelope { a, b }, Envelope { a, b: -b })
    }
}

/// `K(k) = scale * k + offset`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VelocityBound {
    pub scale: f64,
    pub offset: f64,
}

impl VelocityBound {
    pub fn eval(&self, k: f64) -> f64 {
        self.scale * k + self.offset
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniformFamilyParams {
    pub l0: Envelope,
    pub l1: Envelope,
    pub velocity_bound: VelocityBound,
    /// Speed levels `k` at which the flow and second-derivative bounds are probed.
    pub probe_speeds: Vec<f64>,
    /// Velocities for the envelope check are drawn with `|v| <= sample_speed`.
    pub sample_speed: f64,
    pub flow_dt: f64,
    pub seed: u64,
    /// The torus is covered by one flat chart, so the chart condition is a plain Hessian bound.
    pub atlas_note: String,
}

impl UniformFamilyParams {
    pub fn new(l0: Envelope, l1: Envelope, velocity_bound: VelocityBound) -> Self {
        Self {
            l0,
            l1,
            velocity_bound,
            probe_speeds: vec![0.5, 1.0, 2.0, 4.0],
            sample_speed: 8.0,
            flow_dt: 1e-2,
            seed: 0,
            atlas_note: "single flat chart on T^d".into(),
        }
    }

    pub fn validate(&self) -> Result<(), LagrangianError> {
        let bad = |m: &str| Err(LagrangianError::Family(m.to_string()));
        if !(self.l0.a > 0.0 && self.l1.a > 0.0) {
            return bad("envelopes must have positive quadratic coefficient");
        }
        // l0 <= l1 on s >= 0 iff it holds at s = 0 and at infinity
        if self.l0.a > self.l1.a || self.l0.b < self.l1.b {
            return bad("l0 must lie below l1");
        }
        let k = self.velocity_bound;
        if k.scale < 1.0 || k.offset < 0.0 {
            return bad("K must satisfy K(k) >= k (scale >= 1, offset >= 0)");
        }
        if self.probe_speeds.iter().any(|s| !(*s >= 0.0 && s.is_finite())) || self.probe_speeds.is_empty() {
            return bad("probe speeds must be finite and nonnegative");
        }
        if !(self.sample_speed > 0.0 && self.flow_dt > 0.0) {
            return bad("sample_speed and flow_dt must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub spec_index: usize,
    pub t: f64,
    pub q: Vec<f64>,
    pub v: Vec<f64>,
    pub value: f64,
    pub bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionOutcome {
    pub name: String,
    pub passed: bool,
    pub samples: usize,
    /// Smallest slack seen; negative means violated.
    pub worst_margin: f64,
    pub worst: Option<Witness>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniformFamilyReport {
    pub conditions: Vec<ConditionOutcome>,
}

impl UniformFamilyReport {
    pub fn all_passed(&self) -> bool {
        self.conditions.iter().all(|c| c.passed)
    }

    pub fn condition(&self, name: &str) -> Option<&ConditionOutcome> {
        self.conditions.iter().find(|c| c.name == name)
    }
}

const MARGIN_TOL: f64 = 1e-12;

struct Tracker {
    name: &'static str,
    samples: usize,
    worst_margin: f64,
    worst: Option<Witness>,
}

impl Tracker {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            samples: 0,
            worst_margin: f64::INFINITY,
            worst: None,
        }
    }

    fn record(&mut self, margin: f64, witness: impl FnOnce() -> Witness) {
        self.samples += 1;
        if margin < self.worst_margin {
            self.worst_margin = margin;
            self.worst = Some(witness());
        }
    }

    fn finish(self) -> ConditionOutcome {
        ConditionOutcome {
            name: self.name.into(),
            passed: self.worst_margin >= -MARGIN_TOL,
            samples: self.samples,
            worst_margin: self.worst_margin,
            worst: self.worst,
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Uniform in the ball of radius `r`, by rejection from the cube.
fn sample_ball(rng: &mut ChaCha8Rng, d: usize, r: f64) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        if norm(&v) <= 1.0 {
            return v.iter().map(|x| x * r).collect();
        }
    }
}

/// Samples `sample_budget` points per spec and condition. Failures are reported, never raised;
/// only malformed parameters produce an error.
pub fn validate_uniform_family(
    specs: &[LagrangianSpec],
    params: &UniformFamilyParams,
    sample_budget: usize,
) -> Result<UniformFamilyReport, LagrangianError> {
    params.validate()?;
    if specs.is_empty() {
        return Err(LagrangianError::Family("empty family".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut envelope = Tracker::new("envelope");
    let mut flow = Tracker::new("flow_bound");
    let mut hessian = Tracker::new("second_derivative");

    for (idx, spec) in specs.iter().enumerate() {
        let d = spec.dim();
        for n in 0..sample_budget {
            let t: f64 = rng.gen_range(0.0..1.0);
            let q: Vec<f64> = (0..d).map(|_| rng.gen_range(0.0..1.0)).collect();
            // every few samples pin the speed to zero, where constants dominate
            let v = if n % 8 == 0 { vec![0.0; d] } else { sample_ball(&mut rng, d, params.sample_speed) };
            let s = norm(&v);
            let l = eval_lagrangian(spec, t, &q, &v);
            let lo = params.l0.eval(s);
            let hi = params.l1.eval(s);
            let margin = (l - lo).min(hi - l);
            envelope.record(margin, || Witness {
                spec_index: idx,
                t,
                q: q.clone(),
                v: v.clone(),
                value: l,
                bound: if l - lo < hi - l { lo } else { hi },
            });
        }

        for n in 0..sample_budget {
            let k = params.probe_speeds[n % params.probe_speeds.len()];
            let t: f64 = rng.gen_range(0.0..1.0);
            let q: Vec<f64> = (0..d).map(|_| rng.gen_range(0.0..1.0)).collect();
            let v = sample_ball(&mut rng, d, k);
            let x = PhasePoint::new(t, q, v);
            let mut top = norm(&x.v);
            let mut at = x.clone();
            for dir in [1.0, -1.0] {
                el_flow_visit(spec, &x, dir, params.flow_dt, |tt, qq, vv| {
                    let s = norm(vv);
                    if s > top {
                        top = s;
                        at = PhasePoint::new(tt, qq.to_vec(), vv.to_vec());
                    }
                })?;
            }
            let bound = params.velocity_bound.eval(k);
            flow.record(bound - top, || Witness {
                spec_index: idx,
                t: at.t,
                q: at.q.clone(),
                v: at.v.clone(),
                value: top,
                bound,
            });
        }

        // The (t, q, v) Hessian is block diagonal: A in v, -Hess V in (t, q).
        let (_, lmax) = spec.kinetic().eigen_range();
        let second = lmax.max(spec.potential().hessian_bound());
        for &k in &params.probe_speeds {
            let bound = params.velocity_bound.eval(k);
            hessian.record(bound - second, || Witness {
                spec_index: idx,
                t: 0.0,
                q: vec![0.0; d],
                v: std::iter::once(k).chain(std::iter::repeat(0.0)).take(d).collect(),
                value: second,
                bound,
            });
        }
    }
    Ok(UniformFamilyReport {
        conditions: vec![envelope.finish(), flow.finish(), hessian.finish()],
    })
}
