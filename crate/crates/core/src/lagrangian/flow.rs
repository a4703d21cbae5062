//! Euler-Lagrange flow by velocity Verlet on `A q'' = -grad V`.

use super::{LagrangianError, LagrangianSpec, PhasePoint};

/// `dt * omega_max` above this is rejected.
pub const STABILITY_LIMIT: f64 = 1.0;
pub const DEFAULT_DT: f64 = 1e-3;
/// Max coordinate difference accepted by [`flow_invariance_under_one_form`].
pub const FLOW_TOLERANCE: f64 = 1e-9;

/// Upper bound on the linearised frequency: `sqrt(curvature / lambda_min(A))`.
pub fn omega_max(spec: &LagrangianSpec) -> f64 {
    let (lo, _) = spec.kinetic().eigen_range();
    (spec.potential().q_curvature_bound() / lo).sqrt()
}

fn check_step(spec: &LagrangianSpec, dt: f64) -> Result<(), LagrangianError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(LagrangianError::InvalidStep(dt));
    }
    let product = dt * omega_max(spec);
    if product > STABILITY_LIMIT {
        return Err(LagrangianError::StepTooLarge {
            dt,
            product,
            limit: STABILITY_LIMIT,
        });
    }
    Ok(())
}

fn acceleration(spec: &LagrangianSpec, t: f64, q: &[f64], out: &mut [f64]) {
    spec.potential().gradient(t, q, out);
    for g in out.iter_mut() {
        *g = -*g;
    }
    spec.kinetic().solve_in_place(out);
}

/// Integrates for `duration` (may be negative) and calls `visit` after every step.
/// Positions passed to `visit` are unreduced lifts.
pub fn el_flow_visit(
    spec: &LagrangianSpec,
    x: &PhasePoint,
    duration: f64,
    dt: f64,
    mut visit: impl FnMut(f64, &[f64], &[f64]),
) -> Result<PhasePoint, LagrangianError> {
    check_step(spec, dt)?;
    let d = spec.dim();
    if x.q.len() != d || x.v.len() != d {
        return Err(LagrangianError::Shape(format!("phase point is not {d}-dimensional")));
    }
    let n = (duration.abs() / dt).ceil() as usize;
    let mut t = x.t;
    let mut q = x.q.clone();
    let mut v = x.v.clone();
    if n > 0 {
        let h = duration / n as f64;
        let mut a = vec![0.0; d];
        acceleration(spec, t, &q, &mut a);
        for step in 1..=n {
            for i in 0..d {
                v[i] += 0.5 * h * a[i];
                q[i] += h * v[i];
            }
            // recompute t from the step count to avoid drift
            t = x.t + h * step as f64;
            acceleration(spec, t, &q, &mut a);
            for i in 0..d {
                v[i] += 0.5 * h * a[i];
            }
            visit(t, &q, &v);
        }
    }
    Ok(PhasePoint::new(t, q, v))
}

/// Time-`duration` image of `x`. The one-form never enters the equations.
pub fn el_flow(
    spec: &LagrangianSpec,
    x: &PhasePoint,
    duration: f64,
    dt: f64,
) -> Result<PhasePoint, LagrangianError> {
    el_flow_visit(spec, x, duration, dt, |_, _, _| {})
}

/// `v.Av/2 + V(t, q)`
pub fn energy(spec: &LagrangianSpec, x: &PhasePoint) -> f64 {
    spec.kinetic().kinetic(&x.v) + spec.potential().eval(x.t, &x.q)
}

/// Compares the flows of `spec` and of `spec` with the one-form removed.
pub fn flow_invariance_under_one_form(spec: &LagrangianSpec, x: &PhasePoint, duration: f64) -> bool {
    let bare = match spec.with_one_form(vec![0.0; spec.dim()]) {
        Ok(s) => s,
        Err(_) => return false,
    };
    let (a, b) = match (
        el_flow(spec, x, duration, DEFAULT_DT),
        el_flow(&bare, x, duration, DEFAULT_DT),
    ) {
        (Ok(a), Ok(b)) => (a, b),
        _ => return false,
    };
    let dq = a
        .q
        .iter()
        .zip(&b.q)
        .map(|(x, y)| super::circle_delta(*x, *y).abs())
        .fold(0.0, f64::max);
    let dv = a.v.iter().zip(&b.v).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    dq <= FLOW_TOLERANCE && dv <= FLOW_TOLERANCE
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lagrangian::{circle_delta, Potential};
    use std::collections::BTreeMap;

    fn pendulum() -> LagrangianSpec {
        LagrangianSpec::mechanical(Potential::from_family("pendulum", &BTreeMap::new(), 1).unwrap())
    }

    #[test]
    fn free_particle_moves_straight() {
        let free = LagrangianSpec::mechanical(Potential::zero(1));
        let y = el_flow(&free, &PhasePoint::new(0.0, vec![0.1], vec![0.5]), 1.0, 1e-3).unwrap();
        assert!(y.t.abs() < 1e-12 || (1.0 - y.t) < 1e-12);
        assert!((y.q[0] - 0.6).abs() < 1e-12);
        assert_eq!(y.v[0], 0.5);
    }

    #[test]
    fn pendulum_fixed_point() {
        let x = PhasePoint::new(0.0, vec![0.0], vec![0.0]);
        for dur in [0.5, 3.0, -2.0] {
            let y = el_flow(&pendulum(), &x, dur, 1e-3).unwrap();
            assert_eq!(y.q[0], 0.0);
            assert_eq!(y.v[0], 0.0);
        }
    }

    #[test]
    fn refinement_oracle() {
        let x = PhasePoint::new(0.0, vec![0.5], vec![0.1]);
        let coarse = el_flow(&pendulum(), &x, 2.0, 1e-3).unwrap();
        let fine = el_flow(&pendulum(), &x, 2.0, 1e-5).unwrap();
        assert!(circle_delta(coarse.q[0], fine.q[0]).abs() < 1e-4);
        assert!((coarse.v[0] - fine.v[0]).abs() < 1e-4);
    }

    #[test]
    fn energy_drift_small() {
        let spec = pendulum();
        let x = PhasePoint::new(0.0, vec![0.3], vec![0.8]);
        let e0 = energy(&spec, &x);
        let mut worst: f64 = 0.0;
        el_flow_visit(&spec, &x, 1.0, 1e-4, |t, q, v| {
            let e = energy(&spec, &PhasePoint::new(t, q.to_vec(), v.to_vec()));
            worst = worst.max((e - e0).abs());
        })
        .unwrap();
        assert!(worst < 1e-6, "{worst}");
    }

    #[test]
    fn backward_undoes_forward() {
        let spec = pendulum();
        let x = PhasePoint::new(0.0, vec![0.2], vec![-0.3]);
        let y = el_flow(&spec, &x, 1.5, 1e-3).unwrap();
        let z = el_flow(&spec, &y, -1.5, 1e-3).unwrap();
        assert!(circle_delta(z.q[0], x.q[0]).abs() < 1e-10);
        assert!((z.v[0] - x.v[0]).abs() < 1e-10);
    }

    #[test]
    fn step_too_large() {
        let x = PhasePoint::new(0.0, vec![0.0], vec![0.0]);
        assert!(matches!(
            el_flow(&pendulum(), &x, 1.0, 0.5),
            Err(LagrangianError::StepTooLarge { .. })
        ));
        assert!(matches!(
            el_flow(&pendulum(), &x, 1.0, 0.0),
            Err(LagrangianError::InvalidStep(_))
        ));
    }

    #[test]
    fn one_form_examples() {
        let p = pendulum();
        let free = LagrangianSpec::mechanical(Potential::zero(1));
        let with = |s: &LagrangianSpec, c: f64| s.with_one_form(vec![c]).unwrap();
        assert!(flow_invariance_under_one_form(&with(&p, 0.7), &PhasePoint::new(0.0, vec![0.3], vec![0.2]), 1.0));
        assert!(flow_invariance_under_one_form(&with(&free, 2.0), &PhasePoint::new(0.0, vec![0.0], vec![1.0]), 3.0));
        assert!(flow_invariance_under_one_form(&with(&p, -1.3), &PhasePoint::new(0.0, vec![0.9], vec![-0.4]), 2.0));
    }

    #[test]
    fn flow_2d_forced() {
        let mut params = BTreeMap::new();
        params.insert("forcing".to_string(), 0.4);
        let spec = LagrangianSpec::mechanical(Potential::from_family("forced_pendulum", &params, 2).unwrap());
        let y = el_flow(&spec, &PhasePoint::new(0.25, vec![0.1, 0.9], vec![0.3, -2.0]), 1.7, 1e-3).unwrap();
        assert!(y.q.iter().all(|x| (0.0..1.0).contains(x)));
        assert!((0.0..1.0).contains(&y.t));
        // second axis is free
        assert!((y.v[1] + 2.0).abs() < 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]
            #[test]
            fn positions_reduced(q in -3.0f64..3.0, v in -4.0f64..4.0, dur in -2.0f64..2.0) {
                let y = el_flow(&pendulum(), &PhasePoint::new(0.0, vec![q], vec![v]), dur, 1e-2).unwrap();
                prop_assert!((0.0..1.0).contains(&y.q[0]));
                prop_assert!((0.0..1.0).contains(&y.t));
            }

            #[test]
            fn one_form_neutral(c in -5.0f64..5.0, q in 0.0f64..1.0, v in -2.0f64..2.0) {
                let spec = pendulum().with_one_form(vec![c]).unwrap();
                prop_assert!(flow_invariance_under_one_form(&spec, &PhasePoint::new(0.0, vec![q], vec![v]), 0.5));
            }
        }
    }
}
