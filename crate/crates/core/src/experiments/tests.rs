use super::*;
use crate::lagrangian::Potential;
use std::collections::BTreeMap;

fn family(name: &str, params: &[(&str, f64)]) -> Potential {
    let p: BTreeMap<String, f64> = params.iter().map(|(k, v)| (k.to_string(), *v)).collect();
    Potential::from_family(name, &p, 1).unwrap()
}

fn small_tol() -> Tolerances {
    Tolerances {
        t_min: 4,
        t_max: 16,
        ..Tolerances::default()
    }
}

fn circle() -> PointMetric {
    PointMetric {
        weights: vec![1.0],
        periodic: vec![true],
    }
}

#[test]
fn hausdorff_examples() {
    let m = circle();
    let a = vec![vec![0.1], vec![0.7]];
    assert_eq!(hausdorff_excess(&a, &a, &m).unwrap(), 0.0);
    assert_eq!(hausdorff_excess(&[vec![0.0]], &[vec![0.0], vec![0.5]], &m).unwrap(), 0.0);
    assert_eq!(hausdorff_excess(&[vec![0.0], vec![0.5]], &[vec![0.0]], &m).unwrap(), 0.5);
    assert!((hausdorff_excess(&[vec![0.95]], &[vec![0.05]], &m).unwrap() - 0.1).abs() < 1e-12);
    assert!(matches!(hausdorff_excess(&[], &a, &m), Err(ExperimentError::EmptySet)));
    assert!(matches!(hausdorff_excess(&a, &[], &m), Err(ExperimentError::EmptySet)));
}

#[test]
fn derived_tolerances() {
    let spec = LagrangianSpec::mechanical(family("pendulum", &[]));
    let grid = Grid::new(1, 64, 16, 3.0).unwrap();
    let r = resolve(&Tolerances::default(), &spec, &grid, 1e-12);
    assert!((r.tol_aubry - 0.5 / 64.0 / 64.0 * 16.0).abs() < 1e-15);
    assert_eq!(r.tol_class, 5.0 * r.tol_aubry);
    assert_eq!(r.tol_rel, TOL_REL_FLOOR);
    assert!(r.headline_eps.unwrap() >= 2.0 / 64.0);
    let fixed = Tolerances {
        tol_aubry: Some(1e-3),
        tol_rel: Some(1e-4),
        ..Tolerances::default()
    };
    let r = resolve(&fixed, &spec, &grid, 1.0);
    assert_eq!((r.tol_aubry, r.tol_class, r.tol_rel), (1e-3, 5e-3, 1e-4));
}

#[test]
fn sequence_validation() {
    let base = LagrangianSpec::mechanical(family("pendulum", &[]));
    let delta = family("pendulum", &[]);
    assert!(PerturbationSequence::new(base.clone(), delta.clone(), vec![]).is_err());
    assert!(PerturbationSequence::new(base.clone(), delta.clone(), vec![0.1, 0.2]).is_err());
    let seq = PerturbationSequence::harmonic(base, delta, 1.0, 4).unwrap();
    assert_eq!(seq.amplitudes, vec![1.0, 0.5, 1.0 / 3.0, 0.25]);
    assert!(seq.validate(32).unwrap().all_passed());
}

#[test]
fn alpha_constant_shift() {
    let base = LagrangianSpec::mechanical(family("pendulum", &[]));
    let delta = family("constant", &[("value", 1.0)]);
    let seq = PerturbationSequence::harmonic(base, delta, 0.3, 4).unwrap();
    let grid = Grid::new(1, 32, 8, 3.0).unwrap();
    let rows = alpha_convergence(&seq, &grid, &small_tol()).unwrap();
    for r in &rows {
        assert!((r.gap - r.amplitude).abs() < 1e-9, "{r:?}");
    }
}

#[test]
fn alpha_lipschitz_in_the_potential() {
    let base = LagrangianSpec::mechanical(family("pendulum", &[]));
    let seq = PerturbationSequence::harmonic(base, family("pendulum", &[]), 1.0, 5).unwrap();
    let grid = Grid::new(1, 64, 16, 3.0).unwrap();
    let rows = alpha_convergence(&seq, &grid, &small_tol()).unwrap();
    for r in &rows {
        assert!(r.gap <= 1.0 / r.k as f64 + 2e-2, "{r:?}");
        assert!(r.gap <= r.bound + 1e-9);
    }
    assert!(rows.windows(2).all(|w| w[1].gap <= w[0].gap + 1e-9));
}

#[test]
fn zero_perturbation_is_the_base() {
    let base = LagrangianSpec::mechanical(family("double_well", &[]));
    let delta = Potential::zero(1);
    let seq = PerturbationSequence::harmonic(base.clone(), delta, 1.0, 3).unwrap();
    let grid = Grid::new(1, 64, 16, 4.0).unwrap();
    let tol = small_tol();
    let rep = run_semicontinuity(&seq, &grid, &tol, 1.0).unwrap();
    let b = run_system(&base, &grid, &tol).unwrap();
    assert_eq!(rep.k0, Some(1));
    for s in &rep.steps {
        assert_eq!(s.excess, 0.0);
        assert_eq!(s.reverse_excess, 0.0);
        assert_eq!(s.alpha.to_bits(), b.result.alpha.to_bits());
        assert_eq!(s.aubry, b.dec.aubry_samples());
    }
    assert_eq!(rep.limsup, b.dec.aubry_samples());
    assert!(rep.limsup_contained);
}

#[test]
fn lifted_well_collapses() {
    let base = LagrangianSpec::mechanical(family("double_well", &[]));
    let delta = family("double_well", &[("amplitude", 0.0), ("lift", 1.0)]);
    let seq = PerturbationSequence::harmonic(base, delta, 1.0, 4).unwrap();
    let grid = Grid::new(1, 64, 16, 4.0).unwrap();
    let rep = run_semicontinuity(&seq, &grid, &small_tol(), 3.0).unwrap();
    assert!(rep.uniform_family);
    assert!(rep.k0.is_some());
    for s in &rep.steps {
        assert_eq!(s.classes, 1);
        assert!(s.aubry.iter().all(|p| p.cell == 0), "k = {}", s.k);
        assert!(s.excess <= rep.u_radius);
        assert!(s.reverse_excess > rep.u_radius);
        assert!(s.alpha_gap <= s.amplitude + 1e-9);
    }
    assert!(rep.limsup_contained);
    let t = rep.transfer.expect("transfer report");
    assert!(t.source_related.iter().all(|r| *r));
}

#[test]
fn reversed_roles_keep_a_gap() {
    let lifted = family("double_well", &[("lift", 1.0)]);
    let base = LagrangianSpec::mechanical(lifted);
    let delta = family("double_well", &[("amplitude", 0.0), ("lift", -1.0)]);
    let seq = PerturbationSequence::new(base, delta, vec![0.5, 0.25]).unwrap();
    let grid = Grid::new(1, 64, 16, 4.0).unwrap();
    let rep = run_semicontinuity(&seq, &grid, &small_tol(), 3.0).unwrap();
    assert!(rep.steps.iter().all(|s| s.excess == 0.0));
    let base_run = run_system(&seq.base, &grid, &small_tol()).unwrap();
    let exact = PerturbationSequence::new(seq.base.clone(), seq.delta.clone(), vec![1.0]).unwrap();
    let limit = run_system(&exact.member(0).unwrap(), &grid, &small_tol()).unwrap();
    let gap = hausdorff_excess(&limit.aubry_points(), &base_run.aubry_points(), &base_run.metric()).unwrap();
    assert!(gap > 0.25, "{gap}");
}

#[test]
fn cohomology_rotation_regime() {
    let spec = LagrangianSpec::mechanical(family("pendulum", &[]));
    let grid = Grid::new(1, 64, 32, 8.0).unwrap();
    let cs: Vec<Vec<f64>> = [-5.0, 0.0, 5.0].iter().map(|c| vec![*c]).collect();
    let sw = cohomology_sweep(&spec, &grid, &cs, &small_tol()).unwrap();
    assert!(sw.entries.iter().all(|e| e.alpha.is_finite()));
    assert!((sw.entries[1].alpha - 1.0).abs() < 0.02);
    assert_eq!(sw.entries[1].classes, Some(1));
    assert!(sw.entries[1].aubry.iter().all(|p| p.cell == 0));
    assert!(sw.entries[0].mean_velocity[0] > 1.0);
    assert!(sw.entries[2].mean_velocity[0] < -1.0);
    assert!(sw.convexity_defect() <= 1e-3);
    assert_eq!(sw.usc_probe.len(), 2);
    assert!(cohomology_sweep(&spec, &grid, &[vec![f64::NAN]], &small_tol()).is_err());
}
