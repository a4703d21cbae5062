use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use rayon::prelude::*;

use super::{hausdorff_excess, resolve, run_system, stride_pick, ExperimentError, SystemRun, Tolerances};
use crate::barrier::{
    aubry_decomposition, calibrated_sets, compute_barrier, BarrierError, BarrierOptions, PhaseSample, SamplePoint,
};
use crate::conley::{build_chain_graph, chain_decomposition, limit_chain_transfer, TransferReport};
use crate::lagrangian::{
    validate_uniform_family, Envelope, LagrangianSpec, Potential, UniformFamilyParams, UniformFamilyReport,
    VelocityBound,
};
use crate::lax_oleinik::{check_dominated, solve_weak_kam_with, Grid, SolveOptions};
use crate::relations::{phase_point, phase_semiflow};

/// `L_k = base + a_k delta`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSequence {
    pub base: LagrangianSpec,
    pub delta: Potential,
    pub amplitudes: Vec<f64>,
}

impl PerturbationSequence {
    pub fn new(base: LagrangianSpec, delta: Potential, amplitudes: Vec<f64>) -> Result<Self, ExperimentError> {
        if amplitudes.is_empty() {
            return Err(ExperimentError::Invalid("empty amplitude schedule".into()));
        }
        if amplitudes.windows(2).any(|w| w[1].abs() > w[0].abs()) {
            return Err(ExperimentError::Invalid("amplitudes must be nonincreasing in size".into()));
        }
        Ok(Self { base, delta, amplitudes })
    }

    /// `a_k = scale / k` for `k = 1..=count`.
    pub fn harmonic(base: LagrangianSpec, delta: Potential, scale: f64, count: usize) -> Result<Self, ExperimentError> {
        Self::new(base, delta, (1..=count).map(|k| scale / k as f64).collect())
    }

    pub fn len(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.amplitudes.is_empty()
    }

    /// The `idx`-th member (0-based).
    pub fn member(&self, idx: usize) -> Result<LagrangianSpec, ExperimentError> {
        let v = self.base.potential().plus_scaled(&self.delta, self.amplitudes[idx])?;
        Ok(self.base.with_potential(v)?)
    }

    /// Envelope and bounds derived from the sup and Hessian bounds of the members.
    pub fn uniform_params(&self) -> Result<UniformFamilyParams, ExperimentError> {
        let (lo, hi) = self.base.kinetic().eigen_range();
        let c2: f64 = self.base.one_form().iter().map(|c| c * c).sum();
        let a_max = self.amplitudes.iter().fold(0.0f64, |m, a| m.max(a.abs()));
        let sup = self.base.potential().sup_bound() + a_max * self.delta.sup_bound();
        let hess = self.base.potential().hessian_bound() + a_max * self.delta.hessian_bound();
        let l0 = Envelope {
            a: lo / 4.0,
            b: sup + c2 / lo + 1.0,
        };
        let l1 = Envelope {
            a: 3.0 * hi / 4.0,
            b: -(sup + c2 / hi + 1.0),
        };
        let bound = VelocityBound {
            scale: 1.0,
            offset: 2.0 * (hess + hi) + 8.0 * (sup + 1.0).sqrt() + c2.sqrt(),
        };
        let params = UniformFamilyParams::new(l0, l1, bound);
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self, sample_budget: usize) -> Result<UniformFamilyReport, ExperimentError> {
        let specs = (0..self.len()).map(|i| self.member(i)).collect::<Result<Vec<_>, _>>()?;
        Ok(validate_uniform_family(&specs, &self.uniform_params()?, sample_budget)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaRow {
    pub k: usize,
    pub amplitude: f64,
    pub alpha: f64,
    pub gap: f64,
    /// `|a_k| sup |delta|`, the Lipschitz bound on the gap.
    pub bound: f64,
}

fn solve_alpha(spec: &LagrangianSpec, grid: &Grid, tol: &Tolerances) -> Result<f64, ExperimentError> {
    Ok(solve_weak_kam_with(spec, grid, SolveOptions::new(tol.tol_fix, tol.max_iters))?.alpha)
}

pub fn alpha_convergence(
    seq: &PerturbationSequence,
    grid: &Grid,
    tol: &Tolerances,
) -> Result<Vec<AlphaRow>, ExperimentError> {
    let base = solve_alpha(&seq.base, grid, tol)?;
    (0..seq.len())
        .into_par_iter()
        .map(|i| {
            let alpha = solve_alpha(&seq.member(i)?, grid, tol).map_err(ExperimentError::at_k(i + 1))?;
            Ok(AlphaRow {
                k: i + 1,
                amplitude: seq.amplitudes[i],
                alpha,
                gap: (alpha - base).abs(),
                bound: seq.amplitudes[i].abs() * seq.delta.sup_bound(),
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SemicontinuityStep {
    pub k: usize,
    pub amplitude: f64,
    pub alpha: f64,
    pub alpha_gap: f64,
    pub classes: usize,
    pub aubry: Vec<SamplePoint>,
    /// Excess of this Aubry set into the base one.
    pub excess: f64,
    /// Excess of the base Aubry set into this one.
    pub reverse_excess: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SemicontinuityReport {
    pub base_alpha: f64,
    pub base_aubry: Vec<SamplePoint>,
    pub uniform_family: bool,
    pub u_radius_cells: f64,
    /// `u_radius_cells` in phase-metric units.
    pub u_radius: f64,
    pub steps: Vec<SemicontinuityStep>,
    /// First `k` from which every tested excess stays within `u_radius`.
    pub k0: Option<usize>,
    /// Nodes in every Aubry set from the middle of the range on.
    pub limsup: Vec<SamplePoint>,
    pub headline_eps: Option<f64>,
    /// Excess of the limsup samples into the chain-recurrent base Mane samples.
    pub limsup_distance: Option<f64>,
    pub limsup_contained: bool,
    pub transfer: Option<TransferReport>,
    pub transfer_error: Option<String>,
}

pub fn run_semicontinuity(
    seq: &PerturbationSequence,
    grid: &Grid,
    tol: &Tolerances,
    u_radius_cells: f64,
) -> Result<SemicontinuityReport, ExperimentError> {
    let uniform = seq.validate(64)?;
    if !uniform.all_passed() {
        let failed: Vec<&str> = uniform
            .conditions
            .iter()
            .filter(|c| !c.passed)
            .map(|c| c.name.as_str())
            .collect();
        return Err(ExperimentError::NotUniform(failed.join(", ")));
    }
    let base = run_system(&seq.base, grid, tol)?;
    let base_pts = base.aubry_points();
    let metric = base.metric();
    let runs: Vec<SystemRun> = (0..seq.len())
        .into_par_iter()
        .map(|i| run_system(&seq.member(i)?, grid, tol).map_err(ExperimentError::at_k(i + 1)))
        .collect::<Result<_, _>>()?;
    let mut steps = Vec::with_capacity(seq.len());
    for (i, run) in runs.iter().enumerate() {
        let k = i + 1;
        let pts = run.aubry_points();
        steps.push(SemicontinuityStep {
            k,
            amplitude: seq.amplitudes[i],
            alpha: run.result.alpha,
            alpha_gap: (run.result.alpha - base.result.alpha).abs(),
            classes: run.dec.class_count(),
            aubry: run.dec.aubry_samples(),
            excess: hausdorff_excess(&pts, &base_pts, &metric)?,
            reverse_excess: hausdorff_excess(&base_pts, &pts, &metric)?,
        });
    }
    let u_radius = u_radius_cells * grid.dq();
    let k0 = (0..steps.len())
        .find(|i| steps[*i..].iter().all(|s| s.excess <= u_radius))
        .map(|i| steps[i].k);

    // base Mane system and its chain-recurrent samples
    let family = base.family()?;
    let mane = base.mane(&family);
    let limit = phase_semiflow(&mane.mane, grid)?;
    let headline = base.resolved.headline_eps;

    let half = steps.len() / 2;
    let mut common: Option<BTreeSet<(usize, usize)>> = None;
    for s in &steps[half..] {
        let here: BTreeSet<(usize, usize)> = s.aubry.iter().map(|p| (p.t, p.cell)).collect();
        common = Some(match common {
            None => here,
            Some(c) => c.intersection(&here).copied().collect(),
        });
    }
    let last = runs.last().expect("nonempty sequence");
    let limsup: Vec<SamplePoint> = common
        .unwrap_or_default()
        .into_iter()
        .map(|(t, c)| SamplePoint::base(t, c))
        .collect();
    let (limsup_distance, limsup_contained) = match headline {
        Some(eps) if !limsup.is_empty() => {
            let dec = chain_decomposition(&build_chain_graph(&limit, eps)?);
            let rec: Vec<Vec<f64>> = dec.recurrent.iter().map(|i| limit.points[*i].clone()).collect();
            let pts: Vec<Vec<f64>> = limsup
                .iter()
                .map(|p| {
                    let g = &last.sets.gamma[grid.node(p.t, p.cell)];
                    phase_point(grid, g.t, g.cell, g.disp)
                })
                .collect();
            match crate::conley::excess(&pts, &rec, &limit.metric) {
                Some(d) => (Some(d), d <= eps),
                None => (None, false),
            }
        }
        _ => (None, false),
    };

    let mut flows = Vec::with_capacity(runs.len());
    let mut pairs = Vec::with_capacity(runs.len());
    for r in &runs {
        let flow = phase_semiflow(&r.sets.i_set, grid)?;
        let aubry = r.dec.aubry_samples();
        let find = |p: &SamplePoint| r.sets.i_set.iter().position(|s| s.t == p.t && s.cell == p.cell);
        let a = aubry.first().and_then(find);
        let b = aubry.last().and_then(find);
        pairs.push((a.unwrap_or(0), b.unwrap_or(0)));
        flows.push(flow);
    }
    let (transfer, transfer_error) = match limit_chain_transfer(&flows, &limit, &pairs, &tol.eps_schedule) {
        Ok(t) => (Some(t), None),
        Err(e) => (None, Some(e.to_string())),
    };

    Ok(SemicontinuityReport {
        base_alpha: base.result.alpha,
        base_aubry: base.dec.aubry_samples(),
        uniform_family: uniform.all_passed(),
        u_radius_cells,
        u_radius,
        steps,
        k0,
        limsup,
        headline_eps: headline,
        limsup_distance,
        limsup_contained,
        transfer,
        transfer_error,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CohomologyEntry {
    pub c: Vec<f64>,
    pub alpha: f64,
    /// Nodes on tight cycles of the solver's solution.
    pub aubry: Vec<SamplePoint>,
    /// Mean velocity of the Aubry samples.
    pub mean_velocity: Vec<f64>,
    /// Static classes, when the barrier on the Aubry samples converges.
    pub classes: Option<usize>,
    pub class_error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CohomologySweep {
    pub entries: Vec<CohomologyEntry>,
    /// Excess of the Aubry set at `c[i+1]` into the one at `c[i]`.
    pub usc_probe: Vec<f64>,
    /// `alpha(mid) - (alpha(c[i]) + alpha(c[i+1])) / 2` per adjacent pair.
    pub midpoint_defects: Vec<f64>,
}

impl CohomologySweep {
    pub fn convexity_defect(&self) -> f64 {
        self.midpoint_defects.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

fn cohomology_entry(
    spec: &LagrangianSpec,
    grid: &Grid,
    tol: &Tolerances,
) -> Result<(CohomologyEntry, Vec<Vec<f64>>), ExperimentError> {
    let result = solve_weak_kam_with(spec, grid, SolveOptions::new(tol.tol_fix, tol.max_iters))?;
    let sets = calibrated_sets(&result, tol.n_cal, tol.tol_cal);
    if sets.critical.is_empty() {
        return Err(ExperimentError::EmptySet);
    }
    let phase: Vec<&PhaseSample> = sets.critical.iter().map(|n| &sets.gamma[*n]).collect();
    let mut mean = vec![0.0; grid.dim()];
    for s in &phase {
        for (m, v) in mean.iter_mut().zip(&s.v) {
            *m += v / phase.len() as f64;
        }
    }
    let aubry: Vec<SamplePoint> = phase.iter().map(|s| SamplePoint::base(s.t, s.cell)).collect();
    let points = phase.iter().map(|s| phase_point(grid, s.t, s.cell, s.disp)).collect();
    let picked = stride_pick(&aubry, tol.max_samples);
    let defect = check_dominated(&result.u, spec, grid, result.alpha)?.defect;
    let resolved = resolve(tol, spec, grid, defect);
    let mut opts = BarrierOptions::new(tol.t_min, tol.t_max);
    opts.tol_tail = tol.tol_tail;
    let classes = compute_barrier(spec, grid, result.alpha, &picked, &picked, opts)
        .and_then(|t| aubry_decomposition(&t, resolved.tol_aubry, resolved.tol_class));
    let (classes, class_error) = match classes {
        Ok(d) => (Some(d.class_count()), None),
        Err(BarrierError::WindowTooShort { source_idx, target, drift, .. }) => (
            None,
            Some(format!("window too short from {source_idx} to {target}, drift {drift:e}")),
        ),
        Err(e) => (None, Some(e.to_string())),
    };
    let entry = CohomologyEntry {
        c: spec.one_form().to_vec(),
        alpha: result.alpha,
        aubry,
        mean_velocity: mean,
        classes,
        class_error,
    };
    Ok((entry, points))
}

pub fn cohomology_sweep(
    spec: &LagrangianSpec,
    grid: &Grid,
    c_values: &[Vec<f64>],
    tol: &Tolerances,
) -> Result<CohomologySweep, ExperimentError> {
    if c_values.iter().flatten().any(|x| !x.is_finite()) {
        return Err(ExperimentError::Invalid("non-finite cohomology class".into()));
    }
    let runs: Vec<(CohomologyEntry, Vec<Vec<f64>>)> = c_values
        .par_iter()
        .enumerate()
        .map(|(i, c)| cohomology_entry(&spec.with_one_form(c.clone())?, grid, tol).map_err(ExperimentError::at_k(i)))
        .collect::<Result<_, _>>()?;
    let metric = crate::relations::phase_metric(grid.dim());
    let usc_probe = runs
        .windows(2)
        .map(|w| hausdorff_excess(&w[1].1, &w[0].1, &metric))
        .collect::<Result<_, _>>()?;
    let midpoint_defects = c_values
        .par_windows(2)
        .zip(runs.par_windows(2))
        .map(|(c, e)| {
            let mid: Vec<f64> = c[0].iter().zip(&c[1]).map(|(a, b)| 0.5 * (a + b)).collect();
            let am = solve_alpha(&spec.with_one_form(mid)?, grid, tol)?;
            Ok(am - 0.5 * (e[0].0.alpha + e[1].0.alpha))
        })
        .collect::<Result<_, ExperimentError>>()?;
    Ok(CohomologySweep {
        entries: runs.into_iter().map(|r| r.0).collect(),
        usc_probe,
        midpoint_defects,
    })
}
