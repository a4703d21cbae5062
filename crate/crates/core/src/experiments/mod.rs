//! End-to-end pipelines on one system and the perturbation and cohomology
//! scenarios built on them.

mod scenarios;
mod svg;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use scenarios::{
    alpha_convergence, cohomology_sweep, run_semicontinuity, AlphaRow, CohomologyEntry, CohomologySweep,
    PerturbationSequence, SemicontinuityReport, SemicontinuityStep,
};
pub use svg::{scatter_svg, Series};

use crate::barrier::{
    aubry_decomposition, all_nodes, calibrated_sets, compute_barrier, mane_set, weak_kam_from_barrier,
    AubryDecomposition, BarrierError, BarrierOptions, BarrierTable, CalibratedSets, PhaseSample, SamplePoint,
};
use crate::conley::{excess, log_schedule, ConleyError, PointMetric};
use crate::lagrangian::{LagrangianError, LagrangianSpec};
use crate::lax_oleinik::{
    check_dominated, solve_weak_kam_with, DominationReport, Grid, LaxOleinikError, SolveOptions, WeakKamResult,
};
use crate::relations::{
    check_oneway, phase_metric, phase_point, relation_cu, relation_ru, CoincidenceReport, RelationTable,
    RelationsError,
};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("empty sample set")]
    EmptySet,
    #[error("perturbation family is not uniform: {0}")]
    NotUniform(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("k = {k}: {source}")]
    AtK { k: usize, source: Box<ExperimentError> },
    #[error(transparent)]
    Lagrangian(#[from] LagrangianError),
    #[error(transparent)]
    LaxOleinik(#[from] LaxOleinikError),
    #[error(transparent)]
    Barrier(#[from] BarrierError),
    #[error(transparent)]
    Conley(#[from] ConleyError),
    #[error(transparent)]
    Relations(#[from] RelationsError),
}

impl ExperimentError {
    pub fn at_k(k: usize) -> impl FnOnce(ExperimentError) -> ExperimentError {
        move |e| ExperimentError::AtK { k, source: Box::new(e) }
    }
}

/// Numerical knobs of a pipeline run. `None` tolerances are derived from the
/// grid and the measured domination defect.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub tol_fix: f64,
    pub max_iters: usize,
    pub tol_dom: f64,
    pub tol_cal: f64,
    pub tol_aubry: Option<f64>,
    pub tol_class: Option<f64>,
    pub tol_rel: Option<f64>,
    pub eps_schedule: Vec<f64>,
    pub t_min: usize,
    pub t_max: usize,
    pub tol_tail: f64,
    pub n_cal: usize,
    /// Extra barrier samples: every `lattice_q`-th cell per axis ...
    pub lattice_q: usize,
    /// ... at every `lattice_t`-th time slice.
    pub lattice_t: usize,
    /// Cap on calibrated-set samples added to the barrier table.
    pub max_samples: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            tol_fix: 1e-11,
            max_iters: 20_000,
            tol_dom: 1e-8,
            tol_cal: 1e-9,
            tol_aubry: None,
            tol_class: None,
            tol_rel: None,
            eps_schedule: log_schedule(1.0, 0.01, 4),
            t_min: 6,
            t_max: 16,
            tol_tail: 1e-3,
            n_cal: 4,
            lattice_q: 8,
            lattice_t: 16,
            max_samples: 256,
        }
    }
}

pub const TOL_AUBRY_FLOOR: f64 = 1e-6;
pub const TOL_REL_FLOOR: f64 = 1e-9;

/// Cost of moving one cell in one step: the resolution of the discrete barrier.
pub fn cell_move_cost(spec: &LagrangianSpec, grid: &Grid) -> f64 {
    let (_, hi) = spec.kinetic().eigen_range();
    0.5 * hi * grid.dq() * grid.dq() / grid.dt()
}

/// Tolerances after filling in the derived defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Resolved {
    pub tol_aubry: f64,
    pub tol_class: f64,
    pub tol_rel: f64,
    /// Smallest schedule value at least twice the cell size.
    pub headline_eps: Option<f64>,
}

pub(crate) fn resolve(tol: &Tolerances, spec: &LagrangianSpec, grid: &Grid, defect: f64) -> Resolved {
    let tol_aubry = tol
        .tol_aubry
        .unwrap_or_else(|| TOL_AUBRY_FLOOR.max(cell_move_cost(spec, grid)));
    Resolved {
        tol_aubry,
        tol_class: tol.tol_class.unwrap_or(5.0 * tol_aubry),
        tol_rel: tol.tol_rel.unwrap_or(TOL_REL_FLOOR.max(3.0 * defect.max(0.0))),
        headline_eps: crate::conley::headline_eps(&tol.eps_schedule, grid.dq()),
    }
}

pub(crate) fn stride_pick<T: Clone>(xs: &[T], cap: usize) -> Vec<T> {
    if xs.len() <= cap || cap == 0 {
        return xs.to_vec();
    }
    let stride = xs.len().div_ceil(cap);
    xs.iter().step_by(stride).cloned().collect()
}

/// Barrier samples: tight-cycle nodes, a capped stride of the calibrated set
/// and a coarse space-time lattice, as sorted distinct nodes.
fn pick_samples(grid: &Grid, sets: &CalibratedSets, tol: &Tolerances) -> Vec<SamplePoint> {
    let mut nodes: Vec<usize> = sets.critical.clone();
    let i_nodes: Vec<usize> = sets.i_set.iter().map(|s| s.node).collect();
    nodes.extend(stride_pick(&i_nodes, tol.max_samples));
    let lq = tol.lattice_q.max(1);
    let lt = tol.lattice_t.max(1);
    for t in (0..grid.n_t()).step_by(lt) {
        for cell in 0..grid.cells() {
            if grid.coords(cell)[..grid.dim()].iter().all(|c| c % lq == 0) {
                nodes.push(grid.node(t, cell));
            }
        }
    }
    nodes.sort_unstable();
    nodes.dedup();
    nodes
        .into_iter()
        .map(|n| {
            let (t, c) = grid.node_parts(n);
            SamplePoint::base(t, c)
        })
        .collect()
}

/// Everything computed for one system: solution, calibrated sets, barrier
/// table on the samples and its Aubry decomposition.
#[derive(Clone, Debug)]
pub struct SystemRun {
    pub spec: LagrangianSpec,
    pub grid: Grid,
    pub tol: Tolerances,
    pub result: WeakKamResult,
    pub domination: DominationReport,
    pub sets: CalibratedSets,
    pub table: BarrierTable,
    pub dec: AubryDecomposition,
    pub resolved: Resolved,
}

pub fn run_system(spec: &LagrangianSpec, grid: &Grid, tol: &Tolerances) -> Result<SystemRun, ExperimentError> {
    let opts = SolveOptions::new(tol.tol_fix, tol.max_iters);
    let result = solve_weak_kam_with(spec, grid, opts)?;
    let domination = check_dominated(&result.u, spec, grid, result.alpha)?;
    let sets = calibrated_sets(&result, tol.n_cal, tol.tol_cal);
    let resolved = resolve(tol, spec, grid, domination.defect);
    let samples = pick_samples(grid, &sets, tol);
    let table = barrier(spec, grid, result.alpha, &samples, &samples, tol)?;
    let dec = aubry_decomposition(&table, resolved.tol_aubry, resolved.tol_class)?;
    Ok(SystemRun {
        spec: spec.clone(),
        grid: grid.clone(),
        tol: tol.clone(),
        result,
        domination,
        sets,
        table,
        dec,
        resolved,
    })
}

fn barrier(
    spec: &LagrangianSpec,
    grid: &Grid,
    alpha: f64,
    sources: &[SamplePoint],
    targets: &[SamplePoint],
    tol: &Tolerances,
) -> Result<BarrierTable, ExperimentError> {
    let mut opts = BarrierOptions::new(tol.t_min, tol.t_max);
    opts.tol_tail = tol.tol_tail;
    Ok(compute_barrier(spec, grid, alpha, sources, targets, opts)?)
}

/// Solutions checked for the relations of one system.
#[derive(Clone, Debug)]
pub struct SolutionCheck {
    pub label: String,
    pub relations: RelationTable,
    pub report: CoincidenceReport,
    /// Indices into the system's barrier samples.
    pub sample_index: Vec<usize>,
}

impl SystemRun {
    /// Aubry samples lifted with the solution's backward velocity.
    pub fn aubry_phase(&self) -> Vec<PhaseSample> {
        self.dec
            .aubry
            .iter()
            .map(|i| {
                let s = &self.table.sources[*i];
                self.sets.gamma[self.grid.node(s.t, s.cell)].clone()
            })
            .collect()
    }

    pub fn aubry_points(&self) -> Vec<Vec<f64>> {
        self.aubry_phase()
            .iter()
            .map(|s| phase_point(&self.grid, s.t, s.cell, s.disp))
            .collect()
    }

    pub fn metric(&self) -> PointMetric {
        phase_metric(self.grid.dim())
    }

    /// One solution `h(x_c, .)` per static class, `x_c` the class's first sample.
    pub fn class_solutions(&self) -> Result<Vec<WeakKamResult>, ExperimentError> {
        let reps: Vec<SamplePoint> = self.dec.classes.iter().map(|c| self.table.sources[c[0]].clone()).collect();
        let wide = barrier(&self.spec, &self.grid, self.result.alpha, &reps, &all_nodes(&self.grid), &self.tol)?;
        (0..reps.len())
            .map(|i| {
                let u = weak_kam_from_barrier(&wide, i)?;
                Ok(WeakKamResult::from_value_function(&self.spec, &self.grid, u, self.result.alpha)?)
            })
            .collect()
    }

    /// The solver's solution followed by [`SystemRun::class_solutions`].
    pub fn family(&self) -> Result<Vec<WeakKamResult>, ExperimentError> {
        let mut out = vec![self.result.clone()];
        out.extend(self.class_solutions()?);
        Ok(out)
    }

    pub fn mane(&self, family: &[WeakKamResult]) -> CalibratedSets {
        let aubry: Vec<SamplePoint> = self.dec.aubry_samples();
        mane_set(family, self.tol.n_cal, self.tol.tol_cal, &aubry)
    }

    /// `R_u` against `C_u` on the barrier samples lying in the calibrated set of `solution`.
    pub fn check_solution(&self, label: &str, solution: &WeakKamResult) -> Result<SolutionCheck, ExperimentError> {
        let sets = calibrated_sets(solution, self.tol.n_cal, self.tol.tol_cal);
        let mut in_set = vec![false; self.grid.nodes()];
        for s in &sets.i_set {
            in_set[s.node] = true;
        }
        let sample_index: Vec<usize> = (0..self.table.sources.len())
            .filter(|i| {
                let s = &self.table.sources[*i];
                in_set[self.grid.node(s.t, s.cell)]
            })
            .collect();
        let sub = self.table.square_subset(&sample_index)?;
        let defect = check_dominated(&solution.u, &self.spec, &self.grid, solution.alpha)?.defect;
        let tol_rel = self
            .tol
            .tol_rel
            .unwrap_or(TOL_REL_FLOOR.max(3.0 * defect.max(self.domination.defect).max(0.0)));
        let levels = relation_cu(&sets.i_set, &self.grid, &sub.sources, &self.tol.eps_schedule)?;
        let relations = relation_ru(&solution.u, &sub, tol_rel)?.with_chain(levels)?;
        let report = check_oneway(&relations);
        Ok(SolutionCheck {
            label: label.to_string(),
            relations,
            report,
            sample_index,
        })
    }
}

/// `sup_{a in A} min_{b in B} metric(a, b)`.
pub fn hausdorff_excess(a: &[Vec<f64>], b: &[Vec<f64>], metric: &PointMetric) -> Result<f64, ExperimentError> {
    excess(a, b, metric).ok_or(ExperimentError::EmptySet)
}

#[cfg(test)]
mod tests;
