//! Variational and chain relations on sampled calibrated sets, the
//! non-degeneracy ladder and the interpolation between two solutions.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::barrier::{AubryDecomposition, BarrierTable, PhaseSample, SamplePoint};
use crate::conley::{build_chain_graph, chain_decomposition, ConleyError, PointMetric, SampledSemiflow};
use crate::lax_oleinik::{check_dominated, DominationReport, Grid, LaxOleinikError, ValueFunction};


#[derive(Debug, Error)]
pub enum RelationsError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("interpolated function fails domination: defect {defect:e} at {witness:?}")]
    DominationFailure { defect: f64, witness: Option<(usize, usize)> },
    #[error(transparent)]
    Conley(#[from] ConleyError),
    #[error(transparent)]
    LaxOleinik(#[from] LaxOleinikError),
}

/// Chain reachability among the samples at one `eps`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainLevel {
    pub eps: f64,
    pub c: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelationTable {
    pub n: usize,
    pub samples: Vec<SamplePoint>,
    /// `r[i*n+j]`: `u(y_j) - u(x_i) >= h[i][j] - tol_rel`.
    pub r: Vec<bool>,
    pub tol_rel: f64,
    /// `max h[i][k] - (u_k - u_i)` over triples with `r[i][j]` and `r[j][k]`.
    pub transitivity_defect: f64,
    pub levels: Vec<ChainLevel>,
}

impl RelationTable {
    pub fn r_at(&self, i: usize, j: usize) -> bool {
        self.r[i * self.n + j]
    }

    pub fn with_chain(mut self, levels: Vec<ChainLevel>) -> Result<Self, RelationsError> {
        if levels.iter().any(|l| l.c.len() != self.n * self.n) {
            return Err(RelationsError::Shape("chain level size differs from sample count".into()));
        }
        self.levels = levels;
        Ok(self)
    }
}

fn sample_values(u: &ValueFunction, samples: &[SamplePoint]) -> Result<Vec<f64>, RelationsError> {
    samples
        .iter()
        .map(|s| {
            if s.t >= u.n_t() || s.cell >= u.cells() {
                Err(RelationsError::Shape(format!("sample ({}, {}) outside u", s.t, s.cell)))
            } else {
                Ok(u.get(s.t, s.cell))
            }
        })
        .collect()
}

pub fn relation_ru(u: &ValueFunction, table: &BarrierTable, tol_rel: f64) -> Result<RelationTable, RelationsError> {
    if !table.is_square() {
        return Err(RelationsError::Shape("barrier table is not square".into()));
    }
    let n = table.sources.len();
    let vals = sample_values(u, &table.sources)?;
    let r: Vec<bool> = (0..n)
        .into_par_iter()
        .flat_map_iter(|i| {
            let vals = &vals;
            (0..n).map(move |j| vals[j] - vals[i] >= table.get(i, j) - tol_rel)
        })
        .collect();
    let transitivity_defect = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut w = f64::NEG_INFINITY;
            for j in (0..n).filter(|j| r[i * n + j]) {
                for k in (0..n).filter(|k| r[j * n + k]) {
                    w = w.max(table.get(i, k) - (vals[k] - vals[i]));
                }
            }
            w
        })
        .reduce(|| f64::NEG_INFINITY, f64::max);
    Ok(RelationTable {
        n,
        samples: table.sources.clone(),
        r,
        tol_rel,
        transitivity_defect,
        levels: Vec::new(),
    })
}

/// Phase-space point `(t, q, v dt)`; the last block is a displacement per
/// step, on the same scale as `q`.
pub fn phase_point(grid: &Grid, t: usize, cell: usize, disp: [i32; 2]) -> Vec<f64> {
    let d = grid.dim();
    let mut p = Vec::with_capacity(1 + 2 * d);
    p.push((t % grid.n_t()) as f64 / grid.n_t() as f64);
    p.extend(grid.position(cell));
    p.extend(disp[..d].iter().map(|k| *k as f64 * grid.dq()));
    p
}

/// Euclidean metric on [`phase_point`]s, periodic in `t` and `q`.
pub fn phase_metric(dim: usize) -> PointMetric {
    let mut periodic = vec![true; 1 + dim];
    periodic.extend(vec![false; dim]);
    PointMetric {
        weights: vec![1.0; 1 + 2 * dim],
        periodic,
    }
}

pub fn phase_semiflow(samples: &[PhaseSample], grid: &Grid) -> Result<SampledSemiflow, RelationsError> {
    let points = samples.iter().map(|s| phase_point(grid, s.t, s.cell, s.disp)).collect();
    let images = samples
        .iter()
        .map(|s| {
            s.images
                .iter()
                .map(|(node, disp)| {
                    let (t, cell) = grid.node_parts(*node);
                    phase_point(grid, t, cell, *disp)
                })
                .collect()
        })
        .collect();
    Ok(SampledSemiflow::new(points, images, phase_metric(grid.dim()), 1.0)?)
}

/// Chain reachability on `i_set`, read off at `samples` (matched by base node).
pub fn relation_cu(
    i_set: &[PhaseSample],
    grid: &Grid,
    samples: &[SamplePoint],
    eps_schedule: &[f64],
) -> Result<Vec<ChainLevel>, RelationsError> {
    if i_set.is_empty() {
        return Err(RelationsError::Shape("empty calibrated set".into()));
    }
    let index: Vec<usize> = samples
        .iter()
        .map(|s| {
            i_set
                .iter()
                .position(|p| p.t == s.t && p.cell == s.cell)
                .ok_or_else(|| RelationsError::Shape(format!("sample ({}, {}) not in the calibrated set", s.t, s.cell)))
        })
        .collect::<Result<_, _>>()?;
    let flow = phase_semiflow(i_set, grid)?;
    let n = samples.len();
    eps_schedule
        .iter()
        .map(|&eps| {
            let dec = chain_decomposition(&build_chain_graph(&flow, eps)?);
            let c = (0..n * n).map(|k| dec.related(index[k / n], index[k % n])).collect();
            Ok(ChainLevel { eps, c })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoincidenceLevel {
    pub eps: f64,
    pub oneway_violations: Vec<(usize, usize)>,
    pub coincidence_violations: Vec<(usize, usize)>,
    pub coincidence_holds: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoincidenceReport {
    pub tol_rel: f64,
    pub levels: Vec<CoincidenceLevel>,
}

impl CoincidenceReport {
    pub fn at(&self, eps: f64) -> Option<&CoincidenceLevel> {
        self.levels.iter().find(|l| l.eps == eps)
    }

    /// `{oneway_violations, coincidence_violations, eps, tol_rel}` at `eps`.
    pub fn to_json(&self, eps: f64) -> serde_json::Value {
        let pairs = |v: &[(usize, usize)]| v.iter().map(|(i, j)| vec![*i, *j]).collect::<Vec<_>>();
        match self.at(eps) {
            Some(l) => serde_json::json!({
                "oneway_violations": pairs(&l.oneway_violations),
                "coincidence_violations": pairs(&l.coincidence_violations),
                "eps": eps,
                "tol_rel": self.tol_rel,
            }),
            None => serde_json::json!({
                "oneway_violations": [],
                "coincidence_violations": [],
                "eps": eps,
                "tol_rel": self.tol_rel,
            }),
        }
    }
}

pub fn check_oneway(rel: &RelationTable) -> CoincidenceReport {
    let n = rel.n;
    let levels = rel
        .levels
        .iter()
        .map(|l| {
            let mut oneway = Vec::new();
            let mut coincidence = Vec::new();
            for i in 0..n {
                for j in 0..n {
                    match (rel.r[i * n + j], l.c[i * n + j]) {
                        (true, false) => oneway.push((i, j)),
                        (false, true) => coincidence.push((i, j)),
                        _ => {}
                    }
                }
            }
            CoincidenceLevel {
                eps: l.eps,
                coincidence_holds: oneway.is_empty() && coincidence.is_empty(),
                oneway_violations: oneway,
                coincidence_violations: coincidence,
            }
        })
        .collect();
    CoincidenceReport {
        tol_rel: rel.tol_rel,
        levels,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapProfile {
    /// Sorted values of `u - v` on the Aubry samples.
    pub values: Vec<f64>,
    pub max_gap: f64,
    /// Clusters of `values` separated by more than the class tolerance.
    pub distinct: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LadderReport {
    pub h1_class_count: usize,
    pub h2: String,
    pub h3: String,
    pub h5_gap_profiles: Vec<GapProfile>,
    pub h6_coincidence: Option<bool>,
    pub h7_component_count: usize,
    pub h7_holds: bool,
    /// Finite quotient forces components and classes to agree.
    pub implies_1_7: bool,
    /// `u - v` takes at most one value per class.
    pub profile_consistent: bool,
}

impl LadderReport {
    /// `{h1, h5: {values, max_gap}, h7}`; one `h5` entry per pair.
    pub fn to_json(&self) -> serde_json::Value {
        let h5: Vec<_> = self
            .h5_gap_profiles
            .iter()
            .map(|p| serde_json::json!({"values": p.values, "max_gap": p.max_gap}))
            .collect();
        serde_json::json!({
            "h1": self.h1_class_count,
            "h2": self.h2,
            "h3": self.h3,
            "h5": h5,
            "h6": self.h6_coincidence,
            "h7": {"components": self.h7_component_count, "classes": self.h1_class_count, "holds": self.h7_holds},
        })
    }
}

const NOT_EVALUATED: &str = "not evaluated";

fn space_time_point(grid: &Grid, s: &SamplePoint) -> Vec<f64> {
    let mut p = vec![s.t as f64 / grid.n_t() as f64];
    p.extend(grid.position(s.cell));
    p
}

/// Connected components of the Aubry samples in space-time, measured in grid
/// units and linking samples closer than 1.5 times the largest
/// nearest-neighbour distance (diagonal grid neighbours always link).
fn spatial_components(grid: &Grid, pts: &[SamplePoint]) -> usize {
    let n = pts.len();
    if n == 0 {
        return 0;
    }
    let mut weights = vec![grid.n_t() as f64];
    weights.extend(std::iter::repeat_n(grid.n_q() as f64, grid.dim()));
    let metric = PointMetric {
        weights,
        periodic: vec![true; 1 + grid.dim()],
    };
    let xs: Vec<Vec<f64>> = pts.iter().map(|s| space_time_point(grid, s)).collect();
    let dist = |a: usize, b: usize| metric.distance(&xs[a], &xs[b]);
    let nn = (0..n)
        .map(|a| (0..n).filter(|b| *b != a).map(|b| dist(a, b)).fold(f64::INFINITY, f64::min))
        .filter(|d| d.is_finite())
        .fold(0.0, f64::max);
    let link = (1.5 * nn).max(1.5);
    let mut uf = petgraph::unionfind::UnionFind::<usize>::new(n);
    for a in 0..n {
        for b in a + 1..n {
            if dist(a, b) <= link {
                uf.union(a, b);
            }
        }
    }
    let mut roots: Vec<usize> = (0..n).map(|a| uf.find(a)).collect();
    roots.sort_unstable();
    roots.dedup();
    roots.len()
}

fn gap_profile(mut values: Vec<f64>, tol: f64) -> GapProfile {
    values.sort_by(f64::total_cmp);
    let gaps = values.windows(2).map(|w| w[1] - w[0]);
    let max_gap = gaps.clone().fold(0.0, f64::max);
    let distinct = if values.is_empty() { 0 } else { 1 + gaps.filter(|g| *g > tol).count() };
    GapProfile {
        values,
        max_gap,
        distinct,
    }
}

pub fn ladder_check(
    dec: &AubryDecomposition,
    grid: &Grid,
    pairs: &[(ValueFunction, ValueFunction)],
    coincidence: Option<bool>,
) -> Result<LadderReport, RelationsError> {
    let aubry = dec.aubry_samples();
    let mut profiles = Vec::with_capacity(pairs.len());
    let mut consistent = true;
    for (u, v) in pairs {
        let a = sample_values(u, &aubry)?;
        let b = sample_values(v, &aubry)?;
        let diff: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        for class in &dec.classes {
            let vals: Vec<f64> = class
                .iter()
                .map(|s| diff[dec.position_of(*s).expect("class member is an Aubry sample")])
                .collect();
            let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            consistent &= hi - lo <= dec.tol_class;
        }
        let p = gap_profile(diff, dec.tol_class);
        consistent &= p.distinct <= dec.class_count();
        profiles.push(p);
    }
    let components = spatial_components(grid, &aubry);
    let h7 = components == dec.class_count();
    Ok(LadderReport {
        h1_class_count: dec.class_count(),
        h2: NOT_EVALUATED.into(),
        h3: NOT_EVALUATED.into(),
        h5_gap_profiles: profiles,
        h6_coincidence: coincidence,
        h7_component_count: components,
        h7_holds: h7,
        implies_1_7: h7,
        profile_consistent: consistent,
    })
}

/// Piecewise-linear primitive of the indicator of a union of closed intervals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntervalPrimitive {
    pub intervals: Vec<(f64, f64)>,
}

impl IntervalPrimitive {
    /// `values` fattened by `tol` and merged.
    pub fn fattened(values: &[f64], tol: f64) -> Self {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let mut intervals: Vec<(f64, f64)> = Vec::new();
        for x in v {
            let (lo, hi) = (x - tol, x + tol);
            match intervals.last_mut() {
                Some(last) if lo <= last.1 => last.1 = last.1.max(hi),
                _ => intervals.push((lo, hi)),
            }
        }
        Self { intervals }
    }

    pub fn eval(&self, s: f64) -> f64 {
        self.intervals
            .iter()
            .take_while(|(lo, _)| *lo < s)
            .map(|(lo, hi)| hi.min(s) - lo)
            .sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FathiResult {
    pub w: ValueFunction,
    pub theta: IntervalPrimitive,
    /// `(v - u)` on the Aubry samples.
    pub image: Vec<f64>,
    /// `max w(y) - w(x) - h(x, y)` over Aubry sample pairs.
    pub barrier_defect: f64,
    pub barrier_witness: Option<(usize, usize)>,
    pub domination: DominationReport,
}

/// Builds `w = u + theta(v - u)` on the Aubry samples and extends it by
/// `w(x) = min_a w(a) + h(a, x)`.
///
/// `ext` must have the Aubry samples of `dec` as sources and every grid node,
/// in node order, as targets.
pub fn fathi_interpolate(
    u: &ValueFunction,
    v: &ValueFunction,
    dec: &AubryDecomposition,
    ext: &BarrierTable,
    tol_dom: f64,
) -> Result<FathiResult, RelationsError> {
    let grid = &ext.grid;
    let aubry = dec.aubry_samples();
    if ext.sources.len() != aubry.len() || !ext.sources.iter().zip(&aubry).all(|(a, b)| a.same_base(b)) {
        return Err(RelationsError::Shape("extension sources differ from the Aubry samples".into()));
    }
    if ext.targets.len() != grid.nodes()
        || !ext.targets.iter().enumerate().all(|(k, s)| grid.node(s.t, s.cell) == k)
    {
        return Err(RelationsError::Shape("extension targets must be all nodes in order".into()));
    }
    let ua = sample_values(u, &aubry)?;
    let va = sample_values(v, &aubry)?;
    let image: Vec<f64> = va.iter().zip(&ua).map(|(a, b)| a - b).collect();
    let theta = IntervalPrimitive::fattened(&image, dec.tol_aubry);
    let wa: Vec<f64> = ua.iter().zip(&image).map(|(x, d)| x + theta.eval(*d)).collect();
    let m = aubry.len();
    let values: Vec<f64> = (0..grid.nodes())
        .into_par_iter()
        .map(|k| (0..m).map(|a| wa[a] + ext.get(a, k)).fold(f64::INFINITY, f64::min))
        .collect();
    let w = ValueFunction::new(grid.n_t(), grid.cells(), values)?;
    let mut barrier_defect = f64::NEG_INFINITY;
    let mut barrier_witness = None;
    for a in 0..m {
        for b in 0..m {
            let k = grid.node(aubry[b].t, aubry[b].cell);
            let e = wa[b] - wa[a] - ext.get(a, k);
            if e > barrier_defect {
                barrier_defect = e;
                barrier_witness = Some((a, b));
            }
        }
    }
    let domination = check_dominated(&w, &ext.spec, grid, ext.alpha)?;
    if barrier_defect > tol_dom {
        return Err(RelationsError::DominationFailure {
            defect: barrier_defect,
            witness: barrier_witness,
        });
    }
    if !domination.dominated(tol_dom) {
        return Err(RelationsError::DominationFailure {
            defect: domination.defect,
            witness: domination.witness,
        });
    }
    Ok(FathiResult {
        w,
        theta,
        image,
        barrier_defect,
        barrier_witness,
        domination,
    })
}
