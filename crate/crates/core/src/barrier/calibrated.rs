use std::collections::BTreeMap;

use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::SamplePoint;
use crate::lax_oleinik::{Grid, StepOperator, WeakKamResult};

/// Edges `(k, q') -> (k + 1, q)` with calibration slack at most `tol`.
#[derive(Clone, Debug)]
pub struct TightGraph {
    grid: Grid,
    out_start: Vec<u32>,
    out_dst: Vec<u32>,
    in_start: Vec<u32>,
    in_src: Vec<u32>,
}

fn csr(n: usize, edges: &[(u32, u32)]) -> (Vec<u32>, Vec<u32>) {
    let mut start = vec![0u32; n + 1];
    for (a, _) in edges {
        start[*a as usize + 1] += 1;
    }
    for i in 0..n {
        start[i + 1] += start[i];
    }
    let mut fill = start.clone();
    let mut dst = vec![0u32; edges.len()];
    for (a, b) in edges {
        let slot = &mut fill[*a as usize];
        dst[*slot as usize] = *b;
        *slot += 1;
    }
    (start, dst)
}

impl TightGraph {
    pub fn build(result: &WeakKamResult, tol: f64) -> Self {
        let grid = result.grid.clone();
        let op = StepOperator::new(&result.spec, &grid).expect("result grid is valid");
        let cells = grid.cells();
        let n_t = grid.n_t();
        let shift = result.alpha * grid.dt();
        let mut edges = Vec::new();
        for k in 0..n_t {
            let uk = result.u.slice(k);
            let un = result.u.slice(k + 1);
            for q in 0..cells {
                for o in 0..op.offsets().len() {
                    let src = op.source(q, o);
                    // same association order as the operator, so calibrated steps have zero slack
                    let reach = (uk[src] + op.potential_cost(k, src)) + op.kinetic_cost(o);
                    if reach + shift - un[q] <= tol {
                        edges.push((grid.node(k, src) as u32, grid.node(k + 1, q) as u32));
                    }
                }
            }
        }
        edges.sort_unstable();
        let n = grid.nodes();
        let (out_start, out_dst) = csr(n, &edges);
        let mut rev: Vec<(u32, u32)> = edges.iter().map(|(a, b)| (*b, *a)).collect();
        rev.sort_unstable();
        let (in_start, in_src) = csr(n, &rev);
        Self {
            grid,
            out_start,
            out_dst,
            in_start,
            in_src,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn successors(&self, node: usize) -> &[u32] {
        &self.out_dst[self.out_start[node] as usize..self.out_start[node + 1] as usize]
    }

    pub fn predecessors(&self, node: usize) -> &[u32] {
        &self.in_src[self.in_start[node] as usize..self.in_start[node + 1] as usize]
    }

    pub fn edge_count(&self) -> usize {
        self.out_dst.len()
    }

    /// Length of the longest forward tight path from each node, capped at `cap`.
    pub fn forward_lengths(&self, cap: u32) -> Vec<u32> {
        let n = self.grid.nodes();
        let mut len = vec![0u32; n];
        for _ in 0..cap {
            let mut changed = false;
            let next: Vec<u32> = (0..n)
                .map(|x| {
                    let best = self.successors(x).iter().map(|s| len[*s as usize]).max();
                    let v = best.map_or(0, |b| (b + 1).min(cap));
                    changed |= v != len[x];
                    v
                })
                .collect();
            len = next;
            if !changed {
                break;
            }
        }
        len
    }

    /// Nodes lying on a cycle; these are the discrete Aubry candidates.
    pub fn critical_nodes(&self) -> Vec<usize> {
        let n = self.grid.nodes();
        let mut g = DiGraph::<(), ()>::with_capacity(n, self.edge_count());
        for _ in 0..n {
            g.add_node(());
        }
        for x in 0..n {
            for s in self.successors(x) {
                g.add_edge((x as u32).into(), (*s).into(), ());
            }
        }
        let mut out: Vec<usize> = tarjan_scc(&g)
            .into_iter()
            .filter(|c| c.len() > 1 || g.contains_edge(c[0], c[0]))
            .flatten()
            .map(|i| i.index())
            .collect();
        out.sort_unstable();
        out
    }

    /// Follows the tight successor with the longest forward path for `steps`
    /// steps (ties: smallest displacement, then lowest node). Returns each
    /// visited node with the displacement of the step into it.
    pub fn trajectory(&self, node: usize, steps: usize, len: &[u32]) -> Option<Vec<(usize, [i32; 2])>> {
        let mut cur = node;
        let mut out = Vec::with_capacity(steps);
        for _ in 0..steps {
            let (_, cq) = self.grid.node_parts(cur);
            let next = self.successors(cur).iter().map(|s| *s as usize).min_by_key(|s| {
                let d = self.grid.displacement(cq, self.grid.node_parts(*s).1);
                (std::cmp::Reverse(len[*s]), d[0] * d[0] + d[1] * d[1], *s)
            })?;
            out.push((next, self.grid.displacement(cq, self.grid.node_parts(next).1)));
            cur = next;
        }
        Some(out)
    }

    /// End of [`TightGraph::trajectory`]; `(node, [0, 0])` for zero steps.
    pub fn follow(&self, node: usize, steps: usize, len: &[u32]) -> Option<(usize, [i32; 2])> {
        let path = self.trajectory(node, steps, len)?;
        Some(path.last().copied().unwrap_or((node, [0, 0])))
    }
}

/// A phase-space sample: a grid node with a per-step displacement.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseSample {
    pub node: usize,
    pub t: usize,
    pub cell: usize,
    pub disp: [i32; 2],
    pub v: Vec<f64>,
    /// Forward images along tight edges inside the calibrated set after
    /// `n_t ..= 2 n_t - 1` steps, as `(node, displacement of the last step)`.
    pub images: Vec<(usize, [i32; 2])>,
}

impl PhaseSample {
    pub fn new(grid: &Grid, node: usize, disp: [i32; 2], images: Vec<(usize, [i32; 2])>) -> Self {
        let (t, cell) = grid.node_parts(node);
        Self {
            node,
            t,
            cell,
            disp,
            v: grid.velocity(disp),
            images,
        }
    }

    pub fn sample_point(&self) -> SamplePoint {
        SamplePoint {
            t: self.t,
            cell: self.cell,
            v: Some(self.v.clone()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailReport {
    /// Largest distance to the Aubry samples after `n_cal` periods backward.
    pub backward: f64,
    /// Same, forward along tight edges.
    pub forward: f64,
    /// Samples with no forward tight path of `n_cal` periods.
    pub forward_missing: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibratedSets {
    pub n_cal: usize,
    pub tol_cal: f64,
    pub gamma: Vec<PhaseSample>,
    pub i_set: Vec<PhaseSample>,
    pub mane: Vec<PhaseSample>,
    /// Discrete Aubry candidates (nodes on tight cycles), per solution for a Mane set.
    pub critical: Vec<usize>,
    pub tails: Option<TailReport>,
}

impl CalibratedSets {
    pub fn i_set_bases(&self) -> Vec<SamplePoint> {
        self.i_set.iter().map(|s| SamplePoint::base(s.t, s.cell)).collect()
    }
}

fn pred_disp(result: &WeakKamResult, node: usize) -> [i32; 2] {
    let grid = &result.grid;
    let src = result.predecessor[node] as usize;
    grid.displacement(src, grid.node_parts(node).1)
}

struct Analysed {
    gamma: Vec<PhaseSample>,
    i_set: Vec<PhaseSample>,
    critical: Vec<usize>,
    graph: TightGraph,
    len: Vec<u32>,
}

fn analyse(result: &WeakKamResult, n_cal: usize, tol_cal: f64) -> Analysed {
    let grid = &result.grid;
    let n_t = grid.n_t();
    let graph = TightGraph::build(result, tol_cal);
    let need = (n_cal * n_t) as u32;
    let len = graph.forward_lengths(need + n_t as u32);
    let gamma = (0..grid.nodes())
        .map(|n| PhaseSample::new(grid, n, pred_disp(result, n), Vec::new()))
        .collect();
    let members: Vec<usize> = (0..grid.nodes()).filter(|n| len[*n] >= need).collect();
    let i_set = members
        .par_iter()
        .map_init(
            || vec![u64::MAX; grid.nodes()],
            |stamp, &n| PhaseSample::new(grid, n, pred_disp(result, n), images(&graph, &len, need, n, stamp)),
        )
        .collect();
    let critical = graph.critical_nodes();
    Analysed {
        gamma,
        i_set,
        critical,
        graph,
        len,
    }
}

/// Every `(node, displacement)` reached from `start` by tight edges inside
/// the set `len >= need` after `n_t ..= 2 n_t - 1` steps.
fn images(graph: &TightGraph, len: &[u32], need: u32, start: usize, stamp: &mut [u64]) -> Vec<(usize, [i32; 2])> {
    let grid = graph.grid();
    let n_t = grid.n_t();
    let mut frontier = vec![start];
    let mut out = Vec::new();
    for step in 1..2 * n_t {
        let mut next = Vec::new();
        for &x in &frontier {
            let xq = grid.node_parts(x).1;
            for &s in graph.successors(x) {
                let s = s as usize;
                if len[s] < need {
                    continue;
                }
                if step >= n_t {
                    out.push((s, grid.displacement(xq, grid.node_parts(s).1)));
                }
                // unique per (start, step), so the buffer never needs clearing
                let mark = (start * 2 * n_t + step) as u64;
                if stamp[s] != mark {
                    stamp[s] = mark;
                    next.push(s);
                }
            }
        }
        frontier = next;
    }
    out.sort_unstable();
    out.dedup();
    out
}

/// `Gamma`, `I~` and the tight cycles of one solution.
///
/// `i_set` holds the nodes with a forward tight path of `n_cal` periods, so
/// every sample lies on a calibrated curve defined on `n_cal` periods both ways.
pub fn calibrated_sets(result: &WeakKamResult, n_cal: usize, tol_cal: f64) -> CalibratedSets {
    let a = analyse(result, n_cal.max(2), tol_cal);
    CalibratedSets {
        n_cal: n_cal.max(2),
        tol_cal,
        mane: a.i_set.clone(),
        gamma: a.gamma,
        i_set: a.i_set,
        critical: a.critical,
        tails: None,
    }
}

fn distance_to(grid: &Grid, cell: usize, set: &[SamplePoint]) -> f64 {
    set.iter()
        .map(|s| grid.cell_distance(cell, s.cell))
        .fold(f64::INFINITY, f64::min)
}

/// Union of the calibrated sets over a family of solutions, with the distance
/// of each orbit's tails to `aubry` after `n_cal` periods.
pub fn mane_set(family: &[WeakKamResult], n_cal: usize, tol_cal: f64, aubry: &[SamplePoint]) -> CalibratedSets {
    let n_cal = n_cal.max(2);
    let mut gamma = BTreeMap::new();
    let mut mane = BTreeMap::new();
    let mut critical = Vec::new();
    let mut tails = TailReport {
        backward: 0.0,
        forward: 0.0,
        forward_missing: 0,
    };
    for result in family {
        let grid = &result.grid;
        let a = analyse(result, n_cal, tol_cal);
        let steps = n_cal * grid.n_t();
        for s in &a.i_set {
            if let Some(seen) = mane.get_mut(&(s.node, s.disp)) {
                // the same phase point continues along every solution's tight edges
                let seen: &mut PhaseSample = seen;
                seen.images.extend_from_slice(&s.images);
                seen.images.sort_unstable();
                seen.images.dedup();
                continue;
            }
            if !aubry.is_empty() {
                let mut back = s.node;
                for _ in 0..steps {
                    back = result.pred_node(back);
                }
                tails.backward = tails.backward.max(distance_to(grid, grid.node_parts(back).1, aubry));
                match a.graph.follow(s.node, steps, &a.len) {
                    Some((fwd, _)) => {
                        tails.forward = tails.forward.max(distance_to(grid, grid.node_parts(fwd).1, aubry))
                    }
                    None => tails.forward_missing += 1,
                }
            }
            mane.insert((s.node, s.disp), s.clone());
        }
        for s in a.gamma {
            gamma.entry((s.node, s.disp)).or_insert(s);
        }
        critical.extend(a.critical);
    }
    critical.sort_unstable();
    critical.dedup();
    let mane: Vec<PhaseSample> = mane.into_values().collect();
    CalibratedSets {
        n_cal,
        tol_cal,
        gamma: gamma.into_values().collect(),
        i_set: mane.clone(),
        mane,
        critical,
        tails: (!aubry.is_empty()).then_some(tails),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lagrangian::{LagrangianSpec, Potential};
    use crate::lax_oleinik::solve_weak_kam;
    use std::collections::BTreeMap as Map;

    fn pendulum_result(n_q: usize, n_t: usize) -> WeakKamResult {
        let spec = LagrangianSpec::mechanical(Potential::from_family("pendulum", &Map::new(), 1).unwrap());
        solve_weak_kam(&spec, &Grid::new(1, n_q, n_t, 3.0).unwrap(), 1e-11, 2000).unwrap()
    }

    #[test]
    fn free_particle_zero_section() {
        let spec = LagrangianSpec::mechanical(Potential::zero(1));
        let g = Grid::new(1, 32, 8, 1.0).unwrap();
        let r = solve_weak_kam(&spec, &g, 1e-12, 10).unwrap();
        let sets = calibrated_sets(&r, 3, 1e-9);
        assert_eq!(sets.i_set.len(), g.nodes());
        assert!(sets.i_set.iter().all(|s| s.v == vec![0.0]));
        for s in &sets.i_set {
            let mut want: Vec<_> = (8..16).map(|k| (g.node(s.t + k, s.cell), [0, 0])).collect();
            want.sort_unstable();
            assert_eq!(s.images, want);
        }
        assert_eq!(sets.critical.len(), g.nodes());
    }

    #[test]
    fn pendulum_i_set_shrinks_and_contains_fixed_fiber() {
        let r = pendulum_result(64, 16);
        let g = &r.grid;
        let mut prev = usize::MAX;
        for n_cal in [2, 4, 8] {
            let sets = calibrated_sets(&r, n_cal, 1e-9);
            assert!(sets.i_set.len() <= prev);
            prev = sets.i_set.len();
            for k in 0..g.n_t() {
                let fixed = sets.i_set.iter().find(|s| s.t == k && s.cell == 0).expect("fixed fiber");
                assert_eq!(fixed.v, vec![0.0]);
            }
            // i_set is a subset of gamma
            for s in &sets.i_set {
                assert_eq!(sets.gamma[s.node].disp, s.disp);
            }
        }
        let crit = calibrated_sets(&r, 2, 1e-9).critical;
        assert_eq!(crit, (0..g.n_t()).map(|k| g.node(k, 0)).collect::<Vec<_>>());
    }

    #[test]
    fn mane_tails_reach_aubry() {
        let r = pendulum_result(64, 16);
        let aubry: Vec<_> = (0..16).map(|k| SamplePoint::base(k, 0)).collect();
        let m = mane_set(std::slice::from_ref(&r), 4, 1e-9, &aubry);
        let tails = m.tails.unwrap();
        assert!(tails.backward <= 1.0 / 64.0 + 1e-12, "{tails:?}");
        assert_eq!(m.mane.len(), calibrated_sets(&r, 4, 1e-9).i_set.len());
    }
}
