//! `(eps, T)`-chains on sampled semiflows: chain graphs, chain recurrence,
//! chain components and limit transfer.

mod bits;

use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bits::BitRows;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConleyError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("eps must be positive, got {0}")]
    BadEps(f64),
    #[error("sample sets of system {k} sit {excess:e} from the limit, above tolerance {tol:e}")]
    HausdorffGap { k: usize, excess: f64, tol: f64 },
}

/// Weighted Euclidean distance; axes flagged periodic wrap with period 1 before weighting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointMetric {
    pub weights: Vec<f64>,
    pub periodic: Vec<bool>,
}

impl PointMetric {
    pub fn euclidean(dim: usize) -> Self {
        Self {
            weights: vec![1.0; dim],
            periodic: vec![false; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    fn axis_gap(&self, axis: usize, a: f64, b: f64) -> f64 {
        let mut d = (a - b).abs();
        if self.periodic[axis] {
            d = d.rem_euclid(1.0);
            d = d.min(1.0 - d);
        }
        d * self.weights[axis]
    }

    pub fn distance(&self, a: &[f64], b: &[f64]) -> f64 {
        (0..self.dim())
            .map(|i| self.axis_gap(i, a[i], b[i]).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

/// Samples of a semiflow with the images of each sample after the orbit
/// pieces allowed between two jumps (lengths in `[period, 2 period)` suffice,
/// since longer pieces split with zero jumps).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampledSemiflow {
    pub points: Vec<Vec<f64>>,
    /// An empty list marks a sample with unknown images; it gets no outgoing edges.
    pub images: Vec<Vec<Vec<f64>>>,
    pub metric: PointMetric,
    pub period: f64,
    /// Caller-side identifiers, carried through restrictions.
    pub labels: Vec<usize>,
}

impl SampledSemiflow {
    pub fn new(
        points: Vec<Vec<f64>>,
        images: Vec<Vec<Vec<f64>>>,
        metric: PointMetric,
        period: f64,
    ) -> Result<Self, ConleyError> {
        if points.len() != images.len() {
            return Err(ConleyError::Shape(format!(
                "{} points but {} images",
                points.len(),
                images.len()
            )));
        }
        let m = metric.dim();
        if metric.periodic.len() != m
            || points.iter().any(|p| p.len() != m)
            || images.iter().flatten().any(|p| p.len() != m)
        {
            return Err(ConleyError::Shape(format!("state vectors must have {m} entries")));
        }
        let labels = (0..points.len()).collect();
        Ok(Self {
            points,
            images,
            metric,
            period,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Subsystem on `keep` (indices in increasing order).
    pub fn subset(&self, keep: &[usize]) -> Self {
        Self {
            points: keep.iter().map(|i| self.points[*i].clone()).collect(),
            images: keep.iter().map(|i| self.images[*i].clone()).collect(),
            metric: self.metric.clone(),
            period: self.period,
            labels: keep.iter().map(|i| self.labels[*i]).collect(),
        }
    }

    /// Index of the nearest sample, lowest index on ties.
    pub fn nearest(&self, x: &[f64]) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for (i, p) in self.points.iter().enumerate() {
            let d = self.metric.distance(x, p);
            if best.map_or(true, |(_, b)| d < b) {
                best = Some((i, d));
            }
        }
        best
    }
}

/// Sorted index on one axis for radius queries.
struct AxisIndex {
    axis: usize,
    periodic: bool,
    order: Vec<usize>,
    keys: Vec<f64>,
}

impl AxisIndex {
    fn new(flow: &SampledSemiflow) -> Self {
        let axis = 0;
        let periodic = flow.metric.periodic.first().copied().unwrap_or(false);
        let key = |p: &Vec<f64>| if periodic { p[axis].rem_euclid(1.0) } else { p[axis] };
        let mut order: Vec<usize> = (0..flow.len()).collect();
        order.sort_by(|a, b| key(&flow.points[*a]).total_cmp(&key(&flow.points[*b])).then(a.cmp(b)));
        let keys = order.iter().map(|i| key(&flow.points[*i])).collect();
        Self {
            axis,
            periodic,
            order,
            keys,
        }
    }

    /// Candidates whose axis coordinate lies within `r` of `x`.
    fn candidates(&self, x: &[f64], r: f64, out: &mut Vec<usize>) {
        out.clear();
        let n = self.keys.len();
        if self.periodic && r >= 0.5 || !r.is_finite() {
            out.extend(0..n);
            return;
        }
        let mut push_range = |lo: f64, hi: f64| {
            let a = self.keys.partition_point(|k| *k < lo);
            let b = self.keys.partition_point(|k| *k <= hi);
            out.extend(a..b);
        };
        if self.periodic {
            let c = x[self.axis].rem_euclid(1.0);
            let (lo, hi) = (c - r, c + r);
            if lo < 0.0 {
                push_range(0.0, hi);
                push_range(lo + 1.0, 1.0);
            } else if hi >= 1.0 {
                push_range(lo, 1.0);
                push_range(0.0, hi - 1.0);
            } else {
                push_range(lo, hi);
            }
        } else {
            push_range(x[self.axis] - r, x[self.axis] + r);
        }
        for s in out.iter_mut() {
            *s = self.order[*s];
        }
    }
}

/// Directed graph with an edge `i -> j` iff `metric(step(i), point_j) <= eps`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainGraph {
    pub eps: f64,
    pub node_count: usize,
    /// Sorted successor lists.
    pub edges: Vec<Vec<u32>>,
}

impl ChainGraph {
    pub fn from_edges(node_count: usize, eps: f64, edges: &[(usize, usize)]) -> Self {
        let mut adj = vec![Vec::new(); node_count];
        for (a, b) in edges {
            adj[*a].push(*b as u32);
        }
        for l in &mut adj {
            l.sort_unstable();
            l.dedup();
        }
        Self {
            eps,
            node_count,
            edges: adj,
        }
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.edges[i].binary_search(&(j as u32)).is_ok()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.iter().map(Vec::len).sum()
    }

    /// Edge list CSV `src,dst`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("src,dst\n");
        for (i, l) in self.edges.iter().enumerate() {
            for j in l {
                out.push_str(&format!("{i},{j}\n"));
            }
        }
        out
    }

    /// Induced subgraph on `keep` (increasing indices), renumbered.
    pub fn induced(&self, keep: &[usize]) -> Self {
        let mut map = vec![u32::MAX; self.node_count];
        for (new, old) in keep.iter().enumerate() {
            map[*old] = new as u32;
        }
        let edges = keep
            .iter()
            .map(|old| self.edges[*old].iter().map(|j| map[*j as usize]).filter(|j| *j != u32::MAX).collect())
            .collect();
        Self {
            eps: self.eps,
            node_count: keep.len(),
            edges,
        }
    }
}

pub fn build_chain_graph(flow: &SampledSemiflow, eps: f64) -> Result<ChainGraph, ConleyError> {
    if !(eps > 0.0) {
        return Err(ConleyError::BadEps(eps));
    }
    let index = AxisIndex::new(flow);
    let w0 = flow.metric.weights.first().copied().unwrap_or(1.0);
    let radius = if w0 > 0.0 { eps / w0 } else { f64::INFINITY };
    let n = flow.len();
    // distinct images, each queried once
    let bits = |p: &[f64]| p.iter().map(|x| x.to_bits()).collect::<Vec<u64>>();
    let mut uniq: Vec<Vec<u64>> = flow.images.iter().flatten().map(|p| bits(p)).collect();
    uniq.sort_unstable();
    uniq.dedup();
    let rows: Vec<Vec<u64>> = uniq
        .par_iter()
        .map_init(Vec::new, |buf, key| {
            let img: Vec<f64> = key.iter().map(|b| f64::from_bits(*b)).collect();
            index.candidates(&img, radius, buf);
            let mut row = vec![0u64; n.div_ceil(64)];
            for j in buf.iter().filter(|j| flow.metric.distance(&img, &flow.points[**j]) <= eps) {
                row[j / 64] |= 1 << (j % 64);
            }
            row
        })
        .collect();
    let edges = flow
        .images
        .par_iter()
        .map(|imgs| {
            let mut acc = vec![0u64; n.div_ceil(64)];
            for img in imgs {
                let k = uniq.binary_search(&bits(img)).expect("image was indexed");
                for (a, r) in acc.iter_mut().zip(&rows[k]) {
                    *a |= r;
                }
            }
            let mut out = Vec::new();
            for (w, word) in acc.iter().enumerate() {
                let mut x = *word;
                while x != 0 {
                    out.push((w * 64 + x.trailing_zeros() as usize) as u32);
                    x &= x - 1;
                }
            }
            out
        })
        .collect();
    Ok(ChainGraph {
        eps,
        node_count: n,
        edges,
    })
}

/// True iff a path of length at least one leads from `i` to `j`.
pub fn chain_relation(graph: &ChainGraph, i: usize, j: usize) -> bool {
    let mut seen = vec![false; graph.node_count];
    let mut stack: Vec<usize> = graph.edges[i].iter().map(|x| *x as usize).collect();
    while let Some(x) = stack.pop() {
        if x == j {
            return true;
        }
        if std::mem::replace(&mut seen[x], true) {
            continue;
        }
        stack.extend(graph.edges[x].iter().map(|y| *y as usize));
    }
    false
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainDecomposition {
    pub eps: f64,
    /// Nodes on a directed cycle (self-loops included), increasing.
    pub recurrent: Vec<usize>,
    /// Chain components, each sorted; ordered by smallest member.
    pub components: Vec<Vec<usize>>,
    /// `reach.get(i, j)` iff a path of length >= 1 leads from `i` to `j`.
    #[serde(skip)]
    pub reach: BitRows,
    /// Strongly connected component id per node (all nodes, not only recurrent ones).
    #[serde(skip)]
    pub scc_of: Vec<usize>,
}

impl ChainDecomposition {
    pub fn related(&self, i: usize, j: usize) -> bool {
        self.reach.get(self.scc_of[i], j)
    }

    /// Component index of a recurrent node.
    pub fn component_of(&self, i: usize) -> Option<usize> {
        self.components.iter().position(|c| c.binary_search(&i).is_ok())
    }

    /// JSON `{eps, recurrent, components}`.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "eps": self.eps,
            "recurrent": self.recurrent,
            "components": self.components,
        })
    }
}

pub fn chain_decomposition(graph: &ChainGraph) -> ChainDecomposition {
    let n = graph.node_count;
    let mut g = DiGraph::<(), ()>::with_capacity(n, graph.edge_count());
    for _ in 0..n {
        g.add_node(());
    }
    for (i, l) in graph.edges.iter().enumerate() {
        for j in l {
            g.add_edge((i as u32).into(), (*j).into(), ());
        }
    }
    // tarjan_scc yields components in reverse topological order
    let sccs: Vec<Vec<usize>> = tarjan_scc(&g)
        .into_iter()
        .map(|c| {
            let mut c: Vec<usize> = c.into_iter().map(|x| x.index()).collect();
            c.sort_unstable();
            c
        })
        .collect();
    let mut scc_of = vec![0; n];
    for (k, c) in sccs.iter().enumerate() {
        for x in c {
            scc_of[*x] = k;
        }
    }
    let mut reach = BitRows::new(sccs.len(), n);
    let mut cyclic = vec![false; sccs.len()];
    for (k, c) in sccs.iter().enumerate() {
        cyclic[k] = c.len() > 1 || graph.has_edge(c[0], c[0]);
        for x in c {
            for y in &graph.edges[*x] {
                let d = scc_of[*y as usize];
                if d != k {
                    reach.set(k, *y as usize);
                    reach.or_row(k, d);
                }
            }
        }
        if cyclic[k] {
            for x in c {
                reach.set(k, *x);
            }
        }
    }
    let mut components: Vec<Vec<usize>> = sccs
        .iter()
        .enumerate()
        .filter(|(k, _)| cyclic[*k])
        .map(|(_, c)| c.clone())
        .collect();
    components.sort();
    let mut recurrent: Vec<usize> = components.iter().flatten().copied().collect();
    recurrent.sort_unstable();
    ChainDecomposition {
        eps: graph.eps,
        recurrent,
        components,
        reach,
        scc_of,
    }
}

/// Nodes reachable by an `eps`-path of exactly `n_steps` edges, i.e. the
/// discrete `X_k = phi^k(X)` with images snapped within `eps`.
pub fn omega_nodes(graph: &ChainGraph, n_steps: usize) -> Vec<usize> {
    let n = graph.node_count;
    let mut cur = vec![true; n];
    for _ in 0..n_steps {
        let mut next = vec![false; n];
        for (i, l) in graph.edges.iter().enumerate() {
            if cur[i] {
                for j in l {
                    next[*j as usize] = true;
                }
            }
        }
        if next == cur {
            break;
        }
        cur = next;
    }
    (0..n).filter(|i| cur[*i]).collect()
}

/// Restriction of `flow` to [`omega_nodes`] at `eps`; returns the kept indices too.
pub fn restrict_omega(
    flow: &SampledSemiflow,
    n_steps: usize,
    eps: f64,
) -> Result<(SampledSemiflow, Vec<usize>), ConleyError> {
    let g = build_chain_graph(flow, eps)?;
    let keep = omega_nodes(&g, n_steps.max(1));
    Ok((flow.subset(&keep), keep))
}

/// Logarithmic schedule from `hi` down to `lo`, `per_decade` values per decade.
pub fn log_schedule(hi: f64, lo: f64, per_decade: usize) -> Vec<f64> {
    let mut out = Vec::new();
    let steps = ((hi / lo).log10() * per_decade as f64).round() as i32;
    for s in 0..=steps {
        out.push(hi * 10f64.powf(-(s as f64) / per_decade as f64));
    }
    out
}

/// Smallest value of `schedule` at least `2 * resolution`.
pub fn headline_eps(schedule: &[f64], resolution: f64) -> Option<f64> {
    schedule
        .iter()
        .copied()
        .filter(|e| *e >= 2.0 * resolution)
        .min_by(f64::total_cmp)
}

/// `sup_{a in A} min_{b in B} metric(a, b)`; `None` when either set is empty.
pub fn excess(a: &[Vec<f64>], b: &[Vec<f64>], metric: &PointMetric) -> Option<f64> {
    if a.is_empty() || b.is_empty() {
        return None;
    }
    Some(
        a.par_iter()
            .map(|x| b.iter().map(|y| metric.distance(x, y)).fold(f64::INFINITY, f64::min))
            .reduce(|| 0.0, f64::max),
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferLevel {
    pub eps: f64,
    /// Snapped pairs related in the limit system at this eps.
    pub related: usize,
    pub total: usize,
    /// Whether the limit pair (snapped from the last system) is related.
    pub limit_related: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    /// Excess of each system's samples into the limit samples.
    pub excess: Vec<f64>,
    /// Whether each source pair is chain related in its own system at the smallest tested eps.
    pub source_related: Vec<bool>,
    pub limit_pair: (usize, usize),
    pub levels: Vec<TransferLevel>,
    /// Smallest eps at which the limit pair is related.
    pub smallest_eps: Option<f64>,
    /// Distance of the limit pair to its preimages when no eps works.
    pub obstruction: Option<f64>,
}

/// Moves each pair `(i_k, j_k)` of `flows[k]` to the nearest limit samples and
/// checks chain relation in `limit` along `eps_schedule`.
pub fn limit_chain_transfer(
    flows: &[SampledSemiflow],
    limit: &SampledSemiflow,
    pairs: &[(usize, usize)],
    eps_schedule: &[f64],
) -> Result<TransferReport, ConleyError> {
    if flows.len() != pairs.len() || flows.is_empty() {
        return Err(ConleyError::Shape("need one pair per system".into()));
    }
    if limit.is_empty() {
        return Err(ConleyError::Shape("empty limit system".into()));
    }
    let tol = eps_schedule.iter().copied().fold(0.0, f64::max);
    let mut excesses = Vec::with_capacity(flows.len());
    let mut snapped = Vec::with_capacity(flows.len());
    let mut source_related = Vec::with_capacity(flows.len());
    let min_eps = eps_schedule.iter().copied().fold(f64::INFINITY, f64::min);
    for (k, (f, (i, j))) in flows.iter().zip(pairs).enumerate() {
        if *i >= f.len() || *j >= f.len() {
            return Err(ConleyError::Shape(format!("pair {k} out of range")));
        }
        let e = excess(&f.points, &limit.points, &limit.metric).unwrap_or(0.0);
        excesses.push(e);
        let (a, _) = limit.nearest(&f.points[*i]).expect("nonempty");
        let (b, _) = limit.nearest(&f.points[*j]).expect("nonempty");
        snapped.push((a, b));
        let g = build_chain_graph(f, min_eps)?;
        source_related.push(chain_relation(&g, *i, *j));
    }
    let last = *excesses.last().expect("nonempty");
    if last > tol {
        return Err(ConleyError::HausdorffGap {
            k: flows.len() - 1,
            excess: last,
            tol,
        });
    }
    let limit_pair = *snapped.last().expect("nonempty");
    let mut levels = Vec::new();
    let mut smallest_eps: Option<f64> = None;
    for &eps in eps_schedule {
        let g = build_chain_graph(limit, eps)?;
        let dec = chain_decomposition(&g);
        let related = snapped.iter().filter(|(a, b)| dec.related(*a, *b)).count();
        let limit_related = dec.related(limit_pair.0, limit_pair.1);
        if limit_related {
            smallest_eps = Some(smallest_eps.map_or(eps, |s: f64| s.min(eps)));
        }
        levels.push(TransferLevel {
            eps,
            related,
            total: snapped.len(),
            limit_related,
        });
    }
    let obstruction = smallest_eps.is_none().then(|| {
        let (a, b) = limit_pair;
        limit.metric.distance(&limit.points[a], &limit.points[b])
    });
    Ok(TransferReport {
        excess: excesses,
        source_related,
        limit_pair,
        levels,
        smallest_eps,
        obstruction,
    })
}

#[cfg(test)]
mod tests;
