use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{BarrierError, SamplePoint};
use crate::lagrangian::LagrangianSpec;
use crate::lax_oleinik::{Grid, StepOperator, ValueFunction};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BarrierOptions {
    pub t_min: usize,
    pub t_max: usize,
    /// Allowed drop of the running minimum over the last quarter of the window.
    pub tol_tail: f64,
}

impl BarrierOptions {
    pub fn new(t_min: usize, t_max: usize) -> Self {
        Self {
            t_min,
            t_max,
            tol_tail: 1e-3,
        }
    }
}

/// `h[i][j]`, the window minimum of `m_T(x_i, y_j)`, stored row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BarrierTable {
    pub spec: LagrangianSpec,
    pub grid: Grid,
    pub alpha: f64,
    pub sources: Vec<SamplePoint>,
    pub targets: Vec<SamplePoint>,
    pub h: Vec<f64>,
    pub horizon_window: (usize, usize),
    /// Largest drop of the running minimum inside the last quarter of the window.
    pub tail_drift: f64,
}

impl BarrierTable {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.h[i * self.targets.len() + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.targets.len();
        &self.h[i * n..(i + 1) * n]
    }

    pub fn is_square(&self) -> bool {
        self.sources.len() == self.targets.len()
            && self.sources.iter().zip(&self.targets).all(|(a, b)| a.same_base(b))
    }

    /// Square sub-table on the sample indices `keep`.
    pub fn square_subset(&self, keep: &[usize]) -> Result<BarrierTable, BarrierError> {
        if !self.is_square() {
            return Err(BarrierError::NotSquare);
        }
        if keep.iter().any(|i| *i >= self.sources.len()) {
            return Err(BarrierError::Shape("subset index out of range".into()));
        }
        let pts: Vec<SamplePoint> = keep.iter().map(|i| self.sources[*i].clone()).collect();
        let h = keep
            .iter()
            .flat_map(|i| keep.iter().map(move |j| self.get(*i, *j)))
            .collect();
        Ok(BarrierTable {
            spec: self.spec.clone(),
            grid: self.grid.clone(),
            alpha: self.alpha,
            sources: pts.clone(),
            targets: pts,
            h,
            horizon_window: self.horizon_window,
            tail_drift: self.tail_drift,
        })
    }

    /// `max(h[i][k] - h[i][j] - h[j][k])` over triples, square tables only.
    pub fn triangle_defect(&self) -> Result<f64, BarrierError> {
        if !self.is_square() {
            return Err(BarrierError::NotSquare);
        }
        let n = self.sources.len();
        let worst = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut w = f64::NEG_INFINITY;
                for j in 0..n {
                    let hij = self.get(i, j);
                    for k in 0..n {
                        let d = self.get(i, k) - hij - self.get(j, k);
                        if d.is_finite() && d > w {
                            w = d;
                        }
                    }
                }
                w
            })
            .reduce(|| f64::NEG_INFINITY, f64::max);
        Ok(worst)
    }

    /// `max(u(y_j) - u(x_i) - h[i][j])`.
    pub fn domination_defect(&self, u: &ValueFunction) -> f64 {
        let mut w = f64::NEG_INFINITY;
        for (i, s) in self.sources.iter().enumerate() {
            let us = u.get(s.t, s.cell);
            for (j, t) in self.targets.iter().enumerate() {
                let d = u.get(t.t, t.cell) - us - self.get(i, j);
                if d > w {
                    w = d;
                }
            }
        }
        w
    }

    /// CSV `src_idx,dst_idx,h`; unreachable pairs are written as `inf`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("src_idx,dst_idx,h\n");
        for i in 0..self.sources.len() {
            for j in 0..self.targets.len() {
                out.push_str(&format!("{i},{j},{:e}\n", self.get(i, j)));
            }
        }
        out
    }
}

struct Row {
    h: Vec<f64>,
    drift: f64,
    worst_target: usize,
}

fn barrier_row(
    op: &StepOperator,
    alpha: f64,
    source: &SamplePoint,
    by_time: &[Vec<(usize, usize)>],
    n_targets: usize,
    opts: &BarrierOptions,
) -> Row {
    let grid = op.grid();
    let n_t = grid.n_t();
    let cells = grid.cells();
    let tau = source.t % n_t;
    let quarter = opts.t_max - (opts.t_max - opts.t_min) / 4;
    let mut early = vec![f64::INFINITY; n_targets];
    let mut tail = vec![f64::INFINITY; n_targets];
    let mut front = vec![f64::INFINITY; cells];
    front[source.cell] = 0.0;
    let mut next = vec![0.0; cells];
    let mut pred = vec![0u32; cells];
    let s_max = opts.t_max * n_t + n_t - 1 - tau;
    for s in 1..=s_max {
        op.apply_into(tau + s - 1, &front, &mut next, &mut pred);
        std::mem::swap(&mut front, &mut next);
        let abs = tau + s;
        let periods = abs / n_t;
        if periods < opts.t_min {
            continue;
        }
        let elapsed = s as f64 * grid.dt() * alpha;
        let slot = if periods < quarter { &mut early } else { &mut tail };
        for &(j, cell) in &by_time[abs % n_t] {
            let m = front[cell] + elapsed;
            if m < slot[j] {
                slot[j] = m;
            }
        }
    }
    let mut drift: f64 = 0.0;
    let mut worst_target = 0;
    let h = early
        .iter()
        .zip(&tail)
        .enumerate()
        .map(|(j, (e, t))| {
            if e.is_finite() && t.is_finite() && e - t > drift {
                drift = e - t;
                worst_target = j;
            }
            e.min(*t)
        })
        .collect();
    Row { h, drift, worst_target }
}

/// One dynamic-programming front per source, run for `t_max` periods.
pub fn compute_barrier(
    spec: &LagrangianSpec,
    grid: &Grid,
    alpha: f64,
    sources: &[SamplePoint],
    targets: &[SamplePoint],
    opts: BarrierOptions,
) -> Result<BarrierTable, BarrierError> {
    if !(opts.t_max > opts.t_min && opts.t_min >= 1) {
        return Err(BarrierError::InvalidWindow {
            t_min: opts.t_min,
            t_max: opts.t_max,
        });
    }
    for p in sources.iter().chain(targets) {
        if p.cell >= grid.cells() {
            return Err(BarrierError::Shape(format!("sample cell {} out of range", p.cell)));
        }
    }
    let op = StepOperator::new(spec, grid)?;
    let mut by_time = vec![Vec::new(); grid.n_t()];
    for (j, t) in targets.iter().enumerate() {
        by_time[t.t % grid.n_t()].push((j, t.cell));
    }
    let rows: Vec<Row> = sources
        .par_iter()
        .map(|s| barrier_row(&op, alpha, s, &by_time, targets.len(), &opts))
        .collect();
    let mut h = Vec::with_capacity(sources.len() * targets.len());
    let mut tail_drift: f64 = 0.0;
    let mut worst = (0, 0);
    for (i, r) in rows.into_iter().enumerate() {
        if r.drift > tail_drift {
            tail_drift = r.drift;
            worst = (i, r.worst_target);
        }
        h.extend(r.h);
    }
    let table = BarrierTable {
        spec: spec.clone(),
        grid: grid.clone(),
        alpha,
        sources: sources.iter().map(SamplePoint::project).collect(),
        targets: targets.iter().map(SamplePoint::project).collect(),
        h,
        horizon_window: (opts.t_min, opts.t_max),
        tail_drift,
    };
    if tail_drift > opts.tol_tail {
        return Err(BarrierError::WindowTooShort {
            source_idx: worst.0,
            target: worst.1,
            drift: tail_drift,
            partial: Box::new(table),
        });
    }
    Ok(table)
}

/// `u = h(x_0, .)` on the whole grid; the targets must contain every node.
pub fn weak_kam_from_barrier(table: &BarrierTable, source_idx: usize) -> Result<ValueFunction, BarrierError> {
    if source_idx >= table.sources.len() {
        return Err(BarrierError::Shape(format!("source {source_idx} out of range")));
    }
    let grid = &table.grid;
    let mut values = vec![f64::NAN; grid.nodes()];
    for (j, t) in table.targets.iter().enumerate() {
        values[grid.node(t.t, t.cell)] = table.get(source_idx, j);
    }
    let missing = values.iter().filter(|v| !v.is_finite()).count();
    if missing > 0 {
        return Err(BarrierError::CoverageGap { missing });
    }
    Ok(ValueFunction::new(grid.n_t(), grid.cells(), values)?)
}

/// Every node of the grid as a base sample, time-major.
pub fn all_nodes(grid: &Grid) -> Vec<SamplePoint> {
    (0..grid.nodes())
        .map(|n| {
            let (t, c) = grid.node_parts(n);
            SamplePoint::base(t, c)
        })
        .collect()
}
