use serde::{Deserialize, Serialize};

use super::{Grid, LaxOleinikError, StepOperator};
use crate::lagrangian::{LagrangianSpec, PhasePoint};

/// Real table on the space-time grid, indexed `t_idx * cells + cell`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueFunction {
    n_t: usize,
    cells: usize,
    values: Vec<f64>,
}

impl ValueFunction {
    pub fn new(n_t: usize, cells: usize, values: Vec<f64>) -> Result<Self, LaxOleinikError> {
        if values.len() != n_t * cells {
            return Err(LaxOleinikError::Shape(format!(
                "{} values for {n_t} x {cells} grid",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(LaxOleinikError::Shape("value function has non-finite entries".into()));
        }
        Ok(Self { n_t, cells, values })
    }

    /// The same slice at every time index.
    pub fn autonomous(grid: &Grid, slice: &[f64]) -> Result<Self, LaxOleinikError> {
        let mut v = Vec::with_capacity(grid.nodes());
        for _ in 0..grid.n_t() {
            v.extend_from_slice(slice);
        }
        Self::new(grid.n_t(), grid.cells(), v)
    }

    pub fn from_fn(grid: &Grid, f: impl Fn(usize, usize) -> f64) -> Result<Self, LaxOleinikError> {
        let mut v = Vec::with_capacity(grid.nodes());
        for k in 0..grid.n_t() {
            for c in 0..grid.cells() {
                v.push(f(k, c));
            }
        }
        Self::new(grid.n_t(), grid.cells(), v)
    }

    pub fn n_t(&self) -> usize {
        self.n_t
    }
    pub fn cells(&self) -> usize {
        self.cells
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, t_idx: usize, cell: usize) -> f64 {
        self.values[(t_idx % self.n_t) * self.cells + cell]
    }

    pub fn at_node(&self, node: usize) -> f64 {
        self.values[node]
    }

    pub fn slice(&self, t_idx: usize) -> &[f64] {
        let k = t_idx % self.n_t;
        &self.values[k * self.cells..(k + 1) * self.cells]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            n_t: self.n_t,
            cells: self.cells,
            values: self.values.iter().map(|v| f(*v)).collect(),
        }
    }

    /// Largest `|u(q + e_i) - u(q)| * n_q` over all slices and axes.
    pub fn lipschitz(&self, grid: &Grid) -> f64 {
        let mut worst: f64 = 0.0;
        for k in 0..self.n_t {
            let s = self.slice(k);
            for c in 0..self.cells {
                for axis in 0..grid.dim() {
                    let mut off = [0i32; 2];
                    off[axis] = 1;
                    let n = grid.shift(c, off);
                    worst = worst.max((s[n] - s[c]).abs());
                }
            }
        }
        worst * grid.n_q() as f64
    }

    /// CSV with header `t_idx,q_idx[,q2_idx],u`.
    pub fn to_csv(&self, grid: &Grid) -> String {
        let mut out = String::from(if grid.dim() == 1 { "t_idx,q_idx,u\n" } else { "t_idx,q_idx,q2_idx,u\n" });
        for k in 0..self.n_t {
            for c in 0..self.cells {
                let xy = grid.coords(c);
                let u = self.get(k, c);
                if grid.dim() == 1 {
                    out.push_str(&format!("{k},{},{u:e}\n", xy[0]));
                } else {
                    out.push_str(&format!("{k},{},{},{u:e}\n", xy[0], xy[1]));
                }
            }
        }
        out
    }
}

/// A discrete weak KAM solution with its critical value estimate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeakKamResult {
    pub spec: LagrangianSpec,
    pub grid: Grid,
    pub u: ValueFunction,
    pub alpha: f64,
    /// `predecessor[node(k, q)]` is the argmin source cell at time `k - 1`.
    pub predecessor: Vec<u32>,
    pub residual: f64,
    pub iters: usize,
    pub lipschitz: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeakKamSummary {
    pub alpha: f64,
    pub residual: f64,
    pub iters: usize,
    pub grid: Grid,
}

impl WeakKamResult {
    /// Wraps a value function that is (close to) a fixed point; the
    /// predecessor map and residual are recomputed from one sweep.
    pub fn from_value_function(
        spec: &LagrangianSpec,
        grid: &Grid,
        u: ValueFunction,
        alpha: f64,
    ) -> Result<Self, LaxOleinikError> {
        if u.n_t() != grid.n_t() || u.cells() != grid.cells() {
            return Err(LaxOleinikError::Shape("value function does not match grid".into()));
        }
        let op = StepOperator::new(spec, grid)?;
        let cells = grid.cells();
        let n_t = grid.n_t();
        let mut predecessor = vec![0u32; grid.nodes()];
        let mut residual: f64 = 0.0;
        let mut next = vec![0.0; cells];
        let mut pred = vec![0u32; cells];
        for k in 0..n_t {
            op.apply_into(k, u.slice(k), &mut next, &mut pred);
            let target = (k + 1) % n_t;
            predecessor[target * cells..(target + 1) * cells].copy_from_slice(&pred);
            for (a, b) in next.iter().zip(u.slice(target)) {
                residual = residual.max((a + alpha * grid.dt() - b).abs());
            }
        }
        let lipschitz = u.lipschitz(grid);
        Ok(Self {
            spec: spec.clone(),
            grid: grid.clone(),
            u,
            alpha,
            predecessor,
            residual,
            iters: 0,
            lipschitz,
        })
    }

    pub fn summary(&self) -> WeakKamSummary {
        WeakKamSummary {
            alpha: self.alpha,
            residual: self.residual,
            iters: self.iters,
            grid: self.grid.clone(),
        }
    }

    pub fn pred_node(&self, node: usize) -> usize {
        let (k, _) = self.grid.node_parts(node);
        let n_t = self.grid.n_t();
        self.grid.node((k + n_t - 1) % n_t, self.predecessor[node] as usize)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub tol_fix: f64,
    pub max_iters: usize,
    /// Sweeps without halving the best residual before switching to averaged iteration.
    pub stall_window: usize,
}

impl SolveOptions {
    pub fn new(tol_fix: f64, max_iters: usize) -> Self {
        Self {
            tol_fix,
            max_iters,
            stall_window: 64,
        }
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn oscillation(xs: &[f64]) -> f64 {
    let (lo, hi) = xs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(*x), hi.max(*x)));
    hi - lo
}

/// Value iteration on the period map with mean-decrement renormalisation.
pub fn solve_weak_kam(
    spec: &LagrangianSpec,
    grid: &Grid,
    tol_fix: f64,
    max_iters: usize,
) -> Result<WeakKamResult, LaxOleinikError> {
    solve_weak_kam_with(spec, grid, SolveOptions::new(tol_fix, max_iters))
}

pub fn solve_weak_kam_with(
    spec: &LagrangianSpec,
    grid: &Grid,
    opts: SolveOptions,
) -> Result<WeakKamResult, LaxOleinikError> {
    if !(opts.tol_fix > 0.0) {
        return Err(LaxOleinikError::Shape("tol_fix must be positive".into()));
    }
    let op = StepOperator::new(spec, grid)?;
    let cells = grid.cells();
    let mut u = vec![0.0; cells];
    let mut residual = f64::INFINITY;
    let mut decrement = 0.0;
    let mut best = f64::INFINITY;
    let mut since_best = 0;
    let mut damped = false;
    let mut iters = 0;
    let mut converged = false;
    while iters < opts.max_iters {
        iters += 1;
        let w = op.period(&u);
        let diff: Vec<f64> = w.iter().zip(&u).map(|(a, b)| a - b).collect();
        decrement = mean(&diff);
        residual = oscillation(&diff);
        if residual <= opts.tol_fix {
            converged = true;
            break;
        }
        if residual < 0.5 * best {
            best = residual;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= opts.stall_window {
                damped = true;
            }
        }
        if damped {
            for (x, y) in u.iter_mut().zip(&w) {
                *x = 0.5 * (*x + y - decrement);
            }
        } else {
            for (x, y) in u.iter_mut().zip(&w) {
                *x = y - decrement;
            }
        }
        let m = mean(&u);
        u.iter_mut().for_each(|x| *x -= m);
    }
    let alpha = -decrement;
    let mut result = build_slices(spec, grid, &op, u, alpha)?;
    result.residual = residual;
    result.iters = iters;
    if !converged {
        return Err(LaxOleinikError::NoConvergence {
            iters,
            residual,
            partial: Box::new(result),
        });
    }
    Ok(result)
}

/// Slices `u_{k+1} = T_k u_k + alpha dt` starting from the time-0 slice.
fn build_slices(
    spec: &LagrangianSpec,
    grid: &Grid,
    op: &StepOperator,
    u0: Vec<f64>,
    alpha: f64,
) -> Result<WeakKamResult, LaxOleinikError> {
    let cells = grid.cells();
    let n_t = grid.n_t();
    let mut values = Vec::with_capacity(grid.nodes());
    let mut predecessor = vec![0u32; grid.nodes()];
    values.extend_from_slice(&u0);
    let mut cur = u0;
    let mut next = vec![0.0; cells];
    let mut pred = vec![0u32; cells];
    for k in 0..n_t {
        op.apply_into(k, &cur, &mut next, &mut pred);
        next.iter_mut().for_each(|x| *x += alpha * grid.dt());
        let target = (k + 1) % n_t;
        predecessor[target * cells..(target + 1) * cells].copy_from_slice(&pred);
        if target != 0 {
            values.extend_from_slice(&next);
        }
        std::mem::swap(&mut cur, &mut next);
    }
    let u = ValueFunction::new(n_t, cells, values)?;
    let lipschitz = u.lipschitz(grid);
    Ok(WeakKamResult {
        spec: spec.clone(),
        grid: grid.clone(),
        u,
        alpha,
        predecessor,
        residual: 0.0,
        iters: 0,
        lipschitz,
    })
}

/// Largest one-step violation of `u(k+1, q) - u(k, q') <= dt (L + alpha)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DominationReport {
    pub defect: f64,
    /// `(from_node, to_node)` realising the defect.
    pub witness: Option<(usize, usize)>,
}

impl DominationReport {
    pub fn dominated(&self, tol_dom: f64) -> bool {
        self.defect <= tol_dom
    }
}

pub fn check_dominated(
    u: &ValueFunction,
    spec: &LagrangianSpec,
    grid: &Grid,
    alpha: f64,
) -> Result<DominationReport, LaxOleinikError> {
    if u.n_t() != grid.n_t() || u.cells() != grid.cells() {
        return Err(LaxOleinikError::Shape("value function does not match grid".into()));
    }
    let op = StepOperator::new(spec, grid)?;
    Ok(dominated_with(&op, u, alpha))
}

pub fn dominated_with(op: &StepOperator, u: &ValueFunction, alpha: f64) -> DominationReport {
    let grid = op.grid();
    let n_t = grid.n_t();
    let mut defect = f64::NEG_INFINITY;
    let mut witness = None;
    for k in 0..n_t {
        // max over sources of u(k+1,q) - u(k,q') - cost equals u(k+1,q) - (T_k u)(q) - alpha dt
        let step = op.apply(k, u.slice(k));
        let target = (k + 1) % n_t;
        for (q, (tv, src)) in step.values.iter().zip(&step.predecessor).enumerate() {
            let d = u.get(target, q) - tv - alpha * grid.dt();
            if d > defect {
                defect = d;
                witness = Some((grid.node(k, *src as usize), grid.node(target, q)));
            }
        }
    }
    DominationReport { defect, witness }
}

/// A grid path with one sample per time step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteCurve {
    pub samples: Vec<PhasePoint>,
    /// Node indices, forward in time.
    pub nodes: Vec<usize>,
    /// Sum of `dt L` over the steps.
    pub action: f64,
    /// `u(end) - u(start) - sum dt (L + alpha)`.
    pub defect: f64,
}

/// Follows the predecessor map back `n_periods` periods from `endpoint = (t_idx, cell)`.
pub fn calibrated_curve(
    result: &WeakKamResult,
    endpoint: (usize, usize),
    n_periods: usize,
) -> Result<DiscreteCurve, LaxOleinikError> {
    let grid = &result.grid;
    if n_periods == 0 {
        return Err(LaxOleinikError::Shape("n_periods must be at least 1".into()));
    }
    if endpoint.1 >= grid.cells() {
        return Err(LaxOleinikError::Shape(format!("cell {} out of range", endpoint.1)));
    }
    let op = StepOperator::new(&result.spec, grid)?;
    let steps = n_periods * grid.n_t();
    let mut nodes = vec![grid.node(endpoint.0, endpoint.1)];
    for _ in 0..steps {
        let prev = result.pred_node(*nodes.last().expect("nonempty"));
        nodes.push(prev);
    }
    nodes.reverse();
    let mut action = 0.0;
    let mut samples = Vec::with_capacity(nodes.len());
    for (i, pair) in nodes.windows(2).enumerate() {
        let (k, src) = grid.node_parts(pair[0]);
        let (_, dst) = grid.node_parts(pair[1]);
        let o = op.offset_between(src, dst).ok_or_else(|| {
            LaxOleinikError::Shape(format!("predecessor step {src} -> {dst} leaves the window"))
        })?;
        action += op.step_cost(k, src, o);
        let off = op.offsets()[o];
        let t = (endpoint.0 as f64 - (steps - i) as f64) * grid.dt();
        samples.push(PhasePoint::new(t, grid.position(src), grid.velocity(off)));
    }
    // terminal velocity is the incoming one
    let last_v = samples.last().map(|s| s.v.clone()).unwrap_or_else(|| vec![0.0; grid.dim()]);
    samples.push(PhasePoint::new(grid.time(endpoint.0), grid.position(endpoint.1), last_v));
    let start = nodes[0];
    let end = *nodes.last().expect("nonempty");
    let defect = result.u.at_node(end) - result.u.at_node(start) - action - result.alpha * n_periods as f64;
    Ok(DiscreteCurve {
        samples,
        nodes,
        action,
        defect,
    })
}

/// Minimal discrete action from `start = (t_idx, cell)` to `end_cell` over `steps` steps.
pub fn discrete_action(
    spec: &LagrangianSpec,
    grid: &Grid,
    start: (usize, usize),
    end_cell: usize,
    steps: usize,
) -> Result<f64, LaxOleinikError> {
    if steps == 0 {
        return Err(LaxOleinikError::Shape("horizon must be at least one step".into()));
    }
    let op = StepOperator::new(spec, grid)?;
    let mut front = vec![f64::INFINITY; grid.cells()];
    front[start.1] = 0.0;
    let mut next = vec![0.0; grid.cells()];
    let mut pred = vec![0u32; grid.cells()];
    for s in 0..steps {
        op.apply_into(start.0 + s, &front, &mut next, &mut pred);
        std::mem::swap(&mut front, &mut next);
    }
    let a = front[end_cell];
    if a.is_infinite() {
        return Err(LaxOleinikError::Unreachable {
            distance: grid.cell_distance(start.1, end_cell),
            reach: steps as f64 * grid.window_radius().floor() * grid.dq(),
        });
    }
    Ok(a)
}
