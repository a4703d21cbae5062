use serde::{Deserialize, Serialize};

use super::LaxOleinikError;

/// Uniform space-time grid on `T^1 x T^d`: `n_t` steps per period, `n_q` cells per axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dim: usize,
    n_q: usize,
    n_t: usize,
    v_max: f64,
}

impl Grid {
    pub fn new(dim: usize, n_q: usize, n_t: usize, v_max: f64) -> Result<Self, LaxOleinikError> {
        let bad = |m: String| Err(LaxOleinikError::InvalidGrid(m));
        if !(1..=2).contains(&dim) {
            return bad(format!("dim = {dim}, expected 1 or 2"));
        }
        if n_q < 8 {
            return bad(format!("n_q = {n_q} < 8"));
        }
        if n_t < 4 {
            return bad(format!("n_t = {n_t} < 4"));
        }
        if !(v_max > 0.0 && v_max.is_finite()) {
            return bad(format!("v_max = {v_max} must be positive"));
        }
        if v_max / n_t as f64 >= 0.5 {
            return bad(format!("v_max * dt = {} must stay below 1/2", v_max / n_t as f64));
        }
        if n_q.checked_pow(dim as u32).and_then(|c| c.checked_mul(n_t)).map_or(true, |n| n > u32::MAX as usize) {
            return bad("grid too large".into());
        }
        Ok(Self { dim, n_q, n_t, v_max })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn n_q(&self) -> usize {
        self.n_q
    }
    pub fn n_t(&self) -> usize {
        self.n_t
    }
    pub fn v_max(&self) -> f64 {
        self.v_max
    }
    pub fn dt(&self) -> f64 {
        1.0 / self.n_t as f64
    }
    pub fn dq(&self) -> f64 {
        1.0 / self.n_q as f64
    }

    /// Number of configuration cells, `n_q^d`.
    pub fn cells(&self) -> usize {
        self.n_q.pow(self.dim as u32)
    }

    /// Number of space-time nodes, `n_t * cells`.
    pub fn nodes(&self) -> usize {
        self.n_t * self.cells()
    }

    pub fn node(&self, t_idx: usize, cell: usize) -> usize {
        (t_idx % self.n_t) * self.cells() + cell
    }

    pub fn node_parts(&self, node: usize) -> (usize, usize) {
        (node / self.cells(), node % self.cells())
    }

    pub fn coords(&self, cell: usize) -> [usize; 2] {
        [cell % self.n_q, cell / self.n_q]
    }

    pub fn cell_at(&self, coords: [usize; 2]) -> usize {
        coords[0] % self.n_q + if self.dim == 2 { (coords[1] % self.n_q) * self.n_q } else { 0 }
    }

    pub fn position(&self, cell: usize) -> Vec<f64> {
        let c = self.coords(cell);
        c[..self.dim].iter().map(|i| *i as f64 / self.n_q as f64).collect()
    }

    pub fn time(&self, t_idx: usize) -> f64 {
        (t_idx % self.n_t) as f64 / self.n_t as f64
    }

    /// Cell nearest to `q` (rounded, wrapped).
    pub fn nearest_cell(&self, q: &[f64]) -> usize {
        let mut c = [0usize; 2];
        for (dst, x) in c.iter_mut().zip(q).take(self.dim) {
            let i = (x.rem_euclid(1.0) * self.n_q as f64).round() as usize;
            *dst = i % self.n_q;
        }
        self.cell_at(c)
    }

    /// Largest admissible displacement per step, in cells.
    pub fn window_radius(&self) -> f64 {
        self.v_max * self.n_q as f64 / self.n_t as f64
    }

    /// Admissible per-step cell offsets: `|offset| <= window_radius` (a disk when `d = 2`).
    pub fn offsets(&self) -> Result<Vec<[i32; 2]>, LaxOleinikError> {
        let r = self.window_radius();
        if r < 1.0 {
            return Err(LaxOleinikError::EmptyWindow { radius_cells: r });
        }
        let w = r.floor() as i32;
        let mut out = Vec::new();
        if self.dim == 1 {
            for a in -w..=w {
                out.push([a, 0]);
            }
        } else {
            for b in -w..=w {
                for a in -w..=w {
                    if ((a * a + b * b) as f64) <= r * r {
                        out.push([a, b]);
                    }
                }
            }
        }
        Ok(out)
    }

    /// Nearest-image displacement `to - from` in cells, components in `[-n_q/2, n_q/2)`.
    pub fn displacement(&self, from: usize, to: usize) -> [i32; 2] {
        let (a, b) = (self.coords(from), self.coords(to));
        let n = self.n_q as i64;
        let mut out = [0i32; 2];
        for i in 0..self.dim {
            let mut d = (b[i] as i64 - a[i] as i64).rem_euclid(n);
            if d >= n / 2 + n % 2 {
                d -= n;
            }
            out[i] = d as i32;
        }
        out
    }

    pub fn shift(&self, cell: usize, offset: [i32; 2]) -> usize {
        let c = self.coords(cell);
        let n = self.n_q as i64;
        let mut out = [0usize; 2];
        for i in 0..self.dim {
            out[i] = (c[i] as i64 + offset[i] as i64).rem_euclid(n) as usize;
        }
        self.cell_at(out)
    }

    /// Velocity of a one-step move by `offset` cells.
    pub fn velocity(&self, offset: [i32; 2]) -> Vec<f64> {
        let s = self.n_t as f64 / self.n_q as f64;
        offset[..self.dim].iter().map(|o| *o as f64 * s).collect()
    }

    /// Velocity change caused by a one-cell change of a step.
    pub fn velocity_resolution(&self) -> f64 {
        self.n_t as f64 / self.n_q as f64
    }

    /// Periodic Euclidean distance between two cells, in units of `q`.
    pub fn cell_distance(&self, a: usize, b: usize) -> f64 {
        let d = self.displacement(a, b);
        let s: f64 = d[..self.dim].iter().map(|x| (*x as f64).powi(2)).sum();
        s.sqrt() / self.n_q as f64
    }
}
