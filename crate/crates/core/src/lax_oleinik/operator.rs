use rayon::prelude::*;

use super::{Grid, LaxOleinikError};
use crate::lagrangian::LagrangianSpec;

/// Below this many target cells a sweep runs sequentially.
const PAR_MIN_CELLS: usize = 512;

/// Precomputed one-step costs `dt * L(t_k, q', (q - q') / dt)` split into a
/// kinetic part per offset and a potential part per source cell and time index.
#[derive(Clone, Debug)]
pub struct StepOperator {
    grid: Grid,
    offsets: Vec<[i32; 2]>,
    kinetic: Vec<f64>,
    /// `-dt * V(t_k, q')`, indexed `k * cells + q'`.
    potential: Vec<f64>,
    /// Source cell of `target` under offset `o`, indexed `target * n_off + o` (1-D fast path).
    sources: Option<Vec<u32>>,
}

/// Result of one Lax-Oleinik step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutput {
    pub values: Vec<f64>,
    pub predecessor: Vec<u32>,
}

impl StepOperator {
    pub fn new(spec: &LagrangianSpec, grid: &Grid) -> Result<Self, LaxOleinikError> {
        if spec.dim() != grid.dim() {
            return Err(LaxOleinikError::Shape(format!(
                "spec is {}-dimensional, grid is {}-dimensional",
                spec.dim(),
                grid.dim()
            )));
        }
        let offsets = grid.offsets()?;
        let dt = grid.dt();
        let kinetic = offsets
            .iter()
            .map(|o| {
                let disp: Vec<f64> = o[..grid.dim()].iter().map(|x| *x as f64 * grid.dq()).collect();
                let linear: f64 = spec.one_form().iter().zip(&disp).map(|(c, x)| c * x).sum();
                spec.kinetic().kinetic(&disp) / dt + linear
            })
            .collect();
        let cells = grid.cells();
        let mut potential = vec![0.0; grid.n_t() * cells];
        for k in 0..grid.n_t() {
            let t = grid.time(k);
            for c in 0..cells {
                potential[k * cells + c] = -dt * spec.potential().eval(t, &grid.position(c));
            }
        }
        let sources = (grid.dim() == 1).then(|| {
            let mut s = Vec::with_capacity(cells * offsets.len());
            for target in 0..cells {
                for o in &offsets {
                    s.push(grid.shift(target, [-o[0], -o[1]]) as u32);
                }
            }
            s
        });
        Ok(Self {
            grid: grid.clone(),
            offsets,
            kinetic,
            potential,
            sources,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn offsets(&self) -> &[[i32; 2]] {
        &self.offsets
    }

    pub fn kinetic_cost(&self, offset_idx: usize) -> f64 {
        self.kinetic[offset_idx]
    }

    pub fn potential_cost(&self, t_idx: usize, cell: usize) -> f64 {
        self.potential[(t_idx % self.grid.n_t()) * self.grid.cells() + cell]
    }

    /// One-step cost `dt * L` of moving from `src` at time `t_idx` by offset `offset_idx`.
    pub fn step_cost(&self, t_idx: usize, src: usize, offset_idx: usize) -> f64 {
        self.kinetic[offset_idx] + self.potential_cost(t_idx, src)
    }

    #[inline]
    pub fn source(&self, target: usize, offset_idx: usize) -> usize {
        match &self.sources {
            Some(s) => s[target * self.offsets.len() + offset_idx] as usize,
            None => {
                let o = self.offsets[offset_idx];
                self.grid.shift(target, [-o[0], -o[1]])
            }
        }
    }

    /// Offset index moving `src` onto `dst`, if within the window.
    pub fn offset_between(&self, src: usize, dst: usize) -> Option<usize> {
        let d = self.grid.displacement(src, dst);
        self.offsets.iter().position(|o| *o == d)
    }

    fn relax_target(&self, shifted: &[f64], target: usize) -> (f64, u32) {
        let mut best = f64::INFINITY;
        let mut arg = u32::MAX;
        for o in 0..self.offsets.len() {
            let src = self.source(target, o);
            let v = shifted[src] + self.kinetic[o];
            // lowest source index wins ties
            if v < best || (v == best && (src as u32) < arg) {
                best = v;
                arg = src as u32;
            }
        }
        if arg == u32::MAX {
            arg = target as u32;
        }
        (best, arg)
    }

    /// `(T_k u)(q) = min_{q'} u(q') + dt L(t_k, q', (q - q')/dt)`, with the argmin.
    pub fn apply_into(&self, t_idx: usize, u: &[f64], out: &mut [f64], pred: &mut [u32]) {
        let cells = self.grid.cells();
        let k = t_idx % self.grid.n_t();
        let pot = &self.potential[k * cells..(k + 1) * cells];
        let shifted: Vec<f64> = u.iter().zip(pot).map(|(a, b)| a + b).collect();
        if cells >= PAR_MIN_CELLS {
            out.par_iter_mut()
                .zip(pred.par_iter_mut())
                .enumerate()
                .with_min_len(PAR_MIN_CELLS / 2)
                .for_each(|(q, (o, p))| {
                    let (v, a) = self.relax_target(&shifted, q);
                    *o = v;
                    *p = a;
                });
        } else {
            for q in 0..cells {
                let (v, a) = self.relax_target(&shifted, q);
                out[q] = v;
                pred[q] = a;
            }
        }
    }

    pub fn apply(&self, t_idx: usize, u: &[f64]) -> StepOutput {
        let cells = self.grid.cells();
        let mut values = vec![0.0; cells];
        let mut predecessor = vec![0u32; cells];
        self.apply_into(t_idx, u, &mut values, &mut predecessor);
        StepOutput { values, predecessor }
    }

    /// Full-period operator `T_{n_t - 1} o ... o T_0` starting at time index 0.
    pub fn period(&self, u: &[f64]) -> Vec<f64> {
        let cells = self.grid.cells();
        let mut a = u.to_vec();
        let mut b = vec![0.0; cells];
        let mut pred = vec![0u32; cells];
        for k in 0..self.grid.n_t() {
            self.apply_into(k, &a, &mut b, &mut pred);
            std::mem::swap(&mut a, &mut b);
        }
        a
    }
}

/// One Lax-Oleinik step from time index `t_idx` to `t_idx + 1`.
pub fn lax_oleinik_step(
    spec: &LagrangianSpec,
    grid: &Grid,
    u_slice: &[f64],
    t_idx: usize,
) -> Result<StepOutput, LaxOleinikError> {
    if u_slice.len() != grid.cells() {
        return Err(LaxOleinikError::Shape(format!(
            "slice has {} entries, grid has {} cells",
            u_slice.len(),
            grid.cells()
        )));
    }
    if u_slice.iter().any(|x| !x.is_finite()) {
        return Err(LaxOleinikError::Shape("slice has non-finite entries".into()));
    }
    Ok(StepOperator::new(spec, grid)?.apply(t_idx, u_slice))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lagrangian::{eval_lagrangian, Potential};
    use std::collections::BTreeMap;

    fn free() -> LagrangianSpec {
        LagrangianSpec::mechanical(Potential::zero(1))
    }

    fn pendulum() -> LagrangianSpec {
        LagrangianSpec::mechanical(Potential::from_family("pendulum", &BTreeMap::new(), 1).unwrap())
    }

    #[test]
    fn free_particle_rest() {
        let g = Grid::new(1, 32, 8, 1.0).unwrap();
        let out = lax_oleinik_step(&free(), &g, &vec![0.0; 32], 3).unwrap();
        assert!(out.values.iter().all(|v| *v == 0.0));
        assert_eq!(out.predecessor, (0..32).collect::<Vec<u32>>());
    }

    #[test]
    fn constant_potential_shift() {
        let mut p = BTreeMap::new();
        p.insert("value".to_string(), 1.0);
        let spec = LagrangianSpec::mechanical(Potential::from_family("constant", &p, 1).unwrap());
        let g = Grid::new(1, 32, 8, 1.0).unwrap();
        let out = lax_oleinik_step(&spec, &g, &vec![0.0; 32], 0).unwrap();
        assert!(out.values.iter().all(|v| *v == -g.dt()));
    }

    #[test]
    fn matches_uncapped_brute_force() {
        // oracle: exhaustive minimisation over every source cell, L evaluated directly
        let spec = pendulum();
        let g = Grid::new(1, 64, 32, 4.0).unwrap();
        let u: Vec<f64> = (0..64).map(|i| ((i * 7) % 13) as f64 * 0.01).collect();
        for t_idx in [0, 5] {
            let out = lax_oleinik_step(&spec, &g, &vec![0.0; 64], t_idx).unwrap();
            let out_u = lax_oleinik_step(&spec, &g, &u, t_idx).unwrap();
            for (input, got) in [(vec![0.0; 64], &out), (u.clone(), &out_u)] {
                for q in 0..64 {
                    let mut best = f64::INFINITY;
                    for src in 0..64 {
                        let mut d = (q as f64 - src as f64) / 64.0;
                        d -= d.round();
                        let c = input[src] + g.dt() * eval_lagrangian(&spec, g.time(t_idx), &[src as f64 / 64.0], &[d / g.dt()]);
                        best = best.min(c);
                    }
                    assert!((got.values[q] - best).abs() < 1e-12, "q={q}: {} vs {best}", got.values[q]);
                }
            }
        }
    }

    #[test]
    fn tie_break_lowest_index() {
        // symmetric input: moving left or right from the two neighbours costs the same
        let g = Grid::new(1, 16, 8, 2.0).unwrap();
        let mut u = vec![10.0; 16];
        u[4] = 0.0;
        u[6] = 0.0;
        let out = lax_oleinik_step(&free(), &g, &u, 0).unwrap();
        assert_eq!(out.predecessor[5], 4);
    }

    #[test]
    fn two_dim_step_agrees_with_direct_eval() {
        let spec = LagrangianSpec::mechanical(Potential::from_family("pendulum", &BTreeMap::new(), 2).unwrap())
            .with_one_form(vec![0.3, -0.2])
            .unwrap();
        let g = Grid::new(2, 16, 8, 2.5).unwrap();
        let op = StepOperator::new(&spec, &g).unwrap();
        for target in [0usize, 17, 255] {
            for (o, off) in op.offsets().iter().enumerate() {
                let src = op.source(target, o);
                assert_eq!(g.displacement(src, target), *off);
                let v = g.velocity(*off);
                let direct = g.dt() * eval_lagrangian(&spec, g.time(2), &g.position(src), &v);
                assert!((op.step_cost(2, src, o) - direct).abs() < 1e-14);
            }
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn grid() -> Grid {
            Grid::new(1, 32, 8, 2.0).unwrap()
        }

        proptest! {
            #[test]
            fn monotone(u in prop::collection::vec(-1.0f64..1.0, 32), bump in prop::collection::vec(0.0f64..1.0, 32), k in 0usize..8) {
                let w: Vec<f64> = u.iter().zip(&bump).map(|(a, b)| a + b).collect();
                let a = lax_oleinik_step(&pendulum(), &grid(), &u, k).unwrap();
                let b = lax_oleinik_step(&pendulum(), &grid(), &w, k).unwrap();
                for (x, y) in a.values.iter().zip(&b.values) {
                    prop_assert!(x <= y);
                }
            }

            #[test]
            fn constant_commutes_exactly_on_dyadics(u in prop::collection::vec(-64i32..64, 32), c in -64i32..64) {
                // free particle on this grid has dyadic costs, so every sum is exact
                let u: Vec<f64> = u.iter().map(|x| *x as f64 / 64.0).collect();
                let w: Vec<f64> = u.iter().map(|x| x + c as f64 / 64.0).collect();
                let a = lax_oleinik_step(&free(), &grid(), &u, 0).unwrap();
                let b = lax_oleinik_step(&free(), &grid(), &w, 0).unwrap();
                for (x, y) in a.values.iter().zip(&b.values) {
                    prop_assert_eq!(x + c as f64 / 64.0, *y);
                }
                prop_assert_eq!(a.predecessor, b.predecessor);
            }

            #[test]
            fn constant_commutes(u in prop::collection::vec(-1.0f64..1.0, 32), c in -5.0f64..5.0) {
                let w: Vec<f64> = u.iter().map(|x| x + c).collect();
                let a = lax_oleinik_step(&pendulum(), &grid(), &u, 3).unwrap();
                let b = lax_oleinik_step(&pendulum(), &grid(), &w, 3).unwrap();
                for (x, y) in a.values.iter().zip(&b.values) {
                    prop_assert!((x + c - y).abs() < 1e-13);
                }
            }

            #[test]
            fn period_nonexpansive(u in prop::collection::vec(-1.0f64..1.0, 32), w in prop::collection::vec(-1.0f64..1.0, 32)) {
                let op = StepOperator::new(&pendulum(), &grid()).unwrap();
                let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
                let (tu, tw) = (op.period(&u), op.period(&w));
                prop_assert!(dist(&tu, &tw) <= dist(&u, &w) + 1e-12);
            }
        }
    }
}
