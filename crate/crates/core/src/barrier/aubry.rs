use petgraph::unionfind::UnionFind;
use serde::{Deserialize, Serialize};

use super::{BarrierError, BarrierTable, SamplePoint};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassSweepEntry {
    pub tol_class: f64,
    pub classes: usize,
}

/// Aubry samples, the pseudo-metric `d` on them and its static classes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AubryDecomposition {
    pub samples: Vec<SamplePoint>,
    /// Indices into `samples`.
    pub aubry: Vec<usize>,
    /// `d[a][b] = h[i][j] + h[j][i]` over Aubry positions `a, b`.
    pub d: Vec<f64>,
    /// Static classes as lists of sample indices.
    pub classes: Vec<Vec<usize>>,
    /// Class index per Aubry position.
    pub class_of: Vec<usize>,
    /// Min-link distance between classes.
    pub quotient: Vec<f64>,
    pub tol_aubry: f64,
    pub tol_class: f64,
    pub sweep: Vec<ClassSweepEntry>,
}

#[derive(Serialize)]
struct Export<'a> {
    aubry: &'a [usize],
    classes: &'a [Vec<usize>],
    quotient: Vec<Vec<f64>>,
}

impl AubryDecomposition {
    pub fn d_at(&self, a: usize, b: usize) -> f64 {
        self.d[a * self.aubry.len() + b]
    }

    pub fn class_count(&self) -> usize {
        self.classes.len()
    }

    pub fn quotient_at(&self, a: usize, b: usize) -> f64 {
        self.quotient[a * self.classes.len() + b]
    }

    /// Aubry position of a sample index.
    pub fn position_of(&self, sample: usize) -> Option<usize> {
        self.aubry.iter().position(|i| *i == sample)
    }

    pub fn aubry_samples(&self) -> Vec<SamplePoint> {
        self.aubry.iter().map(|i| self.samples[*i].clone()).collect()
    }

    /// `max(d[a][c] - d[a][b] - d[b][c])`.
    pub fn triangle_defect(&self) -> f64 {
        let n = self.aubry.len();
        let mut w = f64::NEG_INFINITY;
        for a in 0..n {
            for b in 0..n {
                let dab = self.d_at(a, b);
                for c in 0..n {
                    w = w.max(self.d_at(a, c) - dab - self.d_at(b, c));
                }
            }
        }
        w
    }

    pub fn min_d(&self) -> f64 {
        self.d.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn is_symmetric(&self) -> bool {
        let n = self.aubry.len();
        (0..n).all(|a| (0..n).all(|b| self.d_at(a, b) == self.d_at(b, a)))
    }

    /// JSON `{aubry, classes, quotient}`; infinite entries become `null`.
    pub fn to_json(&self) -> serde_json::Value {
        let k = self.classes.len();
        let quotient = (0..k).map(|a| (0..k).map(|b| self.quotient_at(a, b)).collect()).collect();
        serde_json::to_value(Export {
            aubry: &self.aubry,
            classes: &self.classes,
            quotient,
        })
        .expect("serialisable")
    }
}

fn components(n: usize, d: &[f64], tol: f64) -> (Vec<usize>, usize) {
    let mut uf = UnionFind::<usize>::new(n);
    for a in 0..n {
        for b in a + 1..n {
            if d[a * n + b] <= tol {
                uf.union(a, b);
            }
        }
    }
    // relabel in order of first appearance
    let mut label = vec![usize::MAX; n];
    let mut of = vec![0; n];
    let mut count = 0;
    for a in 0..n {
        let r = uf.find(a);
        if label[r] == usize::MAX {
            label[r] = count;
            count += 1;
        }
        of[a] = label[r];
    }
    (of, count)
}

const SWEEP_FACTORS: [f64; 5] = [0.2, 1.0, 5.0, 25.0, 125.0];

pub fn aubry_decomposition(
    table: &BarrierTable,
    tol_aubry: f64,
    tol_class: f64,
) -> Result<AubryDecomposition, BarrierError> {
    if !table.is_square() {
        return Err(BarrierError::NotSquare);
    }
    let n = table.sources.len();
    let aubry: Vec<usize> = (0..n).filter(|&i| table.get(i, i) <= tol_aubry).collect();
    if aubry.is_empty() {
        let min_diagonal = (0..n).map(|i| table.get(i, i)).fold(f64::INFINITY, f64::min);
        return Err(BarrierError::EmptyAubry { tol_aubry, min_diagonal });
    }
    let m = aubry.len();
    let mut d = vec![0.0; m * m];
    for a in 0..m {
        for b in a..m {
            let (i, j) = (aubry[a], aubry[b]);
            let v = table.get(i, j) + table.get(j, i);
            d[a * m + b] = v;
            d[b * m + a] = v;
        }
    }
    let (class_of, k) = components(m, &d, tol_class);
    let mut classes = vec![Vec::new(); k];
    for (a, c) in class_of.iter().enumerate() {
        classes[*c].push(aubry[a]);
    }
    let mut quotient = vec![f64::INFINITY; k * k];
    for a in 0..m {
        for b in 0..m {
            let (ca, cb) = (class_of[a], class_of[b]);
            let q = &mut quotient[ca * k + cb];
            *q = q.min(d[a * m + b]);
        }
    }
    for c in 0..k {
        quotient[c * k + c] = 0.0;
    }
    let sweep = SWEEP_FACTORS
        .iter()
        .map(|f| ClassSweepEntry {
            tol_class: f * tol_class,
            classes: components(m, &d, f * tol_class).1,
        })
        .collect();
    Ok(AubryDecomposition {
        samples: table.sources.clone(),
        aubry,
        d,
        classes,
        class_of,
        quotient,
        tol_aubry,
        tol_class,
        sweep,
    })
}
