//! Acceptance suite: one line per criterion, nonzero exit if any fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use matherkit::barrier::{all_nodes, compute_barrier, BarrierOptions};
use matherkit::conley::{
    build_chain_graph, chain_decomposition, restrict_omega, ChainGraph, PointMetric, SampledSemiflow,
};
use matherkit::experiments::{run_semicontinuity, run_system, PerturbationSequence, SystemRun, Tolerances};
use matherkit::lagrangian::{LagrangianSpec, Potential};
use matherkit::lax_oleinik::{solve_weak_kam_with, Grid, SolveOptions};
use matherkit::relations::{fathi_interpolate, phase_semiflow};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn potential(name: &str, params: &[(&str, f64)]) -> Potential {
    let p: BTreeMap<String, f64> = params.iter().map(|(k, v)| (k.to_string(), *v)).collect();
    Potential::from_family(name, &p, 1).expect("known family")
}

struct Scenario {
    label: &'static str,
    run: SystemRun,
    elapsed: Duration,
}

fn scenario(label: &'static str, family: &str, grid: (usize, usize, f64), window: Option<(usize, usize)>) -> Scenario {
    let spec = LagrangianSpec::mechanical(potential(family, &[]));
    let grid = Grid::new(1, grid.0, grid.1, grid.2).expect("grid");
    let mut tol = Tolerances::default();
    if let Some((lo, hi)) = window {
        tol.t_min = lo;
        tol.t_max = hi;
    }
    let t0 = Instant::now();
    let run = run_system(&spec, &grid, &tol).unwrap_or_else(|e| panic!("{label}: {e}"));
    Scenario {
        label,
        run,
        elapsed: t0.elapsed(),
    }
}

fn pendulum_grid() -> Grid {
    Grid::new(1, 256, 64, 3.0).unwrap()
}

fn criterion_1() -> Outcome {
    let spec = LagrangianSpec::mechanical(potential("pendulum", &[]));
    let grid = pendulum_grid();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let t0 = Instant::now();
    let tol = Tolerances::default();
    let res = pool.install(|| solve_weak_kam_with(&spec, &grid, SolveOptions::new(tol.tol_fix, tol.max_iters)));
    let dt = t0.elapsed();
    match res {
        Ok(r) => outcome(
            (0.98..=1.02).contains(&r.alpha) && dt < Duration::from_secs(30),
            format!("alpha = {:.6}, {:.2} s on one thread", r.alpha, dt.as_secs_f64()),
        ),
        Err(e) => outcome(false, e.to_string()),
    }
}

fn criterion_2(free: &Scenario) -> Outcome {
    let r = &free.run;
    let hmax = r.table.h.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let pass = r.result.alpha.abs() <= 1e-6 && hmax <= 5e-3 && r.dec.class_count() == 1;
    outcome(
        pass,
        format!(
            "alpha = {:e}, max h = {:.3e} (window {:?}), classes = {}",
            r.result.alpha,
            hmax,
            r.table.horizon_window,
            r.dec.class_count()
        ),
    )
}

fn criterion_3(pendulum: &Scenario) -> Outcome {
    let r = &pendulum.run;
    let g = &r.grid;
    let phase = r.aubry_phase();
    let worst_q = phase.iter().map(|s| g.cell_distance(s.cell, 0)).fold(0.0, f64::max);
    let worst_v = phase.iter().map(|s| s.v[0].abs()).fold(0.0, f64::max);
    let pass = !phase.is_empty() && worst_q <= g.dq() + 1e-12 && worst_v <= g.velocity_resolution() + 1e-12;
    outcome(
        pass,
        format!(
            "{} Aubry samples, max |q| = {:.4} (cell {:.4}), max |v| = {:.4} (resolution {:.4})",
            phase.len(),
            worst_q,
            g.dq(),
            worst_v,
            g.velocity_resolution()
        ),
    )
}

fn criterion_4(all: &[&Scenario]) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for s in all {
        let dec = &s.run.dec;
        let tol_tri = 3.0 * s.run.tol.tol_dom;
        let tri = dec.triangle_defect();
        let ok = dec.is_symmetric() && dec.min_d() >= -1e-9 && tri <= tol_tri;
        pass &= ok;
        parts.push(format!(
            "{}: symmetric {}, min d {:.1e}, triangle {:.1e}",
            s.label,
            dec.is_symmetric(),
            dec.min_d(),
            tri
        ));
    }
    outcome(pass, parts.join("; "))
}

fn criterion_5(all: &[&Scenario]) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for s in all {
        let t0 = Instant::now();
        let run = &s.run;
        let Some(eps) = run.resolved.headline_eps else {
            return outcome(false, format!("{}: no headline eps", s.label));
        };
        let mut violations = 0;
        let mut checked = 0;
        match run.family() {
            Ok(family) => {
                for (k, u) in family.iter().enumerate() {
                    match run.check_solution(&format!("u{k}"), u) {
                        Ok(chk) => {
                            checked += 1;
                            violations += chk.report.at(eps).map(|l| l.oneway_violations.len()).unwrap_or(usize::MAX);
                        }
                        Err(e) => return outcome(false, format!("{}: {e}", s.label)),
                    }
                }
            }
            Err(e) => return outcome(false, format!("{}: {e}", s.label)),
        }
        let total = s.elapsed + t0.elapsed();
        pass &= violations == 0 && total < Duration::from_secs(120);
        parts.push(format!(
            "{}: {} violations over {} solutions at eps {:.4}, {:.1} s",
            s.label,
            violations,
            checked,
            eps,
            total.as_secs_f64()
        ));
    }
    outcome(pass, parts.join("; "))
}

fn criterion_6(all: &[&Scenario]) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for s in all {
        let run = &s.run;
        let family = match run.family() {
            Ok(f) => f,
            Err(e) => return outcome(false, format!("{}: {e}", s.label)),
        };
        let mane = run.mane(&family).mane;
        let eps = run.resolved.headline_eps.unwrap_or(f64::NAN);
        let res = phase_semiflow(&mane, &run.grid)
            .map_err(|e| e.to_string())
            .and_then(|f| build_chain_graph(&f, eps).map_err(|e| e.to_string()));
        match res {
            Ok(g) => {
                let dec = chain_decomposition(&g);
                let ok = dec.components.len() == 1 && dec.recurrent.len() == mane.len();
                pass &= ok;
                parts.push(format!(
                    "{}: {} samples, {} components, {} recurrent",
                    s.label,
                    mane.len(),
                    dec.components.len(),
                    dec.recurrent.len()
                ));
            }
            Err(e) => return outcome(false, format!("{}: {e}", s.label)),
        }
    }
    outcome(pass, parts.join("; "))
}

/// Edges from the definition, without the spatial index.
fn brute_edges(f: &SampledSemiflow, eps: f64) -> Vec<Vec<usize>> {
    (0..f.len())
        .map(|i| {
            (0..f.len())
                .filter(|j| f.images[i].iter().any(|y| f.metric.distance(y, &f.points[*j]) <= eps))
                .collect()
        })
        .collect()
}

fn brute_reach(edges: &[Vec<usize>]) -> Vec<Vec<bool>> {
    let n = edges.len();
    (0..n)
        .map(|i| {
            let mut seen = vec![false; n];
            let mut stack = edges[i].clone();
            while let Some(x) = stack.pop() {
                if !seen[x] {
                    seen[x] = true;
                    stack.extend(&edges[x]);
                }
            }
            seen
        })
        .collect()
}

fn random_system(rng: &mut ChaCha8Rng) -> (SampledSemiflow, f64) {
    let n = rng.gen_range(1..=200);
    let points: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)]).collect();
    let drift = rng.gen_range(-0.2..0.2);
    let images = points
        .iter()
        .map(|p| {
            let k = rng.gen_range(0..3);
            (0..k)
                .map(|_| {
                    vec![
                        (p[0] + drift + rng.gen_range(-0.05..0.05)).rem_euclid(1.0),
                        p[1] * rng.gen_range(0.6..1.05),
                    ]
                })
                .collect()
        })
        .collect();
    let metric = PointMetric {
        weights: vec![1.0, 1.0],
        periodic: vec![true, false],
    };
    let eps = rng.gen_range(0.005..0.08);
    (SampledSemiflow::new(points, images, metric, 1.0).unwrap(), eps)
}

fn check_system(f: &SampledSemiflow, eps: f64, k: usize) -> Result<(), String> {
    let g: ChainGraph = build_chain_graph(f, eps).map_err(|e| e.to_string())?;
    let edges = brute_edges(f, eps);
    for (i, e) in edges.iter().enumerate() {
        let got: Vec<usize> = g.edges[i].iter().map(|x| *x as usize).collect();
        if &got != e {
            return Err(format!("edge list of {i} differs"));
        }
    }
    let reach = brute_reach(&edges);
    let n = f.len();
    let dec = chain_decomposition(&g);
    let recurrent: Vec<usize> = (0..n).filter(|i| reach[*i][*i]).collect();
    if dec.recurrent != recurrent {
        return Err("recurrent sets differ".into());
    }
    for i in 0..n {
        for j in 0..n {
            if dec.related(i, j) != reach[i][j] {
                return Err(format!("reachability {i} -> {j} differs"));
            }
        }
    }
    for i in &recurrent {
        for j in &recurrent {
            let same = dec.component_of(*i) == dec.component_of(*j);
            if same != (reach[*i][*j] && reach[*j][*i]) {
                return Err(format!("components of {i}, {j} differ from mutual reachability"));
            }
        }
    }
    let (sub, keep) = restrict_omega(f, k, eps).map_err(|e| e.to_string())?;
    let sub_dec = chain_decomposition(&build_chain_graph(&sub, eps).map_err(|e| e.to_string())?);
    let mapped: Vec<usize> = sub_dec.recurrent.iter().map(|i| keep[*i]).collect();
    if mapped != recurrent {
        return Err("restriction changed the recurrent set".into());
    }
    Ok(())
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_601);
    let mut nodes = 0;
    for case in 0..100 {
        let (f, eps) = random_system(&mut rng);
        nodes += f.len();
        let k = rng.gen_range(1..6);
        if let Err(e) = check_system(&f, eps, k) {
            return outcome(false, format!("system {case}: {e}"));
        }
    }
    outcome(true, format!("100 systems, {nodes} nodes, all match the brute-force oracle"))
}

fn criterion_8() -> Outcome {
    let base = LagrangianSpec::mechanical(potential("double_well", &[]));
    let delta = potential("double_well", &[("amplitude", 0.0), ("lift", 1.0)]);
    let seq = PerturbationSequence::harmonic(base, delta, 1.0, 8).unwrap();
    let grid = Grid::new(1, 128, 32, 4.0).unwrap();
    match run_semicontinuity(&seq, &grid, &Tolerances::default(), 3.0) {
        Ok(rep) => {
            let gaps_ok = rep.steps.iter().all(|s| s.alpha_gap <= 1.0 / s.k as f64 + 2e-2);
            let worst = rep
                .steps
                .iter()
                .map(|s| s.alpha_gap - 1.0 / s.k as f64)
                .fold(f64::NEG_INFINITY, f64::max);
            let k0_ok = rep.k0.is_some_and(|k| k <= 8);
            outcome(
                gaps_ok && k0_ok,
                format!(
                    "k0 = {:?}, max excess {:.4} (U = {:.4}), max alpha gap - 1/k = {:.2e}, limsup contained {}",
                    rep.k0,
                    rep.steps.iter().map(|s| s.excess).fold(0.0, f64::max),
                    rep.u_radius,
                    worst,
                    rep.limsup_contained
                ),
            )
        }
        Err(e) => outcome(false, e.to_string()),
    }
}

fn criterion_9(dw: &Scenario) -> Outcome {
    let run = &dw.run;
    let sols = match run.class_solutions() {
        Ok(s) if s.len() >= 2 => s,
        Ok(s) => return outcome(false, format!("{} class solutions", s.len())),
        Err(e) => return outcome(false, e.to_string()),
    };
    let mut opts = BarrierOptions::new(run.tol.t_min, run.tol.t_max);
    opts.tol_tail = run.tol.tol_tail;
    let ext = match compute_barrier(
        &run.spec,
        &run.grid,
        run.result.alpha,
        &run.dec.aubry_samples(),
        &all_nodes(&run.grid),
        opts,
    ) {
        Ok(t) => t,
        Err(e) => return outcome(false, e.to_string()),
    };
    let tol = run.tol.tol_dom;
    match fathi_interpolate(&sols[0].u, &sols[1].u, &run.dec, &ext, tol) {
        Ok(f) => outcome(
            f.barrier_defect <= tol && f.domination.defect <= tol,
            format!(
                "barrier defect {:.2e}, domination defect {:.2e}, tol {:.0e}, {} image values",
                f.barrier_defect,
                f.domination.defect,
                tol,
                f.theta.intervals.len()
            ),
        ),
        Err(e) => outcome(false, e.to_string()),
    }
}

fn dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect()
}

fn criterion_10() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let list = Command::new(env!("CARGO_BIN_EXE_matherkit")).arg("list-scenarios").output().unwrap();
    let names: Vec<String> = String::from_utf8_lossy(&list.stdout)
        .lines()
        .filter_map(|l| l.split_whitespace().next().map(String::from))
        .collect();
    if names.is_empty() {
        return outcome(false, "no bundled scenarios");
    }
    let mut files = 0;
    for name in &names {
        let mut runs = Vec::new();
        for rep in ["first", "second"] {
            let dir = tmp.path().join("out").join(name).join(rep);
            let out = Command::new(env!("CARGO_BIN_EXE_matherkit"))
                .args(["run", name, "--output-dir"])
                .arg(&dir)
                .current_dir(tmp.path())
                .output()
                .unwrap();
            if !out.status.success() {
                return outcome(false, format!("{name}: {}", String::from_utf8_lossy(&out.stderr)));
            }
            runs.push(dir_bytes(&dir));
        }
        if runs[0] != runs[1] {
            let differ: Vec<&String> = runs[0].keys().filter(|k| runs[0].get(*k) != runs[1].get(*k)).collect();
            return outcome(false, format!("{name}: {differ:?} differ"));
        }
        files += runs[0].len();
    }
    outcome(true, format!("{} scenarios, {files} files byte-identical across reruns", names.len()))
}

fn main() {
    let t0 = Instant::now();
    let pendulum = scenario("pendulum", "pendulum", (256, 64, 3.0), None);
    let dw = scenario("double-well", "double_well", (128, 32, 4.0), None);
    let free = scenario("free", "free", (256, 4, 0.05), Some((16, 64)));
    let all = [&pendulum, &dw, &free];

    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("critical value of the pendulum", Box::new(criterion_1)),
        ("free particle", Box::new(|| criterion_2(&free))),
        ("Aubry localization", Box::new(|| criterion_3(&pendulum))),
        ("pseudo-metric axioms", Box::new(|| criterion_4(&all))),
        ("R_u implies C_u", Box::new(|| criterion_5(&all))),
        ("Mane chain transitivity", Box::new(|| criterion_6(&all))),
        ("Conley engine oracle", Box::new(criterion_7)),
        ("upper semicontinuity scenario", Box::new(criterion_8)),
        ("interpolation between solutions", Box::new(|| criterion_9(&dw))),
        ("determinism", Box::new(criterion_10)),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let o = f();
        if !o.pass {
            failed += 1;
        }
        println!(
            "criterion {:>2} {} {:<34} {} [{:.1} s]",
            i + 1,
            if o.pass { "PASS" } else { "FAIL" },
            name,
            o.detail,
            t.elapsed().as_secs_f64()
        );
    }
    println!(
        "acceptance: {} of {} criteria passed in {:.1} s",
        criteria.len() - failed,
        criteria.len(),
        t0.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
