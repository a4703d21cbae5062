//! Pipeline orchestration and output writing.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use matherkit::barrier::{all_nodes, compute_barrier, BarrierOptions, SamplePoint};
use matherkit::conley::{build_chain_graph, chain_decomposition};
use matherkit::experiments::{
    cohomology_sweep, run_semicontinuity, run_system, scatter_svg, ExperimentError, Series, SystemRun,
};
use matherkit::lax_oleinik::{check_dominated, solve_weak_kam_with, Grid, SolveOptions, WeakKamResult};
use matherkit::relations::{fathi_interpolate, ladder_check, phase_semiflow};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::config::{Experiment, ScenarioConfig};

pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Violation lists longer than this are truncated in JSON output; counts are always exact.
pub const MAX_LISTED_PAIRS: usize = 1000;

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FileRecord {
    pub path: String,
    pub bytes: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageRecord {
    pub name: String,
    pub status: String,
    pub error: Option<String>,
    /// Kept out of `manifest.json` so that reruns stay byte-identical.
    #[serde(skip)]
    pub wall_clock: Duration,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub name: String,
    pub kind: String,
    pub config_hash: String,
    pub toolkit_version: String,
    pub status: String,
    pub stages: Vec<StageRecord>,
    pub files: Vec<FileRecord>,
}

impl RunManifest {
    pub fn succeeded(&self) -> bool {
        self.status == "ok"
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("cannot write {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("stage {stage} failed: {message}")]
    Stage {
        stage: String,
        message: String,
        manifest: Box<RunManifest>,
    },
}

/// Writes files atomically into one directory and records them.
pub struct Outputs {
    dir: PathBuf,
    files: Vec<FileRecord>,
}

impl Outputs {
    pub fn new(dir: &Path) -> Result<Self, RunError> {
        fs::create_dir_all(dir).map_err(|source| RunError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    /// Writes `.<name>.tmp`, syncs it and renames it to `name`.
    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), RunError> {
        let target = self.dir.join(name);
        let tmp = self.dir.join(format!(".{name}.tmp"));
        let io = |source| RunError::Io {
            path: target.clone(),
            source,
        };
        let mut f = fs::File::create(&tmp).map_err(io)?;
        f.write_all(bytes).map_err(io)?;
        f.sync_all().map_err(io)?;
        drop(f);
        fs::rename(&tmp, &target).map_err(io)?;
        self.files.retain(|r| r.path != name);
        self.files.push(FileRecord {
            path: name.to_string(),
            bytes: bytes.len(),
            sha256: sha256_hex(bytes),
        });
        Ok(())
    }

    pub fn json(&mut self, name: &str, value: &Value) -> Result<(), RunError> {
        let mut text = serde_json::to_string_pretty(value).expect("json values serialise");
        text.push('\n');
        self.write(name, text.as_bytes())
    }
}

type StageResult = Result<(), StageFailure>;

enum StageFailure {
    Io(RunError),
    Failed(String),
}

impl From<RunError> for StageFailure {
    fn from(e: RunError) -> Self {
        StageFailure::Io(e)
    }
}

impl From<ExperimentError> for StageFailure {
    fn from(e: ExperimentError) -> Self {
        StageFailure::Failed(e.to_string())
    }
}

macro_rules! fail {
    ($e:expr) => {
        |e| StageFailure::Failed(format!("{}: {}", $e, e))
    };
}

struct Runner<'a> {
    cfg: &'a ScenarioConfig,
    out: Outputs,
    stages: Vec<StageRecord>,
    failed: Option<(String, String)>,
}

impl<'a> Runner<'a> {
    /// Runs `f` unless an earlier stage failed; returns whether it succeeded.
    fn stage(&mut self, name: &str, f: impl FnOnce(&mut Outputs) -> StageResult) -> Result<bool, RunError> {
        if self.failed.is_some() {
            self.stages.push(StageRecord {
                name: name.into(),
                status: "skipped".into(),
                error: None,
                wall_clock: Duration::ZERO,
            });
            return Ok(false);
        }
        let t0 = Instant::now();
        let res = f(&mut self.out);
        let wall_clock = t0.elapsed();
        let (status, error) = match res {
            Ok(()) => ("ok", None),
            Err(StageFailure::Io(e)) => return Err(e),
            Err(StageFailure::Failed(m)) => ("failed", Some(m)),
        };
        if let Some(m) = &error {
            self.failed = Some((name.to_string(), m.clone()));
        }
        self.stages.push(StageRecord {
            name: name.into(),
            status: status.into(),
            error,
            wall_clock,
        });
        Ok(status == "ok")
    }

    fn finish(mut self) -> Result<RunManifest, RunError> {
        let mut manifest = RunManifest {
            name: self.cfg.name.clone(),
            kind: self.cfg.experiment.kind().into(),
            config_hash: self.cfg.config_hash.clone(),
            toolkit_version: TOOLKIT_VERSION.into(),
            status: if self.failed.is_some() { "failed" } else { "ok" }.into(),
            stages: self.stages.clone(),
            files: Vec::new(),
        };
        let mut files = self.out.files.clone();
        files.sort_by(|a, b| a.path.cmp(&b.path));
        manifest.files = files;
        let value = serde_json::to_value(&manifest).expect("manifest serialises");
        self.out.json("manifest.json", &value)?;
        match self.failed.take() {
            None => Ok(manifest),
            Some((stage, message)) => Err(RunError::Stage {
                stage,
                message,
                manifest: Box::new(manifest),
            }),
        }
    }
}

fn grid_json(grid: &Grid) -> Value {
    json!({"dim": grid.dim(), "n_q": grid.n_q(), "n_t": grid.n_t(), "v_max": grid.v_max(), "dq": grid.dq(), "dt": grid.dt()})
}

fn sample_json(s: &SamplePoint) -> Value {
    json!([s.t, s.cell])
}

fn pairs_json(v: &[(usize, usize)]) -> Value {
    json!({
        "count": v.len(),
        "pairs": v.iter().take(MAX_LISTED_PAIRS).map(|(i, j)| [*i, *j]).collect::<Vec<_>>(),
        "truncated": v.len() > MAX_LISTED_PAIRS,
    })
}

fn alpha_json(cfg: &ScenarioConfig, r: &WeakKamResult, domination_defect: f64) -> Value {
    json!({
        "name": cfg.name,
        "alpha": r.alpha,
        "residual": r.residual,
        "iters": r.iters,
        "lipschitz": r.lipschitz,
        "domination_defect": domination_defect,
        "grid": grid_json(&r.grid),
    })
}

fn write_solution(out: &mut Outputs, cfg: &ScenarioConfig, r: &WeakKamResult, defect: f64) -> StageResult {
    out.json("alpha.json", &alpha_json(cfg, r, defect))?;
    out.write("u.csv", r.u.to_csv(&r.grid).as_bytes())?;
    Ok(())
}

fn aubry_json(run: &SystemRun) -> Value {
    let dec = &run.dec;
    let mut v = dec.to_json();
    let extra = json!({
        "samples": run.table.sources.iter().map(sample_json).collect::<Vec<_>>(),
        "aubry_samples": dec.aubry_samples().iter().map(sample_json).collect::<Vec<_>>(),
        "class_count": dec.class_count(),
        "tol_aubry": dec.tol_aubry,
        "tol_class": dec.tol_class,
        "symmetric": dec.is_symmetric(),
        "min_d": dec.min_d(),
        "triangle_defect": dec.triangle_defect(),
        "table_triangle_defect": run.table.triangle_defect().ok(),
        "class_sweep": dec.sweep,
        "horizon_window": run.table.horizon_window,
        "tail_drift": run.table.tail_drift,
        "critical_nodes": run.sets.critical.len(),
        "i_set_nodes": run.sets.i_set.len(),
        "headline_eps": run.resolved.headline_eps,
    });
    if let (Value::Object(a), Value::Object(b)) = (&mut v, extra) {
        a.extend(b);
    }
    v
}

fn aubry_svg(name: &str, run: &SystemRun) -> String {
    let g = &run.grid;
    let pts = run
        .dec
        .aubry_samples()
        .iter()
        .map(|s| (g.position(s.cell)[0], g.time(s.t)))
        .collect();
    let series = vec![Series {
        label: "Aubry".into(),
        points: pts,
    }];
    scatter_svg(&format!("{name}: Aubry samples"), "q", "t", &series, (0.0, 1.0))
}

fn system_stage(cfg: &ScenarioConfig, out: &mut Outputs, slot: &mut Option<SystemRun>) -> StageResult {
    let run = run_system(&cfg.spec, &cfg.grid, &cfg.tolerances)?;
    write_solution(out, cfg, &run.result, run.domination.defect)?;
    out.write("barrier.csv", run.table.to_csv().as_bytes())?;
    out.json("aubry.json", &aubry_json(&run))?;
    out.write("aubry.svg", aubry_svg(&cfg.name, &run).as_bytes())?;
    *slot = Some(run);
    Ok(())
}

fn relations_stage(run: &SystemRun, out: &mut Outputs, family: &[WeakKamResult]) -> Result<bool, StageFailure> {
    let eps = run.resolved.headline_eps;
    let mut solutions = Vec::new();
    let mut oneway_all = Vec::new();
    let mut all_coincide = true;
    for (k, u) in family.iter().enumerate() {
        let label = if k == 0 { "solver".to_string() } else { format!("class_{}", k - 1) };
        let chk = run.check_solution(&label, u)?;
        let levels: Vec<Value> = chk
            .report
            .levels
            .iter()
            .map(|l| {
                json!({
                    "eps": l.eps,
                    "oneway_violations": l.oneway_violations.len(),
                    "coincidence_violations": l.coincidence_violations.len(),
                    "coincidence_holds": l.coincidence_holds,
                })
            })
            .collect();
        let headline = eps.and_then(|e| chk.report.at(e));
        if let Some(h) = headline {
            oneway_all.extend(h.oneway_violations.iter().map(|(i, j)| json!([label, i, j])));
            all_coincide &= h.coincidence_holds;
        }
        solutions.push(json!({
            "label": label,
            "samples": chk.sample_index,
            "n": chk.relations.n,
            "tol_rel": chk.relations.tol_rel,
            "transitivity_defect": chk.relations.transitivity_defect,
            "headline": headline.map(|h| json!({
                "eps": h.eps,
                "oneway_violations": pairs_json(&h.oneway_violations),
                "coincidence_violations": pairs_json(&h.coincidence_violations),
                "coincidence_holds": h.coincidence_holds,
            })),
            "levels": levels,
        }));
    }
    out.json(
        "relations.json",
        &json!({
            "headline_eps": eps,
            "oneway_violations": oneway_all,
            "coincidence_holds": eps.is_some() && all_coincide,
            "solutions": solutions,
        }),
    )?;
    Ok(eps.is_some() && all_coincide)
}

fn mane_stage(run: &SystemRun, out: &mut Outputs, family: &[WeakKamResult]) -> StageResult {
    let mane = run.mane(family);
    let flow = phase_semiflow(&mane.mane, &run.grid).map_err(fail!("mane flow"))?;
    let levels = run
        .tol
        .eps_schedule
        .iter()
        .map(|eps| {
            let dec = chain_decomposition(&build_chain_graph(&flow, *eps).map_err(fail!("chain graph"))?);
            Ok(json!({
                "eps": eps,
                "components": dec.components.len(),
                "recurrent": dec.recurrent.len(),
                "samples": flow.len(),
                "chain_transitive": dec.components.len() == 1 && dec.recurrent.len() == flow.len(),
            }))
        })
        .collect::<Result<Vec<_>, StageFailure>>()?;
    out.json(
        "mane.json",
        &json!({
            "samples": mane.mane.len(),
            "solutions": family.len(),
            "headline_eps": run.resolved.headline_eps,
            "levels": levels,
        }),
    )?;
    Ok(())
}

fn ladder_stage(run: &SystemRun, out: &mut Outputs, family: &[WeakKamResult], coincide: bool) -> StageResult {
    let classes = &family[1..];
    let pairs: Vec<_> = if classes.len() >= 2 {
        classes[1..].iter().map(|v| (classes[0].u.clone(), v.u.clone())).collect()
    } else {
        vec![(family[0].u.clone(), family[family.len() - 1].u.clone())]
    };
    let rep = ladder_check(&run.dec, &run.grid, &pairs, Some(coincide)).map_err(fail!("ladder"))?;
    let mut v = rep.to_json();
    if let Value::Object(m) = &mut v {
        m.insert("implies_1_7".into(), json!(rep.implies_1_7));
        m.insert("profile_consistent".into(), json!(rep.profile_consistent));
        m.insert(
            "h5_distinct".into(),
            json!(rep.h5_gap_profiles.iter().map(|p| p.distinct).collect::<Vec<_>>()),
        );
    }
    out.json("ladder.json", &v)?;
    Ok(())
}

fn fathi_stage(run: &SystemRun, out: &mut Outputs, family: &[WeakKamResult]) -> StageResult {
    let (u, v) = if family.len() >= 3 { (&family[1], &family[2]) } else { (&family[0], &family[family.len() - 1]) };
    let mut opts = BarrierOptions::new(run.tol.t_min, run.tol.t_max);
    opts.tol_tail = run.tol.tol_tail;
    let ext = compute_barrier(
        &run.spec,
        &run.grid,
        run.result.alpha,
        &run.dec.aubry_samples(),
        &all_nodes(&run.grid),
        opts,
    )
    .map_err(fail!("extension barrier"))?;
    let (value, w) = match fathi_interpolate(&u.u, &v.u, &run.dec, &ext, run.tol.tol_dom) {
        Ok(f) => (
            json!({
                "ok": true,
                "tol_dom": run.tol.tol_dom,
                "barrier_defect": f.barrier_defect,
                "barrier_witness": f.barrier_witness,
                "domination_defect": f.domination.defect,
                "image": f.image,
                "theta_intervals": f.theta.intervals,
            }),
            Some(f.w),
        ),
        Err(e) => (json!({"ok": false, "tol_dom": run.tol.tol_dom, "error": e.to_string()}), None),
    };
    out.json("fathi.json", &value)?;
    if let Some(w) = w {
        out.write("w.csv", w.to_csv(&run.grid).as_bytes())?;
    }
    Ok(())
}

fn csv_row(xs: &[String]) -> String {
    let mut s = xs.join(",");
    s.push('\n');
    s
}

fn run_semicontinuity_stage(cfg: &ScenarioConfig, out: &mut Outputs) -> StageResult {
    let Experiment::Semicontinuity {
        sequence,
        u_radius_cells,
    } = &cfg.experiment
    else {
        unreachable!("dispatched on kind")
    };
    let rep = run_semicontinuity(sequence, &cfg.grid, &cfg.tolerances, *u_radius_cells)?;
    let sup_delta = sequence.delta.sup_bound();
    let mut report = serde_json::to_value(&rep).expect("report serialises");
    if let Value::Object(m) = &mut report {
        m.insert("largest_k".into(), json!(rep.steps.last().map(|s| s.k)));
        m.insert("delta_sup".into(), json!(sup_delta));
    }
    out.json("report.json", &report)?;

    let mut csv = String::from("k,amplitude,alpha,alpha_gap,alpha_bound,classes,aubry_samples,excess,reverse_excess\n");
    for s in &rep.steps {
        csv.push_str(&csv_row(&[
            s.k.to_string(),
            format!("{:e}", s.amplitude),
            format!("{:e}", s.alpha),
            format!("{:e}", s.alpha_gap),
            format!("{:e}", s.amplitude.abs() * sup_delta),
            s.classes.to_string(),
            s.aubry.len().to_string(),
            format!("{:e}", s.excess),
            format!("{:e}", s.reverse_excess),
        ]));
    }
    out.write("steps.csv", csv.as_bytes())?;

    let g = &cfg.grid;
    let kmax = rep.steps.len() as f64;
    let mut series = vec![Series {
        label: "base".into(),
        points: rep.base_aubry.iter().map(|p| (g.position(p.cell)[0], 0.0)).collect(),
    }];
    series.push(Series {
        label: "k".into(),
        points: rep
            .steps
            .iter()
            .flat_map(|s| s.aubry.iter().map(move |p| (g.position(p.cell)[0], s.k as f64)))
            .collect(),
    });
    let svg = scatter_svg(&format!("{}: Aubry samples across k", cfg.name), "q", "k", &series, (0.0, kmax));
    out.write("aubry_overlay.svg", svg.as_bytes())?;
    Ok(())
}

fn run_cohomology_stage(cfg: &ScenarioConfig, out: &mut Outputs) -> StageResult {
    let Experiment::Cohomology { c_values } = &cfg.experiment else {
        unreachable!("dispatched on kind")
    };
    let sw = cohomology_sweep(&cfg.spec, &cfg.grid, c_values, &cfg.tolerances)?;
    let mut report = serde_json::to_value(&sw).expect("sweep serialises");
    if let Value::Object(m) = &mut report {
        m.insert("convexity_defect".into(), json!(sw.convexity_defect()));
    }
    out.json("cohomology.json", &report)?;
    let d = cfg.grid.dim();
    let mut header: Vec<String> = (0..d).map(|i| format!("c{i}")).collect();
    header.push("alpha".into());
    header.extend((0..d).map(|i| format!("mean_v{i}")));
    header.extend(["classes".to_string(), "aubry_samples".to_string()]);
    let mut csv = csv_row(&header);
    for e in &sw.entries {
        let mut row: Vec<String> = e.c.iter().map(|x| format!("{x:e}")).collect();
        row.push(format!("{:e}", e.alpha));
        row.extend(e.mean_velocity.iter().map(|x| format!("{x:e}")));
        row.push(e.classes.map(|c| c.to_string()).unwrap_or_default());
        row.push(e.aubry.len().to_string());
        csv.push_str(&csv_row(&row));
    }
    out.write("cohomology.csv", csv.as_bytes())?;
    let g = &cfg.grid;
    let lo = c_values.iter().map(|c| c[0]).fold(f64::INFINITY, f64::min);
    let hi = c_values.iter().map(|c| c[0]).fold(f64::NEG_INFINITY, f64::max);
    let series = vec![Series {
        label: "Aubry".into(),
        points: sw
            .entries
            .iter()
            .flat_map(|e| e.aubry.iter().map(move |p| (g.position(p.cell)[0], e.c[0])))
            .collect(),
    }];
    let svg = scatter_svg(&format!("{}: Aubry samples across c", cfg.name), "q", "c", &series, (lo, hi));
    out.write("aubry_c.svg", svg.as_bytes())?;
    Ok(())
}

/// Runs the configured experiment into `cfg.output_dir` and writes `manifest.json` last.
/// A failing stage leaves the outputs of earlier stages in place.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunManifest, RunError> {
    let mut r = Runner {
        cfg,
        out: Outputs::new(&cfg.output_dir)?,
        stages: Vec::new(),
        failed: None,
    };
    match &cfg.experiment {
        Experiment::Solve => {
            r.stage("solve", |out| {
                let opts = SolveOptions::new(cfg.tolerances.tol_fix, cfg.tolerances.max_iters);
                let res = solve_weak_kam_with(&cfg.spec, &cfg.grid, opts).map_err(fail!("solve"))?;
                let dom = check_dominated(&res.u, &cfg.spec, &cfg.grid, res.alpha).map_err(fail!("domination"))?;
                write_solution(out, cfg, &res, dom.defect)
            })?;
        }
        Experiment::Barrier => {
            let mut run = None;
            r.stage("system", |out| system_stage(cfg, out, &mut run))?;
        }
        Experiment::Coincidence => {
            let mut run = None;
            r.stage("system", |out| system_stage(cfg, out, &mut run))?;
            let mut family = Vec::new();
            if let Some(run) = &run {
                r.stage("solutions", |_| {
                    family = run.family()?;
                    Ok(())
                })?;
                let mut coincide = false;
                r.stage("relations", |out| {
                    coincide = relations_stage(run, out, &family)?;
                    Ok(())
                })?;
                r.stage("mane", |out| mane_stage(run, out, &family))?;
                r.stage("ladder", |out| ladder_stage(run, out, &family, coincide))?;
                r.stage("fathi", |out| fathi_stage(run, out, &family))?;
            }
        }
        Experiment::Semicontinuity { .. } => {
            r.stage("semicontinuity", |out| run_semicontinuity_stage(cfg, out))?;
        }
        Experiment::Cohomology { .. } => {
            r.stage("cohomology", |out| run_cohomology_stage(cfg, out))?;
        }
    }
    r.finish()
}
