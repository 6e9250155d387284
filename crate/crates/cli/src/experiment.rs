//! Running a configured experiment and writing its artifacts.

use std::path::{Path, PathBuf};
use std::time::Instant;

use dualgrid_core::ddsa::{rate_fit, run_classic, run_ddsa, IterateTrace, RateReport, RunConfig, RunOutput, RunSummary, StepSize};
use dualgrid_core::graph::{metropolis_weights, WeightMatrix};
use dualgrid_core::linalg::jacobi_eigen;
use dualgrid_core::oracle::{oracle_solve, OracleResult, OracleRoute, OracleSettings, OracleStatus};
use dualgrid_core::ProblemInstance;
use dualgrid_grid::feeder::build_der_socp;
use dualgrid_grid::random::{randomize_loads, GaussianStream, CHANGE_POINTS};
use serde::Serialize;
use thiserror::Error;

use crate::config::{ExperimentConfig, Method};
use crate::problems::{build, Built, Context};

#[derive(Debug, Error)]
#[error("stage {stage} failed: {message}")]
pub struct StageError {
    pub stage: &'static str,
    pub message: String,
}

fn stage<E: std::fmt::Display>(stage: &'static str) -> impl Fn(E) -> StageError {
    move |e| StageError {
        stage,
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleSummary {
    pub value: f64,
    pub status: OracleStatus,
    pub route: OracleRoute,
    pub local_residual: f64,
    pub coupling_residual: f64,
    pub dual_residual: f64,
    pub multipliers: Vec<f64>,
}

impl From<&OracleResult> for OracleSummary {
    fn from(o: &OracleResult) -> Self {
        Self {
            value: o.value,
            status: o.status,
            route: o.route,
            local_residual: o.local_residual,
            coupling_residual: o.coupling_residual,
            dual_residual: o.dual_residual,
            multipliers: o.z.z.iter().copied().collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct HorizonResult {
    pub horizon: usize,
    pub trace_file: String,
    pub seconds: f64,
    pub summary: RunSummary,
    /// Smallest eigenvalue of the operator's real-embedded Gram matrix at
    /// the reported point (joint T&D runs only).
    pub gram_min_eigenvalue: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SegmentResult {
    pub index: usize,
    /// Load-scaling interval applied at the start of the segment; `None` for
    /// the nominal first segment.
    pub interval: Option<(f64, f64)>,
    pub negative_loads: Vec<usize>,
    pub oracle_value: f64,
    pub horizon: usize,
    pub final_relative: f64,
    /// First recorded iteration with relative optimality within the
    /// threshold.
    pub first_within: Option<usize>,
    pub trace_file: String,
    pub seconds: f64,
    pub summary: RunSummary,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentSummary {
    pub name: String,
    pub kind: String,
    pub method: String,
    pub long_running: bool,
    pub agents: usize,
    pub sigma2: f64,
    pub oracle: Option<OracleSummary>,
    pub runs: Vec<HorizonResult>,
    pub rate: Option<RateReport>,
    pub tracking: Option<Vec<SegmentResult>>,
}

pub fn relative_optimality(value: f64, optimum: f64) -> f64 {
    (value - optimum).abs() / optimum.abs()
}

pub fn oracle(problem: &ProblemInstance) -> OracleResult {
    oracle_solve(problem, &OracleSettings::default())
}

pub fn run_config(cfg: &ExperimentConfig, horizon: usize, eta: Option<f64>, reference: Option<f64>) -> RunConfig {
    let step = match eta.or(cfg.eta) {
        Some(eta) => StepSize::Fixed { eta },
        None => StepSize::Scaled { eta0: cfg.eta0 },
    };
    let mut rc = RunConfig::new(horizon, step);
    rc.seed = cfg.seed;
    rc.record = cfg.record;
    rc.threads = cfg.threads;
    rc.reference_value = reference;
    rc.evaluate_dual = cfg.evaluate_dual;
    rc.subsolver.accept_tol = cfg.accept_tol;
    rc
}

pub fn run_method(
    problem: &ProblemInstance,
    w: &WeightMatrix,
    rc: &RunConfig,
    method: Method,
) -> Result<RunOutput, dualgrid_core::ddsa::RunError> {
    match method {
        Method::Ddsa => run_ddsa(problem, w, rc),
        Method::Classic => run_classic(problem, w, rc, false),
        Method::ClassicAvg => run_classic(problem, w, rc, true),
    }
}

pub fn gram_min_eigenvalue(built: &Built, out: &RunOutput) -> Option<f64> {
    match &built.context {
        Context::Td { layout } => {
            let so = &out.states[layout.n_tran].x_avg;
            Some(jacobi_eigen(&layout.real_embedding(so)).min_value())
        }
        _ => None,
    }
}

fn write(path: &Path, text: &str) -> Result<(), StageError> {
    std::fs::write(path, text).map_err(|e| StageError {
        stage: "write",
        message: format!("{}: {e}", path.display()),
    })
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("summaries serialize")
}

/// Builds, solves and runs as configured, writing into `out`:
/// `config.ini`, `problem.json`, `oracle.json`, `trace_T<T>.csv` per horizon,
/// `ratefit.json` for four or more horizons, `segment_<k>.csv` for tracking
/// runs, and `summary.json`.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path) -> Result<ExperimentSummary, StageError> {
    std::fs::create_dir_all(out).map_err(stage("output"))?;
    write(&out.join("config.ini"), &cfg.to_ini())?;
    cfg.validate().map_err(stage("config"))?;
    let built = build(cfg).map_err(stage("build"))?;
    write(&out.join("problem.json"), &built.problem.to_json())?;
    let w = metropolis_weights(&built.graph).map_err(stage("weights"))?;

    let oracle_result = if cfg.oracle {
        let o = oracle(&built.problem);
        write(&out.join("oracle.json"), &json(&OracleSummary::from(&o)))?;
        if !o.is_optimal() {
            return Err(StageError {
                stage: "oracle",
                message: format!("status {:?}, coupling residual {:e}", o.status, o.coupling_residual),
            });
        }
        Some(o)
    } else {
        None
    };
    let reference = oracle_result.as_ref().map(|o| o.value);

    let mut summary = ExperimentSummary {
        name: cfg.name.clone(),
        kind: cfg.kind.as_str().into(),
        method: cfg.method.as_str().into(),
        long_running: cfg.long_running,
        agents: built.problem.n_agents(),
        sigma2: w.sigma2(),
        oracle: oracle_result.as_ref().map(OracleSummary::from),
        runs: Vec::new(),
        rate: None,
        tracking: None,
    };

    if cfg.tracking.is_none() {
        for &h in &cfg.horizons {
            let rc = run_config(cfg, h, None, reference);
            let start = Instant::now();
            let r = match run_method(&built.problem, &w, &rc, cfg.method) {
                Ok(r) => r,
                Err(e) => {
                    if let dualgrid_core::ddsa::RunError::Subsolver { partial, .. } = &e {
                        write(&out.join(format!("trace_T{h}.partial.csv")), &partial.to_csv())?;
                    }
                    return Err(stage("run")(e));
                }
            };
            let file = format!("trace_T{h}.csv");
            write(&out.join(&file), &r.trace.to_csv())?;
            summary.runs.push(HorizonResult {
                horizon: h,
                trace_file: file,
                seconds: start.elapsed().as_secs_f64(),
                gram_min_eigenvalue: gram_min_eigenvalue(&built, &r),
                summary: r.summary,
            });
        }
        if summary.runs.len() >= 4 {
            let series: Vec<_> = summary
                .runs
                .iter()
                .map(|r| (r.horizon, r.summary.final_v_metric, Some(r.summary.final_violation)))
                .collect();
            let rate = rate_fit(&series).map_err(stage("ratefit"))?;
            write(&out.join("ratefit.json"), &json(&rate))?;
            summary.rate = Some(rate);
        }
    } else {
        summary.tracking = Some(run_tracking(cfg, &built, &w, out)?);
    }
    write(&out.join("summary.json"), &json(&summary))?;
    Ok(summary)
}

/// Nominal segment from a flat start, then one warm-restarted segment per
/// change point with freshly randomized loads.
fn run_tracking(cfg: &ExperimentConfig, built: &Built, w: &WeightMatrix, out: &Path) -> Result<Vec<SegmentResult>, StageError> {
    let t = cfg.tracking.as_ref().expect("tracking configured");
    let Context::Feeder { feeder, grouping } = &built.context else {
        return Err(StageError {
            stage: "tracking",
            message: "tracking needs a feeder problem".into(),
        });
    };
    let pd0: Vec<f64> = feeder.buses.iter().map(|b| b.pd).collect();
    let qd0: Vec<f64> = feeder.buses.iter().map(|b| b.qd).collect();
    let mut stream = GaussianStream::new(cfg.seed);
    let mut warm = None;
    let mut segments = Vec::new();
    for k in 0..=t.change_points {
        let (problem, interval, negative) = if k == 0 {
            (built.problem.clone(), None, Vec::new())
        } else {
            let (lo, hi) = CHANGE_POINTS[k - 1];
            let p = randomize_loads(&pd0, lo, hi, &mut stream);
            let q = randomize_loads(&qd0, lo, hi, &mut stream);
            let mut negative = p.negative.clone();
            negative.extend(q.negative.iter().map(|i| i + pd0.len()));
            let f = feeder.with_loads(&p.loads, &q.loads);
            (build_der_socp(&f, grouping).map_err(stage("tracking"))?, Some((lo, hi)), negative)
        };
        let o = oracle(&problem);
        if !o.is_optimal() {
            return Err(StageError {
                stage: "tracking",
                message: format!("segment {k} oracle status {:?}", o.status),
            });
        }
        let mut rc = run_config(cfg, t.segment_horizon, Some(t.eta), Some(o.value));
        rc.warm_start = warm.take();
        let start = Instant::now();
        let r = run_method(&problem, w, &rc, cfg.method).map_err(stage("tracking"))?;
        let file = format!("segment_{k}.csv");
        write(&out.join(&file), &r.trace.to_csv())?;
        let first_within = r
            .trace
            .rows
            .iter()
            .find(|row| relative_optimality(row.objective, o.value) <= t.threshold)
            .map(|row| row.t);
        segments.push(SegmentResult {
            index: k,
            interval,
            negative_loads: negative,
            oracle_value: o.value,
            horizon: t.segment_horizon,
            final_relative: relative_optimality(r.summary.final_objective, o.value),
            first_within,
            trace_file: file,
            seconds: start.elapsed().as_secs_f64(),
            summary: r.summary,
        });
        warm = Some(r.states);
    }
    Ok(segments)
}

/// Fits every `trace_T<T>.csv` in `dir` by its final row.
pub fn ratefit_dir(dir: &Path) -> Result<(Vec<(usize, f64, Option<f64>)>, RateReport), StageError> {
    let mut series = Vec::new();
    let entries = std::fs::read_dir(dir).map_err(stage("ratefit"))?;
    let mut files: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).collect();
    files.sort();
    for path in files {
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        let Some(h) = name
            .strip_prefix("trace_T")
            .and_then(|s| s.strip_suffix(".csv"))
            .and_then(|s| s.parse::<usize>().ok())
        else {
            continue;
        };
        let text = std::fs::read_to_string(&path).map_err(stage("ratefit"))?;
        let trace = IterateTrace::from_csv(&text).map_err(stage("ratefit"))?;
        let last = trace.last().ok_or_else(|| StageError {
            stage: "ratefit",
            message: format!("{name} has no rows"),
        })?;
        if last.t != h {
            return Err(StageError {
                stage: "ratefit",
                message: format!("{name} ends at t = {} instead of its horizon", last.t),
            });
        }
        series.push((h, last.v_metric, Some(last.violation_norm())));
    }
    series.sort_by_key(|s| s.0);
    let rep = rate_fit(&series).map_err(stage("ratefit"))?;
    Ok((series, rep))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ProblemKind;
    use dualgrid_core::ddsa::RecordSchedule;

    fn toy(horizons: Vec<usize>) -> ExperimentConfig {
        let mut c = ExperimentConfig::new("toy", ProblemKind::Toy);
        c.horizons = horizons;
        c.record = RecordSchedule::Every(1);
        c
    }

    #[test]
    fn stride_one_gives_one_row_per_iteration() {
        let dir = tempfile::tempdir().unwrap();
        let s = run_experiment(&toy(vec![10]), dir.path()).unwrap();
        let text = std::fs::read_to_string(dir.path().join("trace_T10.csv")).unwrap();
        assert_eq!(IterateTrace::from_csv(&text).unwrap().rows.len(), 10);
        assert!((s.oracle.unwrap().value - 0.5).abs() < 1e-8);
        for f in ["config.ini", "problem.json", "oracle.json", "summary.json"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let resolved = std::fs::read_to_string(dir.path().join("config.ini")).unwrap();
        let again = ExperimentConfig::parse(&resolved, &Default::default()).unwrap();
        assert_eq!(again.horizons, vec![10]);
    }

    #[test]
    fn four_horizons_give_a_rate_fit() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = toy(vec![10, 30, 100, 300]);
        c.record = RecordSchedule::Geometric(2.0);
        let s = run_experiment(&c, dir.path()).unwrap();
        let rate = s.rate.unwrap();
        let (series, again) = ratefit_dir(dir.path()).unwrap();
        assert_eq!(series.len(), 4);
        assert_eq!(rate.metric.slope.to_bits(), again.metric.slope.to_bits());
    }

    #[test]
    fn tracking_with_two_change_points_has_three_segments() {
        let dir = tempfile::tempdir().unwrap();
        let text = "[experiment]\nkind = p2\n[data]\ncases = fixture:feeder4\n[algorithm]\nrecord = geometric:2\n[tracking]\nchange_points = 2\nsegment_horizon = 50\n";
        let c = ExperimentConfig::parse(text, &Default::default()).unwrap();
        let s = run_experiment(&c, dir.path()).unwrap();
        let segs = s.tracking.unwrap();
        assert_eq!(segs.len(), 3);
        assert_eq!(segs[1].interval, Some(CHANGE_POINTS[0]));
        assert!(dir.path().join("segment_2.csv").exists());
    }

    #[test]
    fn failures_name_their_stage_and_keep_the_config() {
        let dir = tempfile::tempdir().unwrap();
        let text = "[experiment]\nkind = p2\n[data]\ncases = fixture:feeder4\ngrouping = 1,3;2,4\n";
        let c = ExperimentConfig::parse(text, &Default::default()).unwrap();
        let e = run_experiment(&c, dir.path()).unwrap_err();
        assert_eq!(e.stage, "build");
        assert!(dir.path().join("config.ini").exists());
    }
}
