//! The averaged distributed dual subgradient method and the classical
//! distributed dual subgradient baseline.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::trace::{IterateTrace, RecordSchedule, TraceRow};
use crate::cone::{LocalSolver, SubsolverConfig, SubsolverError};
use crate::graph::WeightMatrix;
use crate::linalg::{inf_norm, Vector};
use crate::problem::{project_dual_in_place, ProblemInstance};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepSize {
    /// `η = η₀ / √T`.
    Scaled { eta0: f64 },
    Fixed { eta: f64 },
}

impl StepSize {
    pub fn eta(&self, horizon: usize) -> f64 {
        match *self {
            StepSize::Scaled { eta0 } => eta0 / (horizon as f64).sqrt(),
            StepSize::Fixed { eta } => eta,
        }
    }
}

/// Per-agent state carried between iterations and across warm restarts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    /// Running primal average `x_j(t)`.
    #[serde(with = "crate::linalg::serde_vector")]
    pub x_avg: Vector,
    /// Last subproblem minimizer `X_j(t)`.
    #[serde(with = "crate::linalg::serde_vector")]
    pub x_last: Vector,
    /// Local multiplier `z_j(t+1)`, ready for the next iteration.
    #[serde(with = "crate::linalg::serde_vector")]
    pub z: Vector,
    /// Subgradient accumulator `Z_j(t)`.
    #[serde(with = "crate::linalg::serde_vector")]
    pub big_z: Vector,
    /// `g_j(x_j(t))`.
    #[serde(with = "crate::linalg::serde_vector")]
    pub g_prev: Vector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub horizon: usize,
    pub step: StepSize,
    /// Carried for provenance; the iteration itself draws no random numbers.
    pub seed: u64,
    pub warm_start: Option<Vec<AgentState>>,
    pub record: RecordSchedule,
    /// Worker threads for the per-agent solves; zero uses the global pool.
    pub threads: usize,
    pub subsolver: SubsolverConfig,
    /// Known optimal value, used for the summary only.
    pub reference_value: Option<f64>,
    /// Evaluate `Σ D_j(z̄)` at recorded iterations (N extra solves per row).
    pub evaluate_dual: bool,
    pub timing: bool,
}

impl RunConfig {
    pub fn new(horizon: usize, step: StepSize) -> Self {
        Self {
            horizon,
            step,
            seed: 0,
            warm_start: None,
            record: RecordSchedule::default(),
            threads: 0,
            subsolver: SubsolverConfig::default(),
            reference_value: None,
            evaluate_dual: true,
            timing: false,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.horizon == 0 {
            return Err("horizon must be at least 1".into());
        }
        let eta = self.step.eta(self.horizon);
        if !(eta > 0.0) || !eta.is_finite() {
            return Err(format!("step size must be positive and finite, got {eta}"));
        }
        self.subsolver.validate()
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid run configuration: {0}")]
    Config(String),
    #[error("weight matrix is {actual}x{actual} but the problem has {expected} agents")]
    WeightSize { expected: usize, actual: usize },
    #[error("warm start does not match the problem: {0}")]
    WarmStart(String),
    #[error("subproblem of agent {agent} failed at t = {t}: {source}")]
    Subsolver {
        agent: usize,
        t: usize,
        #[source]
        source: SubsolverError,
        partial: IterateTrace,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub horizon: usize,
    pub eta: f64,
    pub final_objective: f64,
    pub final_violation: f64,
    pub final_v_metric: f64,
    pub relative_optimality: Option<f64>,
    /// Largest centroid-identity error over recorded rows.
    pub max_centroid_error: f64,
    /// Largest `Σ D_j(z̄) - P*` over recorded rows, when `P*` is known.
    pub max_weak_duality_excess: Option<f64>,
    /// Total variation of the objective series over all iterations.
    pub objective_total_variation: f64,
    /// Smallest inequality-block entry of any local multiplier.
    pub min_ineq_multiplier: f64,
    /// Largest local-set violation of the reported primal point.
    pub max_local_violation: f64,
    pub max_subsolver_tol: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trace: IterateTrace,
    pub states: Vec<AgentState>,
    pub summary: RunSummary,
}

impl RunOutput {
    /// Primal point the run reports.
    pub fn primal(&self) -> Vec<Vector> {
        self.states.iter().map(|s| s.x_avg.clone()).collect()
    }
}

pub(crate) struct Executor {
    pool: Option<rayon::ThreadPool>,
}

impl Executor {
    pub(crate) fn new(threads: usize) -> Self {
        let pool = (threads > 0).then(|| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .expect("thread pool")
        });
        Self { pool }
    }

    /// Maps over agents; results come back in agent order.
    pub(crate) fn map<R: Send>(&self, n: usize, f: impl Fn(usize) -> R + Sync + Send) -> Vec<R> {
        match &self.pool {
            Some(p) => p.install(|| (0..n).into_par_iter().map(&f).collect()),
            None => (0..n).into_par_iter().map(&f).collect(),
        }
    }
}

pub(crate) fn solve_all(
    exec: &Executor,
    solvers: &[LocalSolver],
    zs: &[&Vector],
) -> Result<(Vec<Vector>, f64), (usize, SubsolverError)> {
    let res = exec.map(solvers.len(), |j| solvers[j].solve(zs[j]));
    let mut xs = Vec::with_capacity(res.len());
    let mut acc: f64 = 0.0;
    for (j, r) in res.into_iter().enumerate() {
        let r = r.map_err(|e| (j, e))?;
        acc = acc.max(r.accuracy);
        xs.push(r.x);
    }
    Ok((xs, acc))
}

/// `Σ_j D_j(z)` with the worst subsolver accuracy.
pub(crate) fn dual_value(
    exec: &Executor,
    solvers: &[LocalSolver],
    z: &Vector,
) -> Result<(f64, f64), (usize, SubsolverError)> {
    let zs: Vec<&Vector> = vec![z; solvers.len()];
    let (xs, acc) = solve_all(exec, solvers, &zs)?;
    let total = solvers.iter().zip(&xs).map(|(s, x)| s.agent().lagrangian(x, z)).sum();
    Ok((total, acc))
}

fn mean(vs: impl Iterator<Item = Vector>, n: usize, m: usize) -> Vector {
    let mut acc = Vector::zeros(m);
    for v in vs {
        acc += v;
    }
    acc / n as f64
}

fn projected_sq_norm(v: &Vector, m_eq: usize) -> f64 {
    let mut p = v.clone();
    project_dual_in_place(&mut p, m_eq);
    p.norm_squared()
}

struct Recorder<'a> {
    problem: &'a ProblemInstance,
    solvers: &'a [LocalSolver],
    exec: &'a Executor,
    eta: f64,
    evaluate_dual: bool,
    timing: bool,
    start: Instant,
}

impl Recorder<'_> {
    /// Builds a row from the reported primal point and the local duals.
    #[allow(clippy::too_many_arguments)]
    fn row(
        &self,
        t: usize,
        objective: f64,
        gsum: &Vector,
        zs: &[&Vector],
        dispersion: f64,
        tol_max: f64,
        centroid_error: f64,
    ) -> Result<TraceRow, (usize, SubsolverError)> {
        let n = self.problem.n_agents();
        let m = self.problem.m_total();
        let me = self.problem.m_eq;
        let zbar = mean(zs.iter().map(|z| (*z).clone()), n, m);
        let (dual, acc) = if self.evaluate_dual {
            dual_value(self.exec, self.solvers, &zbar)?
        } else {
            (f64::NAN, 0.0)
        };
        let eq = gsum.rows(0, me).norm();
        let ineq = gsum.rows(me, m - me).iter().map(|v| v.max(0.0).powi(2)).sum::<f64>().sqrt();
        let penalty = self.eta * t as f64 / (2.0 * n as f64) * projected_sq_norm(gsum, me);
        Ok(TraceRow {
            t,
            objective,
            dual_value: dual,
            eq_viol: eq,
            ineq_viol: ineq,
            v_metric: objective - dual + penalty,
            z_dispersion: dispersion,
            subsolver_tol_max: tol_max.max(acc),
            wall_ms: if self.timing {
                self.start.elapsed().as_secs_f64() * 1e3
            } else {
                0.0
            },
            centroid_error,
        })
    }
}

fn check_inputs(problem: &ProblemInstance, w: &WeightMatrix, config: &RunConfig) -> Result<(), RunError> {
    config.validate().map_err(RunError::Config)?;
    if w.n() != problem.n_agents() {
        return Err(RunError::WeightSize {
            expected: problem.n_agents(),
            actual: w.n(),
        });
    }
    if let Some(ws) = &config.warm_start {
        if ws.len() != problem.n_agents() {
            return Err(RunError::WarmStart(format!(
                "{} agent states for {} agents",
                ws.len(),
                problem.n_agents()
            )));
        }
        for (j, (s, a)) in ws.iter().zip(&problem.agents).enumerate() {
            let m = problem.m_total();
            if s.x_avg.len() != a.dim() || s.z.len() != m || s.big_z.len() != m || s.g_prev.len() != m {
                return Err(RunError::WarmStart(format!("agent {j} state has the wrong shape")));
            }
        }
    }
    Ok(())
}

fn flat_start(problem: &ProblemInstance) -> Vec<AgentState> {
    let m = problem.m_total();
    problem
        .agents
        .iter()
        .map(|a| {
            let x0 = a.local_set.witness.clone();
            AgentState {
                g_prev: a.coupling(&x0),
                x_avg: x0.clone(),
                x_last: x0,
                z: Vector::zeros(m),
                big_z: Vector::zeros(m),
            }
        })
        .collect()
}

fn summarize(
    problem: &ProblemInstance,
    config: &RunConfig,
    eta: f64,
    trace: &IterateTrace,
    states: &[AgentState],
    primal: &[Vector],
    tv: f64,
) -> RunSummary {
    let last = trace.last().expect("the horizon is always recorded");
    let me = problem.m_eq;
    let min_ineq = states
        .iter()
        .flat_map(|s| s.z.iter().skip(me).cloned().collect::<Vec<_>>())
        .fold(f64::INFINITY, f64::min);
    RunSummary {
        horizon: config.horizon,
        eta,
        final_objective: last.objective,
        final_violation: last.violation_norm(),
        final_v_metric: last.v_metric,
        relative_optimality: config
            .reference_value
            .map(|p| (last.objective - p).abs() / p.abs().max(f64::MIN_POSITIVE)),
        max_centroid_error: trace.rows.iter().map(|r| r.centroid_error).fold(0.0, f64::max),
        max_weak_duality_excess: config.reference_value.map(|p| {
            trace
                .rows
                .iter()
                .filter(|r| r.dual_value.is_finite())
                .map(|r| r.dual_value - p)
                .fold(f64::NEG_INFINITY, f64::max)
        }),
        objective_total_variation: tv,
        min_ineq_multiplier: min_ineq,
        max_local_violation: problem.local_violation(primal).unwrap_or(f64::INFINITY),
        max_subsolver_tol: trace.rows.iter().map(|r| r.subsolver_tol_max).fold(0.0, f64::max),
    }
}

/// `t g − (t − 1) g_prev`, rounded at the scale of the result. Both products are of order `t |g|`
/// while the difference is of order `|g|`; forming them separately loses
/// about `t` ulps per step, which adds up in the accumulators.
fn weighted_increment(t: f64, g: &Vector, g_prev: &Vector) -> Vector {
    Vector::from_fn(g.len(), |i, _| {
        let p = (t - 1.0) * g_prev[i];
        let e = (t - 1.0).mul_add(g_prev[i], -p);
        t.mul_add(g[i], -p) - e
    })
}

/// Runs the averaged method for `t = 1..=T`.
///
/// Per iteration and agent: `X_j(t)` minimizes the local Lagrangian at
/// `z_j(t)`; `x_j(t)` is the running average of the `X_j`; the accumulator
/// mixes neighbours' values and adds `t g_j(x_j(t)) - (t-1) g_j(x_j(t-1))`;
/// and `z_j(t+1)` is the running average of `π_Z[η Z_j]`.
pub fn run_ddsa(problem: &ProblemInstance, w: &WeightMatrix, config: &RunConfig) -> Result<RunOutput, RunError> {
    check_inputs(problem, w, config)?;
    let n = problem.n_agents();
    let m = problem.m_total();
    let me = problem.m_eq;
    let horizon = config.horizon;
    let eta = config.step.eta(horizon);
    let exec = Executor::new(config.threads);
    let solvers: Vec<LocalSolver> = problem.agents.iter().map(|a| LocalSolver::new(a, &config.subsolver)).collect();
    let mut states = config.warm_start.clone().unwrap_or_else(|| flat_start(problem));
    let zbar0 = mean(states.iter().map(|s| s.big_z.clone()), n, m);
    let rec = Recorder {
        problem,
        solvers: &solvers,
        exec: &exec,
        eta,
        evaluate_dual: config.evaluate_dual,
        timing: config.timing,
        start: Instant::now(),
    };
    let points = config.record.points(horizon);
    let mut next = 0;
    let mut trace = IterateTrace::default();
    let mut tol_max: f64 = 0.0;
    let mut tv = 0.0;
    let mut prev_obj: Option<f64> = None;
    let wm = w.matrix();

    for t in 1..=horizon {
        let tf = t as f64;
        let fail = |(agent, source): (usize, SubsolverError), trace: &IterateTrace| RunError::Subsolver {
            agent,
            t,
            source,
            partial: trace.clone(),
        };
        let zs: Vec<&Vector> = states.iter().map(|s| &s.z).collect();
        let (xs, acc) = solve_all(&exec, &solvers, &zs).map_err(|e| fail(e, &trace))?;
        tol_max = tol_max.max(acc);

        let mut g_new = Vec::with_capacity(n);
        for (j, (s, x)) in states.iter_mut().zip(xs).enumerate() {
            s.x_avg = (&s.x_avg * (tf - 1.0) + &x) / tf;
            s.x_last = x;
            g_new.push(problem.agents[j].coupling(&s.x_avg));
        }

        let mut z_new = Vec::with_capacity(n);
        for j in 0..n {
            let mut acc = Vector::zeros(m);
            for k in 0..n {
                let wjk = wm[(j, k)];
                if wjk != 0.0 {
                    acc.axpy(wjk, &states[k].big_z, 1.0);
                }
            }
            acc += weighted_increment(tf, &g_new[j], &states[j].g_prev);
            z_new.push(acc);
        }
        for (s, zz) in states.iter_mut().zip(z_new) {
            s.big_z = zz;
        }

        let objective: f64 = problem
            .agents
            .iter()
            .zip(&states)
            .map(|(a, s)| a.objective.eval(&s.x_avg))
            .sum();
        if let Some(p) = prev_obj {
            tv += (objective - p).abs();
        }
        prev_obj = Some(objective);

        if next < points.len() && points[next] == t {
            next += 1;
            let gsum = g_new.iter().fold(Vector::zeros(m), |a, g| a + g);
            let zbar_big = mean(states.iter().map(|s| s.big_z.clone()), n, m);
            let centroid_error = inf_norm(&(&zbar_big - &zbar0 - &gsum * (tf / n as f64)));
            let dispersion: f64 = states.iter().map(|s| (&s.big_z - &zbar_big).norm()).sum();
            let zs: Vec<&Vector> = states.iter().map(|s| &s.z).collect();
            let row = rec
                .row(t, objective, &gsum, &zs, dispersion, tol_max, centroid_error)
                .map_err(|e| fail(e, &trace))?;
            trace.rows.push(row);
            tol_max = 0.0;
        }

        for (s, g) in states.iter_mut().zip(g_new) {
            let mut p = &s.big_z * eta;
            project_dual_in_place(&mut p, me);
            s.z = (&s.z * tf + p) / (tf + 1.0);
            s.g_prev = g;
        }
    }
    let primal: Vec<Vector> = states.iter().map(|s| s.x_avg.clone()).collect();
    let summary = summarize(problem, config, eta, &trace, &states, &primal, tv);
    Ok(RunOutput { trace, states, summary })
}

/// Runs the classical method: local minimization at `z_j(t)` followed by
/// `z_j(t+1) = Σ_k W_jk π_Z[z_k(t) + η g_k(x_k(t))]`. With
/// `primal_averaging` the reported point is the running mean of the `x_j`.
pub fn run_classic(
    problem: &ProblemInstance,
    w: &WeightMatrix,
    config: &RunConfig,
    primal_averaging: bool,
) -> Result<RunOutput, RunError> {
    check_inputs(problem, w, config)?;
    let n = problem.n_agents();
    let m = problem.m_total();
    let me = problem.m_eq;
    let horizon = config.horizon;
    let eta = config.step.eta(horizon);
    let exec = Executor::new(config.threads);
    let solvers: Vec<LocalSolver> = problem.agents.iter().map(|a| LocalSolver::new(a, &config.subsolver)).collect();
    let mut states = config.warm_start.clone().unwrap_or_else(|| flat_start(problem));
    let rec = Recorder {
        problem,
        solvers: &solvers,
        exec: &exec,
        eta,
        evaluate_dual: config.evaluate_dual,
        timing: config.timing,
        start: Instant::now(),
    };
    let points = config.record.points(horizon);
    let mut next = 0;
    let mut trace = IterateTrace::default();
    let mut tol_max: f64 = 0.0;
    let mut tv = 0.0;
    let mut prev_obj: Option<f64> = None;
    let wm = w.matrix();

    for t in 1..=horizon {
        let tf = t as f64;
        let fail = |(agent, source): (usize, SubsolverError), trace: &IterateTrace| RunError::Subsolver {
            agent,
            t,
            source,
            partial: trace.clone(),
        };
        let zs: Vec<&Vector> = states.iter().map(|s| &s.z).collect();
        let (xs, acc) = solve_all(&exec, &solvers, &zs).map_err(|e| fail(e, &trace))?;
        tol_max = tol_max.max(acc);
        for (s, x) in states.iter_mut().zip(xs) {
            s.x_avg = (&s.x_avg * (tf - 1.0) + &x) / tf;
            s.x_last = x;
        }
        let report = |s: &AgentState| if primal_averaging { s.x_avg.clone() } else { s.x_last.clone() };
        let g_step: Vec<Vector> = problem
            .agents
            .iter()
            .zip(&states)
            .map(|(a, s)| a.coupling(&s.x_last))
            .collect();

        let objective: f64 = problem.agents.iter().zip(&states).map(|(a, s)| a.objective.eval(&report(s))).sum();
        if let Some(p) = prev_obj {
            tv += (objective - p).abs();
        }
        prev_obj = Some(objective);

        if next < points.len() && points[next] == t {
            next += 1;
            let gsum = problem
                .agents
                .iter()
                .zip(&states)
                .fold(Vector::zeros(m), |acc, (a, s)| acc + a.coupling(&report(s)));
            let zbar = mean(states.iter().map(|s| s.z.clone()), n, m);
            let dispersion: f64 = states.iter().map(|s| (&s.z - &zbar).norm()).sum();
            let zs: Vec<&Vector> = states.iter().map(|s| &s.z).collect();
            let row = rec
                .row(t, objective, &gsum, &zs, dispersion, tol_max, 0.0)
                .map_err(|e| fail(e, &trace))?;
            trace.rows.push(row);
            tol_max = 0.0;
        }

        let proj: Vec<Vector> = states
            .iter()
            .zip(&g_step)
            .map(|(s, g)| {
                let mut v = &s.z + g * eta;
                project_dual_in_place(&mut v, me);
                v
            })
            .collect();
        for j in 0..n {
            let mut acc = Vector::zeros(m);
            for (k, pk) in proj.iter().enumerate() {
                let wjk = wm[(j, k)];
                if wjk != 0.0 {
                    acc.axpy(wjk, pk, 1.0);
                }
            }
            states[j].z = acc;
            states[j].g_prev = g_step[j].clone();
        }
    }
    let primal: Vec<Vector> = states
        .iter()
        .map(|s| if primal_averaging { s.x_avg.clone() } else { s.x_last.clone() })
        .collect();
    let summary = summarize(problem, config, eta, &trace, &states, &primal, tv);
    Ok(RunOutput { trace, states, summary })
}
