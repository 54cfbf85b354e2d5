//! Hyperparameter sweeps over sample counts and methods.

use std::cmp::Ordering;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use anyhow::Context;
use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use ksos_core::assembly::{assemble, ConstraintSystem};
use ksos_core::eval::{evaluate, project_truth, EvalGrid};
use ksos_core::features::{ConstantBasis, FeatureBasis, TemporalBasis, ValueModel};
use ksos_core::ocp::{riccati_backward_solve, Bounds, ControlProblem, Example1, LqrProblem, ValueFunction};
use ksos_core::sampling::build_sample_set;
use ksos_core::solver::{
    guided_features, kernel_features, solve_lp, solve_sos, DualParams, FeatureMatrix, NewtonOptions, Solution,
    SolverConfig,
};
use ksos_core::Error;

use crate::config::{ExperimentConfig, Method, ProblemKind};
use crate::output::{dump_value_function, write_rows};

/// Riccati steps for the LQR ground truth.
const RICCATI_STEPS: usize = 2000;

/// One line of `results.csv`; the field order is the column order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Row {
    pub method: String,
    pub n_t: usize,
    pub n_x: usize,
    pub n_u: usize,
    pub n: usize,
    pub lambda: Option<f64>,
    pub lambda_theta: Option<f64>,
    pub gamma: Option<f64>,
    pub epsilon: Option<f64>,
    pub eta: f64,
    pub value_error: Option<f64>,
    pub policy_cost: Option<f64>,
    pub newton_iters: Option<usize>,
    pub final_decrement: Option<f64>,
    pub solve_seconds: Option<f64>,
    pub status: String,
}

pub const COLUMNS: [&str; 16] = [
    "method",
    "n_t",
    "n_x",
    "n_u",
    "n",
    "lambda",
    "lambda_theta",
    "gamma",
    "epsilon",
    "eta",
    "value_error",
    "policy_cost",
    "newton_iters",
    "final_decrement",
    "solve_seconds",
    "status",
];

/// A solved grid point: its row and, when the solve succeeded, `θ` and the
/// mean violation of the sampled constraints `mean max(0, −(b_i + a_iᵀθ))`.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub row: Row,
    pub theta: Option<DVector<f64>>,
    pub violation: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    /// Best row per (method, sweep point), then the projection baseline rows.
    pub best: Vec<Outcome>,
    /// Every grid point.
    pub raw: Vec<Outcome>,
    pub projection_theta: Option<DVector<f64>>,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Worker threads; `None` uses all cores.
    pub workers: Option<usize>,
    /// Overrides the configured methods.
    pub methods: Option<Vec<Method>>,
    /// Print one line per finished solve to stderr.
    pub progress: bool,
}

/// The problem, value basis and (when known) optimal value of a config.
pub struct Setup {
    pub problem: Arc<dyn ControlProblem>,
    pub basis: FeatureBasis,
    pub truth: Option<Arc<dyn ValueFunction + Send>>,
}

impl Setup {
    pub fn from_config(cfg: &ExperimentConfig) -> anyhow::Result<Self> {
        let h = cfg.problem.horizon;
        Ok(match cfg.problem.kind {
            ProblemKind::LqrDoubleIntegrator => {
                let lqr = LqrProblem::double_integrator().with_horizon(h)?;
                let riccati = riccati_backward_solve(&lqr, RICCATI_STEPS)?;
                Self {
                    basis: FeatureBasis::quadratic_sine(cfg.basis.m_t, h)?,
                    problem: Arc::new(lqr),
                    truth: Some(Arc::new(riccati)),
                }
            }
            ProblemKind::Example1 => {
                let problem =
                    Example1::shifted_quadratic(cfg.problem.center, cfg.problem.offset, Bounds::cube(1, -1.0, 1.0)?)
                        .with_horizon(h)?;
                let truth = problem.optimal_value().map(|v| Arc::new(v) as Arc<dyn ValueFunction + Send>);
                Self {
                    basis: FeatureBasis::new(TemporalBasis::Linear, Arc::new(ConstantBasis { state_dim: 1 }), h)?,
                    problem: Arc::new(problem),
                    truth,
                }
            }
        })
    }

    pub fn model(&self, theta: DVector<f64>) -> anyhow::Result<ValueModel<'_>> {
        Ok(ValueModel::new(&self.basis, theta, self.problem.as_ref())?)
    }

    fn truth(&self) -> Option<&dyn ValueFunction> {
        self.truth.as_deref().map(|t| t as &dyn ValueFunction)
    }
}

struct SweepPoint {
    n_x: usize,
    cs: ConstraintSystem,
    guided: Option<FeatureMatrix>,
    kernel: Option<FeatureMatrix>,
}

#[derive(Debug, Clone, Copy)]
struct Job {
    point: usize,
    method: Method,
    lambda: Option<f64>,
    lambda_theta: f64,
    gamma: f64,
}

fn status_of(e: &Error) -> String {
    match e {
        Error::Stage { stage, source } => format!("stage{stage}_{}", status_of(source)),
        Error::Parameter(_) => "parameter_error".into(),
        Error::Domain(_) => "domain_error".into(),
        Error::Divergence { .. } => "divergence".into(),
        Error::Convergence { .. } => "not_converged".into(),
        Error::Factorization { .. } => "factorization_error".into(),
        Error::Numerical(_) => "numerical_error".into(),
        Error::Assembly { .. } => "assembly_error".into(),
        Error::RolloutFailures { .. } => "rollout_diverged".into(),
    }
}

fn solver_config(
    cfg: &ExperimentConfig,
    lambda: f64,
    lambda_theta: f64,
    gamma: f64,
) -> ksos_core::Result<SolverConfig> {
    let eps = cfg.solver.epsilon;
    let stages = cfg.solver.homotopy_stages;
    let homotopy = (0..stages)
        .rev()
        .map(|k| {
            let s = 10f64.powi(k as i32);
            (lambda_theta * s, eps * s)
        })
        .collect();
    let mut sc = SolverConfig::new(lambda, lambda_theta, gamma, eps)?.with_homotopy(homotopy)?;
    sc.newton = NewtonOptions {
        tol: cfg.solver.newton_tol,
        max_iters: cfg.solver.max_newton_iters,
        system: cfg.solver.newton_system.into(),
    };
    Ok(sc)
}

fn run_job(cfg: &ExperimentConfig, setup: &Setup, point: &SweepPoint, job: &Job, record_timing: bool) -> Outcome {
    let sos = job.method != Method::Lp;
    let n_t = cfg.sampling.n_t;
    let mut row = Row {
        method: job.method.name().into(),
        n_t,
        n_x: point.n_x,
        n_u: point.n_x,
        n: point.cs.n(),
        lambda: job.lambda,
        lambda_theta: Some(job.lambda_theta),
        gamma: Some(job.gamma),
        epsilon: sos.then_some(cfg.solver.epsilon),
        eta: cfg.solver.eta,
        value_error: None,
        policy_cost: None,
        newton_iters: None,
        final_decrement: None,
        solve_seconds: None,
        status: String::new(),
    };
    let start = Instant::now();
    let solved: ksos_core::Result<Solution> = match job.method {
        Method::Lp => solve_lp(
            &point.cs,
            &DualParams { lambda: 1.0, lambda_theta: job.lambda_theta, gamma: job.gamma, epsilon: cfg.solver.epsilon },
        ),
        Method::Guided | Method::Kernel => {
            let phi = if job.method == Method::Guided { &point.guided } else { &point.kernel };
            let phi = phi.as_ref().expect("features built for every selected SoS method");
            solver_config(cfg, job.lambda.expect("SoS jobs carry λ"), job.lambda_theta, job.gamma)
                .and_then(|sc| solve_sos(&point.cs, phi, &sc))
        }
    };
    if record_timing {
        row.solve_seconds = Some(start.elapsed().as_secs_f64());
    }
    let sol = match solved {
        Ok(sol) => sol,
        Err(e) => {
            row.status = status_of(&e);
            return Outcome { row, theta: None, violation: None };
        }
    };
    row.newton_iters = Some(sol.diagnostics.iterations);
    row.final_decrement = Some(sol.diagnostics.final_decrement);
    let residuals = point.cs.residuals(&sol.theta);
    let violation = residuals.iter().map(|r| (-r).max(0.0)).sum::<f64>() / residuals.len() as f64;
    let model = setup.model(sol.theta.clone()).expect("θ has the basis length");
    match evaluate(setup.problem.as_ref(), &model, setup.truth()) {
        Ok(report) => {
            row.value_error = report.value_error;
            row.policy_cost = Some(report.policy_cost);
            row.status = "ok".into();
        }
        Err(e) => row.status = format!("eval_{}", status_of(&e)),
    }
    Outcome { row, theta: Some(sol.theta), violation: Some(violation) }
}

fn expand(cfg: &ExperimentConfig, methods: &[Method], points: usize) -> Vec<Job> {
    let mut jobs = Vec::new();
    for &method in methods {
        let grid = cfg.sweep.grid(method);
        let lambdas: Vec<Option<f64>> =
            if method == Method::Lp { vec![None] } else { grid.lambda.iter().copied().map(Some).collect() };
        for point in 0..points {
            for &lambda in &lambdas {
                for &lambda_theta in &grid.lambda_theta {
                    for &gamma in &grid.gamma {
                        jobs.push(Job { point, method, lambda, lambda_theta, gamma });
                    }
                }
            }
        }
    }
    jobs
}

fn hyper_key(r: &Row) -> [f64; 3] {
    [r.lambda.unwrap_or(0.0), r.lambda_theta.unwrap_or(0.0), r.gamma.unwrap_or(0.0)]
}

fn lexicographic(a: &[f64; 3], b: &[f64; 3]) -> Ordering {
    a.iter().zip(b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(Ordering::Equal)
}

/// Row order of the output files: method, sweep point, then hyperparameters.
fn row_order(a: &Row, b: &Row) -> Ordering {
    a.method.cmp(&b.method).then(a.n_x.cmp(&b.n_x)).then_with(|| lexicographic(&hyper_key(a), &hyper_key(b)))
}

/// Selection score: value error with ground truth, else the mean constraint
/// violation. Failed solves have none.
fn score(o: &Outcome, have_truth: bool) -> Option<f64> {
    if o.row.status != "ok" {
        return None;
    }
    let s = if have_truth { o.row.value_error } else { o.violation };
    s.filter(|v| v.is_finite())
}

/// The best outcome of a group: least score, ties broken by the
/// lexicographically smallest `(λ, λ_θ, γ)`. Falls back to the first row
/// (in output order) when every solve failed.
pub fn select_best(group: &[Outcome], have_truth: bool) -> Option<&Outcome> {
    let scored = group.iter().filter_map(|o| score(o, have_truth).map(|s| (s, o)));
    let best = scored.min_by(|(sa, a), (sb, b)| {
        sa.total_cmp(sb).then_with(|| lexicographic(&hyper_key(&a.row), &hyper_key(&b.row)))
    });
    best.map(|(_, o)| o).or_else(|| group.iter().min_by(|a, b| row_order(&a.row, &b.row)))
}

pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> anyhow::Result<ExperimentResult> {
    cfg.validate()?;
    let methods: Vec<Method> = {
        let mut m = opts.methods.clone().unwrap_or_else(|| cfg.sweep.methods.clone());
        m.sort();
        m.dedup();
        m
    };
    anyhow::ensure!(!methods.is_empty(), "no methods selected");
    let setup = Setup::from_config(cfg)?;
    let problem = setup.problem.as_ref();
    let mode = cfg.sampling.objective.into();

    let kernel_spec = cfg.kernel.spec(problem.state_dim(), problem.control_dim())?;
    let mut points = Vec::with_capacity(cfg.sweep.n_x.len());
    for &n_x in &cfg.sweep.n_x {
        let samples = build_sample_set(problem, cfg.sampling.n_t, n_x, n_x)?;
        let cs = assemble(problem, &setup.basis, &samples, cfg.solver.eta, mode)?;
        let guided = methods
            .contains(&Method::Guided)
            .then(|| guided_features(&samples, cfg.basis.q_t, cfg.basis.guided_u_scale, problem.horizon()))
            .transpose()?;
        let kernel = methods.contains(&Method::Kernel).then(|| kernel_features(&kernel_spec, &samples)).transpose()?;
        points.push(SweepPoint { n_x, cs, guided, kernel });
    }

    let jobs = expand(cfg, &methods, points.len());
    let pool = {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(w) = opts.workers {
            b = b.num_threads(w.max(1));
        }
        b.build().context("building the worker pool")?
    };
    let record_timing = cfg.output.record_timing;
    let total = jobs.len();
    let done = std::sync::atomic::AtomicUsize::new(0);
    let mut raw: Vec<Outcome> = pool.install(|| {
        jobs.par_iter()
            .map(|job| {
                let out = run_job(cfg, &setup, &points[job.point], job, record_timing);
                if opts.progress {
                    let k = done.fetch_add(1, std::sync::atomic::Ordering::Relaxed) + 1;
                    let r = &out.row;
                    eprintln!(
                        "[{k}/{total}] {} n_x={} λ={:?} λθ={:?} γ={:?}: {} value_error={:?}",
                        r.method, r.n_x, r.lambda, r.lambda_theta, r.gamma, r.status, r.value_error
                    );
                }
                out
            })
            .collect()
    });
    raw.sort_by(|a, b| row_order(&a.row, &b.row));

    let have_truth = setup.truth.is_some();
    let mut best = Vec::new();
    for &method in &methods {
        for &n_x in &cfg.sweep.n_x {
            let group: Vec<Outcome> =
                raw.iter().filter(|o| o.row.method == method.name() && o.row.n_x == n_x).cloned().collect();
            if let Some(o) = select_best(&group, have_truth) {
                best.push(o.clone());
            }
        }
    }

    let projection_theta = match setup.truth() {
        Some(truth) => {
            let grid = EvalGrid::for_problem(problem)?;
            let theta = project_truth(&setup.basis, problem, truth, &grid)?;
            let report = evaluate(problem, &setup.model(theta.clone())?, Some(truth))?;
            for &n_x in &cfg.sweep.n_x {
                let row = Row {
                    method: "projection".into(),
                    n_t: cfg.sampling.n_t,
                    n_x,
                    n_u: n_x,
                    n: cfg.sampling.n_t * n_x * n_x,
                    lambda: None,
                    lambda_theta: None,
                    gamma: None,
                    epsilon: None,
                    eta: cfg.solver.eta,
                    value_error: report.value_error,
                    policy_cost: Some(report.policy_cost),
                    newton_iters: None,
                    final_decrement: None,
                    solve_seconds: None,
                    status: "ok".into(),
                };
                best.push(Outcome { row, theta: Some(theta.clone()), violation: None });
            }
            Some(theta)
        }
        None => None,
    };
    Ok(ExperimentResult { best, raw, projection_theta })
}

/// Paths written by [`write_outputs`].
#[derive(Debug, Clone)]
pub struct OutputPaths {
    pub results: PathBuf,
    pub raw: PathBuf,
    pub dumps: Vec<PathBuf>,
}

/// Writes `results.csv`, `results_raw.csv` and, when enabled, value dumps
/// `values/<method>_nx<n_x>.csv` and `values/projection.csv` into `dir`.
pub fn write_outputs(cfg: &ExperimentConfig, result: &ExperimentResult, dir: &Path) -> anyhow::Result<OutputPaths> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let results = dir.join("results.csv");
    let raw = dir.join("results_raw.csv");
    write_rows(&results, result.best.iter().map(|o| &o.row))?;
    write_rows(&raw, result.raw.iter().map(|o| &o.row))?;
    let mut dumps = Vec::new();
    if cfg.output.dump_values {
        let setup = Setup::from_config(cfg)?;
        let grid = EvalGrid::for_problem(setup.problem.as_ref())?;
        let values = dir.join("values");
        std::fs::create_dir_all(&values).with_context(|| format!("creating {}", values.display()))?;
        for o in result.best.iter().filter(|o| o.row.method != "projection") {
            if let Some(theta) = &o.theta {
                let path = values.join(format!("{}_nx{}.csv", o.row.method, o.row.n_x));
                dump_value_function(&setup.model(theta.clone())?, setup.truth(), &grid, &path)?;
                dumps.push(path);
            }
        }
        if let Some(theta) = &result.projection_theta {
            let path = values.join("projection.csv");
            dump_value_function(&setup.model(theta.clone())?, setup.truth(), &grid, &path)?;
            dumps.push(path);
        }
    }
    Ok(OutputPaths { results, raw, dumps })
}
