//! Output files of the experiment runner.

use std::path::Path;
use std::process::Command;

use nalgebra::DVector;

use hjb_ksos::experiment::{select_best, Outcome, Setup, COLUMNS};
use hjb_ksos::output::dump_value_function;
use hjb_ksos::{run_experiment, write_outputs, ExperimentConfig, Method, Row, RunOptions};
use ksos_core::eval::EvalGrid;
use ksos_core::ocp::ValueFunction;

/// A sweep small enough to run in a few seconds.
const SMALL: &str = r#"
[sampling]
n_t = 3

[solver]
epsilon = 1e-3

[sweep]
n_x = [2, 3]
methods = ["lp", "guided", "kernel"]

[sweep.lp]
lambda_theta = [1e-8]
gamma = [1e-2, 1.0]

[sweep.guided]
lambda = [1e-6]
lambda_theta = [1e-8]
gamma = [1e-2]

[sweep.kernel]
lambda = [1e-2]
lambda_theta = [1e-8]
gamma = [1e-2]

[output]
record_timing = false
"#;

fn small() -> ExperimentConfig {
    ExperimentConfig::from_toml(SMALL).unwrap()
}

fn quiet() -> RunOptions {
    RunOptions { workers: Some(1), ..Default::default() }
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

fn parse(s: &str) -> f64 {
    s.parse().unwrap_or_else(|_| panic!("not a number: {s:?}"))
}

#[test]
fn results_have_the_documented_columns_and_rows() {
    let cfg = small();
    let result = run_experiment(&cfg, &quiet()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let paths = write_outputs(&cfg, &result, dir.path()).unwrap();

    let (header, rows) = read_csv(&paths.results);
    assert_eq!(
        header,
        "method,n_t,n_x,n_u,n,lambda,lambda_theta,gamma,epsilon,eta,value_error,policy_cost,newton_iters,final_decrement,solve_seconds,status"
            .split(',')
            .collect::<Vec<_>>()
    );
    assert_eq!(header, COLUMNS);

    // One selected row per (method, n_x), then the projection rows.
    let keys: Vec<(String, String)> = rows.iter().map(|r| (r[0].clone(), r[2].clone())).collect();
    let expected: Vec<(String, String)> = ["lp", "guided", "kernel", "projection"]
        .iter()
        .flat_map(|m| ["2", "3"].map(|n| (m.to_string(), n.to_string())))
        .collect();
    assert_eq!(keys, expected);

    for r in &rows {
        let n_x: usize = r[2].parse().unwrap();
        assert_eq!(r[1], "3");
        assert_eq!(r[3], r[2], "n_u = n_x");
        assert_eq!(r[4].parse::<usize>().unwrap(), 3 * n_x * n_x);
        assert_eq!(parse(&r[9]), 0.0);
        assert!(r[14].is_empty(), "timing is off");
        match r[0].as_str() {
            "lp" => {
                // No trace regularizer or barrier; newton_iters holds LP iterations.
                assert!(r[5].is_empty() && r[8].is_empty());
                assert_eq!(r[15], "ok");
            }
            "guided" | "kernel" => {
                assert_eq!(r[15], "ok", "{r:?}");
                assert_eq!(parse(&r[8]), 1e-3);
                assert!(parse(&r[13]) <= 1e-8);
                assert!(r[12].parse::<usize>().unwrap() > 0);
            }
            _ => assert!(r[5..10].iter().take(4).all(String::is_empty)),
        }
        assert!(parse(&r[10]) >= 0.0 && parse(&r[11]).is_finite());
    }

    // The raw file holds every grid point: 2 LP, 1 guided and 1 kernel per n_x.
    let (raw_header, raw) = read_csv(&paths.raw);
    assert_eq!(raw_header, COLUMNS);
    assert_eq!(raw.len(), 8);
}

#[test]
fn selected_row_has_the_least_value_error() {
    let cfg = small();
    let result = run_experiment(&cfg, &quiet()).unwrap();
    for o in result.best.iter().filter(|o| o.row.method == "lp") {
        let group: Vec<&Outcome> =
            result.raw.iter().filter(|r| r.row.method == "lp" && r.row.n_x == o.row.n_x).collect();
        assert_eq!(group.len(), 2);
        let least = group.iter().filter_map(|r| r.row.value_error).fold(f64::INFINITY, f64::min);
        assert_eq!(o.row.value_error, Some(least));
    }
}

fn outcome(gamma: f64, value_error: Option<f64>, violation: Option<f64>, ok: bool) -> Outcome {
    let row = Row {
        method: "lp".into(),
        n_t: 1,
        n_x: 1,
        n_u: 1,
        n: 1,
        lambda: None,
        lambda_theta: Some(1.0),
        gamma: Some(gamma),
        epsilon: None,
        eta: 0.0,
        value_error,
        policy_cost: None,
        newton_iters: None,
        final_decrement: None,
        solve_seconds: None,
        status: if ok { "ok".into() } else { "not_converged".into() },
    };
    Outcome { row, theta: None, violation }
}

#[test]
fn selection_breaks_ties_and_falls_back() {
    let group = vec![
        outcome(2.0, Some(1.0), None, true),
        outcome(1.0, Some(1.0), None, true),
        outcome(0.5, Some(3.0), None, true),
        outcome(0.1, Some(0.5), None, false),
    ];
    assert_eq!(select_best(&group, true).unwrap().row.gamma, Some(1.0));

    // Without ground truth the least mean violation wins.
    let group = vec![outcome(1.0, None, Some(0.2), true), outcome(2.0, None, Some(0.1), true)];
    assert_eq!(select_best(&group, false).unwrap().row.gamma, Some(2.0));

    // All failed: the first row in output order.
    let group = vec![outcome(2.0, None, None, false), outcome(1.0, None, None, false)];
    assert_eq!(select_best(&group, true).unwrap().row.gamma, Some(1.0));
    assert!(select_best(&[], true).is_none());
}

#[test]
fn output_is_deterministic_without_timing() {
    let cfg = small();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let pa = write_outputs(&cfg, &run_experiment(&cfg, &quiet()).unwrap(), a.path()).unwrap();
    let opts = RunOptions { workers: Some(3), ..Default::default() };
    let pb = write_outputs(&cfg, &run_experiment(&cfg, &opts).unwrap(), b.path()).unwrap();
    assert_eq!(std::fs::read(&pa.results).unwrap(), std::fs::read(&pb.results).unwrap());
    assert_eq!(std::fs::read(&pa.raw).unwrap(), std::fs::read(&pb.raw).unwrap());
    assert_eq!(pa.dumps.len(), pb.dumps.len());
    for (x, y) in pa.dumps.iter().zip(&pb.dumps) {
        assert_eq!(x.file_name(), y.file_name());
        assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
    }
}

#[test]
fn dumps_cover_the_selected_models() {
    let cfg = small();
    let result = run_experiment(&cfg, &quiet()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let paths = write_outputs(&cfg, &result, dir.path()).unwrap();
    let names: Vec<String> =
        paths.dumps.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect();
    for m in ["lp", "guided", "kernel"] {
        for n in [2, 3] {
            assert!(names.contains(&format!("{m}_nx{n}.csv")), "{names:?}");
        }
    }
    assert!(names.contains(&"projection.csv".to_string()));

    let setup = Setup::from_config(&cfg).unwrap();
    let grid = EvalGrid::for_problem(setup.problem.as_ref()).unwrap();
    for path in &paths.dumps {
        let (header, rows) = read_csv(path);
        assert_eq!(header, ["t", "x1", "x2", "v_model", "v_true"]);
        assert_eq!(rows.len(), grid.len());
        for (r, (t, x)) in rows.iter().zip(grid.points()) {
            assert_eq!(parse(&r[0]), *t);
            assert_eq!([parse(&r[1]), parse(&r[2])], [x[0], x[1]]);
        }
    }

    // The projection dump reproduces its model.
    let model = setup.model(result.projection_theta.clone().unwrap()).unwrap();
    let truth = setup.truth.as_deref().unwrap();
    let (_, rows) = read_csv(&dir.path().join("values/projection.csv"));
    for (r, (t, x)) in rows.iter().zip(grid.points()) {
        assert!((parse(&r[3]) - model.value(*t, x)).abs() <= 1e-9 * (1.0 + model.value(*t, x).abs()));
        assert!((parse(&r[4]) - truth.value(*t, x)).abs() <= 1e-9 * (1.0 + truth.value(*t, x).abs()));
    }
}

#[test]
fn zero_coefficients_dump_the_terminal_cost_at_the_horizon() {
    let cfg = small();
    let setup = Setup::from_config(&cfg).unwrap();
    let problem = setup.problem.as_ref();
    let model = setup.model(DVector::zeros(setup.basis.len())).unwrap();
    let grid = EvalGrid::for_problem(problem).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("zero.csv");
    dump_value_function(&model, None, &grid, &path).unwrap();
    let (_, rows) = read_csv(&path);
    let mut at_horizon = 0;
    for r in &rows {
        assert!(r[4].is_empty(), "no ground truth given");
        let (t, x) = (parse(&r[0]), [parse(&r[1]), parse(&r[2])]);
        if t == problem.horizon() {
            at_horizon += 1;
            assert!((parse(&r[3]) - problem.terminal_cost(&x)).abs() <= 1e-12);
        }
    }
    assert!(at_horizon > 0);
}

#[test]
fn failed_solves_are_reported_not_fatal() {
    let mut cfg = small();
    cfg.sweep.n_x = vec![2];
    cfg.sweep.methods = vec![Method::Guided];
    cfg.solver.max_newton_iters = 1;
    let result = run_experiment(&cfg, &quiet()).unwrap();
    let guided: Vec<&Row> = result.best.iter().map(|o| &o.row).filter(|r| r.method == "guided").collect();
    assert_eq!(guided.len(), 1);
    let r = guided[0];
    assert!(r.status.ends_with("not_converged"), "{}", r.status);
    assert!(r.status.starts_with("stage"), "{}", r.status);
    assert!(r.value_error.is_none() && r.policy_cost.is_none());
    assert!(result.best[0].theta.is_none());
}

#[test]
fn empty_selection_writes_only_the_header() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.csv");
    hjb_ksos::output::write_rows(&path, std::iter::empty()).unwrap();
    let (header, rows) = read_csv(&path);
    assert_eq!(header, COLUMNS);
    assert!(rows.is_empty());
}

#[test]
fn binary_runs_a_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("small.toml");
    std::fs::write(&config, SMALL.replace("[2, 3]", "[2]").replace(r#"["lp", "guided", "kernel"]"#, r#"["lp"]"#))
        .unwrap();
    let out = dir.path().join("out");
    let status = Command::new(env!("CARGO_BIN_EXE_hjb-ksos"))
        .args(["run", "--quiet", "--config"])
        .arg(&config)
        .arg("--out-dir")
        .arg(&out)
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    let (header, rows) = read_csv(&out.join("results.csv"));
    assert_eq!(header, COLUMNS);
    assert_eq!(rows.len(), 2, "lp and projection");
    assert!(out.join("values/lp_nx2.csv").exists());
}

#[test]
fn binary_rejects_bad_configs() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    std::fs::write(&config, "[solver]\nepsilon = -1.0\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_hjb-ksos"))
        .args(["run", "--config"])
        .arg(&config)
        .arg("--out-dir")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("epsilon"));

    let missing = Command::new(env!("CARGO_BIN_EXE_hjb-ksos"))
        .args(["run", "--config", "/nonexistent.toml", "--out-dir"])
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert!(!missing.status.success());
    assert!(!dir.path().join("out").exists());
}
