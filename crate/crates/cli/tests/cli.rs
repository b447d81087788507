//! Subcommand behaviour and exit codes of the `odedbn` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use odedbn_core::Trajectory;

fn models_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../models")
        .canonicalize()
        .unwrap()
}

fn odedbn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_odedbn"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// Copies a shipped config into `dir` with absolute model/input paths and output in `dir/out`.
fn local_config(dir: &Path, shipped: &str, edit: impl FnOnce(&mut serde_json::Value)) -> PathBuf {
    let text = std::fs::read_to_string(models_dir().join(shipped)).unwrap();
    let mut json: serde_json::Value = serde_json::from_str(&text).unwrap();
    for key in ["model_path", "inputs"] {
        if let Some(rel) = json.get(key).and_then(|v| v.as_str()) {
            json[key] = models_dir().join(rel).to_str().unwrap().into();
        }
    }
    json["output_dir"] = "out".into();
    edit(&mut json);
    let path = dir.join("run.json");
    std::fs::write(&path, json.to_string()).unwrap();
    path
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn validate_lists_parent_sets() {
    let out = odedbn(&["validate", models_dir().join("lotka.ode").to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("X <- {X, Y, a, b}"), "{text}");
    assert!(text.contains("Y <- {Y, X, c, d}"), "{text}");
}

#[test]
fn validate_rejects_unknown_symbol_and_missing_equation() {
    let dir = tempfile::tempdir().unwrap();
    let unknown = write(dir.path(), "u.ode", "model m\nvar X = 1\neq dX/dt = -k*X\n");
    let out = odedbn(&["validate", unknown.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("`k`"), "{}", stderr(&out));

    let missing = write(
        dir.path(),
        "m.ode",
        "model m\nvar X = 1\nvar Y = 2\neq dX/dt = -X\n",
    );
    let out = odedbn(&["validate", missing.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(
        stderr(&out).contains("missing equation"),
        "{}",
        stderr(&out)
    );
}

#[test]
fn missing_files_are_io_errors() {
    assert_eq!(code(&odedbn(&["validate", "/nonexistent/model.ode"])), 4);
    assert_eq!(
        code(&odedbn(&["filter", "--config", "/nonexistent/run.json"])),
        4
    );
}

#[test]
fn simulate_writes_truth_on_the_benchmark_span() {
    for (config, t_end) in [("lv_run.json", 2.0), ("stc_run.json", 100.0)] {
        let dir = tempfile::tempdir().unwrap();
        let cfg = local_config(dir.path(), config, |_| {});
        let out = odedbn(&["simulate", "--config", cfg.to_str().unwrap()]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        let truth = Trajectory::read_csv(&dir.path().join("out/truth.csv")).unwrap();
        assert_eq!(truth.first_time(), 0.0);
        assert!((truth.last_time() - t_end).abs() < 1e-9);
    }
}

#[test]
fn simulate_fixed_point_model_is_constant() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "still.ode",
        "model still\nvar X = 3\nvar Y = -1\neq dX/dt = 0\neq dY/dt = 0\nobs X noise 1\n",
    );
    let cfg = write(
        dir.path(),
        "run.json",
        r#"{"model_path": "still.ode", "grid": {"t_start": 0, "t_end": 1, "dt": 0.1},
            "truth": {"kind": "generate_rk4"},
            "evidence": {"kind": "sample", "schedule": {"kind": "explicit", "times": [0.5], "variables": ["X"]}},
            "output_dir": "out"}"#,
    );
    let out = odedbn(&["simulate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let truth = Trajectory::read_csv(&dir.path().join("out/truth.csv")).unwrap();
    assert!((0..truth.len()).all(|i| truth.row(i) == [3.0, -1.0]));
}

#[test]
fn config_typos_are_validation_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = local_config(dir.path(), "lv_run.json", |j| j["n_particle"] = 10.into());
    assert_eq!(
        code(&odedbn(&["filter", "--config", cfg.to_str().unwrap()])),
        2
    );
}

#[test]
fn evidence_outside_the_grid_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let ev = write(
        dir.path(),
        "ev.csv",
        "t,variable,value\n1.0,X,4.0\n3.5,X,4.2\n",
    );
    let cfg = local_config(dir.path(), "lv_run.json", |j| {
        j["evidence"] = serde_json::json!({"kind": "file", "path": ev.to_str().unwrap()});
    });
    let out = odedbn(&["filter", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("outside"), "{}", stderr(&out));
}

#[test]
fn true_params_must_match_the_model() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = local_config(dir.path(), "lv_run.json", |j| {
        j["true_params"].as_object_mut().unwrap().remove("c");
    });
    let out = odedbn(&["simulate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("`c`"), "{}", stderr(&out));
}

#[test]
fn filter_failure_is_a_numeric_error() {
    let dir = tempfile::tempdir().unwrap();
    write(
        dir.path(),
        "boom.ode",
        "model boom\nvar X = 1e200\neq dX/dt = X*X\nobs X noise 1\n",
    );
    let ev = write(dir.path(), "ev.csv", "t,variable,value\n");
    let cfg = write(
        dir.path(),
        "run.json",
        &format!(
            r#"{{"model_path": "boom.ode", "grid": {{"t_start": 0, "t_end": 1, "dt": 0.1}},
                "filter": {{"n_particles": 10}},
                "truth": {{"kind": "file", "path": "truth.csv"}},
                "evidence": {{"kind": "file", "path": "{}"}},
                "output_dir": "out"}}"#,
            ev.display()
        ),
    );
    write(dir.path(), "truth.csv", "t,X\n0,1\n1,1\n");
    assert_eq!(
        code(&odedbn(&["filter", "--config", cfg.to_str().unwrap()])),
        3
    );
}

#[test]
fn filter_then_plot() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = local_config(dir.path(), "lv_run.json", |j| {
        j["filter"]["n_particles"] = 500.into()
    });
    let out = odedbn(&[
        "filter",
        "--config",
        cfg.to_str().unwrap(),
        "--threads",
        "2",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let o = dir.path().join("out");
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(o.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["variable"], "X");
    assert_eq!(metrics["n_points"], 201);

    let header = std::fs::read_to_string(o.join("result.csv")).unwrap();
    assert!(header.starts_with("t,X_mean,X_sd,Y_mean,Y_sd,a_mean,a_sd,"));
    assert!(header.lines().next().unwrap().ends_with(",ess"));

    let svg = o.join("x.svg");
    let p = |f: &str| o.join(f).to_str().unwrap().to_string();
    let out = odedbn(&[
        "plot",
        "--result",
        &p("result.csv"),
        "--truth",
        &p("truth.csv"),
        "--evidence",
        &p("evidence.csv"),
        "--var",
        "X",
        "--out",
        svg.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = std::fs::read_to_string(&svg).unwrap();
    assert_eq!(text.matches("<circle").count(), 8);

    let empty = write(dir.path(), "empty.csv", "t,variable,value\n");
    let out = odedbn(&[
        "plot",
        "--result",
        &p("result.csv"),
        "--truth",
        &p("truth.csv"),
        "--evidence",
        empty.to_str().unwrap(),
        "--var",
        "X",
        "--out",
        svg.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(
        std::fs::read_to_string(&svg)
            .unwrap()
            .matches("<circle")
            .count(),
        0
    );

    let out = odedbn(&[
        "plot",
        "--result",
        &p("result.csv"),
        "--truth",
        &p("truth.csv"),
        "--var",
        "Z",
        "--out",
        svg.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn cascade_plot_shows_rpp() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = local_config(dir.path(), "stc_run.json", |j| {
        j["filter"]["n_particles"] = 300.into()
    });
    assert_eq!(
        code(&odedbn(&["filter", "--config", cfg.to_str().unwrap()])),
        0
    );
    let o = dir.path().join("out");
    let svg = dir.path().join("rpp.svg");
    let out = odedbn(&[
        "plot",
        "--result",
        o.join("result.csv").to_str().unwrap(),
        "--truth",
        o.join("truth.csv").to_str().unwrap(),
        "--var",
        "Rpp",
        "--out",
        svg.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(std::fs::read_to_string(&svg)
        .unwrap()
        .contains(">Rpp</text>"));
}

#[test]
fn filter_output_is_identical_across_runs_and_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = local_config(dir.path(), "lv_run.json", |j| {
        j["filter"]["n_particles"] = 1000.into()
    });
    let cfg = cfg.to_str().unwrap();
    let files = ["truth.csv", "evidence.csv", "result.csv", "metrics.json"];
    let run = |extra: &[&str]| {
        let mut args = vec!["filter", "--config", cfg];
        args.extend_from_slice(extra);
        let out = odedbn(&args);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        files
            .iter()
            .map(|f| std::fs::read(dir.path().join("out").join(f)).unwrap())
            .collect::<Vec<_>>()
    };
    let first = run(&[]);
    assert_eq!(run(&[]), first);
    assert_eq!(run(&["--threads", "1"]), first);
    assert_eq!(run(&["--threads", "4"]), first);
}
