//! End-to-end properties of the shipped benchmark models.

use std::path::Path;

use odedbn_core::{
    compile_dbn, compute_metrics, integrate, parse_model, run_filter, sample_evidence,
    FilterConfig, GridSpec, Method, ModelInputs, ModelSpec, NoiseConfig, SamplingSchedule,
    Trajectory,
};

fn shipped(file: &str) -> ModelSpec {
    let path = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../models")
        .join(file);
    parse_model(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn toc1() -> Trajectory {
    Trajectory::read_csv(&Path::new(env!("CARGO_MANIFEST_DIR")).join("../../models/toc1.csv"))
        .unwrap()
}

const STC_TRUTH: [f64; 6] = [0.07, 0.6, 0.05, 0.3, 0.017, 0.3];
const LV_TRUTH: [f64; 4] = [2.0, 1.0, 4.0, 1.0];

fn pool(traj: &Trajectory, row: usize, names: &[&str]) -> f64 {
    names
        .iter()
        .map(|n| traj.row(row)[traj.variable_index(n).unwrap()])
        .sum()
}

#[test]
fn parent_sets_follow_the_network_diagrams() {
    let lv = compile_dbn(&shipped("lotka.ode"), 0.01, &NoiseConfig::default()).unwrap();
    let parents = |tpl: &odedbn_core::DbnTemplate, i: usize| {
        let mut p = tpl.variable_nodes[i].parents.clone();
        p.sort();
        p
    };
    assert_eq!(parents(&lv, 0), ["X", "Y", "a", "b"]);
    assert_eq!(parents(&lv, 1), ["X", "Y", "c", "d"]);
    let pif = compile_dbn(&shipped("pif45.ode"), 0.05, &NoiseConfig::default()).unwrap();
    assert_eq!(parents(&pif, 0), ["K_d", "PIF", "TOC1", "d", "h", "s"]);
}

#[test]
fn cascade_receptor_pool_is_conserved_by_both_methods() {
    let m = shipped("stc.ode");
    for (method, dt) in [(Method::Euler, 0.05), (Method::Rk4, 0.005)] {
        let grid = GridSpec::new(0.0, 100.0, dt).unwrap();
        let traj = integrate(&m, &STC_TRUTH, &grid, method, &ModelInputs::none()).unwrap();
        let r0 = pool(&traj, 0, &["R", "RS", "Rpp"]);
        for i in 0..traj.len() {
            assert!(
                (pool(&traj, i, &["R", "RS", "Rpp"]) - r0).abs() < 1e-6,
                "{method:?} row {i}"
            );
        }
    }
}

#[test]
fn cascade_signal_pool_loses_k4_rs_per_step() {
    // d(S + dS + RS)/dt = -k4 RS, so each Euler step removes dt * k4 * RS exactly
    let m = shipped("stc.ode");
    let dt = 0.05;
    let grid = GridSpec::new(0.0, 100.0, dt).unwrap();
    let traj = integrate(&m, &STC_TRUTH, &grid, Method::Euler, &ModelInputs::none()).unwrap();
    let rs = traj.variable_index("RS").unwrap();
    let k4 = STC_TRUTH[3];
    for i in 0..traj.len() - 1 {
        let loss = pool(&traj, i, &["S", "dS", "RS"]) - pool(&traj, i + 1, &["S", "dS", "RS"]);
        assert!((loss - dt * k4 * traj.row(i)[rs]).abs() < 1e-12, "row {i}");
    }
    let drop = pool(&traj, 0, &["S", "dS", "RS"]) - pool(&traj, traj.len() - 1, &["S", "dS", "RS"]);
    assert!(drop > 0.5, "pool barely moved: {drop}");
}

#[test]
fn noiseless_evidence_scores_zero_against_truth() {
    let m = shipped("lotka.ode");
    let grid = GridSpec::new(0.0, 2.0, 0.001).unwrap();
    let truth = integrate(&m, &LV_TRUTH, &grid, Method::Rk4, &ModelInputs::none()).unwrap();
    let schedule = SamplingSchedule::UniformRandom {
        n: 8,
        seed: 7,
        variables: vec!["X".into()],
    };
    let ev = sample_evidence(&truth, &schedule, 0.0).unwrap();
    let times = ev.times();
    let observed = Trajectory::new(
        vec!["X".into()],
        times.clone(),
        ev.records().iter().map(|r| r.value).collect(),
    )
    .unwrap();
    let report = compute_metrics(&observed, &truth, "X", &times).unwrap();
    assert_eq!((report.rmse, report.mae), (0.0, 0.0));
}

#[test]
fn pif_truth_follows_the_forcing() {
    let m = shipped("pif45.ode");
    let inputs = ModelInputs::bind(&m, Some(toc1())).unwrap();
    let grid = GridSpec::new(0.0, 24.0, 0.005).unwrap();
    let traj = integrate(&m, &[1.0, 0.56, 2.0, 0.5], &grid, Method::Rk4, &inputs).unwrap();
    let pif = traj.column(0);
    // repressed while TOC1 peaks at t = 12, recovering afterwards
    let at = |t: f64| traj.value_at(0, t).unwrap();
    assert!(at(12.0) < at(0.0) && at(12.0) < at(24.0));
    assert!(pif.iter().all(|&v| v > 0.0));
}

#[test]
fn lotka_volterra_parameters_move_towards_truth() {
    let m = shipped("lotka.ode");
    let grid = GridSpec::new(0.0, 2.0, 0.01).unwrap();
    let truth = integrate(
        &m,
        &LV_TRUTH,
        &grid.refined(10),
        Method::Rk4,
        &ModelInputs::none(),
    )
    .unwrap();
    let schedule = SamplingSchedule::UniformRandom {
        n: 8,
        seed: 7,
        variables: vec!["X".into()],
    };
    let ev = sample_evidence(&truth, &schedule, 0.0).unwrap();
    let tpl = compile_dbn(&m, grid.dt, &NoiseConfig::default()).unwrap();
    let priors = m.prior_means();

    let mut good_seeds = 0;
    for seed in 1..=5 {
        let cfg = FilterConfig {
            n_particles: 2000,
            seed,
            ..Default::default()
        };
        let res = run_filter(&tpl, &m, &ev, &grid, &cfg, &ModelInputs::none()).unwrap();
        let post = res.final_parameter_means();
        let all_closer = (0..LV_TRUTH.len())
            .all(|i| (post[i] - LV_TRUTH[i]).abs() < (priors[i] - LV_TRUTH[i]).abs());
        if all_closer {
            good_seeds += 1;
        }
    }
    assert!(
        good_seeds >= 4,
        "only {good_seeds}/5 seeds moved every parameter towards truth"
    );
}
