//! RMSE and MAE of a predicted trajectory against a reference.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajectory::Trajectory;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub variable: String,
    pub rmse: f64,
    pub mae: f64,
    pub n_points: usize,
    #[serde(skip)]
    pub eval_times: Vec<f64>,
}

impl MetricReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

/// Compares `pred` and `truth` for `variable`, both interpolated at `eval_times`.
pub fn compute_metrics(
    pred: &Trajectory,
    truth: &Trajectory,
    variable: &str,
    eval_times: &[f64],
) -> Result<MetricReport> {
    if eval_times.is_empty() {
        return Err(Error::invalid("metrics", "no evaluation times"));
    }
    let column = |traj: &Trajectory, role: &str| {
        traj.variable_index(variable).ok_or_else(|| {
            Error::invalid(
                "metrics",
                format!("variable `{variable}` absent from {role}"),
            )
        })
    };
    let (pc, tc) = (column(pred, "prediction")?, column(truth, "truth")?);
    let (mut sq, mut abs) = (0.0, 0.0);
    for &t in eval_times {
        let e = pred.value_at(pc, t)? - truth.value_at(tc, t)?;
        sq += e * e;
        abs += e.abs();
    }
    let n = eval_times.len() as f64;
    Ok(MetricReport {
        variable: variable.to_string(),
        rmse: (sq / n).sqrt(),
        mae: abs / n,
        n_points: eval_times.len(),
        eval_times: eval_times.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn traj(times: &[f64], xs: &[f64]) -> Trajectory {
        Trajectory::new(vec!["X".into()], times.to_vec(), xs.to_vec()).unwrap()
    }

    #[test]
    fn identical_is_zero() {
        let a = traj(&[0.0, 1.0, 2.0], &[1.0, -3.0, 2.5]);
        let r = compute_metrics(&a, &a, "X", &[0.0, 0.5, 2.0]).unwrap();
        assert_eq!((r.rmse, r.mae, r.n_points), (0.0, 0.0, 3));
    }

    #[test]
    fn hand_case() {
        let r = compute_metrics(
            &traj(&[0.0, 1.0], &[1.0, 2.0]),
            &traj(&[0.0, 1.0], &[1.0, 4.0]),
            "X",
            &[0.0, 1.0],
        )
        .unwrap();
        assert!((r.mae - 1.0).abs() < 1e-12);
        assert!((r.rmse - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn constant_offset() {
        let truth = traj(&[0.0, 1.0, 2.0], &[0.3, 1.7, -2.0]);
        let pred = traj(&[0.0, 1.0, 2.0], &[0.55, 1.95, -1.75]);
        let r = compute_metrics(&pred, &truth, "X", &[0.0, 1.0, 2.0]).unwrap();
        assert!((r.rmse - 0.25).abs() < 1e-12 && (r.mae - 0.25).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        let a = traj(&[0.0, 1.0], &[0.0, 1.0]);
        assert!(compute_metrics(&a, &a, "Y", &[0.5]).is_err());
        assert!(compute_metrics(&a, &a, "X", &[]).is_err());
        assert!(compute_metrics(&a, &a, "X", &[3.0]).is_err());
    }

    #[test]
    fn json_shape() {
        let a = traj(&[0.0, 1.0], &[0.0, 1.0]);
        let r = compute_metrics(&a, &a, "X", &[0.5]).unwrap();
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        let keys: Vec<&str> = v.as_object().unwrap().keys().map(|k| k.as_str()).collect();
        assert_eq!(keys.len(), 4);
        for k in ["variable", "rmse", "mae", "n_points"] {
            assert!(keys.contains(&k));
        }
    }

    fn pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (2usize..30).prop_flat_map(|n| {
            (
                prop::collection::vec(-100.0..100.0f64, n),
                prop::collection::vec(-100.0..100.0f64, n),
            )
        })
    }

    fn grid(n: usize) -> Vec<f64> {
        (0..n).map(|i| i as f64).collect()
    }

    proptest! {
        #[test]
        fn mae_bounded_by_rmse((p, q) in pair()) {
            let ts = grid(p.len());
            let r = compute_metrics(&traj(&ts, &p), &traj(&ts, &q), "X", &ts).unwrap();
            prop_assert!(r.mae <= r.rmse * (1.0 + 1e-12));
        }

        #[test]
        fn order_invariant((p, q) in pair(), shift in 0usize..30) {
            let ts = grid(p.len());
            let mut rotated = ts.clone();
            rotated.rotate_left(shift % ts.len());
            rotated.reverse();
            let (a, b) = (traj(&ts, &p), traj(&ts, &q));
            let r1 = compute_metrics(&a, &b, "X", &ts).unwrap();
            let r2 = compute_metrics(&a, &b, "X", &rotated).unwrap();
            prop_assert!((r1.rmse - r2.rmse).abs() <= 1e-9 * r1.rmse.max(1.0));
            prop_assert!((r1.mae - r2.mae).abs() <= 1e-9 * r1.mae.max(1.0));
        }

        #[test]
        fn scales_with_lambda((p, q) in pair(), lambda in -10.0..10.0f64) {
            let ts = grid(p.len());
            let scale = |v: &[f64]| v.iter().map(|x| x * lambda).collect::<Vec<_>>();
            let r = compute_metrics(&traj(&ts, &p), &traj(&ts, &q), "X", &ts).unwrap();
            let s = compute_metrics(&traj(&ts, &scale(&p)), &traj(&ts, &scale(&q)), "X", &ts).unwrap();
            prop_assert!((s.rmse - lambda.abs() * r.rmse).abs() <= 1e-9 * (1.0 + s.rmse));
            prop_assert!((s.mae - lambda.abs() * r.mae).abs() <= 1e-9 * (1.0 + s.mae));
        }
    }
}
