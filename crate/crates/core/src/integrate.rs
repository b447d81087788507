//! Fixed-step integration: the explicit Euler map used inside the DBN
//! transition, and classical RK4 for generating benchmark truth.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelSpec, RhsProgram};
use crate::trajectory::Trajectory;

const MAX_GRID_STEPS: f64 = 1e7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub t_start: f64,
    pub t_end: f64,
    pub dt: f64,
}

impl GridSpec {
    pub fn new(t_start: f64, t_end: f64, dt: f64) -> Result<Self> {
        let grid = GridSpec { t_start, t_end, dt };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_start.is_finite() && self.t_end.is_finite() && self.t_start < self.t_end) {
            return Err(Error::invalid(
                "grid",
                format!(
                    "need t_start < t_end, got [{}, {}]",
                    self.t_start, self.t_end
                ),
            ));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::invalid(
                "grid",
                format!("dt must be positive, got {}", self.dt),
            ));
        }
        let steps = (self.t_end - self.t_start) / self.dt;
        if steps > MAX_GRID_STEPS {
            return Err(Error::invalid(
                "grid",
                format!("{steps:.0} steps exceeds the limit of {MAX_GRID_STEPS:.0}"),
            ));
        }
        let rounded = steps.round();
        if rounded < 1.0 || (steps - rounded).abs() > 1e-6 * rounded.max(1.0) {
            return Err(Error::invalid(
                "grid",
                format!(
                    "span {} is not a whole number of steps of {}",
                    self.t_end - self.t_start,
                    self.dt
                ),
            ));
        }
        Ok(())
    }

    /// Number of steps; the grid has `n_steps() + 1` points.
    pub fn n_steps(&self) -> usize {
        ((self.t_end - self.t_start) / self.dt).round() as usize
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t_start + k as f64 * self.dt
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.n_steps()).map(|k| self.time(k)).collect()
    }

    /// Same span, step divided by `factor`.
    pub fn refined(&self, factor: usize) -> GridSpec {
        GridSpec {
            t_start: self.t_start,
            t_end: self.t_end,
            dt: self.dt / factor as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Euler,
    Rk4,
}

/// `state + dt * derivative`, elementwise.
pub fn euler_step(state: &[f64], derivative: &[f64], dt: f64) -> Vec<f64> {
    state
        .iter()
        .zip(derivative)
        .map(|(x, dx)| x + dt * dx)
        .collect()
}

/// Binds a model's exogenous inputs to columns of a time-series table.
#[derive(Debug, Clone)]
pub struct ModelInputs {
    names: Vec<String>,
    series: Option<Trajectory>,
    columns: Vec<usize>,
}

impl ModelInputs {
    /// For models that declare no inputs.
    pub fn none() -> Self {
        ModelInputs {
            names: Vec::new(),
            series: None,
            columns: Vec::new(),
        }
    }

    pub fn bind(m: &ModelSpec, series: Option<Trajectory>) -> Result<Self> {
        if m.inputs.is_empty() {
            return Ok(ModelInputs::none());
        }
        let series = series.ok_or_else(|| {
            Error::invalid(
                "inputs",
                format!(
                    "model `{}` declares inputs but no input series was given",
                    m.name
                ),
            )
        })?;
        let columns = m
            .inputs
            .iter()
            .map(|u| {
                series.variable_index(&u.column).ok_or_else(|| {
                    Error::invalid(
                        "inputs",
                        format!("input `{}` needs column `{}`", u.name, u.column),
                    )
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ModelInputs {
            names: m.inputs.iter().map(|u| u.name.clone()).collect(),
            series: Some(series),
            columns,
        })
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn at(&self, t: f64, out: &mut [f64]) -> Result<()> {
        match &self.series {
            None => Ok(()),
            Some(series) => {
                series
                    .values_at(&self.columns, t, out)
                    .map_err(|_| Error::InputCoverage {
                        name: self.names[0].clone(),
                        t,
                    })
            }
        }
    }

    /// Fails unless every input is defined on `[t0, t1]`.
    pub fn check_covers(&self, t0: f64, t1: f64) -> Result<()> {
        let mut scratch = vec![0.0; self.len()];
        self.at(t0, &mut scratch)?;
        self.at(t1, &mut scratch)
    }
}

/// Reusable buffers for one right-hand-side evaluation.
pub(crate) struct RhsScratch {
    pub slots: Vec<f64>,
    pub inputs: Vec<f64>,
    pub deriv: Vec<f64>,
}

impl RhsScratch {
    pub fn new(prog: &RhsProgram) -> Self {
        RhsScratch {
            slots: vec![0.0; prog.slot_count()],
            inputs: vec![0.0; prog.n_inputs()],
            deriv: vec![0.0; prog.n_vars()],
        }
    }

    /// Evaluates f at `(state, params, t)` into `self.deriv`.
    pub fn eval(
        &mut self,
        prog: &RhsProgram,
        inputs: &ModelInputs,
        state: &[f64],
        params: &[f64],
        t: f64,
    ) -> Result<()> {
        inputs.at(t, &mut self.inputs)?;
        prog.eval_into(
            state,
            params,
            &self.inputs,
            t,
            &mut self.slots,
            &mut self.deriv,
        )
    }
}

/// One explicit Euler step in place, with the rate taken at the left end.
pub(crate) fn euler_in_place(
    prog: &RhsProgram,
    inputs: &ModelInputs,
    scratch: &mut RhsScratch,
    state: &mut [f64],
    params: &[f64],
    t: f64,
    dt: f64,
) -> Result<()> {
    scratch.eval(prog, inputs, state, params, t)?;
    for (x, dx) in state.iter_mut().zip(&scratch.deriv) {
        *x += dt * dx;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn rk4_in_place(
    prog: &RhsProgram,
    inputs: &ModelInputs,
    scratch: &mut RhsScratch,
    stages: &mut [Vec<f64>; 5],
    state: &mut [f64],
    params: &[f64],
    t: f64,
    dt: f64,
) -> Result<()> {
    let [k1, k2, k3, k4, tmp] = stages;
    let half = 0.5 * dt;

    scratch.eval(prog, inputs, state, params, t)?;
    k1.copy_from_slice(&scratch.deriv);

    for i in 0..state.len() {
        tmp[i] = state[i] + half * k1[i];
    }
    scratch.eval(prog, inputs, tmp, params, t + half)?;
    k2.copy_from_slice(&scratch.deriv);

    for i in 0..state.len() {
        tmp[i] = state[i] + half * k2[i];
    }
    scratch.eval(prog, inputs, tmp, params, t + half)?;
    k3.copy_from_slice(&scratch.deriv);

    for i in 0..state.len() {
        tmp[i] = state[i] + dt * k3[i];
    }
    scratch.eval(prog, inputs, tmp, params, t + dt)?;
    k4.copy_from_slice(&scratch.deriv);

    for i in 0..state.len() {
        state[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    Ok(())
}

/// Checks that `params` has the right length and lies inside declared bounds.
pub fn check_params(m: &ModelSpec, params: &[f64]) -> Result<()> {
    if params.len() != m.parameters.len() {
        return Err(Error::invalid(
            "parameters",
            format!(
                "expected {} values, got {}",
                m.parameters.len(),
                params.len()
            ),
        ));
    }
    for (p, &v) in m.parameters.iter().zip(params) {
        if !(v >= p.lower_bound && v <= p.upper_bound) {
            return Err(Error::invalid(
                "parameters",
                format!(
                    "`{}` = {v} outside ({}, {})",
                    p.name, p.lower_bound, p.upper_bound
                ),
            ));
        }
    }
    Ok(())
}

pub(crate) fn first_non_finite(names: &[String], state: &[f64], t: f64) -> Result<()> {
    match state.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::NonFinite {
            t,
            variable: names[i].clone(),
        }),
        None => Ok(()),
    }
}

/// Integrates `m` from its declared initial state over `grid`.
pub fn integrate(
    m: &ModelSpec,
    params: &[f64],
    grid: &GridSpec,
    method: Method,
    inputs: &ModelInputs,
) -> Result<Trajectory> {
    grid.validate()?;
    check_params(m, params)?;
    inputs.check_covers(grid.t_start, grid.time(grid.n_steps()))?;
    let prog = m.compile()?;
    let names = m.variable_names();
    let n = grid.n_steps();
    let nv = names.len();

    let mut state = m.initial_state();
    let mut scratch = RhsScratch::new(&prog);
    let mut stages: [Vec<f64>; 5] = std::array::from_fn(|_| vec![0.0; nv]);
    let mut times = Vec::with_capacity(n + 1);
    let mut values = Vec::with_capacity((n + 1) * nv);
    times.push(grid.time(0));
    values.extend_from_slice(&state);

    for k in 0..n {
        let t = grid.time(k);
        match method {
            Method::Euler => {
                euler_in_place(&prog, inputs, &mut scratch, &mut state, params, t, grid.dt)?
            }
            Method::Rk4 => rk4_in_place(
                &prog,
                inputs,
                &mut scratch,
                &mut stages,
                &mut state,
                params,
                t,
                grid.dt,
            )?,
        }
        let t_next = grid.time(k + 1);
        first_non_finite(&names, &state, t_next)?;
        times.push(t_next);
        values.extend_from_slice(&state);
    }
    Trajectory::new(names, times, values)
}
