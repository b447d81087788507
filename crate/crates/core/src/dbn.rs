//! Two-slice DBN compiled from a model.
//!
//! Within a slice the parameters are drawn first (Gaussian random walk,
//! clamped to bounds), then drive one Euler step of the variables, which may
//! receive additive Gaussian process noise. Observed variables get Gaussian
//! observation nodes.

use std::fmt;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrate::{euler_in_place, first_non_finite, ModelInputs, RhsScratch};
use crate::model::{ModelSpec, RhsProgram, TIME_SYMBOL};

/// Offset applied when a parameter is clamped onto a finite bound.
pub const BOUND_EPS: f64 = 1e-12;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

fn default_walk_fraction() -> f64 {
    0.02
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    /// Per-step random-walk sd of each parameter, as a fraction of its prior sd.
    #[serde(default = "default_walk_fraction")]
    pub walk_fraction: f64,
    /// Additive Gaussian noise on every variable after each Euler step.
    #[serde(default)]
    pub process_noise_sd: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            walk_fraction: default_walk_fraction(),
            process_noise_sd: 0.0,
        }
    }
}

impl NoiseConfig {
    /// Deterministic transitions: no parameter walk, no process noise.
    pub fn silent() -> Self {
        NoiseConfig {
            walk_fraction: 0.0,
            process_noise_sd: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariableNode {
    pub name: String,
    /// Itself, then every non-time symbol of its rate equation
    /// (variables, inputs, parameters in declaration order).
    pub parents: Vec<String>,
    pub process_noise_sd: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParameterNode {
    pub name: String,
    pub walk_sd: f64,
    pub lower_bound: f64,
    pub upper_bound: f64,
}

impl ParameterNode {
    pub fn clamp(&self, v: f64) -> f64 {
        if v <= self.lower_bound {
            self.lower_bound + BOUND_EPS
        } else if v >= self.upper_bound {
            self.upper_bound - BOUND_EPS
        } else {
            v
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationNode {
    pub variable: String,
    pub variable_index: usize,
    pub noise_sd: f64,
}

#[derive(Debug, Clone)]
pub struct DbnTemplate {
    pub dt: f64,
    pub variable_nodes: Vec<VariableNode>,
    pub parameter_nodes: Vec<ParameterNode>,
    pub observation_nodes: Vec<ObservationNode>,
    pub input_bindings: Vec<String>,
    rhs: RhsProgram,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SliceState {
    pub t: f64,
    pub params: Vec<f64>,
    pub state: Vec<f64>,
}

pub fn compile_dbn(m: &ModelSpec, dt: f64, noise: &NoiseConfig) -> Result<DbnTemplate> {
    m.validate()?;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::invalid(
            "dbn",
            format!("dt must be positive, got {dt}"),
        ));
    }
    if !(noise.walk_fraction >= 0.0 && noise.walk_fraction.is_finite()) {
        return Err(Error::invalid("noise", "walk_fraction must be >= 0"));
    }
    if !(noise.process_noise_sd >= 0.0 && noise.process_noise_sd.is_finite()) {
        return Err(Error::invalid("noise", "process_noise_sd must be >= 0"));
    }

    let order: Vec<&str> = m
        .variables
        .iter()
        .map(|v| v.name.as_str())
        .chain(m.inputs.iter().map(|u| u.name.as_str()))
        .chain(m.parameters.iter().map(|p| p.name.as_str()))
        .collect();

    let variable_nodes = m
        .variables
        .iter()
        .zip(&m.equations)
        .map(|(v, eq)| {
            let symbols = eq.symbols();
            let mut parents = vec![v.name.clone()];
            parents.extend(
                order
                    .iter()
                    .filter(|&&s| s != v.name && s != TIME_SYMBOL && symbols.contains(s))
                    .map(|s| s.to_string()),
            );
            VariableNode {
                name: v.name.clone(),
                parents,
                process_noise_sd: noise.process_noise_sd,
            }
        })
        .collect();

    let parameter_nodes = m
        .parameters
        .iter()
        .map(|p| ParameterNode {
            name: p.name.clone(),
            walk_sd: noise.walk_fraction * p.prior_sd,
            lower_bound: p.lower_bound,
            upper_bound: p.upper_bound,
        })
        .collect();

    let observation_nodes = m
        .observations
        .iter()
        .map(|o| {
            let variable_index = m.variable_index(&o.variable).ok_or_else(|| {
                Error::invalid(
                    "observation",
                    format!("`{}` is not a declared variable", o.variable),
                )
            })?;
            Ok(ObservationNode {
                variable: o.variable.clone(),
                variable_index,
                noise_sd: o.noise_sd,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(DbnTemplate {
        dt,
        variable_nodes,
        parameter_nodes,
        observation_nodes,
        input_bindings: m.inputs.iter().map(|u| u.name.clone()).collect(),
        rhs: m.compile()?,
    })
}

impl DbnTemplate {
    pub fn n_vars(&self) -> usize {
        self.variable_nodes.len()
    }

    pub fn n_params(&self) -> usize {
        self.parameter_nodes.len()
    }

    pub fn rhs(&self) -> &RhsProgram {
        &self.rhs
    }

    pub fn observation_node(&self, variable: &str) -> Option<&ObservationNode> {
        self.observation_nodes
            .iter()
            .find(|o| o.variable == variable)
    }

    pub fn variable_names(&self) -> Vec<String> {
        self.variable_nodes.iter().map(|v| v.name.clone()).collect()
    }

    pub fn parameter_names(&self) -> Vec<String> {
        self.parameter_nodes
            .iter()
            .map(|p| p.name.clone())
            .collect()
    }

    fn check_slice(&self, s: &SliceState) -> Result<()> {
        if s.params.len() != self.n_params() || s.state.len() != self.n_vars() {
            return Err(Error::invalid(
                "slice",
                format!(
                    "expected {} parameters and {} variables, got {} and {}",
                    self.n_params(),
                    self.n_vars(),
                    s.params.len(),
                    s.state.len()
                ),
            ));
        }
        Ok(())
    }
}

/// Per-thread buffers for propagating particles.
pub(crate) struct Propagator {
    scratch: RhsScratch,
}

impl Propagator {
    pub fn new(tpl: &DbnTemplate) -> Self {
        Propagator {
            scratch: RhsScratch::new(&tpl.rhs),
        }
    }

    /// Advances `(params, state)` from time `t` by one slice, in place.
    #[allow(clippy::too_many_arguments)]
    pub fn step<R: Rng + ?Sized>(
        &mut self,
        tpl: &DbnTemplate,
        inputs: &ModelInputs,
        params: &mut [f64],
        state: &mut [f64],
        t: f64,
        rng: &mut R,
        names: &[String],
    ) -> Result<()> {
        for (value, node) in params.iter_mut().zip(&tpl.parameter_nodes) {
            if node.walk_sd > 0.0 {
                let eps: f64 = rng.sample(StandardNormal);
                *value += node.walk_sd * eps;
            }
            *value = node.clamp(*value);
        }
        euler_in_place(
            &tpl.rhs,
            inputs,
            &mut self.scratch,
            state,
            params,
            t,
            tpl.dt,
        )?;
        for (value, node) in state.iter_mut().zip(&tpl.variable_nodes) {
            if node.process_noise_sd > 0.0 {
                let eta: f64 = rng.sample(StandardNormal);
                *value += node.process_noise_sd * eta;
            }
        }
        first_non_finite(names, state, t + tpl.dt)
    }
}

/// Samples the next slice given the current one.
pub fn transition<R: Rng + ?Sized>(
    tpl: &DbnTemplate,
    s: &SliceState,
    rng: &mut R,
    inputs: &ModelInputs,
) -> Result<SliceState> {
    tpl.check_slice(s)?;
    let mut next = s.clone();
    let names = tpl.variable_names();
    Propagator::new(tpl).step(
        tpl,
        inputs,
        &mut next.params,
        &mut next.state,
        s.t,
        rng,
        &names,
    )?;
    next.t = s.t + tpl.dt;
    Ok(next)
}

/// Gaussian log-density of `sd`-noise around `mean`.
pub fn gaussian_logpdf(value: f64, mean: f64, sd: f64) -> f64 {
    let z = (value - mean) / sd;
    -0.5 * z * z - sd.ln() - LN_SQRT_2PI
}

pub fn observation_logpdf(
    tpl: &DbnTemplate,
    s: &SliceState,
    variable: &str,
    value: f64,
) -> Result<f64> {
    let node = tpl.observation_node(variable).ok_or_else(|| {
        Error::invalid("evidence", format!("`{variable}` has no observation node"))
    })?;
    tpl.check_slice(s)?;
    Ok(gaussian_logpdf(
        value,
        s.state[node.variable_index],
        node.noise_sd,
    ))
}

/// Human-readable node listing.
impl fmt::Display for DbnTemplate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "dt = {}", self.dt)?;
        writeln!(f, "variable nodes:")?;
        for v in &self.variable_nodes {
            writeln!(
                f,
                "  {} <- {{{}}}  process_noise_sd = {}",
                v.name,
                v.parents.join(", "),
                v.process_noise_sd
            )?;
        }
        writeln!(f, "parameter nodes:")?;
        for p in &self.parameter_nodes {
            writeln!(
                f,
                "  {} <- {{{}}}  walk_sd = {}  bounds = ({}, {})",
                p.name, p.name, p.walk_sd, p.lower_bound, p.upper_bound
            )?;
        }
        if !self.input_bindings.is_empty() {
            writeln!(f, "inputs: {}", self.input_bindings.join(", "))?;
        }
        writeln!(f, "observation nodes:")?;
        for o in &self.observation_nodes {
            writeln!(
                f,
                "  obs({}) ~ N({}, {})",
                o.variable, o.variable, o.noise_sd
            )?;
        }
        Ok(())
    }
}
