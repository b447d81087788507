//! Bootstrap (sampling-importance-resampling) particle filter over a
//! compiled DBN.
//!
//! Propagation and weighting run in parallel across particles. Each
//! particle draws from its own stream keyed by `(seed, step, particle)`
//! and every reduction runs in index order, so a run is bit-reproducible
//! for any thread count.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::iter::Either;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dbn::{gaussian_logpdf, DbnTemplate, Propagator};
use crate::error::{Error, Result};
use crate::evidence::EvidenceStream;
use crate::integrate::{GridSpec, ModelInputs};
use crate::model::ModelSpec;
use crate::rng::{stream, RESAMPLE_LANE};
use crate::trajectory::{fmt_real, Trajectory};

const MAX_PRIOR_ATTEMPTS: usize = 10_000;
const MIN_PRIOR_ACCEPTANCE: f64 = 1e-3;

fn default_n_particles() -> usize {
    5000
}

fn default_threshold() -> f64 {
    0.5
}

fn default_prior_sd_scale() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterConfig {
    #[serde(default = "default_n_particles")]
    pub n_particles: usize,
    /// Resample when ESS falls below this fraction of `n_particles`.
    #[serde(default = "default_threshold")]
    pub resample_threshold: f64,
    #[serde(default)]
    pub seed: u64,
    /// Per-variable sd of the initial state; empty means all zero.
    #[serde(default)]
    pub init_state_sd: Vec<f64>,
    /// Multiplies every prior sd; 0 starts all particles at the prior means.
    #[serde(default = "default_prior_sd_scale")]
    pub prior_sd_scale: f64,
    /// Worker threads; 0 uses the rayon default. Does not affect results.
    #[serde(default)]
    pub threads: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            n_particles: default_n_particles(),
            resample_threshold: default_threshold(),
            seed: 0,
            init_state_sd: Vec::new(),
            prior_sd_scale: default_prior_sd_scale(),
            threads: 0,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self, n_vars: usize) -> Result<()> {
        if self.n_particles < 2 {
            return Err(Error::invalid("filter config", "n_particles must be >= 2"));
        }
        if self.n_particles as u64 >= RESAMPLE_LANE {
            return Err(Error::invalid("filter config", "n_particles too large"));
        }
        if !(self.resample_threshold > 0.0 && self.resample_threshold <= 1.0) {
            return Err(Error::invalid(
                "filter config",
                "resample_threshold must be in (0, 1]",
            ));
        }
        if !self.init_state_sd.is_empty() && self.init_state_sd.len() != n_vars {
            return Err(Error::invalid(
                "filter config",
                format!(
                    "init_state_sd has {} entries for {} variables",
                    self.init_state_sd.len(),
                    n_vars
                ),
            ));
        }
        if self
            .init_state_sd
            .iter()
            .any(|s| !(*s >= 0.0 && s.is_finite()))
        {
            return Err(Error::invalid(
                "filter config",
                "init_state_sd must be >= 0",
            ));
        }
        if !(self.prior_sd_scale >= 0.0 && self.prior_sd_scale.is_finite()) {
            return Err(Error::invalid(
                "filter config",
                "prior_sd_scale must be >= 0",
            ));
        }
        Ok(())
    }

    fn init_sd(&self, var: usize) -> f64 {
        self.init_state_sd.get(var).copied().unwrap_or(0.0)
    }
}

/// N particles stored flat: `params[i * n_params ..]`, `states[i * n_vars ..]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    pub n_params: usize,
    pub n_vars: usize,
    pub params: Vec<f64>,
    pub states: Vec<f64>,
    /// Normalized so that logsumexp = 0. Dead particles hold `-inf`.
    pub log_weights: Vec<f64>,
    pub t: f64,
}

impl ParticleEnsemble {
    pub fn len(&self) -> usize {
        self.log_weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_weights.is_empty()
    }

    pub fn particle_params(&self, i: usize) -> &[f64] {
        &self.params[i * self.n_params..(i + 1) * self.n_params]
    }

    pub fn particle_state(&self, i: usize) -> &[f64] {
        &self.states[i * self.n_vars..(i + 1) * self.n_vars]
    }

    pub fn weights(&self) -> Vec<f64> {
        self.log_weights.iter().map(|lw| lw.exp()).collect()
    }

    /// Rescales log-weights to sum to one; fails when every weight is zero.
    pub fn normalize(&mut self) -> Result<()> {
        let lse = logsumexp(&self.log_weights);
        if !lse.is_finite() {
            return Err(Error::FilterFailure { t: self.t });
        }
        for lw in &mut self.log_weights {
            *lw -= lse;
        }
        Ok(())
    }

    fn select(&self, indices: &[usize]) -> ParticleEnsemble {
        let n = indices.len();
        let mut params = Vec::with_capacity(n * self.n_params);
        let mut states = Vec::with_capacity(n * self.n_vars);
        for &i in indices {
            params.extend_from_slice(self.particle_params(i));
            states.extend_from_slice(self.particle_state(i));
        }
        ParticleEnsemble {
            n_params: self.n_params,
            n_vars: self.n_vars,
            params,
            states,
            log_weights: vec![-(n as f64).ln(); n],
            t: self.t,
        }
    }
}

pub fn logsumexp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Effective sample size `1 / Σ w²` of normalized log-weights.
pub fn ess(log_weights: &[f64]) -> f64 {
    1.0 / log_weights.iter().map(|lw| (2.0 * lw).exp()).sum::<f64>()
}

/// Draws from `N(mean, sd)` restricted to the open interval `(lo, hi)`.
fn truncated_normal<R: Rng + ?Sized>(
    rng: &mut R,
    mean: f64,
    sd: f64,
    lo: f64,
    hi: f64,
) -> Option<(f64, usize)> {
    for attempt in 1..=MAX_PRIOR_ATTEMPTS {
        let z: f64 = rng.sample(StandardNormal);
        let v = mean + sd * z;
        if v > lo && v < hi {
            return Some((v, attempt));
        }
    }
    None
}

/// Per-particle `(params, state)` slices. Either width may be zero.
fn particle_chunks<'a>(
    params: &'a mut [f64],
    np: usize,
    states: &'a mut [f64],
    nv: usize,
) -> impl IndexedParallelIterator<Item = (&'a mut [f64], &'a mut [f64])> {
    let n = states
        .len()
        .checked_div(nv)
        .unwrap_or_else(|| params.len() / np.max(1));
    let params = if np > 0 {
        Either::Left(params.par_chunks_mut(np))
    } else {
        Either::Right((0..n).into_par_iter().map(|_| <&mut [f64]>::default()))
    };
    let states = if nv > 0 {
        Either::Left(states.par_chunks_mut(nv))
    } else {
        Either::Right((0..n).into_par_iter().map(|_| <&mut [f64]>::default()))
    };
    params.zip(states)
}

/// Samples parameters from the truncated priors and states around the
/// declared initial values; weights start uniform.
pub fn init_particles(
    tpl: &DbnTemplate,
    m: &ModelSpec,
    cfg: &FilterConfig,
    t: f64,
) -> Result<ParticleEnsemble> {
    cfg.validate(tpl.n_vars())?;
    let n = cfg.n_particles;
    let np = tpl.n_params();
    let nv = tpl.n_vars();
    if m.parameters.len() != np || m.variables.len() != nv {
        return Err(Error::invalid("filter", "template does not match model"));
    }
    for p in &m.parameters {
        if cfg.prior_sd_scale == 0.0
            && !(p.prior_mean > p.lower_bound && p.prior_mean < p.upper_bound)
        {
            return Err(Error::invalid(
                "prior",
                format!("prior mean of `{}` lies outside its bounds", p.name),
            ));
        }
    }

    let mut params = vec![0.0; n * np];
    let mut states = vec![0.0; n * nv];
    let attempts: Vec<Option<usize>> = particle_chunks(&mut params, np, &mut states, nv)
        .enumerate()
        .map(|(i, (pp, ss))| {
            let mut rng = stream(cfg.seed, 0, i as u64);
            let mut tries = 0;
            for (slot, p) in pp.iter_mut().zip(&m.parameters) {
                let sd = p.prior_sd * cfg.prior_sd_scale;
                if sd == 0.0 {
                    *slot = p.prior_mean;
                    tries += 1;
                } else {
                    let (v, k) =
                        truncated_normal(&mut rng, p.prior_mean, sd, p.lower_bound, p.upper_bound)?;
                    *slot = v;
                    tries += k;
                }
            }
            for (j, (slot, v)) in ss.iter_mut().zip(&m.variables).enumerate() {
                let sd = cfg.init_sd(j);
                *slot = if sd > 0.0 {
                    let z: f64 = rng.sample(StandardNormal);
                    v.initial_value + sd * z
                } else {
                    v.initial_value
                };
            }
            Some(tries)
        })
        .collect();
    let mut total = 0usize;
    for a in attempts {
        total +=
            a.ok_or_else(|| Error::invalid("prior", "truncated prior rejects almost every draw"))?;
    }
    if np > 0 && (n * np) as f64 / (total as f64) < MIN_PRIOR_ACCEPTANCE {
        return Err(Error::invalid(
            "prior",
            "truncated prior acceptance rate below 1e-3",
        ));
    }
    Ok(ParticleEnsemble {
        n_params: np,
        n_vars: nv,
        params,
        states,
        log_weights: vec![-(n as f64).ln(); n],
        t,
    })
}

/// Systematic resampling indices: pointers `(u + k) / n_out`, `u ∈ [0, 1)`,
/// against the cumulative weights.
pub fn systematic_indices(weights: &[f64], n_out: usize, u: f64) -> Result<Vec<usize>> {
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::invalid("resample", "all weights are zero"));
    }
    let last_alive = weights.iter().rposition(|w| *w > 0.0).unwrap_or(0);
    let mut out = Vec::with_capacity(n_out);
    let mut cumulative = weights[0] / total;
    let mut i = 0usize;
    for k in 0..n_out {
        let pointer = (u + k as f64) / n_out as f64;
        while cumulative <= pointer && i < last_alive {
            i += 1;
            cumulative += weights[i] / total;
        }
        out.push(i);
    }
    Ok(out)
}

pub fn systematic_resample<R: Rng + ?Sized>(
    ensemble: &ParticleEnsemble,
    rng: &mut R,
) -> Result<ParticleEnsemble> {
    let u: f64 = rng.random();
    let indices = systematic_indices(&ensemble.weights(), ensemble.len(), u)
        .map_err(|_| Error::FilterFailure { t: ensemble.t })?;
    Ok(ensemble.select(&indices))
}

/// Weighted mean and population sd of one coordinate. Values are centred
/// on the first live particle so identical particles give that value exactly.
fn weighted_moments(weights: &[f64], values: impl Fn(usize) -> f64) -> (f64, f64) {
    let Some(anchor_idx) = weights.iter().position(|w| *w > 0.0) else {
        return (f64::NAN, f64::NAN);
    };
    let anchor = values(anchor_idx);
    let mut wsum = 0.0;
    let mut shift = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            wsum += w;
            shift += w * (values(i) - anchor);
        }
    }
    let mean = anchor + shift / wsum;
    let mut var = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            let d = values(i) - mean;
            var += w * d * d;
        }
    }
    (mean, (var / wsum).sqrt())
}

/// Weighted mean and sd of every variable, then every parameter.
pub fn posterior_summary(ensemble: &ParticleEnsemble) -> (Vec<f64>, Vec<f64>) {
    let w = ensemble.weights();
    let (nv, np) = (ensemble.n_vars, ensemble.n_params);
    let mut mean = Vec::with_capacity(nv + np);
    let mut sd = Vec::with_capacity(nv + np);
    for j in 0..nv {
        let (m, s) = weighted_moments(&w, |i| ensemble.states[i * nv + j]);
        mean.push(m);
        sd.push(s);
    }
    for j in 0..np {
        let (m, s) = weighted_moments(&w, |i| ensemble.params[i * np + j]);
        mean.push(m);
        sd.push(s);
    }
    (mean, sd)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterResult {
    pub times: Vec<f64>,
    pub variable_names: Vec<String>,
    pub parameter_names: Vec<String>,
    /// Row-major `[time][variable.., parameter..]`.
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    pub ess: Vec<f64>,
    /// Grid times at which evidence was assimilated.
    pub assimilated_times: Vec<f64>,
    /// Number of resampling events.
    pub resample_count: usize,
}

impl FilterResult {
    fn width(&self) -> usize {
        self.variable_names.len() + self.parameter_names.len()
    }

    pub fn mean_row(&self, k: usize) -> &[f64] {
        let w = self.width();
        &self.mean[k * w..(k + 1) * w]
    }

    pub fn sd_row(&self, k: usize) -> &[f64] {
        let w = self.width();
        &self.sd[k * w..(k + 1) * w]
    }

    fn column_index(&self, name: &str) -> Option<usize> {
        self.variable_names
            .iter()
            .chain(&self.parameter_names)
            .position(|n| n == name)
    }

    pub fn mean_of(&self, name: &str) -> Option<Vec<f64>> {
        let c = self.column_index(name)?;
        Some((0..self.times.len()).map(|k| self.mean_row(k)[c]).collect())
    }

    pub fn sd_of(&self, name: &str) -> Option<Vec<f64>> {
        let c = self.column_index(name)?;
        Some((0..self.times.len()).map(|k| self.sd_row(k)[c]).collect())
    }

    /// Posterior means of the model variables as a trajectory.
    pub fn mean_trajectory(&self) -> Result<Trajectory> {
        let nv = self.variable_names.len();
        let values = (0..self.times.len())
            .flat_map(|k| self.mean_row(k)[..nv].to_vec())
            .collect();
        Trajectory::new(self.variable_names.clone(), self.times.clone(), values)
    }

    /// Final-time posterior means of the parameters.
    pub fn final_parameter_means(&self) -> Vec<f64> {
        let nv = self.variable_names.len();
        self.mean_row(self.times.len() - 1)[nv..].to_vec()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        write!(w, "t")?;
        for name in self.variable_names.iter().chain(&self.parameter_names) {
            write!(w, ",{name}_mean,{name}_sd")?;
        }
        writeln!(w, ",ess")?;
        for k in 0..self.times.len() {
            write!(w, "{}", fmt_real(self.times[k]))?;
            for (m, s) in self.mean_row(k).iter().zip(self.sd_row(k)) {
                write!(w, ",{},{}", fmt_real(*m), fmt_real(*s))?;
            }
            writeln!(w, ",{}", fmt_real(self.ess[k]))?;
        }
        Ok(())
    }
}

/// Evidence grouped by grid step: `(observation node, value)` lists.
fn snap_evidence(
    tpl: &DbnTemplate,
    ev: &EvidenceStream,
    grid: &GridSpec,
) -> Result<Vec<Vec<(usize, f64)>>> {
    let n = grid.n_steps();
    let t_last = grid.time(n);
    let slack = 1e-9 * (t_last - grid.t_start).abs().max(1.0);
    let mut by_step = vec![Vec::new(); n + 1];
    for r in ev.records() {
        let node = tpl
            .observation_nodes
            .iter()
            .position(|o| o.variable == r.variable)
            .ok_or_else(|| {
                Error::invalid(
                    "evidence",
                    format!("`{}` is not an observed variable", r.variable),
                )
            })?;
        if r.t < grid.t_start - slack || r.t > t_last + slack {
            return Err(Error::invalid(
                "evidence",
                format!(
                    "t = {} outside the grid span [{}, {}]",
                    r.t, grid.t_start, t_last
                ),
            ));
        }
        let k = (((r.t - grid.t_start) / grid.dt).round().max(0.0) as usize).min(n);
        if (r.t - grid.time(k)).abs() > 0.5 * grid.dt + slack {
            return Err(Error::invalid(
                "evidence",
                format!("t = {} is more than dt/2 from the grid", r.t),
            ));
        }
        by_step[k].push((node, r.value));
    }
    Ok(by_step)
}

struct Recorder {
    result: FilterResult,
}

impl Recorder {
    fn push(&mut self, t: f64, ensemble: &ParticleEnsemble, ess: f64) {
        let (mean, sd) = posterior_summary(ensemble);
        self.result.times.push(t);
        self.result.mean.extend(mean);
        self.result.sd.extend(sd);
        self.result.ess.push(ess);
    }
}

/// Runs the filter over `grid`, assimilating `ev` at the nearest grid times.
pub fn run_filter(
    tpl: &DbnTemplate,
    m: &ModelSpec,
    ev: &EvidenceStream,
    grid: &GridSpec,
    cfg: &FilterConfig,
    inputs: &ModelInputs,
) -> Result<FilterResult> {
    grid.validate()?;
    cfg.validate(tpl.n_vars())?;
    if (grid.dt - tpl.dt).abs() > 1e-12 * grid.dt {
        return Err(Error::invalid(
            "filter",
            format!("grid dt {} differs from template dt {}", grid.dt, tpl.dt),
        ));
    }
    inputs.check_covers(grid.t_start, grid.time(grid.n_steps()))?;
    let evidence = snap_evidence(tpl, ev, grid)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| Error::invalid("filter", format!("thread pool: {e}")))?;
    pool.install(|| filter_loop(tpl, m, &evidence, grid, cfg, inputs))
}

fn filter_loop(
    tpl: &DbnTemplate,
    m: &ModelSpec,
    evidence: &[Vec<(usize, f64)>],
    grid: &GridSpec,
    cfg: &FilterConfig,
    inputs: &ModelInputs,
) -> Result<FilterResult> {
    let n_steps = grid.n_steps();
    let n = cfg.n_particles;
    let names = tpl.variable_names();
    let mut recorder = Recorder {
        result: FilterResult {
            times: Vec::with_capacity(n_steps + 1),
            variable_names: names.clone(),
            parameter_names: tpl.parameter_names(),
            mean: Vec::new(),
            sd: Vec::new(),
            ess: Vec::with_capacity(n_steps + 1),
            assimilated_times: Vec::new(),
            resample_count: 0,
        },
    };

    let mut ensemble = init_particles(tpl, m, cfg, grid.t_start)?;
    for (k, records) in evidence.iter().enumerate() {
        let t = grid.time(k);
        if k > 0 {
            propagate(
                tpl,
                inputs,
                &mut ensemble,
                grid.time(k - 1),
                cfg.seed,
                k as u64,
                &names,
            );
            ensemble.t = t;
            ensemble.normalize()?;
        }
        if records.is_empty() {
            let e = ess(&ensemble.log_weights);
            recorder.push(t, &ensemble, e);
            continue;
        }
        weigh(tpl, &mut ensemble, records);
        ensemble.normalize()?;
        let e = ess(&ensemble.log_weights);
        recorder.push(t, &ensemble, e);
        recorder.result.assimilated_times.push(t);
        if e < cfg.resample_threshold * n as f64 {
            let mut rng = stream(cfg.seed, k as u64, RESAMPLE_LANE);
            ensemble = systematic_resample(&ensemble, &mut rng)?;
            recorder.result.resample_count += 1;
        }
    }
    Ok(recorder.result)
}

fn propagate(
    tpl: &DbnTemplate,
    inputs: &ModelInputs,
    ensemble: &mut ParticleEnsemble,
    t: f64,
    seed: u64,
    step: u64,
    names: &[String],
) {
    let (np, nv) = (ensemble.n_params, ensemble.n_vars);
    let ParticleEnsemble {
        params,
        states,
        log_weights,
        ..
    } = ensemble;
    particle_chunks(params, np, states, nv)
        .zip(log_weights.par_iter_mut())
        .enumerate()
        .for_each_init(
            || Propagator::new(tpl),
            |prop, (i, ((pp, ss), lw))| {
                if *lw == f64::NEG_INFINITY {
                    return;
                }
                let mut rng = stream(seed, step, i as u64);
                if prop.step(tpl, inputs, pp, ss, t, &mut rng, names).is_err() {
                    *lw = f64::NEG_INFINITY;
                }
            },
        );
}

fn weigh(tpl: &DbnTemplate, ensemble: &mut ParticleEnsemble, records: &[(usize, f64)]) {
    let nv = ensemble.n_vars;
    let ParticleEnsemble {
        states,
        log_weights,
        ..
    } = ensemble;
    log_weights.par_iter_mut().enumerate().for_each(|(i, lw)| {
        if *lw == f64::NEG_INFINITY {
            return;
        }
        let state = &states[i * nv..(i + 1) * nv];
        for &(node, value) in records {
            let obs = &tpl.observation_nodes[node];
            *lw += gaussian_logpdf(value, state[obs.variable_index], obs.noise_sd);
        }
        if lw.is_nan() {
            *lw = f64::NEG_INFINITY;
        }
    });
}
