//! The simulate / filter / validate commands as library functions.

use std::path::{Path, PathBuf};

use odedbn_core::{
    compile_dbn, compute_metrics, integrate, load_evidence, parse_model, run_filter,
    sample_evidence, DbnTemplate, Error, EvidenceStream, FilterResult, Method, MetricReport,
    ModelInputs, ModelSpec, Result, Trajectory,
};

use crate::config::{EvidenceSource, RunConfig, TruthSource};

/// Refinement of the filter grid used for the RK4 reference.
pub const TRUTH_REFINEMENT: usize = 10;

pub const TRUTH_FILE: &str = "truth.csv";
pub const EVIDENCE_FILE: &str = "evidence.csv";
pub const RESULT_FILE: &str = "result.csv";
pub const METRICS_FILE: &str = "metrics.json";

pub fn load_model(path: &Path) -> Result<ModelSpec> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_model(&text)
}

/// A run config with its model and input series loaded.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: RunConfig,
    pub model: ModelSpec,
    pub inputs: ModelInputs,
}

/// Everything one filter run produces.
#[derive(Debug, Clone)]
pub struct FilterOutcome {
    pub truth: Trajectory,
    pub evidence: EvidenceStream,
    pub result: FilterResult,
    pub metrics: MetricReport,
}

impl Experiment {
    pub fn load(config_path: &Path) -> Result<Self> {
        Self::from_config(RunConfig::load(config_path)?)
    }

    pub fn from_config(config: RunConfig) -> Result<Self> {
        let model = load_model(&config.model_path)?;
        let series = config
            .inputs
            .as_deref()
            .map(Trajectory::read_csv)
            .transpose()?;
        let inputs = ModelInputs::bind(&model, series)?;
        Ok(Experiment {
            config,
            model,
            inputs,
        })
    }

    /// `true_params` in declaration order; every parameter must be given.
    pub fn true_params(&self) -> Result<Vec<f64>> {
        let given = &self.config.true_params;
        if let Some(extra) = given
            .keys()
            .find(|k| self.model.parameter_index(k).is_none())
        {
            return Err(Error::invalid(
                "true_params",
                format!("`{extra}` is not a parameter of `{}`", self.model.name),
            ));
        }
        self.model
            .parameters
            .iter()
            .map(|p| {
                given.get(&p.name).copied().ok_or_else(|| {
                    Error::invalid("true_params", format!("missing value for `{}`", p.name))
                })
            })
            .collect()
    }

    /// The reference trajectory on the filter grid.
    pub fn truth(&self) -> Result<Trajectory> {
        match &self.config.truth {
            TruthSource::File { path } => Trajectory::read_csv(path),
            TruthSource::GenerateRk4 => {
                let grid = &self.config.grid;
                grid.validate()?;
                let fine = integrate(
                    &self.model,
                    &self.true_params()?,
                    &grid.refined(TRUTH_REFINEMENT),
                    Method::Rk4,
                    &self.inputs,
                )?;
                let width = fine.width();
                let n = grid.n_steps();
                let mut values = Vec::with_capacity((n + 1) * width);
                for k in 0..=n {
                    values.extend_from_slice(fine.row(k * TRUTH_REFINEMENT));
                }
                Trajectory::new(fine.variable_names().to_vec(), grid.times(), values)
            }
        }
    }

    pub fn evidence(&self, truth: &Trajectory) -> Result<EvidenceStream> {
        match &self.config.evidence {
            EvidenceSource::File { path } => load_evidence(path),
            EvidenceSource::Sample { schedule, noise_sd } => {
                sample_evidence(truth, schedule, *noise_sd)
            }
        }
    }

    pub fn template(&self) -> Result<DbnTemplate> {
        compile_dbn(&self.model, self.config.grid.dt, &self.config.noise)
    }

    pub fn metric_variable(&self) -> Result<String> {
        if let Some(v) = &self.config.metric_variable {
            if self.model.variable_index(v).is_none() {
                return Err(Error::invalid(
                    "metric_variable",
                    format!("`{v}` is not a variable of `{}`", self.model.name),
                ));
            }
            return Ok(v.clone());
        }
        self.model
            .observations
            .first()
            .map(|o| o.variable.clone())
            .ok_or_else(|| Error::invalid("metric_variable", "model observes no variable"))
    }

    /// Runs the filter and scores its mean trajectory on every grid time.
    pub fn run(&self) -> Result<FilterOutcome> {
        let truth = self.truth()?;
        let evidence = self.evidence(&truth)?;
        let tpl = self.template()?;
        let variable = self.metric_variable()?;
        let result = run_filter(
            &tpl,
            &self.model,
            &evidence,
            &self.config.grid,
            &self.config.filter,
            &self.inputs,
        )?;
        let metrics =
            compute_metrics(&result.mean_trajectory()?, &truth, &variable, &result.times)?;
        Ok(FilterOutcome {
            truth,
            evidence,
            result,
            metrics,
        })
    }

    fn output_dir(&self) -> Result<&Path> {
        let dir = &self.config.output_dir;
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(dir)
    }
}

/// Writes the reference trajectory; returns its path.
pub fn cmd_simulate(exp: &Experiment) -> Result<PathBuf> {
    let truth = exp.truth()?;
    let path = exp.output_dir()?.join(TRUTH_FILE);
    truth.write_csv(&path)?;
    Ok(path)
}

/// Runs the filter and writes truth, evidence, result and metrics files.
pub fn cmd_filter(exp: &Experiment) -> Result<FilterOutcome> {
    let outcome = exp.run()?;
    let dir = exp.output_dir()?;
    outcome.truth.write_csv(&dir.join(TRUTH_FILE))?;
    outcome.evidence.save(&dir.join(EVIDENCE_FILE))?;
    outcome.result.write_csv(&dir.join(RESULT_FILE))?;
    let metrics = dir.join(METRICS_FILE);
    std::fs::write(&metrics, outcome.metrics.to_json()).map_err(|e| Error::io(&metrics, e))?;
    Ok(outcome)
}

/// Parses and compiles a model; returns a report with its parent sets.
pub fn cmd_validate(model_path: &Path) -> Result<String> {
    use std::fmt::Write;
    let m = load_model(model_path)?;
    let tpl = compile_dbn(&m, 1.0, &Default::default())?;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "model `{}`: {} variables, {} parameters, {} inputs, {} observed",
        m.name,
        m.variables.len(),
        m.parameters.len(),
        m.inputs.len(),
        m.observations.len()
    );
    let _ = writeln!(out, "parent sets:");
    for v in &tpl.variable_nodes {
        let _ = writeln!(out, "  {} <- {{{}}}", v.name, v.parents.join(", "));
    }
    for p in &tpl.parameter_nodes {
        let _ = writeln!(out, "  {} <- {{{}}}", p.name, p.name);
    }
    for o in &tpl.observation_nodes {
        let _ = writeln!(
            out,
            "  obs({}) <- {{{}}}  noise_sd = {}",
            o.variable, o.variable, o.noise_sd
        );
    }
    Ok(out)
}
