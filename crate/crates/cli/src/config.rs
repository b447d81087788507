//! JSON run configuration for one benchmark experiment.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use odedbn_core::{Error, FilterConfig, GridSpec, NoiseConfig, Result, SamplingSchedule};
use serde::Deserialize;

/// Where the reference trajectory comes from.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TruthSource {
    /// RK4 at a tenth of the filter step, from `true_params`.
    GenerateRk4,
    File {
        path: PathBuf,
    },
}

/// Where the evidence stream comes from.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EvidenceSource {
    File {
        path: PathBuf,
    },
    /// Read from the truth at the schedule's times.
    Sample {
        schedule: SamplingSchedule,
        #[serde(default)]
        noise_sd: f64,
    },
}

/// Relative paths are resolved against the directory holding the config file.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model_path: PathBuf,
    pub grid: GridSpec,
    #[serde(default)]
    pub filter: FilterConfig,
    pub truth: TruthSource,
    pub evidence: EvidenceSource,
    /// Parameter values used to generate the truth, by name.
    #[serde(default)]
    pub true_params: BTreeMap<String, f64>,
    pub output_dir: PathBuf,
    /// Time-series CSV holding the model's exogenous input columns.
    #[serde(default)]
    pub inputs: Option<PathBuf>,
    #[serde(default)]
    pub noise: NoiseConfig,
    /// Variable scored in the metrics report; defaults to the first observed one.
    #[serde(default)]
    pub metric_variable: Option<String>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json(&text).map_err(|e| Error::format(path, e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::invalid("run config", e.to_string()))?;
        cfg.grid.validate()?;
        Ok(cfg)
    }

    /// Makes every relative path relative to `base` instead.
    pub fn resolve_paths(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        join(&mut self.model_path);
        join(&mut self.output_dir);
        if let Some(p) = &mut self.inputs {
            join(p);
        }
        if let TruthSource::File { path } = &mut self.truth {
            join(path);
        }
        if let EvidenceSource::File { path } = &mut self.evidence {
            join(path);
        }
    }
}
