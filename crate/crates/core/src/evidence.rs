//! Evidence streams: loading, saving, and sampling sparse observations from
//! a benchmark trajectory.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajectory::{fmt_real, Trajectory};

#[derive(Debug, Clone, PartialEq)]
pub struct EvidenceRecord {
    pub t: f64,
    pub variable: String,
    pub value: f64,
}

/// Observation records sorted by time.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvidenceStream {
    records: Vec<EvidenceRecord>,
}

impl EvidenceStream {
    /// Sorts by time (stable) and validates.
    pub fn new(mut records: Vec<EvidenceRecord>) -> Result<Self> {
        if let Some(r) = records
            .iter()
            .find(|r| !r.t.is_finite() || !r.value.is_finite())
        {
            return Err(Error::invalid(
                "evidence",
                format!("non-finite record ({}, {}, {})", r.t, r.variable, r.value),
            ));
        }
        records.sort_by(|a, b| a.t.total_cmp(&b.t));
        for (i, r) in records.iter().enumerate() {
            let dup = records[i + 1..]
                .iter()
                .take_while(|o| o.t == r.t)
                .any(|o| o.variable == r.variable);
            if dup {
                return Err(Error::invalid(
                    "evidence",
                    format!("duplicate record for `{}` at t = {}", r.variable, r.t),
                ));
            }
        }
        Ok(EvidenceStream { records })
    }

    pub fn empty() -> Self {
        EvidenceStream::default()
    }

    pub fn records(&self) -> &[EvidenceRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn times(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.t).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "t,variable,value")?;
        for r in &self.records {
            writeln!(w, "{},{},{}", fmt_real(r.t), r.variable, fmt_real(r.value))?;
        }
        Ok(())
    }
}

pub fn load_evidence(path: &Path) -> Result<EvidenceStream> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers = reader
        .headers()
        .map_err(|e| Error::format(path, e.to_string()))?;
    if headers.iter().collect::<Vec<_>>() != ["t", "variable", "value"] {
        return Err(Error::format(path, "header must be `t,variable,value`"));
    }
    let mut records = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| Error::format(path, format!("line {line}: {e}")))?;
        if row.len() != 3 {
            return Err(Error::format(
                path,
                format!("line {line}: expected 3 fields"),
            ));
        }
        let number = |field: &str| {
            field
                .parse::<f64>()
                .map_err(|_| Error::format(path, format!("line {line}: `{field}` is not a number")))
        };
        let t = number(&row[0])?;
        let value = number(&row[2])?;
        if !t.is_finite() || !value.is_finite() {
            return Err(Error::format(
                path,
                format!("line {line}: non-finite value"),
            ));
        }
        if row[1].is_empty() {
            return Err(Error::format(
                path,
                format!("line {line}: empty variable name"),
            ));
        }
        records.push(EvidenceRecord {
            t,
            variable: row[1].to_string(),
            value,
        });
    }
    EvidenceStream::new(records).map_err(|e| Error::format(path, e.to_string()))
}

/// Where and what to observe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SamplingSchedule {
    Explicit {
        times: Vec<f64>,
        variables: Vec<String>,
        /// Seeds the observation noise, if any.
        #[serde(default)]
        seed: u64,
    },
    UniformRandom {
        n: usize,
        seed: u64,
        variables: Vec<String>,
    },
    /// `n` times with geometrically growing gaps, dense near the start.
    GeometricFrontLoaded {
        n: usize,
        ratio: f64,
        #[serde(default)]
        seed: u64,
        variables: Vec<String>,
    },
}

impl SamplingSchedule {
    pub fn variables(&self) -> &[String] {
        match self {
            SamplingSchedule::Explicit { variables, .. }
            | SamplingSchedule::UniformRandom { variables, .. }
            | SamplingSchedule::GeometricFrontLoaded { variables, .. } => variables,
        }
    }

    fn seed(&self) -> u64 {
        match self {
            SamplingSchedule::Explicit { seed, .. }
            | SamplingSchedule::UniformRandom { seed, .. }
            | SamplingSchedule::GeometricFrontLoaded { seed, .. } => *seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.variables().is_empty() {
            return Err(Error::invalid("schedule", "no variables to observe"));
        }
        match self {
            SamplingSchedule::Explicit { times, .. } => {
                if times.is_empty() {
                    return Err(Error::invalid("schedule", "no times"));
                }
                if times.windows(2).any(|w| !(w[0] < w[1])) {
                    return Err(Error::invalid(
                        "schedule",
                        "times must be strictly increasing",
                    ));
                }
            }
            SamplingSchedule::UniformRandom { n, .. } => {
                if *n == 0 {
                    return Err(Error::invalid("schedule", "n must be >= 1"));
                }
            }
            SamplingSchedule::GeometricFrontLoaded { n, ratio, .. } => {
                if *n == 0 {
                    return Err(Error::invalid("schedule", "n must be >= 1"));
                }
                if !(*ratio > 1.0 && ratio.is_finite()) {
                    return Err(Error::invalid("schedule", "ratio must be > 1"));
                }
            }
        }
        Ok(())
    }

    /// Observation times on `[t0, t1]`, ascending.
    pub fn times(&self, t0: f64, t1: f64) -> Result<Vec<f64>> {
        self.validate()?;
        let span = t1 - t0;
        let times = match self {
            SamplingSchedule::Explicit { times, .. } => times.clone(),
            SamplingSchedule::UniformRandom { n, seed, .. } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let mut ts: Vec<f64> = (0..*n).map(|_| t0 + span * rng.random::<f64>()).collect();
                ts.sort_by(f64::total_cmp);
                ts
            }
            SamplingSchedule::GeometricFrontLoaded { n, ratio, .. } => {
                let denom = ratio.powi(*n as i32) - 1.0;
                (1..=*n)
                    .map(|k| {
                        if k == *n {
                            t1
                        } else {
                            t0 + span * (ratio.powi(k as i32) - 1.0) / denom
                        }
                    })
                    .collect()
            }
        };
        Ok(times)
    }
}

/// Reads `truth` at the schedule's times and adds Normal(0, noise_sd) noise.
pub fn sample_evidence(
    truth: &Trajectory,
    schedule: &SamplingSchedule,
    noise_sd: f64,
) -> Result<EvidenceStream> {
    if !(noise_sd >= 0.0 && noise_sd.is_finite()) {
        return Err(Error::invalid("evidence", "noise_sd must be >= 0"));
    }
    let (t0, t1) = (truth.first_time(), truth.last_time());
    let times = schedule.times(t0, t1)?;
    if let Some(t) = times.iter().find(|&&t| t < t0 || t > t1) {
        return Err(Error::invalid(
            "schedule",
            format!("time {t} outside the trajectory span [{t0}, {t1}]"),
        ));
    }
    let columns = schedule
        .variables()
        .iter()
        .map(|v| {
            truth
                .variable_index(v)
                .ok_or_else(|| Error::invalid("schedule", format!("`{v}` not in trajectory")))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed() ^ 0x9e37_79b9_7f4a_7c15);
    let mut records = Vec::with_capacity(times.len() * columns.len());
    for &t in &times {
        for (name, &c) in schedule.variables().iter().zip(&columns) {
            let mut value = truth.value_at(c, t)?;
            if noise_sd > 0.0 {
                let z: f64 = rng.sample(StandardNormal);
                value += noise_sd * z;
            }
            records.push(EvidenceRecord {
                t,
                variable: name.clone(),
                value,
            });
        }
    }
    EvidenceStream::new(records)
}
