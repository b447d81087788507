//! Dense time-indexed state tables and their CSV form.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Relative slack allowed when a query lands just outside the stored span
/// because of accumulated rounding in grid times.
const SPAN_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    variable_names: Vec<String>,
    times: Vec<f64>,
    /// Row-major `[time][variable]`.
    values: Vec<f64>,
}

impl Trajectory {
    pub fn new(variable_names: Vec<String>, times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let width = variable_names.len();
        if values.len() != times.len() * width {
            return Err(Error::invalid(
                "trajectory",
                format!(
                    "{} values for {} times x {} variables",
                    values.len(),
                    times.len(),
                    width
                ),
            ));
        }
        if times.is_empty() {
            return Err(Error::invalid("trajectory", "no time points"));
        }
        if let Some(w) = times.windows(2).find(|w| !(w[0] < w[1])) {
            return Err(Error::invalid(
                "trajectory",
                format!("times not strictly increasing at {} -> {}", w[0], w[1]),
            ));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            let row = pos / width.max(1);
            return Err(Error::NonFinite {
                t: times[row],
                variable: variable_names[pos % width.max(1)].clone(),
            });
        }
        Ok(Trajectory {
            variable_names,
            times,
            values,
        })
    }

    pub fn variable_names(&self) -> &[String] {
        &self.variable_names
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn width(&self) -> usize {
        self.variable_names.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.width();
        &self.values[i * w..(i + 1) * w]
    }

    pub fn variable_index(&self, name: &str) -> Option<usize> {
        self.variable_names.iter().position(|n| n == name)
    }

    pub fn column(&self, var: usize) -> Vec<f64> {
        (0..self.len()).map(|i| self.row(i)[var]).collect()
    }

    pub fn column_by_name(&self, name: &str) -> Result<Vec<f64>> {
        let idx = self
            .variable_index(name)
            .ok_or_else(|| Error::UnboundSymbol(name.to_string()))?;
        Ok(self.column(idx))
    }

    pub fn first_time(&self) -> f64 {
        self.times[0]
    }

    pub fn last_time(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    /// Locates `t` as `(segment start index, fraction)`.
    fn locate(&self, t: f64) -> Result<(usize, f64)> {
        let (first, last) = (self.first_time(), self.last_time());
        let slack = SPAN_SLACK * (last - first).abs().max(1.0);
        if !(t >= first - slack && t <= last + slack) {
            return Err(Error::invalid(
                "query time",
                format!("t = {t} outside [{first}, {last}]"),
            ));
        }
        let t = t.clamp(first, last);
        let n = self.times.len();
        if n == 1 {
            return Ok((0, 0.0));
        }
        // first index with time > t
        let upper = self.times.partition_point(|&x| x <= t);
        if upper == 0 {
            return Ok((0, 0.0));
        }
        let lo = upper - 1;
        if lo == n - 1 || self.times[lo] == t {
            return Ok((lo, 0.0));
        }
        let frac = (t - self.times[lo]) / (self.times[lo + 1] - self.times[lo]);
        Ok((lo, frac))
    }

    /// Linearly interpolated value of one variable.
    pub fn value_at(&self, var: usize, t: f64) -> Result<f64> {
        let (lo, frac) = self.locate(t)?;
        let a = self.row(lo)[var];
        if frac == 0.0 {
            return Ok(a);
        }
        let b = self.row(lo + 1)[var];
        Ok(a + frac * (b - a))
    }

    /// Interpolates a subset of columns into `out`.
    pub fn values_at(&self, columns: &[usize], t: f64, out: &mut [f64]) -> Result<()> {
        let (lo, frac) = self.locate(t)?;
        for (slot, &c) in out.iter_mut().zip(columns) {
            let a = self.row(lo)[c];
            *slot = if frac == 0.0 {
                a
            } else {
                a + frac * (self.row(lo + 1)[c] - a)
            };
        }
        Ok(())
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        write!(w, "t")?;
        for name in &self.variable_names {
            write!(w, ",{name}")?;
        }
        writeln!(w)?;
        for (i, t) in self.times.iter().enumerate() {
            write!(w, "{}", fmt_real(*t))?;
            for v in self.row(i) {
                write!(w, ",{}", fmt_real(*v))?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(file);
        let headers = reader
            .headers()
            .map_err(|e| Error::format(path, e.to_string()))?
            .clone();
        if headers.get(0) != Some("t") {
            return Err(Error::format(path, "first column must be `t`"));
        }
        let names: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
        let mut times = Vec::new();
        let mut values = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let line = i + 2;
            let record = record.map_err(|e| Error::format(path, format!("line {line}: {e}")))?;
            if record.len() != names.len() + 1 {
                return Err(Error::format(
                    path,
                    format!("line {line}: expected {} fields", names.len() + 1),
                ));
            }
            for (j, field) in record.iter().enumerate() {
                let v: f64 = field.parse().map_err(|_| {
                    Error::format(path, format!("line {line}: `{field}` is not a number"))
                })?;
                if j == 0 {
                    times.push(v);
                } else {
                    values.push(v);
                }
            }
        }
        Trajectory::new(names, times, values).map_err(|e| Error::format(path, e.to_string()))
    }
}

/// Seventeen significant digits, enough to round-trip any f64.
pub fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

/// Linear interpolation of every variable at `query_times`.
pub fn resample_trajectory(traj: &Trajectory, query_times: &[f64]) -> Result<Trajectory> {
    let all: Vec<usize> = (0..traj.width()).collect();
    let mut values = vec![0.0; query_times.len() * traj.width()];
    for (i, &t) in query_times.iter().enumerate() {
        traj.values_at(&all, t, &mut values[i * all.len()..(i + 1) * all.len()])?;
    }
    Trajectory::new(traj.variable_names.clone(), query_times.to_vec(), values)
}
