//! SVG rendering of a filter result: truth, posterior mean, ±1 sd band and evidence.

use std::fmt::Write;
use std::path::Path;

use odedbn_core::{load_evidence, Error, EvidenceStream, Result, Trajectory};

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 55.0;
/// Approximate number of tick intervals per axis.
const TICKS: usize = 5;

/// The series drawn for one variable.
#[derive(Debug, Clone)]
pub struct PlotData {
    pub variable: String,
    pub times: Vec<f64>,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    pub truth_times: Vec<f64>,
    pub truth: Vec<f64>,
    pub evidence: Vec<(f64, f64)>,
}

impl PlotData {
    /// Collects `variable` from a result table (`<var>_mean`, `<var>_sd` columns),
    /// a truth trajectory and an optional evidence stream.
    pub fn collect(
        result: &Trajectory,
        truth: &Trajectory,
        evidence: Option<&EvidenceStream>,
        variable: &str,
    ) -> Result<Self> {
        let column = |traj: &Trajectory, name: &str, role: &str| {
            traj.column_by_name(name).map_err(|_| {
                Error::invalid("plot", format!("`{name}` not found in the {role} file"))
            })
        };
        Ok(PlotData {
            variable: variable.to_string(),
            times: result.times().to_vec(),
            mean: column(result, &format!("{variable}_mean"), "result")?,
            sd: column(result, &format!("{variable}_sd"), "result")?,
            truth_times: truth.times().to_vec(),
            truth: column(truth, variable, "truth")?,
            evidence: evidence
                .map(|ev| {
                    ev.records()
                        .iter()
                        .filter(|r| r.variable == variable)
                        .map(|r| (r.t, r.value))
                        .collect()
                })
                .unwrap_or_default(),
        })
    }

    fn x_range(&self) -> (f64, f64) {
        let all = self.times.iter().chain(&self.truth_times);
        widen(
            min_max(all.copied().chain(self.evidence.iter().map(|e| e.0))),
            0.0,
        )
    }

    fn y_range(&self) -> (f64, f64) {
        let band = self
            .mean
            .iter()
            .zip(&self.sd)
            .flat_map(|(m, s)| [m - s, m + s]);
        let all = band
            .chain(self.truth.iter().copied())
            .chain(self.evidence.iter().map(|e| e.1));
        widen(min_max(all), 0.05)
    }
}

fn min_max(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    })
}

/// Pads a range by `frac` of its span; a zero-width range gets unit padding.
fn widen((lo, hi): (f64, f64), frac: f64) -> (f64, f64) {
    if !(lo.is_finite() && hi.is_finite()) {
        return (0.0, 1.0);
    }
    let span = hi - lo;
    if span <= 0.0 {
        let pad = if lo == 0.0 { 1.0 } else { 0.1 * lo.abs() };
        return (lo - pad, hi + pad);
    }
    (lo - frac * span, hi + frac * span)
}

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn px(&self, t: f64) -> f64 {
        LEFT + (t - self.x.0) / (self.x.1 - self.x.0) * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, v: f64) -> f64 {
        HEIGHT - BOTTOM - (v - self.y.0) / (self.y.1 - self.y.0) * (HEIGHT - TOP - BOTTOM)
    }

    fn points(&self, ts: &[f64], vs: &[f64]) -> String {
        ts.iter()
            .zip(vs)
            .map(|(&t, &v)| format!("{:.2},{:.2}", self.px(t), self.py(v)))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Round tick positions (steps of 1, 2 or 5 times a power of ten) inside `range`.
fn nice_ticks((lo, hi): (f64, f64)) -> Vec<f64> {
    let raw = (hi - lo) / TICKS as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|&s| s >= raw)
        .unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|i| i as f64 * step).collect()
}

fn tick_label(v: f64) -> String {
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

pub fn render_svg(data: &PlotData) -> String {
    let f = Frame {
        x: data.x_range(),
        y: data.y_range(),
    };
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);

    let (x0, x1) = (LEFT, WIDTH - RIGHT);
    let (y0, y1) = (HEIGHT - BOTTOM, TOP);
    let _ = writeln!(
        s,
        r#"<g id="axes" stroke="black"><line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}"/><line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}"/></g>"#
    );
    let _ = writeln!(s, r#"<g id="ticks">"#);
    for t in nice_ticks(f.x) {
        let px = f.px(t);
        let _ = writeln!(
            s,
            r#"<line x1="{px:.2}" y1="{y0}" x2="{px:.2}" y2="{:.2}" stroke="black"/><text x="{px:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            y0 + 5.0,
            y0 + 20.0,
            tick_label(t)
        );
    }
    for v in nice_ticks(f.y) {
        let py = f.py(v);
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{py:.2}" x2="{x0}" y2="{py:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            x0 - 5.0,
            x0 - 8.0,
            py + 4.0,
            tick_label(v)
        );
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(
        s,
        r#"<text id="x-label" x="{:.2}" y="{:.2}" text-anchor="middle">time</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text id="y-label" x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(&data.variable)
    );

    let upper: Vec<f64> = data.mean.iter().zip(&data.sd).map(|(m, s)| m + s).collect();
    let lower: Vec<f64> = data.mean.iter().zip(&data.sd).map(|(m, s)| m - s).collect();
    let rev_times: Vec<f64> = data.times.iter().rev().copied().collect();
    let rev_lower: Vec<f64> = lower.into_iter().rev().collect();
    let _ = writeln!(
        s,
        r#"<polygon id="sd-band" fill="steelblue" fill-opacity="0.25" stroke="none" points="{} {}"/>"#,
        f.points(&data.times, &upper),
        f.points(&rev_times, &rev_lower)
    );
    let _ = writeln!(
        s,
        r#"<polyline id="truth" fill="none" stroke="black" stroke-width="1.5" stroke-dasharray="6 4" points="{}"/>"#,
        f.points(&data.truth_times, &data.truth)
    );
    let _ = writeln!(
        s,
        r#"<polyline id="mean" fill="none" stroke="steelblue" stroke-width="2" points="{}"/>"#,
        f.points(&data.times, &data.mean)
    );
    let _ = writeln!(s, r#"<g id="evidence" fill="gray">"#);
    for &(t, v) in &data.evidence {
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="4"/>"#,
            f.px(t),
            f.py(v)
        );
    }
    let _ = writeln!(s, "</g>");
    s.push_str("</svg>\n");
    s
}

/// Reads the result, truth and optional evidence files and writes the SVG.
pub fn cmd_plot(
    result: &Path,
    truth: &Path,
    evidence: Option<&Path>,
    variable: &str,
    out: &Path,
) -> Result<()> {
    let result = Trajectory::read_csv(result)?;
    let truth = Trajectory::read_csv(truth)?;
    let evidence = evidence.map(load_evidence).transpose()?;
    let data = PlotData::collect(&result, &truth, evidence.as_ref(), variable)?;
    std::fs::write(out, render_svg(&data)).map_err(|e| Error::io(out, e))
}
