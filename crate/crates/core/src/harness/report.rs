//! Report emission: per-metric CSVs, hand-rolled SVG polylines and the
//! aggregate summary.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::metrics::CumulativeCurve;
use crate::error::{Error, Result};

/// Per-trial values of one metric plus recomputable aggregates.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub metric: String,
    pub per_trial: Vec<f64>,
}

impl EvalReport {
    pub fn new(metric: impl Into<String>, per_trial: Vec<f64>) -> Result<Self> {
        if per_trial.is_empty() {
            return Err(Error::invalid("report needs at least one trial"));
        }
        if per_trial.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("report trial values"));
        }
        Ok(Self { metric: metric.into(), per_trial })
    }

    pub fn mean(&self) -> f64 {
        self.per_trial.iter().sum::<f64>() / self.per_trial.len() as f64
    }

    /// Standard error of the mean (0 for a single trial).
    pub fn standard_error(&self) -> f64 {
        let n = self.per_trial.len();
        if n < 2 {
            return 0.0;
        }
        let mean = self.mean();
        let var = self
            .per_trial
            .iter()
            .map(|v| (v - mean) * (v - mean))
            .sum::<f64>()
            / (n - 1) as f64;
        (var / n as f64).sqrt()
    }
}

/// CSV layout: `trial,value` rows followed by `mean` and `se` rows.
pub fn write_metric_csv(report: &EvalReport, path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "trial,value")?;
    for (i, v) in report.per_trial.iter().enumerate() {
        writeln!(out, "{i},{v}")?;
    }
    writeln!(out, "mean,{}", report.mean())?;
    writeln!(out, "se,{}", report.standard_error())?;
    Ok(())
}

pub fn write_curve_csv(curve: &CumulativeCurve, path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "threshold,fraction")?;
    for (t, f) in &curve.points {
        writeln!(out, "{t},{f}")?;
    }
    Ok(())
}

/// Minimal standalone SVG: axes plus one step polyline.
pub fn write_curve_svg(curve: &CumulativeCurve, title: &str, path: impl AsRef<Path>) -> Result<()> {
    const W: f64 = 480.0;
    const H: f64 = 320.0;
    const M: f64 = 40.0;
    let t_max = curve.points.last().map_or(1.0, |p| p.0.max(1e-12));
    let x_of = |t: f64| M + (W - 2.0 * M) * (t / t_max);
    let y_of = |f: f64| H - M - (H - 2.0 * M) * f;

    let mut pts = Vec::with_capacity(curve.points.len() + 1);
    pts.push(format!("{:.2},{:.2}", x_of(0.0), y_of(0.0)));
    let mut prev_frac = 0.0;
    for &(t, f) in &curve.points {
        pts.push(format!("{:.2},{:.2}", x_of(t), y_of(prev_frac)));
        pts.push(format!("{:.2},{:.2}", x_of(t), y_of(f)));
        prev_frac = f;
    }

    let mut out = BufWriter::new(File::create(path)?);
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    )?;
    writeln!(out, r#"  <rect width="{W}" height="{H}" fill="white"/>"#)?;
    writeln!(
        out,
        r#"  <line x1="{M}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#,
        H - M,
        W - M,
        H - M
    )?;
    writeln!(out, r#"  <line x1="{M}" y1="{M}" x2="{M}" y2="{}" stroke="black"/>"#, H - M)?;
    writeln!(
        out,
        r#"  <text x="{}" y="20" text-anchor="middle" font-family="monospace" font-size="12">{}</text>"#,
        W / 2.0,
        title
    )?;
    writeln!(
        out,
        r#"  <polyline points="{}" fill="none" stroke="steelblue" stroke-width="1.5"/>"#,
        pts.join(" ")
    )?;
    writeln!(out, "</svg>")?;
    Ok(())
}
