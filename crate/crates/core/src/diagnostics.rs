//! Model-checking data: normal quantile-quantile points, residuals against
//! fitted values, a residual histogram and the fitted-vs-score scatter.
//!
//! Everything here is plot-ready data; rendering is left to other tools,
//! apart from a bare SVG scatter.

use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lme::LmeFit;
use crate::numeric::{mean_sd, quantile_sorted, CompensatedSum};
use crate::ranking::{pearson, FittedValues};
use crate::special::normal_quantile;

/// Bin cap for the Freedman-Diaconis histogram.
pub const MAX_BINS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QqPoint {
    pub theoretical: f64,
    pub empirical: f64,
}

/// Standardized, sorted residuals against standard normal quantiles at
/// `(i - 0.5) / n`.
pub fn qq_data(residuals: &[f64]) -> Result<Vec<QqPoint>> {
    let n = residuals.len();
    if n < 3 {
        return Err(Error::Invalid(format!("too few points for a quantile plot: {n}")));
    }
    let (mean, sd) = mean_sd(residuals);
    if !(sd > 0.0) {
        return Err(Error::Statistical("constant residuals".into()));
    }
    let mut z: Vec<f64> = residuals.iter().map(|r| (r - mean) / sd).collect();
    z.sort_by(f64::total_cmp);
    Ok(z.into_iter()
        .enumerate()
        .map(|(i, e)| QqPoint {
            theoretical: normal_quantile((i as f64 + 0.5) / n as f64),
            empirical: e,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `counts.len() + 1` ascending edges.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub rule: String,
}

impl Histogram {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

/// Freedman-Diaconis binning (width `2 IQR n^-1/3`), capped at
/// [`MAX_BINS`]; Sturges' bin count when the IQR is zero.
pub fn histogram(values: &[f64]) -> Result<Histogram> {
    if values.is_empty() {
        return Err(Error::Invalid("histogram of no values".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invalid("histogram of non-finite values".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let (lo, hi) = (sorted[0], sorted[n - 1]);
    let range = hi - lo;
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let (bins, rule) = if range == 0.0 {
        (1, "single")
    } else if iqr > 0.0 {
        let width = 2.0 * iqr / (n as f64).cbrt();
        (((range / width).ceil() as usize).clamp(1, MAX_BINS), "freedman-diaconis")
    } else {
        (((n as f64).log2().ceil() as usize + 1).min(MAX_BINS), "sturges")
    };
    let (lo, width) = if range == 0.0 {
        (lo - 0.5, 1.0)
    } else {
        (lo, range / bins as f64)
    };
    let edges: Vec<f64> = (0..=bins).map(|i| lo + width * i as f64).collect();
    let mut counts = vec![0; bins];
    for &v in &sorted {
        let k = (((v - lo) / width).floor() as usize).min(bins - 1);
        counts[k] += 1;
    }
    Ok(Histogram {
        edges,
        counts,
        rule: format!("{rule}, cap {MAX_BINS}"),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualSummary {
    pub n: usize,
    pub residual_sd: f64,
    pub speaker_sd: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
    pub min: f64,
    pub max: f64,
}

/// Moment summary of the conditional residuals. Skewness and kurtosis use
/// population (biased) central moments.
pub fn residual_summary(fit: &LmeFit) -> ResidualSummary {
    let r = &fit.residuals;
    let n = r.len() as f64;
    let (mean, sd) = mean_sd(r);
    let (mut m2, mut m3, mut m4) = (CompensatedSum::new(), CompensatedSum::new(), CompensatedSum::new());
    for &x in r {
        let d = x - mean;
        m2.add(d * d);
        m3.add(d * d * d);
        m4.add(d * d * d * d);
    }
    let (m2, m3, m4) = (m2.value() / n, m3.value() / n, m4.value() / n);
    let (skewness, excess_kurtosis) = if m2 > 0.0 {
        (m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0)
    } else {
        (0.0, 0.0)
    };
    ResidualSummary {
        n: r.len(),
        residual_sd: sd,
        speaker_sd: fit.sigma_b2.sqrt(),
        skewness,
        excess_kurtosis,
        min: r.iter().copied().fold(f64::INFINITY, f64::min),
        max: r.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scatter {
    /// `(fitted, score)` pairs in design row order.
    pub points: Vec<(f64, f64)>,
    pub r: f64,
}

pub fn scatter_and_r(fit: &LmeFit, which: FittedValues) -> Result<Scatter> {
    let fitted = which.select(fit);
    let r = pearson(fitted, &fit.response)?;
    Ok(Scatter {
        points: fitted.iter().copied().zip(fit.response.iter().copied()).collect(),
        r,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticBundle {
    pub qq: Vec<QqPoint>,
    /// `(fitted, residual)` pairs.
    pub residual_vs_fitted: Vec<(f64, f64)>,
    pub histogram: Histogram,
    pub scatter: Scatter,
    pub summary: ResidualSummary,
}

pub fn diagnose(fit: &LmeFit, which: FittedValues) -> Result<DiagnosticBundle> {
    Ok(DiagnosticBundle {
        qq: qq_data(&fit.residuals)?,
        residual_vs_fitted: fit
            .fitted
            .iter()
            .copied()
            .zip(fit.residuals.iter().copied())
            .collect(),
        histogram: histogram(&fit.residuals)?,
        scatter: scatter_and_r(fit, which)?,
        summary: residual_summary(fit),
    })
}

fn csv_err(e: csv::Error) -> Error {
    Error::Invalid(format!("csv output: {e}"))
}

fn write_pairs<W: Write>(w: W, header: [&str; 2], rows: impl Iterator<Item = (f64, f64)>) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(header).map_err(csv_err)?;
    for (a, b) in rows {
        out.write_record([a.to_string(), b.to_string()]).map_err(csv_err)?;
    }
    out.flush().map_err(|e| Error::Invalid(format!("csv output: {e}")))
}

pub fn write_qq<W: Write>(w: W, qq: &[QqPoint]) -> Result<()> {
    write_pairs(w, ["theoretical", "empirical"], qq.iter().map(|p| (p.theoretical, p.empirical)))
}

pub fn write_residual_vs_fitted<W: Write>(w: W, pairs: &[(f64, f64)]) -> Result<()> {
    write_pairs(w, ["fitted", "residual"], pairs.iter().copied())
}

pub fn write_scatter<W: Write>(w: W, scatter: &Scatter) -> Result<()> {
    write_pairs(w, ["fitted", "score"], scatter.points.iter().copied())
}

pub fn write_histogram<W: Write>(w: W, h: &Histogram) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["lower", "upper", "count"]).map_err(csv_err)?;
    for (i, c) in h.counts.iter().enumerate() {
        out.write_record([h.edges[i].to_string(), h.edges[i + 1].to_string(), c.to_string()])
            .map_err(csv_err)?;
    }
    out.flush().map_err(|e| Error::Invalid(format!("csv output: {e}")))
}

/// Minimal scatter plot of fitted values against scores with the
/// correlation in the corner.
pub fn scatter_svg(scatter: &Scatter) -> String {
    const W: f64 = 480.0;
    const H: f64 = 480.0;
    const M: f64 = 48.0;
    let bounds = |sel: fn(&(f64, f64)) -> f64| {
        let (lo, hi) = scatter
            .points
            .iter()
            .map(sel)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        if hi > lo {
            (lo, hi)
        } else {
            (lo - 1.0, hi + 1.0)
        }
    };
    let (x0, x1) = bounds(|p| p.0);
    let (y0, y1) = bounds(|p| p.1);
    let px = |x: f64| M + (x - x0) / (x1 - x0) * (W - 2.0 * M);
    let py = |y: f64| H - M - (y - y0) / (y1 - y0) * (H - 2.0 * M);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{M}" y="{M}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        W - 2.0 * M,
        H - 2.0 * M
    );
    for &(x, y) in &scatter.points {
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="1.5" fill="steelblue" fill-opacity="0.4"/>"#,
            px(x),
            py(y)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-family="sans-serif" font-size="14">r = {:.2}</text>"#,
        M + 8.0,
        M + 20.0,
        scatter.r
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle">fitted ({x0:.1} to {x1:.1})</text>"#,
        W / 2.0,
        H - 14.0
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle" transform="rotate(-90 14 {})">score ({y0:.1} to {y1:.1})</text>"#,
        H / 2.0,
        H / 2.0
    );
    s.push_str("</svg>\n");
    s
}
