//! Ranking of mismatch predictors by how well models built on them track
//! the observed scores (Pearson correlation of fitted values and scores).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lme::{fit, Criterion, LmeFit, LmeSpec};
use crate::numeric::CompensatedSum;
use crate::predictors::{group_predictors, DesignContext, Predictor};

/// Product-moment correlation of two equally long vectors.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Invalid(format!(
            "length mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 2 {
        return Err(Error::Invalid("undefined correlation: fewer than 2 points".into()));
    }
    let n = a.len() as f64;
    let mean = |v: &[f64]| {
        let mut s = CompensatedSum::new();
        v.iter().for_each(|&x| s.add(x));
        s.value() / n
    };
    let (ma, mb) = (mean(a), mean(b));
    let (mut sab, mut saa, mut sbb) = (CompensatedSum::new(), CompensatedSum::new(), CompensatedSum::new());
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab.add(dx * dy);
        saa.add(dx * dx);
        sbb.add(dy * dy);
    }
    let (saa, sbb) = (saa.value(), sbb.value());
    if !(saa > 0.0) || !(sbb > 0.0) {
        return Err(Error::Statistical("undefined correlation: constant input".into()));
    }
    Ok((sab.value() / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RankMode {
    SingleCandidate,
    ForwardSelection,
}

impl RankMode {
    pub fn parse(s: &str) -> Option<RankMode> {
        match s {
            "single" => Some(RankMode::SingleCandidate),
            "forward" => Some(RankMode::ForwardSelection),
            _ => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            RankMode::SingleCandidate => "single",
            RankMode::ForwardSelection => "forward",
        }
    }
}

/// Which fitted values enter the correlation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FittedValues {
    /// `X beta + b_i`, speaker effects included.
    #[default]
    Conditional,
    /// `X beta` only.
    FixedOnly,
}

impl FittedValues {
    pub fn select<'a>(self, fit: &'a LmeFit) -> &'a [f64] {
        match self {
            FittedValues::Conditional => &fit.fitted,
            FittedValues::FixedOnly => &fit.fitted_fixed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankOptions {
    pub criterion: Criterion,
    pub fitted: FittedValues,
}

impl Default for RankOptions {
    fn default() -> Self {
        RankOptions {
            criterion: Criterion::Reml,
            fitted: FittedValues::Conditional,
        }
    }
}

/// A candidate: one or more predictors entering the model together.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Candidate {
    pub label: String,
    pub predictors: Vec<Predictor>,
    /// Tie-break key.
    pub order: usize,
}

impl Candidate {
    pub fn single(ctx: &DesignContext, p: Predictor) -> Self {
        Candidate {
            label: p.label(ctx.catalog()),
            predictors: vec![p],
            order: p.catalog_order(ctx.catalog()),
        }
    }

    pub fn from_predictors(ctx: &DesignContext, preds: &[Predictor]) -> Vec<Self> {
        preds.iter().map(|&p| Candidate::single(ctx, p)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankEntry {
    pub rank: usize,
    pub label: String,
    pub r: f64,
    /// Coefficient of the candidate (the last one added, in forward mode);
    /// absent for multi-predictor candidates.
    pub estimate: Option<f64>,
    pub se: Option<f64>,
    pub t: Option<f64>,
    pub theta: f64,
    pub loglik: f64,
    pub aic: f64,
    pub converged: bool,
    /// Model terms of the fit behind this entry, intercept excluded.
    pub terms: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateFailure {
    pub label: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingResult {
    pub mode: RankMode,
    pub criterion: Criterion,
    pub fitted: FittedValues,
    /// Single mode: sorted by r descending. Forward mode: selection order.
    pub entries: Vec<RankEntry>,
    pub failures: Vec<CandidateFailure>,
}

impl RankingResult {
    pub fn entry(&self, label: &str) -> Option<&RankEntry> {
        self.entries.iter().find(|e| e.label == label)
    }
}

fn fit_selection(ctx: &DesignContext, selection: &[Predictor], opts: &RankOptions) -> Result<(LmeFit, f64)> {
    let design = ctx.design(selection)?;
    let f = fit(&LmeSpec::new(&design, opts.criterion))?;
    let r = pearson(opts.fitted.select(&f), design.response())?;
    Ok((f, r))
}

fn entry(label: &str, f: &LmeFit, r: f64, coef: Option<usize>) -> RankEntry {
    RankEntry {
        rank: 0,
        label: label.to_string(),
        r,
        estimate: coef.map(|j| f.beta[j]),
        se: coef.map(|j| f.se[j]),
        t: coef.map(|j| f.t_values[j]),
        theta: f.theta,
        loglik: f.loglik,
        aic: f.aic,
        converged: f.convergence.converged,
        terms: f.names[1..].to_vec(),
    }
}

fn validate(candidates: &[Candidate]) -> Result<()> {
    if candidates.is_empty() {
        return Err(Error::Invalid("no ranking candidates".into()));
    }
    Ok(())
}

/// Fits every candidate on its own (plus intercept and speaker effect) and
/// sorts by r, ties by candidate order.
pub fn rank_single(ctx: &DesignContext, candidates: &[Candidate], opts: &RankOptions) -> Result<RankingResult> {
    validate(candidates)?;
    let results: Vec<_> = candidates
        .par_iter()
        .map(|c| fit_selection(ctx, &c.predictors, opts))
        .collect();
    let mut ok = Vec::new();
    let mut failures = Vec::new();
    for (c, res) in candidates.iter().zip(results) {
        match res {
            Ok((f, r)) => {
                let coef = (c.predictors.len() == 1).then_some(1);
                ok.push((c.order, entry(&c.label, &f, r, coef)));
            }
            Err(e) => failures.push(CandidateFailure {
                label: c.label.clone(),
                message: e.to_string(),
            }),
        }
    }
    ok.sort_by(|a, b| b.1.r.total_cmp(&a.1.r).then(a.0.cmp(&b.0)));
    let entries = ok
        .into_iter()
        .enumerate()
        .map(|(i, (_, mut e))| {
            e.rank = i + 1;
            e
        })
        .collect();
    Ok(RankingResult {
        mode: RankMode::SingleCandidate,
        criterion: opts.criterion,
        fitted: opts.fitted,
        entries,
        failures,
    })
}

/// Greedy forward selection: each step adds the remaining candidate whose
/// inclusion gives the highest r. Candidates whose fit fails at some step
/// (e.g. collinear with the current model) are dropped and reported.
pub fn rank_forward(ctx: &DesignContext, candidates: &[Candidate], opts: &RankOptions) -> Result<RankingResult> {
    validate(candidates)?;
    let mut remaining: Vec<&Candidate> = candidates.iter().collect();
    let mut selected: Vec<Predictor> = Vec::new();
    let mut entries = Vec::new();
    let mut failures = Vec::new();

    while !remaining.is_empty() {
        let results: Vec<_> = remaining
            .par_iter()
            .map(|c| {
                let mut sel = selected.clone();
                sel.extend(&c.predictors);
                fit_selection(ctx, &sel, opts)
            })
            .collect();
        let mut best: Option<(usize, LmeFit, f64)> = None;
        let mut keep = Vec::with_capacity(remaining.len());
        for (i, res) in results.into_iter().enumerate() {
            match res {
                Ok((f, r)) => {
                    keep.push(i);
                    let better = match &best {
                        None => true,
                        Some((j, _, rb)) => {
                            r > *rb || (r == *rb && remaining[i].order < remaining[*j].order)
                        }
                    };
                    if better {
                        best = Some((i, f, r));
                    }
                }
                Err(e) => failures.push(CandidateFailure {
                    label: remaining[i].label.clone(),
                    message: e.to_string(),
                }),
            }
        }
        let Some((i, f, r)) = best else { break };
        let c = remaining[i];
        let coef = (c.predictors.len() == 1).then_some(selected.len() + 1);
        let mut e = entry(&c.label, &f, r, coef);
        e.rank = entries.len() + 1;
        entries.push(e);
        selected.extend(&c.predictors);
        remaining = keep.into_iter().filter(|&j| j != i).map(|j| remaining[j]).collect();
    }
    Ok(RankingResult {
        mode: RankMode::ForwardSelection,
        criterion: opts.criterion,
        fitted: opts.fitted,
        entries,
        failures,
    })
}

pub fn rank(
    ctx: &DesignContext,
    candidates: &[Candidate],
    mode: RankMode,
    opts: &RankOptions,
) -> Result<RankingResult> {
    match mode {
        RankMode::SingleCandidate => rank_single(ctx, candidates, opts),
        RankMode::ForwardSelection => rank_forward(ctx, candidates, opts),
    }
}

/// One fixed-effect row of the final-model table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedRow {
    pub label: String,
    pub estimate: f64,
    pub se: f64,
    pub t: f64,
    /// Single-candidate r; absent for the intercept.
    pub r: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalModel {
    pub fit: LmeFit,
    /// Intercept first, then predictors by descending single-candidate r.
    pub fixed: Vec<FixedRow>,
    pub ranking: RankingResult,
}

/// Fits the model with all given predictors (default: every group of the
/// scheme) and lays out its coefficients in single-candidate rank order.
pub fn build_final_model(
    ctx: &DesignContext,
    predictors: Option<&[Predictor]>,
    opts: &RankOptions,
) -> Result<FinalModel> {
    let all = group_predictors(ctx.catalog());
    let preds = predictors.unwrap_or(&all);
    let design = ctx.design(preds)?;
    let full = fit(&LmeSpec::new(&design, opts.criterion))?;
    let ranking = rank_single(ctx, &Candidate::from_predictors(ctx, preds), opts)?;
    if let Some(f) = ranking.failures.first() {
        return Err(Error::Statistical(format!(
            "single-predictor fit of {} failed: {}",
            f.label, f.message
        )));
    }
    let row = |j: usize, r: Option<f64>| FixedRow {
        label: full.names[j].clone(),
        estimate: full.beta[j],
        se: full.se[j],
        t: full.t_values[j],
        r,
    };
    let mut fixed = vec![row(0, None)];
    for e in &ranking.entries {
        let j = full
            .coefficient(&e.label)
            .ok_or_else(|| Error::Invalid(format!("coefficient {} missing", e.label)))?;
        fixed.push(row(j, Some(e.r)));
    }
    Ok(FinalModel {
        fit: full,
        fixed,
        ranking,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pearson_examples() {
        assert_eq!(pearson(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 1.0);
        assert_eq!(pearson(&[1.0, 2.0, 3.0], &[-1.0, -2.0, -3.0]).unwrap(), -1.0);
        let r = pearson(&[1.0, 2.0, 3.0, 4.0], &[2.0, 1.0, 4.0, 3.0]).unwrap();
        assert!((r - 0.6).abs() < 1e-15);
    }

    #[test]
    fn pearson_errors() {
        let e = pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).unwrap_err();
        assert!(e.to_string().contains("undefined correlation"));
        assert!(pearson(&[1.0], &[1.0]).is_err());
        assert!(pearson(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn pearson_matches_textbook_formula() {
        let a: Vec<f64> = (0..50).map(|i| ((i * 37) % 11) as f64 + 0.1 * i as f64).collect();
        let b: Vec<f64> = (0..50).map(|i| ((i * 13) % 7) as f64 - 0.05 * i as f64).collect();
        let n = a.len() as f64;
        let (sa, sb): (f64, f64) = (a.iter().sum(), b.iter().sum());
        let sab: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        let saa: f64 = a.iter().map(|x| x * x).sum();
        let sbb: f64 = b.iter().map(|x| x * x).sum();
        let expected = (n * sab - sa * sb) / ((n * saa - sa * sa).sqrt() * (n * sbb - sb * sb).sqrt());
        assert!((pearson(&a, &b).unwrap() - expected).abs() < 1e-12);
    }
}
