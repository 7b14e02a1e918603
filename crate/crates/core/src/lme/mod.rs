//! Random-intercept linear mixed-effects model fitted by profiled maximum
//! likelihood or restricted maximum likelihood.
//!
//! The only variance parameter left after profiling out the fixed effects
//! and the residual variance is the ratio `theta = sigma_b^2 / sigma^2`, so
//! fitting reduces to a bounded scalar minimization of the profiled
//! deviance. The search runs over `u = ln(1 + theta)`: a coarse grid locates
//! the basin and Brent's method refines it.

mod brent;
mod inference;
mod profile;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::predictors::Design;

pub use brent::{minimize, Minimum};
pub use inference::{aic, likelihood_ratio_test, wald_test, wald_test_coefficients, LrtResult, WaldResult};
pub use profile::{profiled_deviance, Profile, ProfilePoint};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Criterion {
    Ml,
    Reml,
}

impl Criterion {
    pub fn parse(s: &str) -> Option<Criterion> {
        match s.to_ascii_lowercase().as_str() {
            "ml" => Some(Criterion::Ml),
            "reml" => Some(Criterion::Reml),
            _ => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Criterion::Ml => "ML",
            Criterion::Reml => "REML",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerSettings {
    pub theta_max: f64,
    /// Absolute tolerance on `ln(1 + theta)`, i.e. roughly relative on theta.
    pub tol: f64,
    pub max_iter: usize,
    /// Grid points used to bracket the minimum before refinement.
    pub grid_points: usize,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        OptimizerSettings {
            theta_max: 1e6,
            tol: 1e-10,
            max_iter: 200,
            grid_points: 40,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LmeSpec<'a> {
    pub design: &'a Design,
    pub criterion: Criterion,
    pub settings: OptimizerSettings,
}

impl<'a> LmeSpec<'a> {
    pub fn new(design: &'a Design, criterion: Criterion) -> Self {
        LmeSpec {
            design,
            criterion,
            settings: OptimizerSettings::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.design.n_rows();
        let p = self.design.n_predictors() + 1;
        let groups = self
            .design
            .speaker_index()
            .iter()
            .fold(vec![false; self.design.n_speakers()], |mut seen, &s| {
                seen[s] = true;
                seen
            })
            .into_iter()
            .filter(|&s| s)
            .count();
        if groups < 2 {
            return Err(Error::Invalid(format!("need at least 2 speakers, got {groups}")));
        }
        if n <= p + 2 {
            return Err(Error::Invalid(format!(
                "insufficient rows: n = {n} must exceed p + 2 = {}",
                p + 2
            )));
        }
        let s = &self.settings;
        if !(s.theta_max > 0.0) || !(s.tol > 0.0) || s.max_iter == 0 || s.grid_points < 2 {
            return Err(Error::Invalid("invalid optimizer settings".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    pub converged: bool,
    pub iterations: usize,
    pub evaluations: usize,
    /// The optimum sits at theta = 0 (no speaker variance).
    pub at_boundary: bool,
    /// Convergence of the auxiliary ML optimization behind `loglik_ml` when
    /// the criterion is REML; equals `converged` otherwise.
    pub ml_converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerEffect {
    pub speaker: String,
    pub trials: usize,
    pub blup: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmeFit {
    pub criterion: Criterion,
    /// Fixed-effect names, intercept first.
    pub names: Vec<String>,
    pub beta: Vec<f64>,
    pub se: Vec<f64>,
    pub t_values: Vec<f64>,
    /// Row-major p x p covariance of the fixed effects.
    pub cov_beta: Vec<f64>,
    pub sigma_b2: f64,
    pub sigma2: f64,
    pub theta: f64,
    /// Log-likelihood at the fitting criterion.
    pub loglik: f64,
    /// Maximized ML log-likelihood (for AIC and likelihood-ratio tests).
    pub loglik_ml: f64,
    pub aic: f64,
    pub n_obs: usize,
    pub df_resid: usize,
    pub convergence: Convergence,
    pub speakers: Vec<SpeakerEffect>,
    pub response: Vec<f64>,
    /// `X beta + b_i` per row.
    pub fitted: Vec<f64>,
    /// `X beta` per row.
    pub fitted_fixed: Vec<f64>,
    pub residuals: Vec<f64>,
}

impl LmeFit {
    pub fn n_fixed(&self) -> usize {
        self.beta.len()
    }

    pub fn coefficient(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn blup(&self, speaker: &str) -> Option<f64> {
        self.speakers.iter().find(|s| s.speaker == speaker).map(|s| s.blup)
    }
}

struct Optimum<'p> {
    point: ProfilePoint,
    profile: &'p Profile<'p>,
    minimum: Minimum,
}

fn optimize<'p>(
    profile: &'p Profile<'p>,
    criterion: Criterion,
    settings: &OptimizerSettings,
) -> Result<Optimum<'p>> {
    let u_max = settings.theta_max.ln_1p();
    let theta_of = |u: f64| u.exp_m1().clamp(0.0, settings.theta_max);
    let mut failure = None;
    let mut objective = |u: f64| match profile.evaluate(theta_of(u), criterion) {
        Ok(pt) => pt.deviance,
        Err(e) => {
            failure.get_or_insert(e);
            f64::INFINITY
        }
    };

    let k = settings.grid_points;
    let grid: Vec<(f64, f64)> = (0..k)
        .map(|i| {
            let u = u_max * i as f64 / (k - 1) as f64;
            (u, objective(u))
        })
        .collect();
    let best = grid
        .iter()
        .enumerate()
        .min_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let lo = grid[best.saturating_sub(1)].0;
    let hi = grid[(best + 1).min(k - 1)].0;
    let mut minimum = minimize(&mut objective, lo, hi, settings.tol, settings.max_iter);
    minimum.evaluations += k;
    drop(objective);
    if let Some(e) = failure {
        return Err(e);
    }

    // Never return a point worse than the grid or the boundary.
    let (mut u_best, mut f_best) = (minimum.x, minimum.fx);
    for (u, f) in [grid[0], grid[best]] {
        if f < f_best {
            u_best = u;
            f_best = f;
        }
    }
    let mut point = profile.evaluate(theta_of(u_best), criterion)?;
    if let Some(polished) = polish(profile, criterion, u_best, u_max, &theta_of)? {
        // Function values cannot resolve the optimum beyond ~sqrt(eps); the
        // slope root can. Accept it unless it is worse beyond rounding.
        if polished.deviance <= point.deviance + 1e-11 * (1.0 + point.deviance.abs()) {
            minimum.evaluations += 1;
            point = polished;
        }
    }
    // A profile that is flat up to rounding (e.g. one row per speaker) does
    // not identify theta; report the boundary.
    if point.theta > 0.0 && grid[0].1 <= point.deviance + 1e-11 * (1.0 + point.deviance.abs()) {
        point = profile.evaluate(0.0, criterion)?;
    }
    Ok(Optimum {
        point,
        profile,
        minimum,
    })
}

/// Refines a minimum located on function values by bisection on the sign of
/// the deviance slope. Returns `None` when no sign change brackets `u0`.
fn polish(
    profile: &Profile<'_>,
    criterion: Criterion,
    u0: f64,
    u_max: f64,
    theta_of: &dyn Fn(f64) -> f64,
) -> Result<Option<ProfilePoint>> {
    let slope = |u: f64| profile.evaluate(theta_of(u), criterion).map(|p| p.slope);
    if u0 == 0.0 && slope(0.0)? >= 0.0 {
        return Ok(None);
    }
    let mut h = 1e-7 * (1.0 + u0);
    let (mut lo, mut hi) = ((u0 - h).max(0.0), (u0 + h).min(u_max));
    let mut expansions = 0;
    while slope(lo)? >= 0.0 && lo > 0.0 || slope(hi)? <= 0.0 && hi < u_max {
        expansions += 1;
        if expansions > 40 {
            return Ok(None);
        }
        h *= 4.0;
        lo = (u0 - h).max(0.0);
        hi = (u0 + h).min(u_max);
    }
    if slope(lo)? >= 0.0 || slope(hi)? <= 0.0 {
        return Ok(None);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if slope(mid)? < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    profile.evaluate(theta_of(0.5 * (lo + hi)), criterion).map(Some)
}

/// Fits the model; a non-converged optimization yields a fit flagged in
/// [`Convergence`] rather than an error.
pub fn fit(spec: &LmeSpec<'_>) -> Result<LmeFit> {
    spec.validate()?;
    let design = spec.design;
    let profile = Profile::new(design);
    // Collinearity does not depend on theta; fail early with column names.
    profile.factor(0.0)?;

    let opt = optimize(&profile, spec.criterion, &spec.settings)?;
    let (loglik_ml, ml_converged) = match spec.criterion {
        Criterion::Ml => (-0.5 * opt.point.deviance, opt.minimum.converged),
        Criterion::Reml => {
            let ml = optimize(&profile, Criterion::Ml, &spec.settings)?;
            (-0.5 * ml.point.deviance, ml.minimum.converged)
        }
    };
    Ok(assemble(opt, spec.criterion, loglik_ml, ml_converged))
}

fn assemble(opt: Optimum<'_>, criterion: Criterion, loglik_ml: f64, ml_converged: bool) -> LmeFit {
    let Optimum {
        point,
        profile,
        minimum,
    } = opt;
    let design = profile.design();
    let p = profile.n_fixed();
    let n = design.n_rows();

    let cov_beta: Vec<f64> = point
        .factor
        .inverse()
        .into_iter()
        .map(|v| v * point.sigma2)
        .collect();
    let se: Vec<f64> = (0..p).map(|i| cov_beta[i * p + i].sqrt()).collect();
    let t_values = point.beta.iter().zip(&se).map(|(b, s)| b / s).collect();

    let moments = profile.residual_moments(&point.beta);
    let blups = profile.blups(point.theta, &moments);
    let mut counts = vec![0usize; design.n_speakers()];
    for &s in design.speaker_index() {
        counts[s] += 1;
    }

    let mut fitted = Vec::with_capacity(n);
    let mut fitted_fixed = Vec::with_capacity(n);
    let mut residuals = Vec::with_capacity(n);
    for i in 0..n {
        let fx = point.beta[0]
            + design
                .row(i)
                .iter()
                .zip(&point.beta[1..])
                .map(|(x, b)| x * b)
                .sum::<f64>();
        let f = fx + blups[design.speaker_index()[i]];
        fitted_fixed.push(fx);
        fitted.push(f);
        residuals.push(design.response()[i] - f);
    }

    LmeFit {
        criterion,
        names: profile.names(),
        se,
        t_values,
        cov_beta,
        sigma_b2: point.theta * point.sigma2,
        sigma2: point.sigma2,
        theta: point.theta,
        loglik: -0.5 * point.deviance,
        loglik_ml,
        aic: aic_value(loglik_ml, p),
        n_obs: n,
        df_resid: n - p,
        convergence: Convergence {
            converged: minimum.converged,
            iterations: minimum.iterations,
            evaluations: minimum.evaluations,
            at_boundary: point.theta == 0.0,
            ml_converged,
        },
        speakers: design
            .speakers()
            .iter()
            .zip(&blups)
            .zip(&counts)
            .map(|((s, &b), &c)| SpeakerEffect {
                speaker: s.clone(),
                trials: c,
                blup: b,
            })
            .collect(),
        response: design.response().to_vec(),
        beta: point.beta,
        fitted,
        fitted_fixed,
        residuals,
    }
}

/// Fit with theta held fixed (no optimization). `theta = 0` gives the
/// ordinary least-squares fit.
pub fn fit_at_theta(design: &Design, criterion: Criterion, theta: f64) -> Result<LmeFit> {
    LmeSpec::new(design, criterion).validate()?;
    let profile = Profile::new(design);
    let point = profile.evaluate(theta, criterion)?;
    let loglik_ml = match criterion {
        Criterion::Ml => -0.5 * point.deviance,
        Criterion::Reml => -0.5 * profile.evaluate(theta, Criterion::Ml)?.deviance,
    };
    let opt = Optimum {
        point,
        profile: &profile,
        minimum: Minimum {
            x: theta.ln_1p(),
            fx: f64::NAN,
            iterations: 0,
            evaluations: 1,
            converged: true,
        },
    };
    Ok(assemble(opt, criterion, loglik_ml, true))
}

pub(crate) fn aic_value(loglik_ml: f64, n_fixed: usize) -> f64 {
    2.0 * (n_fixed as f64 + 2.0) - 2.0 * loglik_ml
}
