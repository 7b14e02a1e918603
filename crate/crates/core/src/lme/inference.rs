//! Wald tests, likelihood-ratio tests and AIC on fitted models.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::SpdFactor;
use crate::special::{chi2_sf, f_sf};

use super::{aic_value, LmeFit};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaldResult {
    pub f: f64,
    pub df_num: usize,
    /// Residual degrees of freedom n - p.
    pub df_den: usize,
    pub p_value: f64,
}

/// Joint Wald F test of `C beta = 0` for the given contrast rows.
pub fn wald_test(fit: &LmeFit, contrast: &[Vec<f64>]) -> Result<WaldResult> {
    let q = contrast.len();
    let p = fit.n_fixed();
    if q == 0 {
        return Err(Error::Invalid("empty contrast".into()));
    }
    if let Some(r) = contrast.iter().find(|r| r.len() != p) {
        return Err(Error::Invalid(format!(
            "contrast row has {} entries, model has {p} coefficients",
            r.len()
        )));
    }
    let cb: Vec<f64> = contrast
        .iter()
        .map(|r| r.iter().zip(&fit.beta).map(|(c, b)| c * b).sum())
        .collect();
    // C Cov C'
    let mut m = vec![0.0; q * q];
    for (i, ri) in contrast.iter().enumerate() {
        let cov_ri: Vec<f64> = (0..p)
            .map(|b| (0..p).map(|a| ri[a] * fit.cov_beta[a * p + b]).sum())
            .collect();
        for (j, rj) in contrast.iter().enumerate() {
            m[i * q + j] = cov_ri.iter().zip(rj).map(|(x, y)| x * y).sum();
        }
    }
    let factor = SpdFactor::new(&m, q)
        .map_err(|_| Error::Invalid("contrast matrix is rank-deficient".into()))?;
    let solved = factor.solve(&cb);
    let f = cb.iter().zip(&solved).map(|(a, b)| a * b).sum::<f64>() / q as f64;
    Ok(WaldResult {
        f,
        df_num: q,
        df_den: fit.df_resid,
        p_value: f_sf(f, q as f64, fit.df_resid as f64),
    })
}

/// Joint Wald test that the listed coefficients (by position, intercept = 0)
/// are all zero.
pub fn wald_test_coefficients(fit: &LmeFit, coefficients: &[usize]) -> Result<WaldResult> {
    let p = fit.n_fixed();
    let mut seen = HashSet::new();
    let rows = coefficients
        .iter()
        .map(|&c| {
            if c >= p {
                return Err(Error::Invalid(format!("coefficient index {c} out of range")));
            }
            if !seen.insert(c) {
                return Err(Error::Invalid("contrast matrix is rank-deficient".into()));
            }
            let mut row = vec![0.0; p];
            row[c] = 1.0;
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;
    wald_test(fit, &rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrtResult {
    pub chi2: f64,
    pub df: usize,
    pub p_value: f64,
    pub aic_full: f64,
    pub aic_reduced: f64,
}

/// Likelihood-ratio test of a reduced model nested in a full one, using the
/// ML log-likelihoods of both. The chi-square reference is used as is; no
/// correction is applied when the speaker variance sits on its boundary.
pub fn likelihood_ratio_test(full: &LmeFit, reduced: &LmeFit) -> Result<LrtResult> {
    let full_names: HashSet<&str> = full.names.iter().map(String::as_str).collect();
    if let Some(extra) = reduced.names.iter().find(|n| !full_names.contains(n.as_str())) {
        return Err(Error::Invalid(format!(
            "models are not nested: {extra:?} is only in the reduced model"
        )));
    }
    if full.n_obs != reduced.n_obs || full.response != reduced.response {
        return Err(Error::Invalid("models were fitted on different rows".into()));
    }
    let df = full.n_fixed() - reduced.n_fixed();
    let chi2 = (2.0 * (full.loglik_ml - reduced.loglik_ml)).max(0.0);
    let p_value = if df == 0 { 1.0 } else { chi2_sf(chi2, df as f64) };
    Ok(LrtResult {
        chi2,
        df,
        p_value,
        aic_full: aic(full),
        aic_reduced: aic(reduced),
    })
}

/// `2k - 2 loglik_ml` with `k` = fixed effects (incl. intercept) + 2
/// variance parameters.
pub fn aic(fit: &LmeFit) -> f64 {
    aic_value(fit.loglik_ml, fit.n_fixed())
}
