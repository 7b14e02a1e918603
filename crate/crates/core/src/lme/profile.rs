//! Profiled (restricted) likelihood of the random-intercept model
//!
//! ```text
//! y_ij = x_ij' beta + b_i + e_ij,   b_i ~ N(0, theta * sigma^2),  e_ij ~ N(0, sigma^2)
//! ```
//!
//! For fixed `theta` the marginal covariance of speaker `i` is
//! `sigma^2 (I + theta 1 1')`, whose inverse is `sigma^-2 W_i` with
//! `W_i = I - w_i 1 1'`, `w_i = theta / (1 + n_i theta)`. `W_i` is never
//! formed: the per-speaker cross-products `X_i'X_i`, `X_i'y_i` are
//! accumulated once, and `X_i'W_iX_i = X_i'X_i - w_i s_i s_i'` with
//! `s_i = X_i'1` (the intercept column of `X_i'X_i`).

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::SpdFactor;
use crate::numeric::{compensated_sum, CompensatedSum};
use crate::predictors::Design;

use super::Criterion;

pub(crate) const INTERCEPT: &str = "(Intercept)";

/// Theta-independent sufficient statistics of one speaker.
#[derive(Debug, Clone)]
struct SpeakerBlock {
    rows: Vec<usize>,
    /// Row-major p x p cross-product of the intercept-augmented rows.
    xtx: Vec<f64>,
    xty: Vec<f64>,
}

/// Everything at one value of theta.
#[derive(Debug, Clone)]
pub struct ProfilePoint {
    pub theta: f64,
    pub deviance: f64,
    /// Fixed effects, intercept first.
    pub beta: Vec<f64>,
    pub sigma2: f64,
    /// Weighted residual sum of squares `sum_i r_i' W_i r_i`.
    pub rss: f64,
    /// Derivative of the deviance with respect to theta.
    pub slope: f64,
    pub(crate) factor: SpdFactor,
}

/// Precomputed per-speaker blocks of one design.
pub struct Profile<'a> {
    design: &'a Design,
    p: usize,
    blocks: Vec<SpeakerBlock>,
}

impl<'a> Profile<'a> {
    pub fn new(design: &'a Design) -> Self {
        let p = design.n_predictors() + 1;
        let mut rows: Vec<Vec<usize>> = vec![Vec::new(); design.n_speakers()];
        for (i, &s) in design.speaker_index().iter().enumerate() {
            rows[s].push(i);
        }
        let blocks = rows
            .into_par_iter()
            .filter(|r| !r.is_empty())
            .map(|rows| {
                let mut xtx = vec![CompensatedSum::new(); p * p];
                let mut xty = vec![CompensatedSum::new(); p];
                let mut x = vec![1.0; p];
                for &r in &rows {
                    x[1..].copy_from_slice(design.row(r));
                    let y = design.response()[r];
                    for a in 0..p {
                        xty[a].add(x[a] * y);
                        for b in a..p {
                            xtx[a * p + b].add(x[a] * x[b]);
                        }
                    }
                }
                let mut full = vec![0.0; p * p];
                for a in 0..p {
                    for b in a..p {
                        let v = xtx[a * p + b].value();
                        full[a * p + b] = v;
                        full[b * p + a] = v;
                    }
                }
                SpeakerBlock {
                    rows,
                    xtx: full,
                    xty: xty.iter().map(CompensatedSum::value).collect(),
                }
            })
            .collect();
        Profile { design, p, blocks }
    }

    pub fn design(&self) -> &Design {
        self.design
    }

    /// Fixed-effect count including the intercept.
    pub fn n_fixed(&self) -> usize {
        self.p
    }

    pub fn n_groups(&self) -> usize {
        self.blocks.len()
    }

    pub fn names(&self) -> Vec<String> {
        std::iter::once(INTERCEPT.to_string())
            .chain(self.design.predictor_names().iter().cloned())
            .collect()
    }

    fn shrink(theta: f64, n: usize) -> f64 {
        theta / (1.0 + n as f64 * theta)
    }

    /// Assembles `sum_i X_i'W_iX_i` and `sum_i X_i'W_iy_i`.
    fn normal_equations(&self, theta: f64) -> (Vec<f64>, Vec<f64>) {
        let p = self.p;
        let mut lhs = vec![CompensatedSum::new(); p * p];
        let mut rhs = vec![CompensatedSum::new(); p];
        for blk in &self.blocks {
            let w = Self::shrink(theta, blk.rows.len());
            let s = |a: usize| blk.xtx[a];
            let sy = blk.xty[0];
            for a in 0..p {
                rhs[a].add(blk.xty[a] - w * s(a) * sy);
                for b in a..p {
                    lhs[a * p + b].add(blk.xtx[a * p + b] - w * s(a) * s(b));
                }
            }
        }
        let mut a = vec![0.0; p * p];
        for i in 0..p {
            for j in i..p {
                let v = lhs[i * p + j].value();
                a[i * p + j] = v;
                a[j * p + i] = v;
            }
        }
        (a, rhs.iter().map(CompensatedSum::value).collect())
    }

    /// Factors the normal equations at `theta`, naming collinear columns on
    /// failure.
    pub(crate) fn factor(&self, theta: f64) -> Result<(SpdFactor, Vec<f64>)> {
        let (a, b) = self.normal_equations(theta);
        match SpdFactor::new(&a, self.p) {
            Ok(f) => Ok((f, b)),
            Err(cols) => {
                let names = self.names();
                Err(Error::Singular {
                    columns: cols.into_iter().map(|c| names[c].clone()).collect(),
                })
            }
        }
    }

    /// Per-speaker `(sum_j r_ij, sum_j r_ij^2)` of raw residuals `y - X beta`.
    pub(crate) fn residual_moments(&self, beta: &[f64]) -> Vec<(f64, f64)> {
        let d = self.design;
        self.blocks
            .par_iter()
            .map(|blk| {
                let mut s = CompensatedSum::new();
                let mut ss = CompensatedSum::new();
                for &r in &blk.rows {
                    let fit = beta[0]
                        + d.row(r)
                            .iter()
                            .zip(&beta[1..])
                            .map(|(x, b)| x * b)
                            .sum::<f64>();
                    let res = d.response()[r] - fit;
                    s.add(res);
                    ss.add(res * res);
                }
                (s.value(), ss.value())
            })
            .collect()
    }

    pub fn evaluate(&self, theta: f64, criterion: Criterion) -> Result<ProfilePoint> {
        if !(theta >= 0.0) || !theta.is_finite() {
            return Err(Error::Invalid(format!("variance ratio must be finite and >= 0, got {theta}")));
        }
        let (factor, rhs) = self.factor(theta)?;
        let beta = factor.solve(&rhs);
        let moments = self.residual_moments(&beta);
        let rss = compensated_sum(self.blocks.iter().zip(&moments).map(|(blk, &(s, ss))| {
            ss - Self::shrink(theta, blk.rows.len()) * s * s
        }));
        let log_det_v = compensated_sum(
            self.blocks
                .iter()
                .map(|blk| (blk.rows.len() as f64 * theta).ln_1p()),
        );

        let n = self.design.n_rows() as f64;
        let p = self.p as f64;
        // An exact fit leaves rss at (or rounded below) zero.
        let rss = rss.max(f64::MIN_POSITIVE);

        // d/dtheta of each term; beta is stationary so only W moves in rss.
        // dw_i/dtheta = 1 / (1 + n_i theta)^2.
        let dw = |n_i: usize| (1.0 + n_i as f64 * theta).powi(-2);
        let d_rss = -compensated_sum(
            self.blocks
                .iter()
                .zip(&moments)
                .map(|(blk, &(s, _))| dw(blk.rows.len()) * s * s),
        );
        let d_log_det_v = compensated_sum(
            self.blocks
                .iter()
                .map(|blk| blk.rows.len() as f64 / (1.0 + blk.rows.len() as f64 * theta)),
        );
        let two_pi = 2.0 * std::f64::consts::PI;
        let (sigma2, deviance, slope) = match criterion {
            Criterion::Ml => {
                let s2 = rss / n;
                (
                    s2,
                    n * ((two_pi * s2).ln() + 1.0) + log_det_v,
                    n * d_rss / rss + d_log_det_v,
                )
            }
            Criterion::Reml => {
                let dof = n - p;
                let s2 = rss / dof;
                (
                    s2,
                    dof * ((two_pi * s2).ln() + 1.0) + log_det_v + factor.log_det(),
                    dof * d_rss / rss + d_log_det_v + self.d_log_det_normal(theta, &factor),
                )
            }
        };
        Ok(ProfilePoint {
            theta,
            deviance,
            beta,
            sigma2,
            rss,
            slope,
            factor,
        })
    }

    /// `d/dtheta ln det(X'WX) = -tr(A^-1 sum_i dw_i s_i s_i')`.
    fn d_log_det_normal(&self, theta: f64, factor: &SpdFactor) -> f64 {
        let p = self.p;
        let mut m = vec![CompensatedSum::new(); p * p];
        for blk in &self.blocks {
            let dw = (1.0 + blk.rows.len() as f64 * theta).powi(-2);
            for a in 0..p {
                for b in 0..p {
                    m[a * p + b].add(dw * blk.xtx[a] * blk.xtx[b]);
                }
            }
        }
        let mut trace = CompensatedSum::new();
        for b in 0..p {
            let col: Vec<f64> = (0..p).map(|a| m[a * p + b].value()).collect();
            trace.add(factor.solve(&col)[b]);
        }
        -trace.value()
    }

    /// Shrunken speaker intercepts at `theta` given raw residual sums, in
    /// design speaker order (speakers without rows get 0).
    pub(crate) fn blups(&self, theta: f64, moments: &[(f64, f64)]) -> Vec<f64> {
        let mut out = vec![0.0; self.design.n_speakers()];
        for (blk, &(s, _)) in self.blocks.iter().zip(moments) {
            let spk = self.design.speaker_index()[blk.rows[0]];
            out[spk] = Self::shrink(theta, blk.rows.len()) * s;
        }
        out
    }
}

/// Profiled deviance at one value of the variance ratio.
pub fn profiled_deviance(theta: f64, design: &Design, criterion: Criterion) -> Result<ProfilePoint> {
    Profile::new(design).evaluate(theta, criterion)
}
