//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use scoremix::lme::Criterion;
use scoremix::predictors::Design;

/// Dense multivariate-normal likelihood of the random-intercept model with
/// `V = I + theta Z Z'` formed explicitly.
pub struct DenseOracle {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub z: DMatrix<f64>,
}

pub struct DensePoint {
    pub deviance: f64,
    pub beta: DVector<f64>,
    pub sigma2: f64,
}

impl DenseOracle {
    pub fn new(design: &Design) -> Self {
        let n = design.n_rows();
        let p = design.n_predictors() + 1;
        DenseOracle {
            x: DMatrix::from_fn(n, p, |i, j| if j == 0 { 1.0 } else { design.row(i)[j - 1] }),
            y: DVector::from_column_slice(design.response()),
            z: DMatrix::from_fn(n, design.n_speakers(), |i, s| {
                (design.speaker_index()[i] == s) as u8 as f64
            }),
        }
    }

    pub fn eval(&self, theta: f64, criterion: Criterion) -> DensePoint {
        let n = self.y.len();
        let p = self.x.ncols();
        let v = DMatrix::identity(n, n) + &self.z * self.z.transpose() * theta;
        let vinv = v.clone().cholesky().expect("V spd").inverse();
        let info = self.x.transpose() * &vinv * &self.x;
        let beta = info
            .clone()
            .cholesky()
            .expect("X'V^-1X spd")
            .solve(&(self.x.transpose() * &vinv * &self.y));
        let r = &self.y - &self.x * &beta;
        let dof = match criterion {
            Criterion::Ml => n,
            Criterion::Reml => n - p,
        } as f64;
        let sigma2 = (r.transpose() * &vinv * &r)[(0, 0)] / dof;
        // Plug sigma^2 into the full Gaussian log-density of Sigma = sigma^2 V.
        let sigma = v * sigma2;
        let sigma_inv = sigma.clone().cholesky().unwrap().inverse();
        let quad = (r.transpose() * &sigma_inv * &r)[(0, 0)];
        let ln2pi = (2.0 * std::f64::consts::PI).ln();
        let deviance = match criterion {
            Criterion::Ml => n as f64 * ln2pi + sigma.determinant().ln() + quad,
            Criterion::Reml => {
                let xsx = self.x.transpose() * &sigma_inv * &self.x;
                (n - p) as f64 * ln2pi + sigma.determinant().ln() + xsx.determinant().ln() + quad
            }
        };
        DensePoint {
            deviance,
            beta,
            sigma2,
        }
    }

    /// Fine grid on `ln(1 + theta)` then golden-section refinement.
    pub fn argmin(&self, criterion: Criterion) -> (f64, DensePoint) {
        let to_theta = |u: f64| u.exp_m1();
        let f = |u: f64| self.eval(to_theta(u), criterion).deviance;
        let u_max = (1e6f64).ln_1p();
        let grid: Vec<f64> = (0..=400).map(|i| u_max * i as f64 / 400.0).collect();
        let vals: Vec<f64> = grid.iter().map(|&u| f(u)).collect();
        let k = (0..grid.len()).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap();
        let (mut a, mut b) = (grid[k.saturating_sub(1)], grid[(k + 1).min(grid.len() - 1)]);
        let g = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..200 {
            let c = b - g * (b - a);
            let d = a + g * (b - a);
            if f(c) <= f(d) {
                b = d;
            } else {
                a = c;
            }
        }
        let mut u = 0.5 * (a + b);
        if f(0.0) <= f(u) {
            u = 0.0;
        }
        (to_theta(u), self.eval(to_theta(u), criterion))
    }
}

/// Ordinary least squares via Householder QR: `(beta, fitted)`.
pub fn ols(design: &Design) -> (Vec<f64>, Vec<f64>) {
    let o = DenseOracle::new(design);
    let qr = o.x.clone().qr();
    let qty = qr.q().transpose() * &o.y;
    let beta = qr.r().solve_upper_triangular(&qty).expect("full rank");
    let fitted = &o.x * &beta;
    (beta.iter().copied().collect(), fitted.iter().copied().collect())
}

pub struct TestRng(ChaCha8Rng);

impl TestRng {
    pub fn new(seed: u64) -> Self {
        TestRng(ChaCha8Rng::seed_from_u64(seed ^ 0x5eed))
    }

    pub fn uniform(&mut self) -> f64 {
        ((self.0.next_u64() >> 11) as f64 + 0.5) / (1u64 << 53) as f64
    }

    /// Box-Muller, deliberately not the library's inverse-CDF sampler.
    pub fn normal(&mut self) -> f64 {
        let (u, v) = (self.uniform(), self.uniform());
        (-2.0 * u.ln()).sqrt() * (2.0 * std::f64::consts::PI * v).cos()
    }

    pub fn below(&mut self, n: usize) -> usize {
        (self.0.next_u64() % n as u64) as usize
    }
}

/// Random small design: `rows` rows spread over `speakers` speakers, `d`
/// uniform regressors, speaker effects with SD `sigma_b`, unit noise.
pub fn random_design(rng: &mut TestRng, speakers: usize, rows: usize, d: usize, sigma_b: f64) -> Design {
    let effects: Vec<f64> = (0..speakers).map(|_| sigma_b * rng.normal()).collect();
    let mut x = Vec::with_capacity(rows * d);
    let mut y = Vec::with_capacity(rows);
    let mut spk = Vec::with_capacity(rows);
    for i in 0..rows {
        // Every speaker gets at least one row; the rest land at random.
        let s = if i < speakers { i } else { rng.below(speakers) };
        let row: Vec<f64> = (0..d).map(|_| 4.0 * rng.uniform()).collect();
        let mean = 1.0 + row.iter().enumerate().map(|(j, v)| (j as f64 - 1.0) * v).sum::<f64>();
        y.push(mean + effects[s] + rng.normal());
        x.extend(row);
        spk.push(s);
    }
    Design::from_parts(
        y,
        x,
        (0..d).map(|j| format!("x{j}")).collect(),
        spk,
        (0..speakers).map(|s| format!("s{s}")).collect(),
    )
    .unwrap()
}
