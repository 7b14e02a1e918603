//! Dense symmetric positive-definite factorization for the small p x p
//! systems that arise in the mixed model (p = fixed effects incl. intercept).

/// Scaled pivot below which a column is treated as linearly dependent on
/// the columns before it (equivalently, its squared multiple correlation
/// with them exceeds 1 - 1e-10).
pub const SINGULAR_PIVOT: f64 = 1e-10;

/// Cholesky factor of `D S D` where `D = diag(a)^(1/2)` and `S` has unit
/// diagonal. Working on the scaled matrix makes the pivot threshold
/// independent of column units.
#[derive(Debug, Clone)]
pub struct SpdFactor {
    p: usize,
    /// Lower-triangular factor of the scaled matrix, row-major p x p.
    l: Vec<f64>,
    scale: Vec<f64>,
}

impl SpdFactor {
    /// Factors the row-major symmetric matrix `a`. On failure returns the
    /// indices of every column whose scaled pivot collapses.
    pub fn new(a: &[f64], p: usize) -> Result<Self, Vec<usize>> {
        debug_assert_eq!(a.len(), p * p);
        let scale: Vec<f64> = (0..p).map(|i| a[i * p + i].max(0.0).sqrt()).collect();
        let mut offending: Vec<usize> = (0..p).filter(|&i| !(scale[i] > 0.0)).collect();

        let mut l = vec![0.0; p * p];
        let mut dead = vec![false; p];
        for &i in &offending {
            dead[i] = true;
        }
        for j in 0..p {
            if dead[j] {
                continue;
            }
            let mut d = 1.0;
            for k in 0..j {
                d -= l[j * p + k] * l[j * p + k];
            }
            if !(d > SINGULAR_PIVOT) {
                dead[j] = true;
                offending.push(j);
                continue;
            }
            let djj = d.sqrt();
            l[j * p + j] = djj;
            for i in (j + 1)..p {
                if dead[i] {
                    continue;
                }
                let mut s = a[i * p + j] / (scale[i] * scale[j]);
                for k in 0..j {
                    s -= l[i * p + k] * l[j * p + k];
                }
                l[i * p + j] = s / djj;
            }
        }
        if offending.is_empty() {
            Ok(SpdFactor { p, l, scale })
        } else {
            offending.sort_unstable();
            Err(offending)
        }
    }

    pub fn dim(&self) -> usize {
        self.p
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let p = self.p;
        let mut y: Vec<f64> = b.iter().zip(&self.scale).map(|(b, s)| b / s).collect();
        for i in 0..p {
            let mut s = y[i];
            for k in 0..i {
                s -= self.l[i * p + k] * y[k];
            }
            y[i] = s / self.l[i * p + i];
        }
        for i in (0..p).rev() {
            let mut s = y[i];
            for k in (i + 1)..p {
                s -= self.l[k * p + i] * y[k];
            }
            y[i] = s / self.l[i * p + i];
        }
        for (yi, s) in y.iter_mut().zip(&self.scale) {
            *yi /= s;
        }
        y
    }

    /// log det A.
    pub fn log_det(&self) -> f64 {
        (0..self.p)
            .map(|i| 2.0 * (self.l[i * self.p + i].ln() + self.scale[i].ln()))
            .sum()
    }

    /// A^-1 as a row-major p x p matrix.
    pub fn inverse(&self) -> Vec<f64> {
        let p = self.p;
        let mut inv = vec![0.0; p * p];
        let mut e = vec![0.0; p];
        for j in 0..p {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[j] = 1.0;
            let col = self.solve(&e);
            for i in 0..p {
                inv[i * p + j] = col[i];
            }
        }
        // symmetrize away rounding asymmetry
        for i in 0..p {
            for j in (i + 1)..p {
                let m = 0.5 * (inv[i * p + j] + inv[j * p + i]);
                inv[i * p + j] = m;
                inv[j * p + i] = m;
            }
        }
        inv
    }
}
