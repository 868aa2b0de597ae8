//! One-sided Jacobi SVD.

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const JACOBI_TOL: f64 = 1e-10;
pub const MAX_SWEEPS: usize = 100;

/// `A = U diag(S) V^T` with `U: m x p`, `V: n x p`, `p = min(m, n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdFactors {
    pub u: Matrix,
    pub s: Vec<f64>,
    pub v: Matrix,
}

pub fn jacobi_svd(a: &Matrix) -> Result<SvdFactors> {
    if a.rows() == 0 || a.cols() == 0 {
        return Err(Error::Domain("empty matrix".into()));
    }
    if a.as_slice().iter().any(|x| !x.is_finite()) {
        return Err(Error::Domain("non-finite matrix entry".into()));
    }
    if a.rows() < a.cols() {
        let f = jacobi_svd(&a.transpose())?;
        return Ok(SvdFactors {
            u: f.v,
            s: f.s,
            v: f.u,
        });
    }
    let (m, n) = a.shape();
    // Column-major working copies.
    let mut cols: Vec<Vec<f64>> = (0..n).map(|c| a.column(c)).collect();
    let mut vcols: Vec<Vec<f64>> = (0..n)
        .map(|c| (0..n).map(|r| if r == c { 1.0 } else { 0.0 }).collect())
        .collect();
    let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>();

    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = dot(&cols[p], &cols[p]);
                let beta = dot(&cols[q], &cols[q]);
                let gamma = dot(&cols[p], &cols[q]);
                if gamma == 0.0 || gamma.abs() <= JACOBI_TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let (lo, hi) = cols.split_at_mut(q);
                rotate(&mut lo[p], &mut hi[0], c, s);
                let (lo, hi) = vcols.split_at_mut(q);
                rotate(&mut lo[p], &mut hi[0], c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Numeric(format!(
            "Jacobi SVD did not converge in {MAX_SWEEPS} sweeps"
        )));
    }

    let norms: Vec<f64> = cols.iter().map(|c| dot(c, c).sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| norms[y].total_cmp(&norms[x]).then(x.cmp(&y)));

    let mut ucols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut missing = Vec::new();
    for (k, &j) in order.iter().enumerate() {
        if norms[j] > 0.0 {
            ucols.push(cols[j].iter().map(|x| x / norms[j]).collect());
        } else {
            ucols.push(vec![0.0; m]);
            missing.push(k);
        }
    }
    complete_orthonormal(&mut ucols, &missing, m);

    Ok(SvdFactors {
        u: Matrix::from_fn(m, n, |r, k| ucols[k][r]),
        s: order.iter().map(|&j| norms[j]).collect(),
        v: Matrix::from_fn(n, n, |r, k| vcols[order[k]][r]),
    })
}

fn rotate(x: &mut [f64], y: &mut [f64], c: f64, s: f64) {
    for (a, b) in x.iter_mut().zip(y.iter_mut()) {
        let (xa, yb) = (*a, *b);
        *a = c * xa - s * yb;
        *b = s * xa + c * yb;
    }
}

/// Fills the columns listed in `missing` with unit vectors orthogonal to all
/// other columns, by Gram-Schmidt over the standard basis.
fn complete_orthonormal(cols: &mut [Vec<f64>], missing: &[usize], m: usize) {
    let mut basis = 0;
    for &k in missing {
        while basis < m {
            let mut e = vec![0.0; m];
            e[basis] = 1.0;
            basis += 1;
            for _ in 0..2 {
                for (j, c) in cols.iter().enumerate() {
                    if j == k || (missing.contains(&j) && c.iter().all(|&x| x == 0.0)) {
                        continue;
                    }
                    let d: f64 = c.iter().zip(&e).map(|(a, b)| a * b).sum();
                    for (x, a) in e.iter_mut().zip(c) {
                        *x -= d * a;
                    }
                }
            }
            let nrm = e.iter().map(|x| x * x).sum::<f64>().sqrt();
            if nrm > 1e-8 {
                cols[k] = e.iter().map(|x| x / nrm).collect();
                break;
            }
        }
    }
}

impl SvdFactors {
    /// Number of singular values.
    pub fn rank_capacity(&self) -> usize {
        self.s.len()
    }

    /// `U_K diag(S_K)` and `V_K^T`, whose product is the rank-`K` truncation.
    pub fn truncated_factors(&self, k: usize) -> Result<(Matrix, Matrix)> {
        if k < 1 || k > self.s.len() {
            return Err(Error::Domain(format!(
                "K = {k} outside 1..={}",
                self.s.len()
            )));
        }
        let left = Matrix::from_fn(self.u.rows(), k, |r, c| self.u[(r, c)] * self.s[c]);
        let right = Matrix::from_fn(k, self.v.rows(), |r, c| self.v[(c, r)]);
        Ok((left, right))
    }

    /// Exact rank-`K` truncation.
    pub fn reconstruct(&self, k: usize) -> Result<Matrix> {
        let (l, r) = self.truncated_factors(k)?;
        l.matmul(&r)
    }
}
