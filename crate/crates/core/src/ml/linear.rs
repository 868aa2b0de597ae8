//! Least-squares linear classifier trained with full-batch Adam on MSE.
//!
//! The model maps `x` to `W [x; 1]`; the bias is the last column of `W` and is
//! therefore computed by the same matrix multiply as the weights.

use crate::error::{Error, Result};
use crate::gemm::{gemm, TileBackend};
use crate::matrix::Matrix;
use crate::ml::adam::AdamState;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    /// `c x (d + 1)`.
    pub w: Matrix,
    pub loss_history: Vec<f64>,
}

/// Appends a column of ones.
pub fn augment(x: &Matrix) -> Matrix {
    Matrix::from_fn(x.rows(), x.cols() + 1, |r, c| {
        if c < x.cols() {
            x[(r, c)]
        } else {
            1.0
        }
    })
}

/// Column means and population standard deviations of `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &Matrix) -> Self {
        let n = x.rows().max(1) as f64;
        let mut mean = vec![0.0; x.cols()];
        let mut std = vec![0.0; x.cols()];
        for c in 0..x.cols() {
            let col = x.column(c);
            mean[c] = col.iter().sum::<f64>() / n;
            let var = col.iter().map(|v| (v - mean[c]).powi(2)).sum::<f64>() / n;
            std[c] = if var > 0.0 { var.sqrt() } else { 1.0 };
        }
        Self { mean, std }
    }

    pub fn apply(&self, x: &Matrix) -> Matrix {
        Matrix::from_fn(x.rows(), x.cols(), |r, c| {
            (x[(r, c)] - self.mean[c]) / self.std[c]
        })
    }
}

/// Mean over all elements of `(pred - target)^2`.
pub fn mse(pred: &Matrix, target: &Matrix) -> Result<f64> {
    let d = pred.sub(target)?;
    Ok(d.as_slice().iter().map(|x| x * x).sum::<f64>() / d.as_slice().len().max(1) as f64)
}

/// Trains from zero weights. `targets` is `samples x c`.
pub fn train_linear_mse(
    x: &Matrix,
    targets: &Matrix,
    adam: &mut AdamState,
    epochs: usize,
) -> Result<LinearModel> {
    if x.rows() != targets.rows() {
        return Err(Error::Domain(format!(
            "{} samples but {} targets",
            x.rows(),
            targets.rows()
        )));
    }
    let xa = augment(x);
    let (c, d1) = (targets.cols(), xa.cols());
    let mut w = Matrix::zeros(c, d1);
    if adam.m.len() != c * d1 {
        return Err(Error::Domain(format!(
            "optimizer holds {} parameters, model has {}",
            adam.m.len(),
            c * d1
        )));
    }
    let scale = 2.0 / (x.rows() * c) as f64;
    let mut history = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let pred = xa.matmul(&w.transpose())?;
        let loss = mse(&pred, targets)?;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("loss diverged at epoch {epoch}")));
        }
        history.push(loss);
        let resid = pred.sub(targets)?.transpose();
        let grad = resid.matmul(&xa)?.map(|g| g * scale);
        adam.update(w.as_mut_slice(), grad.as_slice());
    }
    Ok(LinearModel {
        w,
        loss_history: history,
    })
}

impl LinearModel {
    /// Predictions `samples x c`, computed exactly.
    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        augment(x).matmul(&self.w.transpose())
    }

    /// Predictions with the multiply `W X_aug^T` run through `backend`.
    pub fn forward_with<B: TileBackend>(
        &self,
        x: &Matrix,
        backend: &B,
        jobs: usize,
    ) -> Result<Matrix> {
        Ok(gemm(&self.w, &augment(x).transpose(), backend, jobs)?.transpose())
    }
}

/// Closed-form least-squares weights via the normal equations.
pub fn least_squares(x: &Matrix, targets: &Matrix) -> Result<Matrix> {
    let xa = augment(x);
    let xtx = xa.transpose().matmul(&xa)?;
    let xty = xa.transpose().matmul(targets)?;
    Ok(solve_spd(&xtx, &xty)?.transpose())
}

/// Solves `A X = B` for symmetric positive definite `A` by Cholesky.
fn solve_spd(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    let n = a.rows();
    let mut l = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[(i, k)] * l[(j, k)]).sum();
            if i == j {
                let d = a[(i, i)] - s;
                if d <= 0.0 {
                    return Err(Error::Numeric(
                        "normal matrix is not positive definite".into(),
                    ));
                }
                l[(i, i)] = d.sqrt();
            } else {
                l[(i, j)] = (a[(i, j)] - s) / l[(j, j)];
            }
        }
    }
    let mut x = b.clone();
    for c in 0..b.cols() {
        for i in 0..n {
            let s: f64 = (0..i).map(|k| l[(i, k)] * x[(k, c)]).sum();
            x[(i, c)] = (x[(i, c)] - s) / l[(i, i)];
        }
        for i in (0..n).rev() {
            let s: f64 = (i + 1..n).map(|k| l[(k, i)] * x[(k, c)]).sum();
            x[(i, c)] = (x[(i, c)] - s) / l[(i, i)];
        }
    }
    Ok(x)
}
