//! Two-layer linear network `z = W2 (W1 x + b1) + b2` with softmax NLL loss.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::gemm::{gemm, TileBackend};
use crate::matrix::Matrix;
use crate::ml::adam::AdamState;
use crate::rng::{stream, tag};

pub const DEFAULT_HIDDEN: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp2 {
    /// `h x d`.
    pub w1: Matrix,
    pub b1: Vec<f64>,
    /// `c x h`.
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
}

/// Adds `b[r]` to every entry of row `r`.
fn add_bias(m: &mut Matrix, b: &[f64]) {
    for r in 0..m.rows() {
        for x in m.row_mut(r) {
            *x += b[r];
        }
    }
}

/// Mean negative log-likelihood of `labels` under column-wise softmax of
/// `logits` (`c x samples`).
pub fn nll(logits: &Matrix, labels: &[usize]) -> f64 {
    let mut total = 0.0;
    for (s, &l) in labels.iter().enumerate() {
        let col = logits.column(s);
        let mx = col.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = mx + col.iter().map(|z| (z - mx).exp()).sum::<f64>().ln();
        total += lse - col[l];
    }
    total / labels.len().max(1) as f64
}

/// Index of the largest entry in each column; ties go to the lower class.
pub fn argmax_columns(m: &Matrix) -> Vec<usize> {
    (0..m.cols())
        .map(|c| {
            let mut best = 0;
            for r in 1..m.rows() {
                if m[(r, c)] > m[(best, c)] {
                    best = r;
                }
            }
            best
        })
        .collect()
}

impl Mlp2 {
    /// Uniform init in `+-1/sqrt(fan_in)` for every weight and bias.
    pub fn new(d: usize, h: usize, c: usize, seed: u64) -> Self {
        let mut r = stream(seed, &[tag::INIT]);
        let a1 = 1.0 / (d as f64).sqrt();
        let a2 = 1.0 / (h as f64).sqrt();
        let w1 = Matrix::from_fn(h, d, |_, _| r.random_range(-a1..a1));
        let b1 = (0..h).map(|_| r.random_range(-a1..a1)).collect();
        let w2 = Matrix::from_fn(c, h, |_, _| r.random_range(-a2..a2));
        let b2 = (0..c).map(|_| r.random_range(-a2..a2)).collect();
        Self { w1, b1, w2, b2 }
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.w1.cols(), self.w1.rows(), self.w2.rows())
    }

    pub fn num_params(&self) -> usize {
        let (d, h, c) = self.dims();
        h * d + h + c * h + c
    }

    /// Parameters in the order `w1, b1, w2, b2`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_params());
        v.extend_from_slice(self.w1.as_slice());
        v.extend_from_slice(&self.b1);
        v.extend_from_slice(self.w2.as_slice());
        v.extend_from_slice(&self.b2);
        v
    }

    pub fn set_flat(&mut self, p: &[f64]) {
        let (d, h, c) = self.dims();
        let (w1, rest) = p.split_at(h * d);
        let (b1, rest) = rest.split_at(h);
        let (w2, b2) = rest.split_at(c * h);
        self.w1.as_mut_slice().copy_from_slice(w1);
        self.b1.copy_from_slice(b1);
        self.w2.as_mut_slice().copy_from_slice(w2);
        self.b2.copy_from_slice(b2);
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.w1.cols() {
            return Err(Error::Domain(format!(
                "inputs have {} features, model expects {}",
                x.cols(),
                self.w1.cols()
            )));
        }
        Ok(())
    }

    /// Logits `c x samples` for sample rows `x`, in exact arithmetic.
    pub fn logits(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        let mut h = self.w1.matmul(&x.transpose())?;
        add_bias(&mut h, &self.b1);
        let mut z = self.w2.matmul(&h)?;
        add_bias(&mut z, &self.b2);
        Ok(z)
    }

    /// Logits with both weight multiplies run through `backend`; biases are
    /// added digitally.
    pub fn logits_with<B: TileBackend>(
        &self,
        x: &Matrix,
        backend: &B,
        jobs: usize,
    ) -> Result<Matrix> {
        self.check_input(x)?;
        let mut h = gemm(&self.w1, &x.transpose(), backend, jobs)?;
        add_bias(&mut h, &self.b1);
        let mut z = gemm(&self.w2, &h, backend, jobs)?;
        add_bias(&mut z, &self.b2);
        Ok(z)
    }

    /// Mean NLL over the batch and its gradient in `to_flat` order.
    pub fn loss_and_grad(&self, x: &Matrix, labels: &[usize]) -> Result<(f64, Vec<f64>)> {
        self.check_input(x)?;
        let (_, _, c) = self.dims();
        if labels.len() != x.rows() {
            return Err(Error::Domain("label count does not match samples".into()));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::Domain(format!("label {l} outside 0..{c}")));
        }
        let b = x.rows() as f64;
        let xt = x.transpose();
        let mut h = self.w1.matmul(&xt)?;
        add_bias(&mut h, &self.b1);
        let mut z = self.w2.matmul(&h)?;
        add_bias(&mut z, &self.b2);
        let loss = nll(&z, labels);

        // dL/dz = (softmax(z) - onehot) / B, column by column.
        let mut g = z;
        for (s, &l) in labels.iter().enumerate() {
            let mx = (0..c).fold(f64::NEG_INFINITY, |a, r| a.max(g[(r, s)]));
            let sum: f64 = (0..c).map(|r| (g[(r, s)] - mx).exp()).sum();
            for r in 0..c {
                let p = (g[(r, s)] - mx).exp() / sum;
                g[(r, s)] = (p - if r == l { 1.0 } else { 0.0 }) / b;
            }
        }
        let dw2 = g.matmul(&h.transpose())?;
        let db2: Vec<f64> = (0..g.rows()).map(|r| g.row(r).iter().sum()).collect();
        let dh = self.w2.transpose().matmul(&g)?;
        let dw1 = dh.matmul(x)?;
        let db1: Vec<f64> = (0..dh.rows()).map(|r| dh.row(r).iter().sum()).collect();

        let mut grad = Vec::with_capacity(self.num_params());
        grad.extend_from_slice(dw1.as_slice());
        grad.extend_from_slice(&db1);
        grad.extend_from_slice(dw2.as_slice());
        grad.extend_from_slice(&db2);
        Ok((loss, grad))
    }
}

/// Mini-batch Adam in exact arithmetic. Batches follow a seeded shuffle per
/// epoch. Returns the mean training loss of each epoch.
pub fn train_mlp2(
    x: &Matrix,
    labels: &[usize],
    model: &mut Mlp2,
    adam: &mut AdamState,
    opts: TrainOptions,
) -> Result<Vec<f64>> {
    if opts.batch == 0 {
        return Err(Error::Domain("batch size must be positive".into()));
    }
    if adam.m.len() != model.num_params() {
        return Err(Error::Domain("optimizer size does not match model".into()));
    }
    let n = x.rows();
    let d = x.cols();
    let mut params = model.to_flat();
    let mut history = Vec::with_capacity(opts.epochs);
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..opts.epochs {
        order.shuffle(&mut stream(opts.seed, &[tag::SHUFFLE, epoch as u64]));
        let mut total = 0.0;
        for chunk in order.chunks(opts.batch) {
            let xb = Matrix::from_fn(chunk.len(), d, |r, c| x[(chunk[r], c)]);
            let lb: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let (loss, grad) = model.loss_and_grad(&xb, &lb)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("loss diverged in epoch {epoch}")));
            }
            total += loss * chunk.len() as f64;
            adam.update(&mut params, &grad);
            model.set_flat(&params);
        }
        history.push(total / n.max(1) as f64);
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gemm::OracleBackend;

    fn toy(seed: u64, n: usize, d: usize, c: usize) -> (Matrix, Vec<usize>) {
        let mut r = stream(seed, &[tag::DATA]);
        let x = Matrix::from_fn(n, d, |_, _| r.random_range(-1.0..1.0));
        let labels = (0..n).map(|_| r.random_range(0..c)).collect();
        (x, labels)
    }

    #[test]
    fn nll_of_uniform_logits() {
        let z = Matrix::zeros(4, 3);
        assert!((nll(&z, &[0, 1, 3]) - 4f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let (x, labels) = toy(1, 5, 6, 3);
        let model = Mlp2::new(6, 4, 3, 2);
        let (_, grad) = model.loss_and_grad(&x, &labels).unwrap();
        let p0 = model.to_flat();
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for k in 0..p0.len() {
            let mut m = model.clone();
            let mut p = p0.clone();
            p[k] += h;
            m.set_flat(&p);
            let up = m.loss_and_grad(&x, &labels).unwrap().0;
            p[k] -= 2.0 * h;
            m.set_flat(&p);
            let down = m.loss_and_grad(&x, &labels).unwrap().0;
            let fd = (up - down) / (2.0 * h);
            let rel = (fd - grad[k]).abs() / fd.abs().max(grad[k].abs()).max(1e-7);
            worst = worst.max(rel);
        }
        assert!(worst < 1e-5, "{worst}");
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let (x, labels) = toy(3, 20, 4, 2);
        let mut model = Mlp2::new(4, 3, 2, 4);
        let before = model.clone();
        let mut adam = AdamState::with_lr(model.num_params(), 0.0);
        train_mlp2(
            &x,
            &labels,
            &mut model,
            &mut adam,
            TrainOptions {
                epochs: 3,
                batch: 7,
                seed: 1,
            },
        )
        .unwrap();
        assert_eq!(model, before);
    }

    #[test]
    fn separable_toy_reaches_full_accuracy() {
        let mut r = stream(5, &[tag::DATA]);
        let x = Matrix::from_fn(100, 2, |_, _| r.random_range(-1.0..1.0));
        let labels: Vec<usize> = (0..100)
            .map(|i| usize::from(x[(i, 0)] + 0.5 * x[(i, 1)] > 0.0))
            .collect();
        let mut model = Mlp2::new(2, 8, 2, 6);
        let mut adam = AdamState::new(model.num_params());
        train_mlp2(
            &x,
            &labels,
            &mut model,
            &mut adam,
            TrainOptions {
                epochs: 300,
                batch: 100,
                seed: 2,
            },
        )
        .unwrap();
        let pred = argmax_columns(&model.logits(&x).unwrap());
        assert_eq!(pred, labels);
    }

    #[test]
    fn oracle_backend_matches_direct_forward() {
        let (x, _) = toy(7, 30, 20, 3);
        let model = Mlp2::new(20, 10, 3, 8);
        let a = model.logits(&x).unwrap();
        let b = model
            .logits_with(&x, &OracleBackend { tile: 8 }, 1)
            .unwrap();
        for (p, q) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let model = Mlp2::new(3, 2, 2, 0);
        assert!(model.logits(&Matrix::zeros(4, 5)).is_err());
        assert!(model.loss_and_grad(&Matrix::zeros(2, 3), &[0, 2]).is_err());
    }
}
