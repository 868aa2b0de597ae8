//! Machine-learning workloads run on the GEMM backends.

pub mod adam;
pub mod blobs;
pub mod checkpoint;
pub mod idx;
pub mod image;
pub mod linear;
pub mod mlp;
pub mod pgm;
pub mod svd;

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// `c x c` counts, rows indexed by true label, columns by prediction.
pub fn confusion_matrix(
    labels: &[usize],
    predictions: &[usize],
    classes: usize,
) -> Result<Vec<Vec<u64>>> {
    if labels.len() != predictions.len() {
        return Err(Error::Domain("label and prediction counts differ".into()));
    }
    let mut m = vec![vec![0u64; classes]; classes];
    for (&l, &p) in labels.iter().zip(predictions) {
        if l >= classes || p >= classes {
            return Err(Error::Domain(format!("class index outside 0..{classes}")));
        }
        m[l][p] += 1;
    }
    Ok(m)
}

pub fn confusion_csv(m: &[Vec<u64>]) -> String {
    let mut s = String::from("true\\pred");
    for c in 0..m.len() {
        let _ = write!(s, ",{c}");
    }
    s.push('\n');
    for (r, row) in m.iter().enumerate() {
        let _ = write!(s, "{r}");
        for v in row {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    s
}

pub fn accuracy(labels: &[usize], predictions: &[usize]) -> f64 {
    let hits = labels
        .iter()
        .zip(predictions)
        .filter(|(a, b)| a == b)
        .count();
    hits as f64 / labels.len().max(1) as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub predictions: Vec<usize>,
    pub loss: f64,
    pub accuracy: f64,
    pub confusion: Vec<Vec<u64>>,
}

/// Scores a linear MSE classifier (`targets` one-hot) through `backend`.
pub fn evaluate_linear<B: crate::gemm::TileBackend>(
    model: &linear::LinearModel,
    x: &crate::Matrix,
    labels: &[usize],
    backend: &B,
    jobs: usize,
) -> Result<Evaluation> {
    let classes = model.w.rows();
    let pred = model.forward_with(x, backend, jobs)?;
    let loss = linear::mse(&pred, &blobs::one_hot(labels, classes))?;
    let predictions = mlp::argmax_columns(&pred.transpose());
    Ok(Evaluation {
        accuracy: accuracy(labels, &predictions),
        confusion: confusion_matrix(labels, &predictions, classes)?,
        predictions,
        loss,
    })
}

/// Scores an MLP (softmax NLL) through `backend`.
pub fn evaluate_mlp<B: crate::gemm::TileBackend>(
    model: &mlp::Mlp2,
    x: &crate::Matrix,
    labels: &[usize],
    backend: &B,
    jobs: usize,
) -> Result<Evaluation> {
    let classes = model.w2.rows();
    let z = model.logits_with(x, backend, jobs)?;
    let predictions = mlp::argmax_columns(&z);
    Ok(Evaluation {
        loss: mlp::nll(&z, labels),
        accuracy: accuracy(labels, &predictions),
        confusion: confusion_matrix(labels, &predictions, classes)?,
        predictions,
    })
}
