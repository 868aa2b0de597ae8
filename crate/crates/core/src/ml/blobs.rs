//! Isotropic Gaussian clusters in the plane.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::{stream, tag};

/// Cluster centers are drawn uniformly from this box on both axes.
pub const CENTER_BOX: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlobSpec {
    pub k: usize,
    pub n_per: usize,
    pub spread: f64,
}

impl Default for BlobSpec {
    fn default() -> Self {
        Self {
            k: 3,
            n_per: 100,
            spread: 1.0,
        }
    }
}

/// Points (`k * n_per` rows, 2 columns, cluster-major) and their labels.
pub fn make_blobs(spec: BlobSpec, seed: u64) -> Result<(Matrix, Vec<usize>)> {
    if spec.k < 2 {
        return Err(Error::Domain(format!(
            "need at least 2 clusters, got {}",
            spec.k
        )));
    }
    if !(spec.spread >= 0.0 && spec.spread.is_finite()) {
        return Err(Error::Domain(format!(
            "spread must be nonnegative, got {}",
            spec.spread
        )));
    }
    let mut cr = stream(seed, &[tag::DATA, 0]);
    let centers: Vec<[f64; 2]> = (0..spec.k)
        .map(|_| {
            [
                cr.random_range(-CENTER_BOX..CENTER_BOX),
                cr.random_range(-CENTER_BOX..CENTER_BOX),
            ]
        })
        .collect();
    let mut pr = stream(seed, &[tag::DATA, 1]);
    let mut x = Matrix::zeros(spec.k * spec.n_per, 2);
    let mut labels = Vec::with_capacity(spec.k * spec.n_per);
    for (c, center) in centers.iter().enumerate() {
        for p in 0..spec.n_per {
            let row = c * spec.n_per + p;
            for d in 0..2 {
                let z: f64 = StandardNormal.sample(&mut pr);
                x[(row, d)] = center[d] + spec.spread * z;
            }
            labels.push(c);
        }
    }
    Ok((x, labels))
}

/// Rows of one-hot targets.
pub fn one_hot(labels: &[usize], classes: usize) -> Matrix {
    Matrix::from_fn(labels.len(), classes, |r, c| {
        if labels[r] == c {
            1.0
        } else {
            0.0
        }
    })
}
