//! Low-rank image reconstruction and the synthetic test image.

use rand::Rng;

use crate::error::{Error, Result};
use crate::gemm::{gemm, TileBackend};
use crate::matrix::Matrix;
use crate::ml::svd::SvdFactors;
use crate::rng::{stream, tag};

/// Rank-`K` reconstruction `(U_K diag(S_K)) V_K^T` with the product run
/// through `backend`.
pub fn reconstruct_topk<B: TileBackend>(
    f: &SvdFactors,
    k: usize,
    backend: &B,
    jobs: usize,
) -> Result<Matrix> {
    let (l, r) = f.truncated_factors(k)?;
    gemm(&l, &r, backend, jobs)
}

/// PSNR in dB for signals with peak value 1.
pub fn psnr(reference: &Matrix, test: &Matrix) -> Result<f64> {
    let d = test.sub(reference)?;
    let mse = d.as_slice().iter().map(|x| x * x).sum::<f64>() / d.as_slice().len().max(1) as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(-10.0 * mse.log10())
}

/// A `size x size` 8-bit grayscale scene: smooth gradients, a disc and a
/// stripe pattern, plus seeded fine texture. Values are multiples of 1/255.
pub fn synthetic_image(size: usize, seed: u64) -> Result<Matrix> {
    if size == 0 {
        return Err(Error::Domain("image size must be positive".into()));
    }
    let mut r = stream(seed, &[tag::DATA, 2]);
    let s = size as f64;
    Ok(Matrix::from_fn(size, size, |y, x| {
        let (u, v) = (x as f64 / s, y as f64 / s);
        let mut p = 0.35 + 0.25 * u + 0.15 * (std::f64::consts::PI * v).sin();
        let (dx, dy) = (u - 0.62, v - 0.4);
        if dx * dx + dy * dy < 0.04 {
            p += 0.25;
        }
        if v > 0.7 && ((u * 12.0) as usize) % 2 == 0 {
            p -= 0.2;
        }
        p += 0.12 * (r.random::<f64>() - 0.5);
        (p.clamp(0.0, 1.0) * 255.0).round() / 255.0
    }))
}
