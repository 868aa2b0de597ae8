//! Blocked matrix-matrix multiply on an `N x N` MVM tile.
//!
//! `C = A B` is cut into `N x N` blocks (zero padded). Each output block
//! `(r, c)` is `sum_q A(r, q) B(q, c)` accumulated in ascending `q`, and every
//! column of `B(q, c)` is one tile MVM with `A(r, q)` loaded as the matrix.
//! Output blocks are found by recursively halving the larger block axis until a
//! single tile remains.

use rayon::prelude::*;

use crate::engine::{mvm_oracle, MvmEngine};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::{derive_seed, tag};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockPlan {
    pub m: usize,
    pub k: usize,
    pub n: usize,
    pub tile: usize,
    /// Blocks along `m`, `k` and `n`.
    pub grid: (usize, usize, usize),
    /// Zero rows/columns appended along `m`, `k` and `n`.
    pub padding: (usize, usize, usize),
}

pub fn plan_blocks(m: usize, k: usize, n: usize, tile: usize) -> Result<BlockPlan> {
    if tile < 1 {
        return Err(Error::Domain("tile size must be at least 1".into()));
    }
    if m == 0 || k == 0 || n == 0 {
        return Err(Error::Domain(format!(
            "empty product shape ({m},{k})x({k},{n})"
        )));
    }
    let g = |x: usize| x.div_ceil(tile);
    Ok(BlockPlan {
        m,
        k,
        n,
        tile,
        grid: (g(m), g(k), g(n)),
        padding: (g(m) * tile - m, g(k) * tile - k, g(n) * tile - n),
    })
}

impl BlockPlan {
    /// Output blocks `(r, c)` in recursion order.
    pub fn output_blocks(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.grid.0 * self.grid.2);
        split(0..self.grid.0, 0..self.grid.2, &mut out);
        out
    }
}

fn split(
    rows: std::ops::Range<usize>,
    cols: std::ops::Range<usize>,
    out: &mut Vec<(usize, usize)>,
) {
    let (nr, nc) = (rows.len(), cols.len());
    if nr == 0 || nc == 0 {
        return;
    }
    if nr == 1 && nc == 1 {
        out.push((rows.start, cols.start));
    } else if nr >= nc {
        let mid = rows.start + nr / 2;
        split(rows.start..mid, cols.clone(), out);
        split(mid..rows.end, cols, out);
    } else {
        let mid = cols.start + nc / 2;
        split(rows.clone(), cols.start..mid, out);
        split(rows, mid..cols.end, out);
    }
}

/// Identifies one tile MVM: block row `r`, inner block `q`, column `col` of `B`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TileKey {
    pub r: usize,
    pub q: usize,
    pub col: usize,
}

/// Something that multiplies an `N x N` tile by an `N`-vector.
pub trait TileBackend: Clone + Send + Sync {
    fn tile_size(&self) -> usize;
    fn tile_mvm(&mut self, w: &Matrix, v: &[f64], key: TileKey) -> Result<Vec<f64>>;
}

/// Exact floating-point tiles.
#[derive(Debug, Clone, Copy)]
pub struct OracleBackend {
    pub tile: usize,
}

impl TileBackend for OracleBackend {
    fn tile_size(&self) -> usize {
        self.tile
    }

    fn tile_mvm(&mut self, w: &Matrix, v: &[f64], _key: TileKey) -> Result<Vec<f64>> {
        mvm_oracle(w, v)
    }
}

/// Tiles computed on a calibrated analog array. Readout noise is reseeded per
/// tile call from `(seed, key)`, so results do not depend on scheduling.
#[derive(Debug, Clone)]
pub struct AnalogBackend {
    engine: MvmEngine,
    seed: u64,
}

impl AnalogBackend {
    pub fn new(engine: MvmEngine, seed: u64) -> Self {
        Self { engine, seed }
    }

    pub fn engine(&self) -> &MvmEngine {
        &self.engine
    }
}

impl TileBackend for AnalogBackend {
    fn tile_size(&self) -> usize {
        self.engine.n()
    }

    fn tile_mvm(&mut self, w: &Matrix, v: &[f64], key: TileKey) -> Result<Vec<f64>> {
        if self.engine.array().noise().active() {
            let s = derive_seed(
                self.seed,
                &[tag::TILE, key.r as u64, key.q as u64, key.col as u64],
            );
            self.engine.reseed_noise(s);
        }
        Ok(self.engine.mvm(w, v)?.output)
    }
}

/// `A B` through `backend`, using up to `jobs` worker threads. The result does
/// not depend on `jobs`.
pub fn gemm<B: TileBackend>(a: &Matrix, b: &Matrix, backend: &B, jobs: usize) -> Result<Matrix> {
    if a.cols() != b.rows() {
        return Err(Error::Domain(format!(
            "inner dimensions differ: {}x{} times {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    let t = backend.tile_size();
    let plan = plan_blocks(a.rows(), a.cols(), b.cols(), t)?;
    let blocks = plan.output_blocks();
    let run = |be: &mut B, &(r, c): &(usize, usize)| compute_block(a, b, &plan, be, r, c);
    let results: Vec<Result<Matrix>> = if jobs <= 1 {
        let mut be = backend.clone();
        blocks.iter().map(|blk| run(&mut be, blk)).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::State(format!("thread pool: {e}")))?;
        pool.install(|| {
            blocks
                .par_iter()
                .map_init(|| backend.clone(), run)
                .collect()
        })
    };
    let mut c_out = Matrix::zeros(plan.m, plan.n);
    for (&(r, c), res) in blocks.iter().zip(results) {
        let blk = res?;
        for i in 0..t.min(plan.m - r * t) {
            for jj in 0..t.min(plan.n - c * t) {
                c_out[(r * t + i, c * t + jj)] = blk[(i, jj)];
            }
        }
    }
    Ok(c_out)
}

fn compute_block<B: TileBackend>(
    a: &Matrix,
    b: &Matrix,
    plan: &BlockPlan,
    backend: &mut B,
    r: usize,
    c: usize,
) -> Result<Matrix> {
    let t = plan.tile;
    let tiles: Vec<Option<Matrix>> = (0..plan.grid.1)
        .map(|q| {
            let tile = a.padded_block(r * t, q * t, t, t);
            (tile.max_abs() > 0.0).then_some(tile)
        })
        .collect();
    let mut out = Matrix::zeros(t, t);
    let mut slice = vec![0.0; t];
    for jj in 0..t.min(plan.n - c * t) {
        let col = c * t + jj;
        let mut acc = vec![0.0; t];
        for (q, tile) in tiles.iter().enumerate() {
            let Some(tile) = tile else { continue };
            for (i, s) in slice.iter_mut().enumerate() {
                let row = q * t + i;
                *s = if row < plan.k { b[(row, col)] } else { 0.0 };
            }
            if slice.iter().all(|&x| x == 0.0) {
                continue;
            }
            let y = backend.tile_mvm(tile, &slice, TileKey { r, q, col })?;
            for (a, y) in acc.iter_mut().zip(y) {
                *a += y;
            }
        }
        for (i, v) in acc.into_iter().enumerate() {
            out[(i, jj)] = v;
        }
    }
    Ok(out)
}
