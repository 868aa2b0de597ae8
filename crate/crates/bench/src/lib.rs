//! Fixtures shared by the criterion benches.

use optomvm_core::{Matrix, RunConfig};

/// Deterministic matrix with entries in `[-1, 1]`.
pub fn test_matrix(rows: usize, cols: usize, salt: u64) -> Matrix {
    Matrix::from_fn(rows, cols, |r, c| {
        let h = (r as u64 * 2654435761 + c as u64 * 40503 + salt * 97) % 2001;
        h as f64 / 1000.0 - 1.0
    })
}

pub fn bench_config() -> RunConfig {
    RunConfig::default()
}
