//! Matrix files.
//!
//! Text form: a tag line, a `rows cols` line, then one row per line with
//! space separated values printed in shortest round-trip form.
//!
//! ```text
//! # optomvm matrix v1
//! 2 3
//! 1 0.5 -2
//! 0 0 1e-7
//! ```
//!
//! Binary form: the 8 bytes `OMVMMAT1`, rows and cols as little-endian `u64`,
//! then row-major little-endian `f64`.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const TEXT_TAG: &str = "# optomvm matrix v1";
pub const BINARY_MAGIC: &[u8; 8] = b"OMVMMAT1";

pub fn matrix_to_text(m: &Matrix) -> String {
    let mut s = format!("{TEXT_TAG}\n{} {}\n", m.rows(), m.cols());
    for r in 0..m.rows() {
        for (c, x) in m.row(r).iter().enumerate() {
            if c > 0 {
                s.push(' ');
            }
            let _ = write!(s, "{x}");
        }
        s.push('\n');
    }
    s
}

pub fn matrix_from_text(text: &str) -> Result<Matrix> {
    let mut offset = 0u64;
    let mut lines = text.split_inclusive('\n').map(|l| {
        let at = offset;
        offset += l.len() as u64;
        (l.trim_end_matches(['\n', '\r']), at)
    });
    let end = text.len() as u64;
    fn next<'a>(
        lines: &mut impl Iterator<Item = (&'a str, u64)>,
        end: u64,
    ) -> (Option<&'a str>, u64) {
        match lines.next() {
            Some((l, at)) => (Some(l), at),
            None => (None, end),
        }
    }
    match next(&mut lines, end) {
        (Some(l), _) if l.trim() == TEXT_TAG => {}
        (_, at) => return Err(Error::format(Some(at), format!("expected `{TEXT_TAG}`"))),
    }
    let (dims, at) = next(&mut lines, end);
    let dims: Vec<usize> = dims
        .unwrap_or("")
        .split_whitespace()
        .map(str::parse)
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::format(Some(at), format!("bad dimension line: {e}")))?;
    let [rows, cols] = dims[..] else {
        return Err(Error::format(Some(at), "dimension line needs `rows cols`"));
    };
    let mut data = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let (line, at) = next(&mut lines, end);
        let line = line.ok_or_else(|| Error::format(Some(at), format!("missing row {r}")))?;
        let before = data.len();
        for tok in line.split_whitespace() {
            let x: f64 = tok
                .parse()
                .map_err(|_| Error::format(Some(at), format!("row {r}: bad number `{tok}`")))?;
            data.push(x);
        }
        if data.len() - before != cols {
            return Err(Error::format(
                Some(at),
                format!(
                    "row {r} has {} values, expected {cols}",
                    data.len() - before
                ),
            ));
        }
    }
    if let (Some(extra), at) = next(&mut lines, end) {
        if !extra.trim().is_empty() {
            return Err(Error::format(Some(at), "trailing data after last row"));
        }
    }
    Matrix::from_vec(rows, cols, data)
}

pub fn matrix_to_binary(m: &Matrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + 8 * m.as_slice().len());
    out.extend_from_slice(BINARY_MAGIC);
    out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
    for x in m.as_slice() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn matrix_from_binary(bytes: &[u8]) -> Result<Matrix> {
    if bytes.len() < 24 || &bytes[..8] != BINARY_MAGIC {
        return Err(Error::format(Some(0), "missing binary matrix header"));
    }
    let word = |at: usize| u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
    let (rows, cols) = (word(8) as usize, word(16) as usize);
    let need = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| Error::format(Some(8), "dimensions overflow"))?;
    if bytes.len() - 24 != need {
        return Err(Error::format(
            Some(bytes.len().min(24 + need) as u64),
            format!("payload is {} bytes, expected {need}", bytes.len() - 24),
        ));
    }
    let data = bytes[24..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Matrix::from_vec(rows, cols, data)
}

/// Reads either form, chosen by the leading bytes.
pub fn read_matrix(path: &Path) -> Result<Matrix> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(BINARY_MAGIC) {
        return matrix_from_binary(&bytes);
    }
    let text = std::str::from_utf8(&bytes)
        .map_err(|e| Error::format(Some(e.valid_up_to() as u64), "matrix file is not UTF-8"))?;
    matrix_from_text(text)
}

pub fn write_matrix(path: &Path, m: &Matrix, binary: bool) -> Result<()> {
    let bytes = if binary {
        matrix_to_binary(m)
    } else {
        matrix_to_text(m).into_bytes()
    };
    write_bytes(path, &bytes)
}

/// Writes a file, creating parent directories.
pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// A vector stored as an `n x 1` or `1 x n` matrix.
pub fn as_vector(m: &Matrix) -> Result<Vec<f64>> {
    match m.shape() {
        (_, 1) | (1, _) => Ok(m.as_slice().to_vec()),
        (r, c) => Err(Error::Domain(format!("expected a vector, got {r}x{c}"))),
    }
}
