//! IDX tensors of unsigned bytes (the MNIST container).
//!
//! Layout: two zero bytes, type byte `0x08`, dimension count, one big-endian
//! `u32` per dimension, then the payload in row-major order.

use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxTensor {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

pub fn parse_idx(bytes: &[u8]) -> Result<IdxTensor> {
    if bytes.len() < 4 {
        return Err(Error::format(
            Some(bytes.len() as u64),
            "truncated IDX magic",
        ));
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(Error::format(
            Some(0),
            "IDX magic must start with two zero bytes",
        ));
    }
    if bytes[2] != 0x08 {
        return Err(Error::format(
            Some(2),
            format!(
                "unsupported IDX element type 0x{:02x} (only unsigned bytes)",
                bytes[2]
            ),
        ));
    }
    let ndim = bytes[3] as usize;
    if ndim == 0 {
        return Err(Error::format(Some(3), "IDX tensor has no dimensions"));
    }
    let header = 4 + 4 * ndim;
    if bytes.len() < header {
        return Err(Error::format(
            Some(bytes.len() as u64),
            "truncated IDX dimensions",
        ));
    }
    let dims: Vec<usize> = (0..ndim)
        .map(|k| u32::from_be_bytes(bytes[4 + 4 * k..8 + 4 * k].try_into().unwrap()) as usize)
        .collect();
    let count = dims
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .ok_or_else(|| Error::format(Some(4), "IDX dimensions overflow"))?;
    let payload = &bytes[header..];
    if payload.len() < count {
        return Err(Error::format(
            Some(bytes.len() as u64),
            format!("truncated IDX payload: {} of {count} bytes", payload.len()),
        ));
    }
    if payload.len() > count {
        return Err(Error::format(
            Some((header + count) as u64),
            "trailing bytes after IDX payload",
        ));
    }
    Ok(IdxTensor {
        dims,
        data: payload.to_vec(),
    })
}

pub fn load_idx(path: &Path) -> Result<IdxTensor> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_idx(&bytes)
}

pub fn encode_idx(t: &IdxTensor) -> Vec<u8> {
    let mut out = vec![0, 0, 0x08, t.dims.len() as u8];
    for &d in &t.dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(&t.data);
    out
}

impl IdxTensor {
    /// One row per item (first dimension), pixels scaled to `[0, 1]`.
    pub fn to_unit_rows(&self) -> Matrix {
        let rows = self.dims[0];
        let cols = if rows == 0 { 0 } else { self.data.len() / rows };
        Matrix::from_fn(rows, cols, |r, c| self.data[r * cols + c] as f64 / 255.0)
    }

    pub fn labels(&self) -> Result<Vec<usize>> {
        if self.dims.len() != 1 {
            return Err(Error::format(
                None,
                format!("label file has {} dimensions", self.dims.len()),
            ));
        }
        Ok(self.data.iter().map(|&b| b as usize).collect())
    }
}

/// First `count` images (rows in `[0, 1]`) and labels of an MNIST-style pair.
pub fn load_labelled(images: &Path, labels: &Path, count: usize) -> Result<(Matrix, Vec<usize>)> {
    let img = load_idx(images)?;
    let lab = load_idx(labels)?.labels()?;
    if img.dims.len() < 2 || img.dims[0] != lab.len() {
        return Err(Error::format(
            None,
            format!("{} images but {} labels", img.dims[0], lab.len()),
        ));
    }
    let count = count.min(lab.len());
    let per: usize = img.dims[1..].iter().product();
    let x = Matrix::from_fn(count, per, |r, c| img.data[r * per + c] as f64 / 255.0);
    Ok((x, lab[..count].to_vec()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn images_round_trip() {
        let t = IdxTensor {
            dims: vec![2, 2, 2],
            data: vec![0, 255, 3, 4, 5, 6, 7, 8],
        };
        let bytes = encode_idx(&t);
        assert_eq!(&bytes[..4], &[0, 0, 8, 3]);
        let back = parse_idx(&bytes).unwrap();
        assert_eq!(back, t);
        let m = back.to_unit_rows();
        assert_eq!(m.shape(), (2, 4));
        assert_eq!(m[(0, 1)], 1.0);
    }

    #[test]
    fn labels_length() {
        let t = IdxTensor {
            dims: vec![10],
            data: (0..10).collect(),
        };
        let bytes = encode_idx(&t);
        assert_eq!(u32::from_be_bytes(bytes[..4].try_into().unwrap()), 0x801);
        assert_eq!(parse_idx(&bytes).unwrap().labels().unwrap().len(), 10);
    }

    #[test]
    fn errors_report_offsets() {
        let mut bytes = encode_idx(&IdxTensor {
            dims: vec![3],
            data: vec![1, 2, 3],
        });
        bytes.pop();
        assert!(matches!(
            parse_idx(&bytes),
            Err(Error::Format {
                offset: Some(10),
                ..
            })
        ));
        bytes[2] = 0x0d;
        assert!(matches!(
            parse_idx(&bytes),
            Err(Error::Format {
                offset: Some(2),
                ..
            })
        ));
        assert!(matches!(
            parse_idx(&[1, 0, 8, 1]),
            Err(Error::Format {
                offset: Some(0),
                ..
            })
        ));
        assert!(matches!(
            parse_idx(&[0, 0, 8, 2, 0]),
            Err(Error::Format {
                offset: Some(5),
                ..
            })
        ));
    }

    #[test]
    fn labelled_pair_from_files() {
        let dir = tempfile::tempdir().unwrap();
        let img = IdxTensor {
            dims: vec![3, 1, 2],
            data: vec![0, 51, 102, 153, 204, 255],
        };
        let lab = IdxTensor {
            dims: vec![3],
            data: vec![4, 1, 9],
        };
        std::fs::write(dir.path().join("i"), encode_idx(&img)).unwrap();
        std::fs::write(dir.path().join("l"), encode_idx(&lab)).unwrap();
        let (x, l) = load_labelled(&dir.path().join("i"), &dir.path().join("l"), 2).unwrap();
        assert_eq!(x.as_slice(), &[0.0, 0.2, 0.4, 0.6]);
        assert_eq!(l, vec![4, 1]);
    }
}
