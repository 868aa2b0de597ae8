//! Grayscale PGM images (`P2` text, `P5` binary, maxval up to 255).
//! Pixels load as values in `[0, 1]`.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn token(&mut self) -> Result<(&str, u64)> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::format(
                Some(start as u64),
                "unexpected end of PGM data",
            ));
        }
        let s = std::str::from_utf8(&self.bytes[start..self.pos])
            .map_err(|_| Error::format(Some(start as u64), "non-ASCII PGM token"))?;
        Ok((s, start as u64))
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        let (t, at) = self.token()?;
        t.parse()
            .map_err(|_| Error::format(Some(at), format!("bad PGM {what} `{t}`")))
    }
}

pub fn parse_pgm(bytes: &[u8]) -> Result<Matrix> {
    let mut h = Header { bytes, pos: 0 };
    let (magic, _) = h.token()?;
    let binary = match magic {
        "P5" => true,
        "P2" => false,
        other => {
            return Err(Error::format(
                Some(0),
                format!("not a PGM file (magic `{other}`)"),
            ))
        }
    };
    let width = h.number("width")?;
    let height = h.number("height")?;
    let maxval_at = h.pos;
    let maxval = h.number("maxval")?;
    if !(1..=255).contains(&maxval) {
        return Err(Error::format(
            Some(maxval_at as u64),
            format!("unsupported maxval {maxval}"),
        ));
    }
    let count = width * height;
    let mut px = Vec::with_capacity(count);
    if binary {
        let start = h.pos + 1;
        let data = bytes.get(start..).unwrap_or(&[]);
        if data.len() < count {
            return Err(Error::format(
                Some(bytes.len() as u64),
                "truncated PGM raster",
            ));
        }
        px.extend(data[..count].iter().map(|&b| b as usize));
    } else {
        for _ in 0..count {
            px.push(h.number("pixel")?);
        }
    }
    if let Some(k) = px.iter().position(|&p| p > maxval) {
        return Err(Error::format(None, format!("pixel {k} exceeds maxval")));
    }
    Matrix::from_vec(
        height,
        width,
        px.into_iter().map(|p| p as f64 / maxval as f64).collect(),
    )
}

pub fn load_pgm(path: &Path) -> Result<Matrix> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_pgm(&bytes)
}

/// 8-bit level of a `[0, 1]` value (clamped, rounded).
pub fn to_level(x: f64) -> u8 {
    (x.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn encode_pgm(m: &Matrix, binary: bool) -> Vec<u8> {
    let mut out = format!(
        "{}\n{} {}\n255\n",
        if binary { "P5" } else { "P2" },
        m.cols(),
        m.rows()
    );
    if binary {
        let mut bytes = out.into_bytes();
        bytes.extend(m.as_slice().iter().map(|&x| to_level(x)));
        return bytes;
    }
    for r in 0..m.rows() {
        let line: Vec<String> = m.row(r).iter().map(|&x| to_level(x).to_string()).collect();
        let _ = writeln!(out, "{}", line.join(" "));
    }
    out.into_bytes()
}

pub fn save_pgm(path: &Path, m: &Matrix, binary: bool) -> Result<()> {
    crate::io::write_bytes(path, &encode_pgm(m, binary))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    #[test]
    fn p5_fixture() {
        let mut bytes = b"P5\n# comment\n2 2\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 255, 51, 102]);
        let m = parse_pgm(&bytes).unwrap();
        assert_eq!(m.as_slice(), &[0.0, 1.0, 0.2, 0.4]);
    }

    #[test]
    fn p2_and_p5_agree() {
        let m = Matrix::from_fn(3, 5, |r, c| ((r * 5 + c) * 17 % 256) as f64 / 255.0);
        let a = parse_pgm(&encode_pgm(&m, false)).unwrap();
        let b = parse_pgm(&encode_pgm(&m, true)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, m);
    }

    #[test]
    fn save_load_round_trip() {
        let mut r = rng::stream(1, &[rng::tag::DATA]);
        let m = Matrix::from_fn(16, 16, |_, _| r.random_range(0..=255u32) as f64 / 255.0);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.pgm");
        save_pgm(&p, &m, true).unwrap();
        assert_eq!(load_pgm(&p).unwrap(), m);
    }

    #[test]
    fn malformed_headers() {
        assert!(matches!(
            parse_pgm(b"P6\n1 1\n255\n\0"),
            Err(Error::Format { .. })
        ));
        assert!(matches!(
            parse_pgm(b"P2\n2 x\n255\n"),
            Err(Error::Format { .. })
        ));
        assert!(matches!(
            parse_pgm(b"P5\n2 2\n255\n\0"),
            Err(Error::Format { .. })
        ));
        assert!(matches!(
            parse_pgm(b"P2\n1 1\n10\n11\n"),
            Err(Error::Format { .. })
        ));
    }
}
