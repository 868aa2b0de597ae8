//! Model checkpoints: a version line, a `kind` line, then named blocks
//! `block <name> <rows> <cols>` each followed by one line per row.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::ml::linear::LinearModel;
use crate::ml::mlp::Mlp2;

pub const CHECKPOINT_TAG: &str = "optomvm-model v1";

pub fn write_blocks(kind: &str, blocks: &[(&str, &Matrix)]) -> String {
    let mut s = format!("{CHECKPOINT_TAG}\nkind {kind}\n");
    for (name, m) in blocks {
        let _ = writeln!(s, "block {name} {} {}", m.rows(), m.cols());
        for r in 0..m.rows() {
            let row: Vec<String> = m.row(r).iter().map(|x| format!("{x}")).collect();
            let _ = writeln!(s, "{}", row.join(" "));
        }
    }
    s
}

pub fn read_blocks(text: &str) -> Result<(String, Vec<(String, Matrix)>)> {
    let mut lines = text.lines().enumerate();
    let bad = |line: usize, msg: String| {
        Error::format(None, format!("checkpoint line {}: {msg}", line + 1))
    };
    match lines.next() {
        Some((_, l)) if l == CHECKPOINT_TAG => {}
        _ => return Err(bad(0, format!("expected `{CHECKPOINT_TAG}`"))),
    }
    let kind = match lines.next() {
        Some((_, l)) if l.starts_with("kind ") => l[5..].to_string(),
        _ => return Err(bad(1, "expected `kind <name>`".into())),
    };
    let mut blocks = Vec::new();
    while let Some((ln, l)) = lines.next() {
        if l.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = l.split_whitespace().collect();
        let (name, rows, cols) = match parts[..] {
            ["block", name, r, c] => (
                name.to_string(),
                r.parse::<usize>().map_err(|e| bad(ln, e.to_string()))?,
                c.parse::<usize>().map_err(|e| bad(ln, e.to_string()))?,
            ),
            _ => return Err(bad(ln, "expected `block <name> <rows> <cols>`".into())),
        };
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            let (ln, l) = lines
                .next()
                .ok_or_else(|| bad(ln, format!("block {name} is truncated")))?;
            let before = data.len();
            for t in l.split_whitespace() {
                data.push(
                    t.parse::<f64>()
                        .map_err(|_| bad(ln, format!("bad number `{t}`")))?,
                );
            }
            if data.len() - before != cols {
                return Err(bad(ln, format!("expected {cols} values")));
            }
        }
        blocks.push((name, Matrix::from_vec(rows, cols, data)?));
    }
    Ok((kind, blocks))
}

fn take(blocks: &mut Vec<(String, Matrix)>, name: &str) -> Result<Matrix> {
    let k = blocks
        .iter()
        .position(|(n, _)| n == name)
        .ok_or_else(|| Error::format(None, format!("checkpoint lacks block `{name}`")))?;
    Ok(blocks.remove(k).1)
}

impl Mlp2 {
    pub fn to_checkpoint(&self) -> String {
        let b1 = Matrix::from_vec(self.b1.len(), 1, self.b1.clone()).unwrap();
        let b2 = Matrix::from_vec(self.b2.len(), 1, self.b2.clone()).unwrap();
        write_blocks(
            "mlp2",
            &[("w1", &self.w1), ("b1", &b1), ("w2", &self.w2), ("b2", &b2)],
        )
    }

    pub fn from_checkpoint(text: &str) -> Result<Self> {
        let (kind, mut blocks) = read_blocks(text)?;
        if kind != "mlp2" {
            return Err(Error::format(
                None,
                format!("checkpoint holds `{kind}`, not mlp2"),
            ));
        }
        let m = Self {
            w1: take(&mut blocks, "w1")?,
            b1: take(&mut blocks, "b1")?.into_vec(),
            w2: take(&mut blocks, "w2")?,
            b2: take(&mut blocks, "b2")?.into_vec(),
        };
        let (_, h, c) = m.dims();
        if m.b1.len() != h || m.w2.cols() != h || m.b2.len() != c {
            return Err(Error::format(None, "inconsistent mlp2 block shapes"));
        }
        Ok(m)
    }
}

impl LinearModel {
    pub fn to_checkpoint(&self) -> String {
        write_blocks("linear", &[("w", &self.w)])
    }

    pub fn from_checkpoint(text: &str) -> Result<Self> {
        let (kind, mut blocks) = read_blocks(text)?;
        if kind != "linear" {
            return Err(Error::format(
                None,
                format!("checkpoint holds `{kind}`, not linear"),
            ));
        }
        Ok(Self {
            w: take(&mut blocks, "w")?,
            loss_history: Vec::new(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mlp_round_trip() {
        let m = Mlp2::new(5, 3, 2, 9);
        let back = Mlp2::from_checkpoint(&m.to_checkpoint()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn linear_round_trip_and_errors() {
        let w = Matrix::from_fn(2, 3, |r, c| r as f64 - c as f64 * 0.1);
        let m = LinearModel {
            w,
            loss_history: vec![],
        };
        assert_eq!(LinearModel::from_checkpoint(&m.to_checkpoint()).unwrap(), m);
        assert!(Mlp2::from_checkpoint(&m.to_checkpoint()).is_err());
        assert!(read_blocks("nope").is_err());
        assert!(read_blocks("optomvm-model v1\nkind x\nblock w 2 1\n1\n").is_err());
    }
}
