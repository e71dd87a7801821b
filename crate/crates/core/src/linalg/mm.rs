//! Matrix Market coordinate format (real, general) reader/writer.
//!
//! Values are written with 17 significant digits so a write/read cycle is
//! bit-exact for f64.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::csr::Csr;

pub fn write_matrix_market<T: Scalar>(a: &Csr<T>, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
    writeln!(w, "{} {} {}", a.rows(), a.cols(), a.nnz())?;
    for r in 0..a.rows() {
        let (cols, vals) = a.row(r);
        for (k, &c) in cols.iter().enumerate() {
            writeln!(w, "{} {} {:.16e}", r + 1, c + 1, vals[k])?;
        }
    }
    Ok(())
}

pub fn read_matrix_market<T: Scalar>(path: &Path) -> Result<Csr<T>> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();

    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty Matrix Market file".into()))??;
    let lower = header.to_lowercase();
    if !lower.starts_with("%%matrixmarket matrix coordinate real") {
        return Err(Error::Parse(format!("unsupported Matrix Market header: {header}")));
    }
    if !lower.contains("general") {
        return Err(Error::Parse("only general symmetry is supported".into()));
    }

    let mut dims: Option<(usize, usize, usize)> = None;
    let mut triplets: Vec<(usize, usize, T)> = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        let s = line.trim();
        if s.is_empty() || s.starts_with('%') {
            continue;
        }
        let toks: Vec<&str> = s.split_whitespace().collect();
        if dims.is_none() {
            if toks.len() != 3 {
                return Err(Error::Parse(format!("bad size line at line {}", lineno + 2)));
            }
            let parse = |t: &str| {
                t.parse::<usize>()
                    .map_err(|_| Error::Parse(format!("bad dimension token '{t}'")))
            };
            dims = Some((parse(toks[0])?, parse(toks[1])?, parse(toks[2])?));
            triplets.reserve(dims.unwrap().2);
            continue;
        }
        if toks.len() != 3 {
            return Err(Error::Parse(format!("bad entry at line {}", lineno + 2)));
        }
        let i: usize = toks[0]
            .parse()
            .map_err(|_| Error::Parse(format!("bad row index '{}'", toks[0])))?;
        let j: usize = toks[1]
            .parse()
            .map_err(|_| Error::Parse(format!("bad column index '{}'", toks[1])))?;
        let v: f64 = toks[2]
            .parse()
            .map_err(|_| Error::Parse(format!("bad value '{}'", toks[2])))?;
        if i == 0 || j == 0 {
            return Err(Error::Parse("Matrix Market indices are 1-based".into()));
        }
        triplets.push((i - 1, j - 1, T::from_f64_c(v)));
    }
    let (rows, cols, nnz) = dims.ok_or_else(|| Error::Parse("missing size line".into()))?;
    if triplets.len() != nnz {
        return Err(Error::Parse(format!(
            "entry count mismatch: header says {nnz}, found {}",
            triplets.len()
        )));
    }
    Csr::from_triplets(rows, cols, &triplets)
}
