//! Compressed sparse row matrix.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::dense::Dense;

/// Sparse matrix in compressed sparse row storage.
///
/// Column indices are sorted and unique within each row.
#[derive(Debug, Clone, PartialEq)]
pub struct Csr<T> {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<T>,
}

impl<T: Scalar> Csr<T> {
    /// Builds from triplets, summing duplicates.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        triplets: &[(usize, usize, T)],
    ) -> Result<Self> {
        for &(i, j, _) in triplets {
            if i >= rows || j >= cols {
                return Err(Error::InvalidArgument(format!(
                    "triplet ({i},{j}) out of {rows}x{cols} bounds"
                )));
            }
        }
        // Count per row, then bucket-sort.
        let mut counts = vec![0usize; rows + 1];
        for &(i, _, _) in triplets {
            counts[i + 1] += 1;
        }
        for r in 0..rows {
            counts[r + 1] += counts[r];
        }
        let mut col_buf = vec![0usize; triplets.len()];
        let mut val_buf = vec![T::zero(); triplets.len()];
        let mut next = counts.clone();
        for &(i, j, v) in triplets {
            let pos = next[i];
            col_buf[pos] = j;
            val_buf[pos] = v;
            next[i] += 1;
        }
        let mut indptr = Vec::with_capacity(rows + 1);
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        indptr.push(0);
        let mut order: Vec<usize> = Vec::new();
        for r in 0..rows {
            let (lo, hi) = (counts[r], counts[r + 1]);
            order.clear();
            order.extend(lo..hi);
            order.sort_unstable_by_key(|&k| col_buf[k]);
            let mut last_col = usize::MAX;
            for &k in &order {
                if col_buf[k] == last_col {
                    let v = values.last_mut().unwrap();
                    *v += val_buf[k];
                } else {
                    indices.push(col_buf[k]);
                    values.push(val_buf[k]);
                    last_col = col_buf[k];
                }
            }
            indptr.push(indices.len());
        }
        Ok(Self {
            rows,
            cols,
            indptr,
            indices,
            values,
        })
    }

    /// Builds directly from raw CSR arrays; validates the invariants.
    pub fn from_raw(
        rows: usize,
        cols: usize,
        indptr: Vec<usize>,
        indices: Vec<usize>,
        values: Vec<T>,
    ) -> Result<Self> {
        if indptr.len() != rows + 1 || indptr[0] != 0 || *indptr.last().unwrap() != indices.len() {
            return Err(Error::InvalidArgument("bad indptr".into()));
        }
        if indices.len() != values.len() {
            return Err(Error::InvalidArgument("indices/values length mismatch".into()));
        }
        for r in 0..rows {
            if indptr[r] > indptr[r + 1] {
                return Err(Error::InvalidArgument("indptr not monotone".into()));
            }
            let row = &indices[indptr[r]..indptr[r + 1]];
            for w in row.windows(2) {
                if w[0] >= w[1] {
                    return Err(Error::InvalidArgument(format!(
                        "row {r} indices not strictly increasing"
                    )));
                }
            }
            if let Some(&last) = row.last() {
                if last >= cols {
                    return Err(Error::InvalidArgument(format!("row {r} index out of range")));
                }
            }
        }
        Ok(Self {
            rows,
            cols,
            indptr,
            indices,
            values,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            rows: n,
            cols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            values: vec![T::one(); n],
        }
    }

    pub fn zero(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            indptr: vec![0; rows + 1],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn indptr(&self) -> &[usize] {
        &self.indptr
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    /// Column indices and values of row `r`.
    pub fn row(&self, r: usize) -> (&[usize], &[T]) {
        let (lo, hi) = (self.indptr[r], self.indptr[r + 1]);
        (&self.indices[lo..hi], &self.values[lo..hi])
    }

    /// Stored value at (i, j), or zero.
    pub fn get(&self, i: usize, j: usize) -> T {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(k) => vals[k],
            Err(_) => T::zero(),
        }
    }

    /// y = A x.
    pub fn spmv(&self, x: &[T]) -> Vec<T> {
        let mut y = vec![T::zero(); self.rows];
        self.spmv_into(x, &mut y);
        y
    }

    /// y = A x, into a caller-provided buffer.
    pub fn spmv_into(&self, x: &[T], y: &mut [T]) {
        assert_eq!(x.len(), self.cols, "spmv dimension mismatch");
        assert_eq!(y.len(), self.rows, "spmv dimension mismatch");
        for r in 0..self.rows {
            let mut acc = T::zero();
            for k in self.indptr[r]..self.indptr[r + 1] {
                acc += self.values[k] * x[self.indices[k]];
            }
            y[r] = acc;
        }
    }

    /// y += A x.
    pub fn spmv_add(&self, x: &[T], y: &mut [T]) {
        assert_eq!(x.len(), self.cols, "spmv dimension mismatch");
        assert_eq!(y.len(), self.rows, "spmv dimension mismatch");
        for r in 0..self.rows {
            let mut acc = T::zero();
            for k in self.indptr[r]..self.indptr[r + 1] {
                acc += self.values[k] * x[self.indices[k]];
            }
            y[r] += acc;
        }
    }

    pub fn transpose(&self) -> Self {
        let mut counts = vec![0usize; self.cols + 1];
        for &j in &self.indices {
            counts[j + 1] += 1;
        }
        for c in 0..self.cols {
            counts[c + 1] += counts[c];
        }
        let mut indices = vec![0usize; self.nnz()];
        let mut values = vec![T::zero(); self.nnz()];
        let mut next = counts.clone();
        for r in 0..self.rows {
            for k in self.indptr[r]..self.indptr[r + 1] {
                let j = self.indices[k];
                let pos = next[j];
                indices[pos] = r;
                values[pos] = self.values[k];
                next[j] += 1;
            }
        }
        Self {
            rows: self.cols,
            cols: self.rows,
            indptr: counts,
            indices,
            values,
        }
    }

    /// Main diagonal (zero where no entry is stored).
    pub fn extract_diag(&self) -> Vec<T> {
        let n = self.rows.min(self.cols);
        (0..n).map(|i| self.get(i, i)).collect()
    }

    /// Dense submatrix on the given row/column index sets, preserving the
    /// requested ordering.
    pub fn extract_submatrix(&self, rows: &[usize], cols: &[usize]) -> Result<Dense<T>> {
        for &r in rows {
            if r >= self.rows {
                return Err(Error::InvalidArgument(format!("row index {r} out of range")));
            }
        }
        let mut col_pos = vec![usize::MAX; self.cols];
        for (k, &c) in cols.iter().enumerate() {
            if c >= self.cols {
                return Err(Error::InvalidArgument(format!("column index {c} out of range")));
            }
            col_pos[c] = k;
        }
        let mut out = Dense::zeros(rows.len(), cols.len());
        for (ri, &r) in rows.iter().enumerate() {
            let (cidx, vals) = self.row(r);
            for (k, &c) in cidx.iter().enumerate() {
                let p = col_pos[c];
                if p != usize::MAX {
                    out[(ri, p)] = vals[k];
                }
            }
        }
        Ok(out)
    }

    /// C = A + B.
    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::InvalidArgument("add dimension mismatch".into()));
        }
        let mut indptr = Vec::with_capacity(self.rows + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for r in 0..self.rows {
            let (ca, va) = self.row(r);
            let (cb, vb) = other.row(r);
            let (mut ia, mut ib) = (0, 0);
            while ia < ca.len() || ib < cb.len() {
                let ja = if ia < ca.len() { ca[ia] } else { usize::MAX };
                let jb = if ib < cb.len() { cb[ib] } else { usize::MAX };
                if ja == jb {
                    indices.push(ja);
                    values.push(va[ia] + vb[ib]);
                    ia += 1;
                    ib += 1;
                } else if ja < jb {
                    indices.push(ja);
                    values.push(va[ia]);
                    ia += 1;
                } else {
                    indices.push(jb);
                    values.push(vb[ib]);
                    ib += 1;
                }
            }
            indptr.push(indices.len());
        }
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            indptr,
            indices,
            values,
        })
    }

    /// C = A * B (sparse-sparse product).
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::InvalidArgument("matmul dimension mismatch".into()));
        }
        let mut indptr = Vec::with_capacity(self.rows + 1);
        let mut indices: Vec<usize> = Vec::new();
        let mut values: Vec<T> = Vec::new();
        indptr.push(0);
        // Gustavson row merge with a dense accumulator.
        let mut acc = vec![T::zero(); other.cols];
        let mut marker = vec![usize::MAX; other.cols];
        let mut row_cols: Vec<usize> = Vec::new();
        for r in 0..self.rows {
            row_cols.clear();
            let (ca, va) = self.row(r);
            for (k, &j) in ca.iter().enumerate() {
                let a = va[k];
                let (cb, vb) = other.row(j);
                for (kb, &c) in cb.iter().enumerate() {
                    if marker[c] != r {
                        marker[c] = r;
                        acc[c] = T::zero();
                        row_cols.push(c);
                    }
                    acc[c] += a * vb[kb];
                }
            }
            row_cols.sort_unstable();
            for &c in &row_cols {
                indices.push(c);
                values.push(acc[c]);
            }
            indptr.push(indices.len());
        }
        Ok(Self {
            rows: self.rows,
            cols: other.cols,
            indptr,
            indices,
            values,
        })
    }

    /// Drops stored entries with |v| <= threshold.
    pub fn drop_below(&self, threshold: T) -> Self {
        let mut indptr = Vec::with_capacity(self.rows + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for r in 0..self.rows {
            let (cols, vals) = self.row(r);
            for (k, &c) in cols.iter().enumerate() {
                if vals[k].abs() > threshold {
                    indices.push(c);
                    values.push(vals[k]);
                }
            }
            indptr.push(indices.len());
        }
        Self {
            rows: self.rows,
            cols: self.cols,
            indptr,
            indices,
            values,
        }
    }

    /// Symmetric permutation P A P^T; `perm[new] = old`.
    pub fn permute_sym(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.rows || self.rows != self.cols {
            return Err(Error::InvalidArgument("permutation size mismatch".into()));
        }
        let mut inv = vec![0usize; perm.len()];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let mut triplets = Vec::with_capacity(self.nnz());
        for r in 0..self.rows {
            let (cols, vals) = self.row(r);
            for (k, &c) in cols.iter().enumerate() {
                triplets.push((inv[r], inv[c], vals[k]));
            }
        }
        Self::from_triplets(self.rows, self.cols, &triplets)
    }

    /// Dense copy, for small oracles.
    pub fn to_dense(&self) -> Dense<T> {
        let mut out = Dense::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            let (cols, vals) = self.row(r);
            for (k, &c) in cols.iter().enumerate() {
                out[(r, c)] = vals[k];
            }
        }
        out
    }

    /// Max |a_ij - a_ji| over stored entries of a square matrix.
    pub fn symmetry_gap(&self) -> T {
        let mut gap = T::zero();
        for r in 0..self.rows {
            let (cols, vals) = self.row(r);
            for (k, &c) in cols.iter().enumerate() {
                let d = (vals[k] - self.get(c, r)).abs();
                if d > gap {
                    gap = d;
                }
            }
        }
        gap
    }
}
