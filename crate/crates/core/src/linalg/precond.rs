//! Classical pointwise preconditioners: Jacobi, ILU(0), and the reverse
//! Cuthill-McKee ordering used in the global-stage comparison.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::csr::Csr;

const PIVOT_FLOOR: f64 = 1e-300;

/// Diagonal (Jacobi) preconditioner.
#[derive(Debug, Clone)]
pub struct Jacobi<T> {
    inv_diag: Vec<T>,
}

impl<T: Scalar> Jacobi<T> {
    pub fn build(a: &Csr<T>) -> Result<Self> {
        let floor = T::from_f64_c(PIVOT_FLOOR);
        let diag = a.extract_diag();
        let mut inv_diag = Vec::with_capacity(diag.len());
        for (i, d) in diag.iter().enumerate() {
            if d.abs() < floor {
                return Err(Error::PrecondBuild(format!("zero diagonal at row {i}")));
            }
            inv_diag.push(T::one() / *d);
        }
        Ok(Self { inv_diag })
    }

    pub fn from_inv_diag(inv_diag: Vec<T>) -> Self {
        Self { inv_diag }
    }

    pub fn apply(&self, r: &[T]) -> Vec<T> {
        r.iter().zip(&self.inv_diag).map(|(&v, &d)| v * d).collect()
    }

    pub fn inv_diag(&self) -> &[T] {
        &self.inv_diag
    }
}

/// Zero fill-in incomplete LU factorization on the matrix pattern.
///
/// L (unit lower) and U share the storage of a pattern copy of A.
#[derive(Debug, Clone)]
pub struct Ilu0<T> {
    factors: Csr<T>,
    diag_pos: Vec<usize>,
}

impl<T: Scalar> Ilu0<T> {
    pub fn build(a: &Csr<T>) -> Result<Self> {
        let n = a.rows();
        if n != a.cols() {
            return Err(Error::InvalidArgument("ILU(0) needs a square matrix".into()));
        }
        let floor = T::from_f64_c(PIVOT_FLOOR);
        let mut factors = a.clone();
        let indptr: Vec<usize> = factors.indptr().to_vec();
        let indices: Vec<usize> = factors.indices().to_vec();

        let mut diag_pos = vec![usize::MAX; n];
        for i in 0..n {
            for k in indptr[i]..indptr[i + 1] {
                if indices[k] == i {
                    diag_pos[i] = k;
                }
            }
            if diag_pos[i] == usize::MAX {
                return Err(Error::PrecondBuild(format!("missing diagonal at row {i}")));
            }
        }

        // IKJ variant restricted to the pattern of A.
        let mut pos_of_col = vec![usize::MAX; n];
        for i in 0..n {
            let (lo, hi) = (indptr[i], indptr[i + 1]);
            for k in lo..hi {
                pos_of_col[indices[k]] = k;
            }
            for k in lo..hi {
                let col = indices[k];
                if col >= i {
                    break;
                }
                let u_kk = factors.values()[diag_pos[col]];
                if u_kk.abs() < floor {
                    return Err(Error::PrecondBuild(format!(
                        "zero pivot at row {col} during ILU(0)"
                    )));
                }
                let f = factors.values()[k] / u_kk;
                factors.values_mut()[k] = f;
                for kk in diag_pos[col] + 1..indptr[col + 1] {
                    let j = indices[kk];
                    let p = pos_of_col[j];
                    if p != usize::MAX {
                        let delta = f * factors.values()[kk];
                        factors.values_mut()[p] -= delta;
                    }
                }
            }
            let d = factors.values()[diag_pos[i]];
            if d.abs() < floor {
                return Err(Error::PrecondBuild(format!("zero pivot at row {i} during ILU(0)")));
            }
            for k in lo..hi {
                pos_of_col[indices[k]] = usize::MAX;
            }
        }
        Ok(Self { factors, diag_pos })
    }

    /// z = U^{-1} L^{-1} r.
    pub fn apply(&self, r: &[T]) -> Vec<T> {
        let n = self.factors.rows();
        let indptr = self.factors.indptr();
        let indices = self.factors.indices();
        let values = self.factors.values();
        let mut x = r.to_vec();
        for i in 0..n {
            let mut acc = x[i];
            for k in indptr[i]..self.diag_pos[i] {
                acc = acc - values[k] * x[indices[k]];
            }
            x[i] = acc;
        }
        for i in (0..n).rev() {
            let mut acc = x[i];
            for k in self.diag_pos[i] + 1..indptr[i + 1] {
                acc = acc - values[k] * x[indices[k]];
            }
            x[i] = acc / values[self.diag_pos[i]];
        }
        x
    }

    /// Combined L\U factors (pattern equals the input matrix pattern).
    pub fn factors(&self) -> &Csr<T> {
        &self.factors
    }
}

/// Reverse Cuthill-McKee ordering of a square pattern; returns `perm`
/// with `perm[new] = old`.
pub fn rcm_ordering<T: Scalar>(a: &Csr<T>) -> Vec<usize> {
    let n = a.rows();
    let degree = |i: usize| a.row(i).0.len();
    let mut visited = vec![false; n];
    let mut order: Vec<usize> = Vec::with_capacity(n);
    loop {
        // Unvisited node of minimum degree seeds the next component.
        let seed = (0..n)
            .filter(|&i| !visited[i])
            .min_by_key(|&i| degree(i));
        let Some(seed) = seed else { break };
        let mut queue = std::collections::VecDeque::new();
        queue.push_back(seed);
        visited[seed] = true;
        while let Some(u) = queue.pop_front() {
            order.push(u);
            let mut nbrs: Vec<usize> = a
                .row(u)
                .0
                .iter()
                .copied()
                .filter(|&v| v != u && !visited[v])
                .collect();
            nbrs.sort_unstable_by_key(|&v| degree(v));
            for v in nbrs {
                visited[v] = true;
                queue.push_back(v);
            }
        }
    }
    order.reverse();
    order
}
