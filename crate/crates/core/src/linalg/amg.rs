//! Plain-aggregation algebraic multigrid.
//!
//! Piecewise-constant prolongation over greedy aggregates, Galerkin coarse
//! operators, damped-Jacobi V(1,1) smoothing, dense factorization at the
//! coarsest level. Used as a one-V-cycle approximate inverse inside the
//! pressure-stage preconditioner.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::csr::Csr;
use super::dense::DenseLu;

#[derive(Debug, Clone, Copy)]
pub struct AmgParams {
    /// Strength-of-connection threshold: |a_ij| >= theta sqrt(|a_ii a_jj|).
    pub theta: f64,
    /// Damped-Jacobi relaxation weight.
    pub omega: f64,
    /// Rows at or below this size are solved densely.
    pub coarse_size: usize,
    pub max_levels: usize,
}

impl Default for AmgParams {
    fn default() -> Self {
        Self {
            theta: 0.08,
            omega: 0.7,
            coarse_size: 200,
            max_levels: 25,
        }
    }
}

#[derive(Debug, Clone)]
struct Level<T> {
    a: Csr<T>,
    inv_diag: Vec<T>,
    /// Aggregate id per fine row (prolongation is piecewise constant).
    agg: Vec<usize>,
    n_coarse: usize,
}

/// AMG hierarchy. `vcycle` applies one V(1,1) sweep to a residual.
#[derive(Debug, Clone)]
pub struct Amg<T> {
    levels: Vec<Level<T>>,
    coarse_lu: Option<DenseLu<T>>,
    /// Smoother-only fallback when aggregation stagnates.
    pub degenerate: bool,
    params: AmgParams,
    n: usize,
}

fn inv_diag<T: Scalar>(a: &Csr<T>) -> Result<Vec<T>> {
    let floor = T::from_f64_c(1e-300);
    a.extract_diag()
        .iter()
        .enumerate()
        .map(|(i, &d)| {
            if d.abs() < floor {
                Err(Error::PrecondBuild(format!("zero diagonal at row {i} in AMG setup")))
            } else {
                Ok(T::one() / d)
            }
        })
        .collect()
}

/// Greedy aggregation over the strong-connection graph. Strength is
/// row-relative (|a_ij| >= theta max_k |a_ik|, k != i) so that extreme
/// coefficient contrast cannot starve whole rows of strong neighbors.
fn aggregate<T: Scalar>(a: &Csr<T>, theta: T) -> (Vec<usize>, usize) {
    let n = a.rows();
    let mut row_max = vec![T::zero(); n];
    for i in 0..n {
        let (cols, vals) = a.row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            if j != i && v.abs() > row_max[i] {
                row_max[i] = v.abs();
            }
        }
    }
    let strong = |i: usize, j: usize, v: T| -> bool {
        i != j && row_max[i] > T::zero() && v.abs() >= theta * row_max[i]
    };
    let mut agg = vec![usize::MAX; n];
    let mut n_agg = 0usize;
    // Pass 1: seed aggregates from fully unaggregated neighborhoods.
    for i in 0..n {
        if agg[i] != usize::MAX {
            continue;
        }
        let (cols, vals) = a.row(i);
        let nbrs: Vec<usize> = cols
            .iter()
            .zip(vals)
            .filter(|&(&j, &v)| strong(i, j, v))
            .map(|(&j, _)| j)
            .collect();
        if nbrs.iter().any(|&j| agg[j] != usize::MAX) {
            continue;
        }
        agg[i] = n_agg;
        for &j in &nbrs {
            agg[j] = n_agg;
        }
        n_agg += 1;
    }
    // Pass 2: attach leftovers to the largest aggregated neighbor, strong
    // or not; only truly isolated rows become singletons.
    for i in 0..n {
        if agg[i] != usize::MAX {
            continue;
        }
        let (cols, vals) = a.row(i);
        let mut best: Option<(usize, T)> = None;
        for (&j, &v) in cols.iter().zip(vals) {
            if j != i && v.abs() > T::zero() && agg[j] != usize::MAX {
                let w = v.abs();
                if best.map_or(true, |(_, bw)| w > bw) {
                    best = Some((agg[j], w));
                }
            }
        }
        match best {
            Some((g, _)) => agg[i] = g,
            None => {
                agg[i] = n_agg;
                n_agg += 1;
            }
        }
    }
    (agg, n_agg)
}

/// Galerkin coarse operator for piecewise-constant aggregates.
fn coarse_operator<T: Scalar>(a: &Csr<T>, agg: &[usize], n_coarse: usize) -> Result<Csr<T>> {
    let mut trip = Vec::with_capacity(a.nnz());
    for r in 0..a.rows() {
        let (cols, vals) = a.row(r);
        for (k, &c) in cols.iter().enumerate() {
            trip.push((agg[r], agg[c], vals[k]));
        }
    }
    Csr::from_triplets(n_coarse, n_coarse, &trip)
}

impl<T: Scalar> Amg<T> {
    pub fn setup(a: &Csr<T>) -> Result<Self> {
        Self::setup_with(a, AmgParams::default())
    }

    pub fn setup_with(a: &Csr<T>, params: AmgParams) -> Result<Self> {
        if a.rows() != a.cols() {
            return Err(Error::InvalidArgument("AMG needs a square matrix".into()));
        }
        let n = a.rows();
        let theta = T::from_f64_c(params.theta);
        let mut levels: Vec<Level<T>> = Vec::new();
        let mut current = a.clone();
        let mut degenerate = false;
        let mut coarse_lu = None;

        loop {
            if current.rows() <= params.coarse_size {
                coarse_lu = Some(current.to_dense().lu_factor().map_err(|e| {
                    Error::PrecondBuild(format!("coarsest-level factorization failed: {e}"))
                })?);
                break;
            }
            if levels.len() >= params.max_levels {
                degenerate = true;
                break;
            }
            let (agg, n_coarse) = aggregate(&current, theta);
            if n_coarse >= current.rows() {
                // Aggregation stagnated; fall back to the smoother alone.
                degenerate = true;
                break;
            }
            let coarse = coarse_operator(&current, &agg, n_coarse)?;
            levels.push(Level {
                inv_diag: inv_diag(&current)?,
                a: current,
                agg,
                n_coarse,
            });
            current = coarse;
        }

        if degenerate {
            // Keep the finest operator so the fallback smoother still works.
            if levels.is_empty() {
                levels.push(Level {
                    inv_diag: inv_diag(&current)?,
                    a: current,
                    agg: Vec::new(),
                    n_coarse: 0,
                });
            } else {
                levels.truncate(1);
                levels[0].agg.clear();
                levels[0].n_coarse = 0;
            }
        }

        Ok(Self {
            levels,
            coarse_lu,
            degenerate,
            params,
            n,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len() + usize::from(self.coarse_lu.is_some())
    }

    /// One V(1,1) cycle applied to residual `r` (initial guess zero).
    pub fn vcycle(&self, r: &[T]) -> Vec<T> {
        if self.degenerate {
            let lvl = &self.levels[0];
            let omega = T::from_f64_c(self.params.omega);
            return r
                .iter()
                .zip(&lvl.inv_diag)
                .map(|(&v, &d)| omega * d * v)
                .collect();
        }
        self.cycle(0, r)
    }

    fn cycle(&self, level: usize, r: &[T]) -> Vec<T> {
        if level == self.levels.len() {
            return self.coarse_lu.as_ref().unwrap().solve(r);
        }
        let lvl = &self.levels[level];
        let omega = T::from_f64_c(self.params.omega);
        let n = lvl.a.rows();

        // Pre-smooth from a zero guess: x = omega D^{-1} r.
        let mut x: Vec<T> = r
            .iter()
            .zip(&lvl.inv_diag)
            .map(|(&v, &d)| omega * d * v)
            .collect();

        // Residual and restriction (sum over aggregates).
        let mut ax = vec![T::zero(); n];
        lvl.a.spmv_into(&x, &mut ax);
        let mut rc = vec![T::zero(); lvl.n_coarse];
        for i in 0..n {
            rc[lvl.agg[i]] += r[i] - ax[i];
        }

        let xc = self.cycle(level + 1, &rc);

        // Prolongate and correct.
        for i in 0..n {
            x[i] += xc[lvl.agg[i]];
        }

        // Post-smooth: x += omega D^{-1} (r - A x).
        lvl.a.spmv_into(&x, &mut ax);
        for i in 0..n {
            x[i] += omega * lvl.inv_diag[i] * (r[i] - ax[i]);
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{gcr, Dense};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn laplacian_1d(n: usize) -> Csr<f64> {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0));
            if i > 0 {
                t.push((i, i - 1, -1.0));
            }
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
            }
        }
        Csr::from_triplets(n, n, &t).unwrap()
    }

    #[test]
    fn amg_gcr_on_1d_laplacian_converges_fast() {
        let n = 64;
        let a = laplacian_1d(n);
        // Force an actual hierarchy despite the small size.
        let amg = Amg::setup_with(
            &a,
            AmgParams {
                coarse_size: 8,
                ..AmgParams::default()
            },
        )
        .unwrap();
        assert!(amg.num_levels() > 1);
        let mut rng = StdRng::seed_from_u64(1);
        let b: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
        let res = gcr(|v| a.spmv(v), &b, |r| amg.vcycle(r), 1e-8, 25).unwrap();
        assert!(res.converged, "gcr needed {} iterations", res.iterations);
        let xref = a.to_dense().lu_solve(&b).unwrap();
        for i in 0..n {
            assert!((res.x[i] - xref[i]).abs() < 1e-5);
        }
    }

    #[test]
    fn diagonal_matrix_degenerates_gracefully() {
        let n = 300; // above coarse_size so aggregation actually runs
        let t: Vec<(usize, usize, f64)> = (0..n).map(|i| (i, i, (i + 1) as f64)).collect();
        let a = Csr::from_triplets(n, n, &t).unwrap();
        let amg = Amg::setup(&a).unwrap();
        assert!(amg.degenerate);
        let b = vec![1.0; n];
        let res = gcr(|v| a.spmv(v), &b, |r| amg.vcycle(r), 1e-12, 5).unwrap();
        assert!(res.converged && res.iterations <= 2);
    }

    #[test]
    fn vcycle_is_symmetric_for_spd_input() {
        let n = 128;
        let a = laplacian_1d(n);
        let amg = Amg::setup_with(
            &a,
            AmgParams {
                coarse_size: 10,
                ..AmgParams::default()
            },
        )
        .unwrap();
        let mut rng = StdRng::seed_from_u64(2);
        for _ in 0..5 {
            let x: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() - 0.5).collect();
            let y: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() - 0.5).collect();
            let vx = amg.vcycle(&x);
            let vy = amg.vcycle(&y);
            let lhs: f64 = vx.iter().zip(&y).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.iter().zip(&vy).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
        }
    }

    #[test]
    fn coarse_sizes_strictly_decrease() {
        let n = 512;
        let a = laplacian_1d(n);
        let amg = Amg::setup_with(
            &a,
            AmgParams {
                coarse_size: 10,
                ..AmgParams::default()
            },
        )
        .unwrap();
        let mut prev = usize::MAX;
        for lvl in &amg.levels {
            assert!(lvl.a.rows() < prev);
            prev = lvl.a.rows();
            assert!(lvl.n_coarse < lvl.a.rows());
        }
    }

    #[test]
    fn vcycle_reduces_error_as_preconditioner_oracle() {
        // Run-to-convergence check against a dense solve on a 2-D grid.
        let nx = 20;
        let n = nx * nx;
        let mut trip = Vec::new();
        for j in 0..nx {
            for i in 0..nx {
                let r = j * nx + i;
                trip.push((r, r, 4.0));
                if i > 0 {
                    trip.push((r, r - 1, -1.0));
                }
                if i + 1 < nx {
                    trip.push((r, r + 1, -1.0));
                }
                if j > 0 {
                    trip.push((r, r - nx, -1.0));
                }
                if j + 1 < nx {
                    trip.push((r, r + nx, -1.0));
                }
            }
        }
        let a = Csr::from_triplets(n, n, &trip).unwrap();
        let amg = Amg::setup_with(
            &a,
            AmgParams {
                coarse_size: 30,
                ..AmgParams::default()
            },
        )
        .unwrap();
        let mut d = Dense::<f64>::zeros(n, n);
        for r in 0..n {
            let (cols, vals) = a.row(r);
            for (k, &c) in cols.iter().enumerate() {
                d[(r, c)] = vals[k];
            }
        }
        let b = vec![1.0; n];
        let res = gcr(|v| a.spmv(v), &b, |r| amg.vcycle(r), 1e-8, 60).unwrap();
        assert!(res.converged);
        let xref = d.lu_solve(&b).unwrap();
        for i in 0..n {
            assert!((res.x[i] - xref[i]).abs() < 1e-4);
        }
    }
}
