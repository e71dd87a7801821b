//! Krylov solvers: full GMRES and GCR, both right-preconditioned.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Outcome of a Krylov solve.
#[derive(Debug, Clone)]
pub struct KrylovResult<T> {
    pub x: Vec<T>,
    pub iterations: usize,
    pub converged: bool,
    /// Relative residual history, starting at 1.
    pub residuals: Vec<T>,
}

fn norm2<T: Scalar>(v: &[T]) -> T {
    v.iter().map(|&a| a * a).fold(T::zero(), |a, b| a + b).sqrt()
}

fn check_finite<T: Scalar>(v: &[T], what: &str) -> Result<()> {
    if v.iter().any(|a| !a.is_finite()) {
        return Err(Error::Numeric(format!("non-finite value in {what} output")));
    }
    Ok(())
}

/// Right-preconditioned full (restartless) GMRES with Givens rotations,
/// in the flexible (FGMRES) formulation: the preconditioned basis vectors
/// are stored and the solution is assembled as x = Z y, so `apply_m` may
/// itself be an inner iteration with a tolerance. For a fixed linear
/// preconditioner this coincides with classical right-preconditioned GMRES.
///
/// Solves A x = b with x0 = 0; stops when ||r_k||/||r_0|| < tol or at
/// `maxit` (flagged in the result). The preconditioner acts as z = M(v).
pub fn gmres<T, A, M>(apply_a: A, b: &[T], apply_m: M, tol: T, maxit: usize) -> Result<KrylovResult<T>>
where
    T: Scalar,
    A: Fn(&[T]) -> Vec<T>,
    M: Fn(&[T]) -> Vec<T>,
{
    let n = b.len();
    check_finite(b, "rhs")?;
    let beta = norm2(b);
    let mut residuals = vec![T::one()];
    if beta == T::zero() {
        return Ok(KrylovResult {
            x: vec![T::zero(); n],
            iterations: 0,
            converged: true,
            residuals,
        });
    }

    let mut basis: Vec<Vec<T>> = vec![b.iter().map(|&v| v / beta).collect()];
    let mut zs: Vec<Vec<T>> = Vec::new(); // preconditioned basis, z_j = M(v_j)
    let mut h: Vec<Vec<T>> = Vec::new(); // h[j] holds column j (len j+2)
    let mut cs: Vec<T> = Vec::new();
    let mut sn: Vec<T> = Vec::new();
    let mut g = vec![beta];
    let mut converged = false;
    let mut iters = 0;

    for j in 0..maxit {
        let z = apply_m(&basis[j]);
        check_finite(&z, "preconditioner")?;
        let mut w = apply_a(&z);
        check_finite(&w, "operator")?;
        zs.push(z);

        // Modified Gram-Schmidt.
        let mut hj = vec![T::zero(); j + 2];
        for (i, v) in basis.iter().enumerate() {
            let hij: T = w.iter().zip(v).map(|(&a, &b)| a * b).sum();
            hj[i] = hij;
            for (wk, &vk) in w.iter_mut().zip(v) {
                *wk -= hij * vk;
            }
        }
        let wnorm = norm2(&w);
        hj[j + 1] = wnorm;

        // Apply accumulated rotations to the new column.
        for i in 0..j {
            let t = cs[i] * hj[i] + sn[i] * hj[i + 1];
            hj[i + 1] = -sn[i] * hj[i] + cs[i] * hj[i + 1];
            hj[i] = t;
        }
        // New rotation annihilating hj[j+1].
        let denom = (hj[j] * hj[j] + hj[j + 1] * hj[j + 1]).sqrt();
        let (c, s) = if denom == T::zero() {
            (T::one(), T::zero())
        } else {
            (hj[j] / denom, hj[j + 1] / denom)
        };
        hj[j] = c * hj[j] + s * hj[j + 1];
        hj[j + 1] = T::zero();
        cs.push(c);
        sn.push(s);
        g.push(-s * g[j]);
        g[j] = c * g[j];
        h.push(hj);

        iters = j + 1;
        let rel = g[j + 1].abs() / beta;
        residuals.push(rel);
        if rel < tol {
            converged = true;
            break;
        }
        if wnorm == T::zero() {
            // Happy breakdown: Krylov space exhausted, solution exact.
            converged = true;
            break;
        }
        basis.push(w.iter().map(|&v| v / wnorm).collect());
    }

    // Back substitution for y in H y = g.
    let m = iters;
    let mut y = vec![T::zero(); m];
    for i in (0..m).rev() {
        let mut acc = g[i];
        for k in i + 1..m {
            acc = acc - h[k][i] * y[k];
        }
        y[i] = acc / h[i][i];
    }
    // x = Z y (flexible right preconditioning).
    let mut x = vec![T::zero(); n];
    for (k, yk) in y.iter().enumerate() {
        for (xi, &zi) in x.iter_mut().zip(&zs[k]) {
            *xi += *yk * zi;
        }
    }
    Ok(KrylovResult {
        x,
        iterations: iters,
        converged,
        residuals,
    })
}

/// Right-preconditioned generalized conjugate residual method with full
/// direction storage. Non-convergence at `maxit` returns the best iterate
/// with `converged = false`, not an error.
pub fn gcr<T, A, M>(apply_a: A, b: &[T], apply_m: M, tol: T, maxit: usize) -> Result<KrylovResult<T>>
where
    T: Scalar,
    A: Fn(&[T]) -> Vec<T>,
    M: Fn(&[T]) -> Vec<T>,
{
    let n = b.len();
    check_finite(b, "rhs")?;
    let beta = norm2(b);
    let mut residuals = vec![T::one()];
    let mut x = vec![T::zero(); n];
    if beta == T::zero() {
        return Ok(KrylovResult {
            x,
            iterations: 0,
            converged: true,
            residuals,
        });
    }
    let mut r = b.to_vec();
    let mut ps: Vec<Vec<T>> = Vec::new();
    let mut aps: Vec<Vec<T>> = Vec::new();
    let mut converged = false;
    let mut iters = 0;

    for _ in 0..maxit {
        let mut p = apply_m(&r);
        check_finite(&p, "preconditioner")?;
        let mut ap = apply_a(&p);
        check_finite(&ap, "operator")?;
        // A-orthogonalize against previous directions.
        for (pk, apk) in ps.iter().zip(&aps) {
            let beta_k: T = ap.iter().zip(apk).map(|(&a, &b)| a * b).sum();
            for i in 0..n {
                p[i] -= beta_k * pk[i];
                ap[i] -= beta_k * apk[i];
            }
        }
        let apnorm = norm2(&ap);
        if apnorm == T::zero() {
            break;
        }
        for i in 0..n {
            p[i] /= apnorm;
            ap[i] /= apnorm;
        }
        let alpha: T = r.iter().zip(&ap).map(|(&a, &b)| a * b).sum();
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        ps.push(p);
        aps.push(ap);
        iters += 1;
        let rel = norm2(&r) / beta;
        residuals.push(rel);
        if rel < tol {
            converged = true;
            break;
        }
    }
    Ok(KrylovResult {
        x,
        iterations: iters,
        converged,
        residuals,
    })
}
