//! Restricted-column approximation of the decoupling factor
//! F = -J_pipi^{-1} J_pip and the resulting inexact Schur complement
//! S~ = J_pp + J_ppi F~.

use super::{static_pattern, PatternSpec};
use crate::disc::BlockJacobian;
use crate::error::{Error, Result};
use crate::grid::HexMesh;
use crate::linalg::Csr;
use rayon::prelude::*;

/// Diagnostics from building one column.
#[derive(Debug, Clone, Default)]
pub struct ColumnBuild {
    /// Entries of the column (face index, value).
    pub entries: Vec<(usize, f64)>,
    /// Restricted solves performed.
    pub solves: usize,
    /// Fell back to the original pattern after a singular restricted block.
    pub fallback: bool,
    /// Dynamic growth stopped early on a numerically zero residual.
    pub early_stop: bool,
}

/// The assembled factor with build statistics.
#[derive(Debug, Clone)]
pub struct EdfaFactor {
    /// n_f x (n_E + n_w); the trailing well columns are structurally empty.
    pub f_tilde: Csr<f64>,
    pub restricted_solves: usize,
    pub fallback_columns: usize,
    pub early_stops: usize,
    /// Total pattern entries over all columns.
    pub pattern_entries: usize,
}

/// Non-zero (rows, values) of column `q` of a CSR matrix, read off its
/// transpose.
fn column_of(at: &Csr<f64>, q: usize) -> (Vec<usize>, Vec<f64>) {
    let (idx, vals) = at.row(q);
    (idx.to_vec(), vals.to_vec())
}

/// Solves the column problem restricted to `pattern` (which must contain
/// the column's non-zeros) and scatters the result back.
pub fn edfa_column_static(
    j_pipi: &Csr<f64>,
    col_rows: &[usize],
    col_vals: &[f64],
    pattern: &[usize],
) -> Result<ColumnBuild> {
    debug_assert!(col_rows.iter().all(|r| pattern.binary_search(r).is_ok()));
    let solve = |pat: &[usize]| -> Result<Vec<(usize, f64)>> {
        let a = j_pipi.extract_submatrix(pat, pat)?;
        let mut rhs = vec![0.0; pat.len()];
        for (&r, &v) in col_rows.iter().zip(col_vals) {
            rhs[pat.binary_search(&r).expect("pattern contains the column support")] = -v;
        }
        let f = a.lu_solve(&rhs)?;
        Ok(pat.iter().copied().zip(f).collect())
    };
    match solve(pattern) {
        Ok(entries) => Ok(ColumnBuild {
            entries,
            solves: 1,
            fallback: false,
            early_stop: false,
        }),
        Err(Error::Singular(_)) => {
            // Retry on the column's own support.
            let entries = solve(col_rows)?;
            Ok(ColumnBuild {
                entries,
                solves: 2,
                fallback: true,
                early_stop: false,
            })
        }
        Err(e) => Err(e),
    }
}

/// Grows the pattern from the column support, adding the `n_add` positions
/// with the largest residual magnitude per pass (ties to the lower index)
/// until `n_ent` new entries were added or the residual vanishes.
pub fn edfa_column_dynamic(
    j_pipi: &Csr<f64>,
    col_rows: &[usize],
    col_vals: &[f64],
    n_ent: usize,
    n_add: usize,
) -> Result<ColumnBuild> {
    let mut pattern: Vec<usize> = col_rows.to_vec();
    pattern.sort_unstable();
    pattern.dedup();
    let mut out = edfa_column_static(j_pipi, col_rows, col_vals, &pattern)?;
    if n_ent == 0 {
        return Ok(out);
    }
    if n_add == 0 || n_add > n_ent {
        return Err(Error::Config(format!(
            "dynamic pattern needs 1 <= n_add ({n_add}) <= n_ent ({n_ent})"
        )));
    }
    let col_scale = col_vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let n = j_pipi.rows();
    let mut added = 0;
    while added < n_ent {
        // Residual of the unrestricted equation at the current iterate:
        // r = j_pip_col + J_pipi f~.
        let mut f_full = vec![0.0; n];
        for &(r, v) in &out.entries {
            f_full[r] = v;
        }
        let mut res = j_pipi.spmv(&f_full);
        for (&r, &v) in col_rows.iter().zip(col_vals) {
            res[r] += v;
        }
        let max_res = res.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if max_res <= 1e-14 * col_scale.max(1e-300) {
            out.early_stop = true;
            break;
        }
        // Rank candidate positions outside the pattern.
        let take = n_add.min(n_ent - added);
        let mut cand: Vec<(usize, f64)> = (0..n)
            .filter(|i| pattern.binary_search(i).is_err() && res[*i] != 0.0)
            .map(|i| (i, res[i].abs()))
            .collect();
        if cand.is_empty() {
            out.early_stop = true;
            break;
        }
        cand.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        for &(i, _) in cand.iter().take(take) {
            pattern.push(i);
            added += 1;
        }
        pattern.sort_unstable();
        let next = edfa_column_static(j_pipi, col_rows, col_vals, &pattern)?;
        out.entries = next.entries;
        out.solves += next.solves;
        out.fallback |= next.fallback;
    }
    Ok(out)
}

/// Builds all reservoir columns of the factor in parallel; the trailing
/// well columns of J_pip are structurally zero and skipped.
pub fn build_f_tilde(
    jac: &BlockJacobian,
    mesh: &HexMesh,
    spec: &PatternSpec,
) -> Result<EdfaFactor> {
    spec.validate()?;
    let (nf, ne, nw) = (jac.n_f, jac.n_e, jac.n_w);
    let j_pip_t = jac.j_pip.transpose();
    let columns: Vec<Result<ColumnBuild>> = (0..ne)
        .into_par_iter()
        .map(|q| {
            let (rows, vals) = column_of(&j_pip_t, q);
            if rows.is_empty() {
                return Ok(ColumnBuild::default());
            }
            match *spec {
                PatternSpec::Static { level, laterals } => {
                    let mut pattern = static_pattern(mesh, q, level, laterals);
                    // Keep rows outside the walk (e.g. Dirichlet coupling).
                    pattern.extend(rows.iter().copied());
                    pattern.sort_unstable();
                    pattern.dedup();
                    edfa_column_static(&jac.j_pipi, &rows, &vals, &pattern)
                }
                PatternSpec::Dynamic { n_ent, n_add } => {
                    edfa_column_dynamic(&jac.j_pipi, &rows, &vals, n_ent, n_add)
                }
            }
        })
        .collect();
    let mut trips = Vec::new();
    let mut solves = 0;
    let mut fallbacks = 0;
    let mut early = 0;
    let mut pat_entries = 0;
    for (q, col) in columns.into_iter().enumerate() {
        let col = col?;
        solves += col.solves;
        fallbacks += usize::from(col.fallback);
        early += usize::from(col.early_stop);
        pat_entries += col.entries.len();
        for (r, v) in col.entries {
            trips.push((r, q, v));
        }
    }
    Ok(EdfaFactor {
        f_tilde: Csr::from_triplets(nf, ne + nw, &trips)?,
        restricted_solves: solves,
        fallback_columns: fallbacks,
        early_stops: early,
        pattern_entries: pat_entries,
    })
}

/// S~ = J_pp + J_ppi F~, keeping every entry above denormal magnitude.
pub fn schur_approx(j_pp: &Csr<f64>, j_ppi: &Csr<f64>, f_tilde: &Csr<f64>) -> Result<Csr<f64>> {
    let prod = j_ppi.matmul(f_tilde)?;
    Ok(j_pp.add(&prod)?.drop_below(1e-300))
}
