//! Elementary matrices for the mixed hybrid velocity space on hexahedra.
//!
//! Face basis functions live on the reference cube [0,1]^3 and are mapped
//! with the Piola transform, so each basis function carries unit outward
//! flux through its own face and zero through the others. Local face order
//! is [x-, x+, y-, y+, z-, z+], matching `grid::HexMesh::cell_faces`.

use crate::error::{Error, Result};
use crate::grid::HexMesh;
use crate::linalg::Dense;

/// Reference-cube corners in the cell node ordering (bottom quad, top quad).
const REF_NODES: [[f64; 3]; 8] = [
    [0.0, 0.0, 0.0],
    [1.0, 0.0, 0.0],
    [1.0, 1.0, 0.0],
    [0.0, 1.0, 0.0],
    [0.0, 0.0, 1.0],
    [1.0, 0.0, 1.0],
    [1.0, 1.0, 1.0],
    [0.0, 1.0, 1.0],
];

/// 2-point Gauss-Legendre rule on [0,1].
const GAUSS2: [(f64, f64); 2] = [
    (0.21132486540518713, 0.5),
    (0.7886751345948129, 0.5),
];

/// 5-point Gauss-Legendre rule on [0,1]; used as a refined-quadrature
/// cross-check in tests.
pub const GAUSS5: [(f64, f64); 5] = [
    (0.046910077030668074, 0.11846344252809454),
    (0.23076534494715845, 0.23931433524968324),
    (0.5, 0.2844444444444444),
    (0.7692346550528415, 0.23931433524968324),
    (0.9530899229693319, 0.11846344252809454),
];

/// Gradients of the eight trilinear shape functions at a reference point.
fn shape_gradients(xi: [f64; 3]) -> [[f64; 3]; 8] {
    let mut g = [[0.0; 3]; 8];
    for (a, r) in REF_NODES.iter().enumerate() {
        for d in 0..3 {
            let mut v = 1.0;
            for e in 0..3 {
                if e == d {
                    v *= if r[e] == 0.0 { -1.0 } else { 1.0 };
                } else {
                    v *= if r[e] == 0.0 { 1.0 - xi[e] } else { xi[e] };
                }
            }
            g[a][d] = v;
        }
    }
    g
}

/// Reference face basis, slot order [x-, x+, y-, y+, z-, z+].
fn face_basis(slot: usize, xi: [f64; 3]) -> [f64; 3] {
    let mut v = [0.0; 3];
    let axis = slot / 2;
    v[axis] = if slot % 2 == 0 { xi[axis] - 1.0 } else { xi[axis] };
    v
}

/// The 6x6 elementary matrix B^E for one cell with diagonal permeability
/// `k`, integrated with the given 1-D quadrature rule applied per axis.
pub fn elementary_b_with(
    mesh: &HexMesh,
    cell: usize,
    k: [f64; 3],
    rule: &[(f64, f64)],
) -> Result<Dense<f64>> {
    if cell >= mesh.n_cells() {
        return Err(Error::InvalidArgument(format!("cell index {cell} out of range")));
    }
    if k.iter().any(|&v| v <= 0.0) {
        return Err(Error::InvalidArgument(format!("non-positive permeability in cell {cell}")));
    }
    let nodes = mesh.cells[cell].map(|i| mesh.nodes[i]);
    let kinv = [1.0 / k[0], 1.0 / k[1], 1.0 / k[2]];
    let mut b = Dense::zeros(6, 6);
    for &(x, wx) in rule {
        for &(y, wy) in rule {
            for &(z, wz) in rule {
                let xi = [x, y, z];
                let grads = shape_gradients(xi);
                // Geometry Jacobian J[r][c] = d x_r / d xi_c.
                let mut jac = [[0.0; 3]; 3];
                for (a, g) in grads.iter().enumerate() {
                    for r in 0..3 {
                        for c in 0..3 {
                            jac[r][c] += nodes[a][r] * g[c];
                        }
                    }
                }
                let det = jac[0][0] * (jac[1][1] * jac[2][2] - jac[1][2] * jac[2][1])
                    - jac[0][1] * (jac[1][0] * jac[2][2] - jac[1][2] * jac[2][0])
                    + jac[0][2] * (jac[1][0] * jac[2][1] - jac[1][1] * jac[2][0]);
                if det <= 0.0 || !det.is_finite() {
                    return Err(Error::Geometry(format!(
                        "cell {cell}: non-positive geometry Jacobian {det:.3e} at quadrature point"
                    )));
                }
                // Piola-mapped basis values v_i = J eta_i (the 1/det of the
                // two transforms and the volume element leave a single 1/det).
                let mut v = [[0.0; 3]; 6];
                for (slot, vs) in v.iter_mut().enumerate() {
                    let e = face_basis(slot, xi);
                    for r in 0..3 {
                        vs[r] = jac[r][0] * e[0] + jac[r][1] * e[1] + jac[r][2] * e[2];
                    }
                }
                let w = wx * wy * wz / det;
                for i in 0..6 {
                    for j in 0..6 {
                        let mut s = 0.0;
                        for r in 0..3 {
                            s += v[i][r] * kinv[r] * v[j][r];
                        }
                        b[(i, j)] += w * s;
                    }
                }
            }
        }
    }
    // Symmetrize away quadrature round-off so B = B^T holds exactly.
    for i in 0..6 {
        for j in 0..i {
            let s = 0.5 * (b[(i, j)] + b[(j, i)]);
            b[(i, j)] = s;
            b[(j, i)] = s;
        }
    }
    Ok(b)
}

/// `elementary_b_with` using the default 2x2x2 Gauss rule.
pub fn elementary_b(mesh: &HexMesh, cell: usize, k: [f64; 3]) -> Result<Dense<f64>> {
    elementary_b_with(mesh, cell, k, &GAUSS2)
}

/// Per-cell elementary matrices: the inverse of B^E and its row sums.
#[derive(Debug, Clone)]
pub struct ElemB {
    /// (B^E)^{-1}, one dense 6x6 per cell.
    pub binv: Vec<Dense<f64>>,
    /// Row sums of (B^E)^{-1}.
    pub lsum: Vec<[f64; 6]>,
}

impl ElemB {
    pub fn build(mesh: &HexMesh, perm: &[[f64; 3]]) -> Result<Self> {
        if perm.len() != mesh.n_cells() {
            return Err(Error::InvalidArgument(format!(
                "permeability entries ({}) do not match cell count ({})",
                perm.len(),
                mesh.n_cells()
            )));
        }
        let mut binv = Vec::with_capacity(mesh.n_cells());
        let mut lsum = Vec::with_capacity(mesh.n_cells());
        for cell in 0..mesh.n_cells() {
            let b = elementary_b(mesh, cell, perm[cell])?;
            let inv = b.inverse().map_err(|_| {
                Error::Discretization(format!("elementary matrix of cell {cell} is singular"))
            })?;
            let mut l = [0.0; 6];
            for (i, li) in l.iter_mut().enumerate() {
                for j in 0..6 {
                    *li += inv[(i, j)];
                }
            }
            binv.push(inv);
            lsum.push(l);
        }
        Ok(Self { binv, lsum })
    }
}
