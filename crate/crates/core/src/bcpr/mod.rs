//! Two-stage block preconditioner for the coupled system: a global Jacobi
//! sweep paired with a block solve of the regrouped pressure subproblem,
//! whose Schur complement is approximated column by column on restricted
//! face patterns (static or dynamically grown).

mod edfa;
mod precond;

pub use edfa::{
    build_f_tilde, edfa_column_dynamic, edfa_column_static, schur_approx, ColumnBuild, EdfaFactor,
};
pub use precond::{Bcpr, BcprParams, BuildStats};

use crate::error::{Error, Result};
use crate::grid::{opposite_slot, HexMesh};

/// How the per-column face pattern of the decoupling factor is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PatternSpec {
    /// Walk `level` collinear neighbors out of each face direction; with
    /// `laterals`, each visited neighbor also contributes its four side
    /// faces.
    Static { level: usize, laterals: bool },
    /// Start from the column's own non-zeros and add the `n_add` largest
    /// residual positions per pass until `n_ent` new entries accumulate.
    Dynamic { n_ent: usize, n_add: usize },
}

impl PatternSpec {
    /// Named static patterns, ordered by growing stencil.
    pub fn from_name(name: &str) -> Result<Self> {
        let (level, laterals) = match name {
            "Orig" | "orig" | "O" => (0, false),
            "A" => (1, false),
            "B" => (1, true),
            "C" => (2, false),
            "D" => (2, true),
            "E" => (3, false),
            "F" => (4, false),
            other => {
                return Err(Error::Config(format!(
                    "unknown pattern name {other:?} (expected Orig or A..F)"
                )))
            }
        };
        Ok(Self::Static { level, laterals })
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Static { level, .. } if level > 4 => {
                Err(Error::Config(format!("static pattern level {level} exceeds 4")))
            }
            Self::Dynamic { n_ent, n_add } if n_ent > 0 && (n_add == 0 || n_add > n_ent) => {
                Err(Error::Config(format!(
                    "dynamic pattern needs 1 <= n_add ({n_add}) <= n_ent ({n_ent})"
                )))
            }
            _ => Ok(()),
        }
    }
}

/// Face set of the static pattern for column `cell`: the cell's own six
/// faces, plus for each direction the far faces of up to `level` collinear
/// neighbors (and their side faces when `laterals` is set). Truncates at
/// the boundary. Returned sorted and deduplicated.
pub fn static_pattern(mesh: &HexMesh, cell: usize, level: usize, laterals: bool) -> Vec<usize> {
    let mut faces: Vec<usize> = mesh.cell_faces[cell].iter().map(|&(f, _)| f).collect();
    for slot in 0..6 {
        let mut cur = cell;
        for _ in 0..level {
            let (f, _) = mesh.cell_faces[cur][slot];
            let Some(next) = mesh.neighbor(cur, f) else {
                break;
            };
            faces.push(mesh.cell_faces[next][slot].0);
            if laterals {
                for s in 0..6 {
                    if s != slot && s != opposite_slot(slot) {
                        faces.push(mesh.cell_faces[next][s].0);
                    }
                }
            }
            cur = next;
        }
    }
    faces.sort_unstable();
    faces.dedup();
    faces
}
