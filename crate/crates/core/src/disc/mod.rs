//! Spatial discretization: mixed hybrid elementary matrices, upwinded face
//! fluxes with strong continuity, finite-volume mass balances, Peaceman
//! wells, and residual/Jacobian assembly in the three-block layout
//! (face pressures pi / element+well pressures p / water saturations s).

mod assembly;
mod elem;
#[cfg(test)]
mod tests;

pub use assembly::{assemble_residual, assemble_system, local_fluxes, continuous_flux, upwind_mobility, well_rates, Upwind};
pub use elem::{elementary_b, elementary_b_with, ElemB, GAUSS5};

use crate::error::{Error, Result};
use crate::grid::HexMesh;
use crate::linalg::Csr;
use crate::physics::{FluidProps, RockProps};

/// Well operating constraint: fixed total rate into the reservoir (m^3/d,
/// negative = production) or fixed bottom-hole pressure (kPa).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WellControl {
    Rate(f64),
    Bhp(f64),
}

/// One well with vertical perforations and Peaceman couplings.
#[derive(Debug, Clone)]
pub struct Well {
    pub name: String,
    /// Perforated cells.
    pub cells: Vec<usize>,
    /// Well index per perforation (m^3).
    pub wi: Vec<f64>,
    /// Well-bore radius (m).
    pub radius: f64,
    pub control: WellControl,
    /// Injectors source water at the cell's total mobility; producers
    /// withdraw each phase at its own mobility.
    pub injector: bool,
}

impl Well {
    /// Builds a well perforating `cells`, computing the Peaceman index from
    /// each cell's extents and horizontal permeability.
    pub fn perforating(
        name: impl Into<String>,
        mesh: &HexMesh,
        rock: &RockProps,
        cells: Vec<usize>,
        radius: f64,
        control: WellControl,
        injector: bool,
    ) -> Result<Self> {
        if cells.is_empty() {
            return Err(Error::InvalidArgument("well must perforate at least one cell".into()));
        }
        let mut wi = Vec::with_capacity(cells.len());
        for &c in &cells {
            if c >= mesh.n_cells() {
                return Err(Error::InvalidArgument(format!("perforated cell {c} out of range")));
            }
            let [dx, dy, dz] = cell_extents(mesh, c);
            let k = rock.perm[c];
            wi.push(peaceman_wi(dx, dy, dz, k[0], k[1], radius)?);
        }
        Ok(Self {
            name: name.into(),
            cells,
            wi,
            radius,
            control,
            injector,
        })
    }
}

/// Set of wells; the w-th well owns bottom-hole unknown w and residual row
/// n_E + w of the pressure block.
#[derive(Debug, Clone, Default)]
pub struct WellModel {
    pub wells: Vec<Well>,
}

impl WellModel {
    pub fn n_wells(&self) -> usize {
        self.wells.len()
    }
}

/// Average edge lengths of a cell along its three logical directions.
pub fn cell_extents(mesh: &HexMesh, cell: usize) -> [f64; 3] {
    let n = mesh.cells[cell].map(|i| mesh.nodes[i]);
    let edge = |a: usize, b: usize| -> f64 {
        let d = [n[b][0] - n[a][0], n[b][1] - n[a][1], n[b][2] - n[a][2]];
        (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
    };
    [
        (edge(0, 1) + edge(3, 2) + edge(4, 5) + edge(7, 6)) / 4.0,
        (edge(0, 3) + edge(1, 2) + edge(4, 7) + edge(5, 6)) / 4.0,
        (edge(0, 4) + edge(1, 5) + edge(2, 6) + edge(3, 7)) / 4.0,
    ]
}

/// Peaceman well index for a vertical well in a cell of extents
/// (dx, dy, dz) with horizontal permeabilities (kx, ky):
/// WI = 2 pi kbar dz / ln(r_eq / rw), kbar = sqrt(kx ky), with the
/// anisotropic equivalent radius.
pub fn peaceman_wi(dx: f64, dy: f64, dz: f64, kx: f64, ky: f64, rw: f64) -> Result<f64> {
    if rw <= 0.0 {
        return Err(Error::Config("well radius must be positive".into()));
    }
    let ratio = ky / kx;
    let r_eq = 0.28 * (ratio.sqrt() * dx * dx + (1.0 / ratio).sqrt() * dy * dy).sqrt()
        / (ratio.powf(0.25) + (1.0 / ratio).powf(0.25));
    if r_eq <= rw {
        return Err(Error::Config(format!(
            "equivalent radius {r_eq:.3e} m does not exceed well radius {rw:.3e} m"
        )));
    }
    let kbar = (kx * ky).sqrt();
    Ok(2.0 * std::f64::consts::PI * kbar * dz / (r_eq / rw).ln())
}

/// Everything the assembly routines need, bundled immutably.
#[derive(Debug, Clone)]
pub struct Model {
    pub mesh: HexMesh,
    pub rock: RockProps,
    pub fluid: FluidProps,
    pub wells: WellModel,
    pub elemb: ElemB,
    /// Per-face Dirichlet pressure (kPa); `None` means interior or no-flow.
    pub dirichlet: Vec<Option<f64>>,
    pub gravity: bool,
}

impl Model {
    pub fn new(
        mesh: HexMesh,
        rock: RockProps,
        fluid: FluidProps,
        wells: WellModel,
        gravity: bool,
    ) -> Result<Self> {
        rock.validate()?;
        fluid.validate()?;
        if rock.perm.len() != mesh.n_cells() {
            return Err(Error::InvalidArgument("rock property count does not match mesh".into()));
        }
        let elemb = ElemB::build(&mesh, &rock.perm)?;
        let dirichlet = vec![None; mesh.n_faces()];
        Ok(Self {
            mesh,
            rock,
            fluid,
            wells,
            elemb,
            dirichlet,
            gravity,
        })
    }

    /// Imposes a Dirichlet face pressure; only boundary faces qualify.
    pub fn set_dirichlet(&mut self, face: usize, p: f64) -> Result<()> {
        if face >= self.mesh.n_faces() {
            return Err(Error::InvalidArgument(format!("face index {face} out of range")));
        }
        if !self.mesh.boundary_flag[face] {
            return Err(Error::InvalidArgument(format!(
                "face {face} is interior; Dirichlet pressures only apply on the boundary"
            )));
        }
        self.dirichlet[face] = Some(p);
        Ok(())
    }

    pub fn n_cells(&self) -> usize {
        self.mesh.n_cells()
    }

    pub fn n_faces(&self) -> usize {
        self.mesh.n_faces()
    }

    pub fn n_wells(&self) -> usize {
        self.wells.n_wells()
    }

    /// Total unknown count: pi, p_elem, p_bh, s.
    pub fn n_unknowns(&self) -> usize {
        self.n_faces() + 2 * self.n_cells() + self.n_wells()
    }

    /// Constant mobility scale used to keep the mobility-factored face
    /// continuity rows in flux units (end-point total mobility).
    pub fn lambda_ref(&self) -> f64 {
        1.0 / self.fluid.mu_o + 1.0 / self.fluid.mu_w
    }

    /// Specific weight of a phase, zeroed when gravity is disabled.
    pub(crate) fn gamma(&self, phase: crate::physics::Phase) -> f64 {
        if self.gravity {
            self.fluid.gamma(phase)
        } else {
            0.0
        }
    }
}

/// Nonlinear residual in the three-block layout. Units are m^3/d except
/// well BHP rows (kPa) and Dirichlet face rows (kPa).
#[derive(Debug, Clone)]
pub struct Residual {
    /// Face continuity rows, length n_f.
    pub r_pi: Vec<f64>,
    /// Element mass balances then well constraints, length n_E + n_w.
    pub r_p: Vec<f64>,
    /// Water mass balances, length n_E.
    pub r_s: Vec<f64>,
}

impl Residual {
    /// Euclidean norms of the three parts.
    pub fn norms(&self) -> [f64; 3] {
        let nrm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        [nrm(&self.r_pi), nrm(&self.r_p), nrm(&self.r_s)]
    }

    /// Stacked copy in the global unknown ordering.
    pub fn stacked(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.r_pi.len() + self.r_p.len() + self.r_s.len());
        v.extend_from_slice(&self.r_pi);
        v.extend_from_slice(&self.r_p);
        v.extend_from_slice(&self.r_s);
        v
    }
}

/// Sparse Jacobian in nine blocks. Column ordering inside the p block is
/// [p_elem; p_bh]; the full ordering is [pi; p_elem; p_bh; s].
#[derive(Debug, Clone)]
pub struct BlockJacobian {
    pub n_f: usize,
    pub n_e: usize,
    pub n_w: usize,
    pub j_pipi: Csr<f64>,
    pub j_pip: Csr<f64>,
    pub j_pis: Csr<f64>,
    pub j_ppi: Csr<f64>,
    pub j_pp: Csr<f64>,
    pub j_ps: Csr<f64>,
    pub j_spi: Csr<f64>,
    pub j_sp: Csr<f64>,
    pub j_ss: Csr<f64>,
}

impl BlockJacobian {
    /// Size of the full coupled system.
    pub fn n(&self) -> usize {
        self.n_f + 2 * self.n_e + self.n_w
    }

    /// Size of the pressure subproblem (pi + p blocks).
    pub fn n_pressure(&self) -> usize {
        self.n_f + self.n_e + self.n_w
    }

    fn scatter(trips: &mut Vec<(usize, usize, f64)>, m: &Csr<f64>, r0: usize, c0: usize) {
        for i in 0..m.rows() {
            let (cols, vals) = m.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                trips.push((r0 + i, c0 + j, v));
            }
        }
    }

    /// Assembles the full matrix in the [pi; p; s] ordering.
    pub fn full(&self) -> Csr<f64> {
        let (nf, np, ne) = (self.n_f, self.n_e + self.n_w, self.n_e);
        let n = nf + np + ne;
        let mut t = Vec::with_capacity(
            self.j_pipi.nnz()
                + self.j_pip.nnz()
                + self.j_pis.nnz()
                + self.j_ppi.nnz()
                + self.j_pp.nnz()
                + self.j_ps.nnz()
                + self.j_spi.nnz()
                + self.j_sp.nnz()
                + self.j_ss.nnz(),
        );
        Self::scatter(&mut t, &self.j_pipi, 0, 0);
        Self::scatter(&mut t, &self.j_pip, 0, nf);
        Self::scatter(&mut t, &self.j_pis, 0, nf + np);
        Self::scatter(&mut t, &self.j_ppi, nf, 0);
        Self::scatter(&mut t, &self.j_pp, nf, nf);
        Self::scatter(&mut t, &self.j_ps, nf, nf + np);
        Self::scatter(&mut t, &self.j_spi, nf + np, 0);
        Self::scatter(&mut t, &self.j_sp, nf + np, nf);
        Self::scatter(&mut t, &self.j_ss, nf + np, nf + np);
        Csr::from_triplets(n, n, &t).expect("block dimensions are consistent")
    }

    /// The regrouped pressure operator [[J_pipi, J_pip], [J_ppi, J_pp]].
    pub fn pressure_block(&self) -> Csr<f64> {
        let (nf, np) = (self.n_f, self.n_e + self.n_w);
        let n = nf + np;
        let mut t = Vec::with_capacity(
            self.j_pipi.nnz() + self.j_pip.nnz() + self.j_ppi.nnz() + self.j_pp.nnz(),
        );
        Self::scatter(&mut t, &self.j_pipi, 0, 0);
        Self::scatter(&mut t, &self.j_pip, 0, nf);
        Self::scatter(&mut t, &self.j_ppi, nf, 0);
        Self::scatter(&mut t, &self.j_pp, nf, nf);
        Csr::from_triplets(n, n, &t).expect("block dimensions are consistent")
    }
}
