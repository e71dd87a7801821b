//! Residual and Jacobian assembly.
//!
//! Face rows (R_pi) impose continuity of the summed one-sided fluxes, with
//! the mobility factored out against a constant reference value when gravity
//! is off; that keeps J_pipi symmetric positive definite and constant over
//! the whole run. Element rows (R_p, R_s) combine accumulation, the
//! strong-continuity interior face fluxes, one-sided boundary fluxes, and
//! Peaceman well sources. Well constraint rows follow the element rows in
//! the p block.

use super::{BlockJacobian, Model, Residual, WellControl};
use crate::error::{Error, Result};
use crate::linalg::Csr;
use crate::physics::{Phase, State, PHASES};

/// Upwind choice at one face for one phase.
#[derive(Debug, Clone, Copy)]
pub struct Upwind {
    /// Upstream cell whose saturation supplies the mobility.
    pub cell: usize,
    /// Phase mobility at the upstream saturation.
    pub lambda: f64,
    /// Its derivative with respect to the upstream saturation.
    pub dlambda: f64,
}

/// Phase potential used for upwinding: element pressure minus the
/// gravitational head at the element centroid depth.
fn potential(model: &Model, state: &State, cell: usize, phase: Phase) -> f64 {
    state.p_elem[cell] - model.gamma(phase) * model.mesh.cell_depth[cell]
}

/// Selects the upstream cell across a face by comparing element-centroid
/// potentials; boundary faces use the single interior cell; near-ties
/// (1e-14 relative) resolve to the lower cell index.
pub fn upwind_mobility(model: &Model, state: &State, face: usize, phase: Phase) -> Upwind {
    let (a, b) = model.mesh.face_cells[face];
    let cell = match b {
        None => a,
        Some(b) => {
            let pa = potential(model, state, a, phase);
            let pb = potential(model, state, b, phase);
            let tol = 1e-14 * pa.abs().max(pb.abs()).max(1.0);
            if pb - pa > tol {
                b
            } else {
                a // higher potential, or tie -> lower index (a < b)
            }
        }
    };
    let (lambda, dlambda) = model.fluid.mobility(state.sw[cell], phase);
    Upwind {
        cell,
        lambda,
        dlambda,
    }
}

/// Mobility-free one-sided flux bracket through local face `i` of `cell`:
/// g_i = sum_j Binv_ij (p^E - pi_j - gamma (z^E - zeta_j)), so the phase
/// flux out of the cell is lambda* g_i.
fn one_sided_bracket(model: &Model, state: &State, cell: usize, slot: usize, gamma: f64) -> f64 {
    let binv = &model.elemb.binv[cell];
    let z = model.mesh.cell_depth[cell];
    let p = state.p_elem[cell];
    let mut g = 0.0;
    for j in 0..6 {
        let (fj, _) = model.mesh.cell_faces[cell][j];
        let head = p - state.p_face[fj] - gamma * (z - model.mesh.face_centroid[fj][2]);
        g += binv[(slot, j)] * head;
    }
    g
}

/// The six outward phase fluxes of one cell (m^3/d), each using its own
/// face's upwind mobility.
pub fn local_fluxes(model: &Model, state: &State, cell: usize, phase: Phase) -> [f64; 6] {
    let gamma = model.gamma(phase);
    let mut q = [0.0; 6];
    for (slot, qs) in q.iter_mut().enumerate() {
        let (f, _) = model.mesh.cell_faces[cell][slot];
        let up = upwind_mobility(model, state, f, phase);
        *qs = up.lambda * one_sided_bracket(model, state, cell, slot, gamma);
    }
    q
}

/// Mobility-free part of the strong-continuity flux across an interior
/// face, positive from the lower-index cell to the higher. Returns the
/// value plus everything needed for its derivatives.
struct StrongFlux {
    /// Flux per unit mobility.
    core: f64,
    /// Diagonal inverse entries and denominator.
    d0: f64,
    d1: f64,
    den: f64,
}

fn strong_flux_core(
    model: &Model,
    state: &State,
    face: usize,
    gamma: f64,
) -> Result<StrongFlux> {
    let (e0, e1) = model.mesh.face_cells[face];
    let e1 = e1.ok_or_else(|| {
        Error::Discretization(format!("face {face} is not interior"))
    })?;
    let s0 = model.mesh.local_slot(e0, face).expect("incidence is consistent");
    let s1 = model.mesh.local_slot(e1, face).expect("incidence is consistent");
    let d0 = model.elemb.binv[e0][(s0, s0)];
    let d1 = model.elemb.binv[e1][(s1, s1)];
    let den = d0 + d1;
    if den <= 0.0 {
        return Err(Error::Discretization(format!(
            "degenerate cell pair across face {face}: zero flux denominator"
        )));
    }
    let lam0 = capital_lambda(model, state, e0, s0, gamma);
    let lam1 = capital_lambda(model, state, e1, s1, gamma);
    Ok(StrongFlux {
        core: (d1 * lam0 - d0 * lam1) / den,
        d0,
        d1,
        den,
    })
}

/// Lambda^E_i: the one-sided bracket with the face's own pi eliminated.
fn capital_lambda(model: &Model, state: &State, cell: usize, slot: usize, gamma: f64) -> f64 {
    let binv = &model.elemb.binv[cell];
    let z = model.mesh.cell_depth[cell];
    let p = state.p_elem[cell];
    let mut v = model.elemb.lsum[cell][slot] * (p - gamma * z);
    for j in 0..6 {
        if j == slot {
            continue;
        }
        let (fj, _) = model.mesh.cell_faces[cell][j];
        v -= binv[(slot, j)] * (state.p_face[fj] - gamma * model.mesh.face_centroid[fj][2]);
    }
    v
}

/// Phase flux across an interior face with strong continuity imposed,
/// positive from the lower-index cell to the higher-index cell.
pub fn continuous_flux(model: &Model, state: &State, face: usize, phase: Phase) -> Result<f64> {
    let gamma = model.gamma(phase);
    let up = upwind_mobility(model, state, face, phase);
    Ok(up.lambda * strong_flux_core(model, state, face, gamma)?.core)
}

/// Triplet buffers for the nine Jacobian blocks.
#[derive(Default)]
struct Trips {
    pipi: Vec<(usize, usize, f64)>,
    pip: Vec<(usize, usize, f64)>,
    pis: Vec<(usize, usize, f64)>,
    ppi: Vec<(usize, usize, f64)>,
    pp: Vec<(usize, usize, f64)>,
    ps: Vec<(usize, usize, f64)>,
    spi: Vec<(usize, usize, f64)>,
    sp: Vec<(usize, usize, f64)>,
    ss: Vec<(usize, usize, f64)>,
}

/// Assembles the residual only.
pub fn assemble_residual(
    model: &Model,
    state: &State,
    prev: &State,
    dt: f64,
) -> Result<Residual> {
    Ok(assemble(model, state, prev, dt, false)?.0)
}

/// Assembles the residual and the analytical Jacobian together.
pub fn assemble_system(
    model: &Model,
    state: &State,
    prev: &State,
    dt: f64,
) -> Result<(Residual, BlockJacobian)> {
    let (r, j) = assemble(model, state, prev, dt, true)?;
    Ok((r, j.expect("jacobian requested")))
}

fn assemble(
    model: &Model,
    state: &State,
    prev: &State,
    dt: f64,
    with_jac: bool,
) -> Result<(Residual, Option<BlockJacobian>)> {
    if dt <= 0.0 {
        return Err(Error::InvalidArgument(format!("time step {dt} must be positive")));
    }
    let (nf, ne, nw) = (model.n_faces(), model.n_cells(), model.n_wells());
    let mut r_pi = vec![0.0; nf];
    let mut r_p = vec![0.0; ne + nw];
    let mut r_s = vec![0.0; ne];
    let mut t = Trips::default();
    let lam_ref = model.lambda_ref();

    // --- Face continuity rows -------------------------------------------
    for f in 0..nf {
        if let Some(pbar) = model.dirichlet[f] {
            r_pi[f] = state.p_face[f] - pbar;
            if with_jac {
                t.pipi.push((f, f, 1.0));
            }
            continue;
        }
        let (e0, e1) = model.mesh.face_cells[f];
        let sides: [Option<usize>; 2] = [Some(e0), e1];
        for cell in sides.into_iter().flatten() {
            let slot = model.mesh.local_slot(cell, f).expect("incidence is consistent");
            let binv = &model.elemb.binv[cell];
            if !model.gravity {
                // Factored form: one bracket serves both phases, scaled by
                // a constant reference mobility to stay in flux units.
                let g = one_sided_bracket(model, state, cell, slot, 0.0);
                r_pi[f] -= lam_ref * g;
                if with_jac {
                    for j in 0..6 {
                        let (fj, _) = model.mesh.cell_faces[cell][j];
                        t.pipi.push((f, fj, lam_ref * binv[(slot, j)]));
                    }
                    t.pip.push((f, cell, -lam_ref * model.elemb.lsum[cell][slot]));
                }
            } else {
                for phase in PHASES {
                    let gamma = model.gamma(phase);
                    let up = upwind_mobility(model, state, f, phase);
                    let g = one_sided_bracket(model, state, cell, slot, gamma);
                    r_pi[f] -= up.lambda * g;
                    if with_jac {
                        for j in 0..6 {
                            let (fj, _) = model.mesh.cell_faces[cell][j];
                            t.pipi.push((f, fj, up.lambda * binv[(slot, j)]));
                        }
                        t.pip.push((f, cell, -up.lambda * model.elemb.lsum[cell][slot]));
                        t.pis.push((f, up.cell, -up.dlambda * g));
                    }
                }
            }
        }
    }

    // --- Accumulation ----------------------------------------------------
    for e in 0..ne {
        let vol = model.mesh.cell_volume[e];
        let (phi, dphi) = model.rock.porosity(state.p_elem[e], e)?;
        let (phi_prev, _) = model.rock.porosity(prev.p_elem[e], e)?;
        // Phase-summed balance: saturations add to one.
        r_p[e] += vol * (phi - phi_prev) / dt;
        r_s[e] += vol * (phi * state.sw[e] - phi_prev * prev.sw[e]) / dt;
        if with_jac {
            t.pp.push((e, e, vol * dphi / dt));
            t.sp.push((e, e, vol * dphi * state.sw[e] / dt));
            t.ss.push((e, e, vol * phi / dt));
        }
    }

    // --- Face fluxes into the mass balances ------------------------------
    for f in 0..nf {
        let (e0, e1) = model.mesh.face_cells[f];
        match e1 {
            Some(e1) => {
                let s0 = model.mesh.local_slot(e0, f).expect("incidence is consistent");
                let s1 = model.mesh.local_slot(e1, f).expect("incidence is consistent");
                for phase in PHASES {
                    let gamma = model.gamma(phase);
                    let up = upwind_mobility(model, state, f, phase);
                    let sf = strong_flux_core(model, state, f, gamma)?;
                    let q = up.lambda * sf.core;
                    r_p[e0] += q;
                    r_p[e1] -= q;
                    if phase == Phase::Water {
                        r_s[e0] += q;
                        r_s[e1] -= q;
                    }
                    if !with_jac {
                        continue;
                    }
                    // dq/d(p, pi, s): rows e0 (+) and e1 (-).
                    let mut cols_p: Vec<(usize, f64)> = Vec::with_capacity(2);
                    cols_p.push((e0, up.lambda * sf.d1 * model.elemb.lsum[e0][s0] / sf.den));
                    cols_p.push((e1, -up.lambda * sf.d0 * model.elemb.lsum[e1][s1] / sf.den));
                    let mut cols_pi: Vec<(usize, f64)> = Vec::with_capacity(10);
                    let binv0 = &model.elemb.binv[e0];
                    let binv1 = &model.elemb.binv[e1];
                    for j in 0..6 {
                        if j != s0 {
                            let (fj, _) = model.mesh.cell_faces[e0][j];
                            cols_pi.push((fj, -up.lambda * sf.d1 * binv0[(s0, j)] / sf.den));
                        }
                        if j != s1 {
                            let (fj, _) = model.mesh.cell_faces[e1][j];
                            cols_pi.push((fj, up.lambda * sf.d0 * binv1[(s1, j)] / sf.den));
                        }
                    }
                    let ds = (up.cell, up.dlambda * sf.core);
                    for (row, sign) in [(e0, 1.0), (e1, -1.0)] {
                        for &(c, v) in &cols_p {
                            t.pp.push((row, c, sign * v));
                        }
                        for &(c, v) in &cols_pi {
                            t.ppi.push((row, c, sign * v));
                        }
                        t.ps.push((row, ds.0, sign * ds.1));
                        if phase == Phase::Water {
                            for &(c, v) in &cols_p {
                                t.sp.push((row, c, sign * v));
                            }
                            for &(c, v) in &cols_pi {
                                t.spi.push((row, c, sign * v));
                            }
                            t.ss.push((row, ds.0, sign * ds.1));
                        }
                    }
                }
            }
            None => {
                // Boundary: one-sided outward flux per phase.
                let slot = model.mesh.local_slot(e0, f).expect("incidence is consistent");
                let binv = &model.elemb.binv[e0];
                for phase in PHASES {
                    let gamma = model.gamma(phase);
                    let up = upwind_mobility(model, state, f, phase);
                    let g = one_sided_bracket(model, state, e0, slot, gamma);
                    let q = up.lambda * g;
                    r_p[e0] += q;
                    if phase == Phase::Water {
                        r_s[e0] += q;
                    }
                    if !with_jac {
                        continue;
                    }
                    let dp = up.lambda * model.elemb.lsum[e0][slot];
                    t.pp.push((e0, e0, dp));
                    t.ps.push((e0, e0, up.dlambda * g));
                    if phase == Phase::Water {
                        t.sp.push((e0, e0, dp));
                        t.ss.push((e0, e0, up.dlambda * g));
                    }
                    for j in 0..6 {
                        let (fj, _) = model.mesh.cell_faces[e0][j];
                        let v = -up.lambda * binv[(slot, j)];
                        t.ppi.push((e0, fj, v));
                        if phase == Phase::Water {
                            t.spi.push((e0, fj, v));
                        }
                    }
                }
            }
        }
    }

    // --- Wells ------------------------------------------------------------
    for (w, well) in model.wells.wells.iter().enumerate() {
        let row = ne + w;
        let pb = state.p_bh[w];
        match well.control {
            WellControl::Bhp(target) => {
                r_p[row] = pb - target;
                if with_jac {
                    t.pp.push((row, ne + w, 1.0));
                }
            }
            WellControl::Rate(target) => {
                r_p[row] = -target; // perforation rates added below
            }
        }
        let rate_row = matches!(well.control, WellControl::Rate(_));
        for (perf, &e) in well.cells.iter().enumerate() {
            let wi = well.wi[perf];
            let dp = pb - state.p_elem[e];
            // Total and water mobility at the perforation plus derivatives.
            // An injecting perforation delivers water at total mobility; a
            // back-flowing one produces the cell mixture like a producer.
            let (mob_t, mob_w, dmob_t, dmob_w) = if well.injector && dp >= 0.0 {
                let (lt, dlt) = model.fluid.total_mobility(state.sw[e]);
                (lt, lt, dlt, dlt)
            } else {
                let (lo, dlo) = model.fluid.mobility(state.sw[e], Phase::Oil);
                let (lw, dlw) = model.fluid.mobility(state.sw[e], Phase::Water);
                (lo + lw, lw, dlo + dlw, dlw)
            };
            // Into-reservoir rates.
            let q_t = mob_t * wi * dp;
            let q_w = mob_w * wi * dp;
            r_p[e] -= q_t;
            r_s[e] -= q_w;
            if rate_row {
                r_p[row] += q_t;
            }
            if with_jac {
                // Element mass balance rows.
                t.pp.push((e, e, mob_t * wi));
                t.pp.push((e, ne + w, -mob_t * wi));
                t.ps.push((e, e, -dmob_t * wi * dp));
                t.sp.push((e, e, mob_w * wi));
                t.sp.push((e, ne + w, -mob_w * wi));
                t.ss.push((e, e, -dmob_w * wi * dp));
                if rate_row {
                    t.pp.push((row, e, -mob_t * wi));
                    t.pp.push((row, ne + w, mob_t * wi));
                    t.ps.push((row, e, dmob_t * wi * dp));
                }
            }
        }
    }

    let residual = Residual { r_pi, r_p, r_s };
    if !with_jac {
        return Ok((residual, None));
    }
    let jac = BlockJacobian {
        n_f: nf,
        n_e: ne,
        n_w: nw,
        j_pipi: Csr::from_triplets(nf, nf, &t.pipi)?,
        j_pip: Csr::from_triplets(nf, ne + nw, &t.pip)?,
        j_pis: Csr::from_triplets(nf, ne, &t.pis)?,
        j_ppi: Csr::from_triplets(ne + nw, nf, &t.ppi)?,
        j_pp: Csr::from_triplets(ne + nw, ne + nw, &t.pp)?,
        j_ps: Csr::from_triplets(ne + nw, ne, &t.ps)?,
        j_spi: Csr::from_triplets(ne, nf, &t.spi)?,
        j_sp: Csr::from_triplets(ne, ne + nw, &t.sp)?,
        j_ss: Csr::from_triplets(ne, ne, &t.ss)?,
    };
    Ok((residual, Some(jac)))
}

/// Per-well into-reservoir rates `[total, water]` in m^3/d, summed over
/// perforations, evaluated at `state` with the same mobility conventions as
/// the residual (so well bookkeeping closes against the mass balance).
pub fn well_rates(model: &Model, state: &State) -> Vec<[f64; 2]> {
    model
        .wells
        .wells
        .iter()
        .enumerate()
        .map(|(w, well)| {
            let mut q = [0.0; 2];
            for (perf, &e) in well.cells.iter().enumerate() {
                let wi = well.wi[perf];
                let dp = state.p_bh[w] - state.p_elem[e];
                let (mob_t, mob_w) = if well.injector && dp >= 0.0 {
                    let (lt, _) = model.fluid.total_mobility(state.sw[e]);
                    (lt, lt)
                } else {
                    let (lo, _) = model.fluid.mobility(state.sw[e], Phase::Oil);
                    let (lw, _) = model.fluid.mobility(state.sw[e], Phase::Water);
                    (lo + lw, lw)
                };
                q[0] += mob_t * wi * dp;
                q[1] += mob_w * wi * dp;
            }
            q
        })
        .collect()
}
