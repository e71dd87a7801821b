//! Fully implicit time stepping: Newton iteration with the Appleyard chop,
//! a three-part residual test, adaptive time-step control, and per-step
//! solver metrics.

use crate::bcpr::{Bcpr, BcprParams, PatternSpec};
use crate::disc::{
    assemble_system, local_fluxes, well_rates, Model, Well, WellControl, WellModel,
};
use crate::error::{Error, Result};
use crate::grid::build_cartesian;
use crate::linalg::{gmres, Amg, AmgParams};
use crate::physics::{FluidProps, RockProps, State, PHASES};
use std::cell::Cell;
use std::time::Instant;


/// Nonlinear and linear solver settings.
#[derive(Debug, Clone)]
pub struct NewtonSettings {
    /// Absolute residual tolerance (largest block 2-norm).
    pub tau_nl_a: f64,
    /// Relative residual tolerance (against the iteration-0 block norms).
    pub tau_nl_r: f64,
    pub max_newton: usize,
    /// Saturation chop limit per Newton update.
    pub ds_max: f64,
    /// Linear (GMRES) relative tolerance.
    pub tau_l: f64,
    pub gmres_maxit: usize,
    pub pattern: PatternSpec,
    pub bcpr: BcprParams,
    /// Reuse the decoupling factor and the face-block hierarchy across
    /// systems; only honored when gravity is off (the face block is then
    /// constant for the whole run).
    pub reuse_decoupling: bool,
}

impl Default for NewtonSettings {
    fn default() -> Self {
        Self {
            tau_nl_a: 1e-6,
            tau_nl_r: 1e-6,
            max_newton: 12,
            ds_max: 0.2,
            tau_l: 1e-6,
            gmres_maxit: 200,
            pattern: PatternSpec::Static { level: 1, laterals: false },
            bcpr: BcprParams::default(),
            reuse_decoupling: true,
        }
    }
}

impl NewtonSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_nl_a > 0.0 && self.tau_nl_r > 0.0 && self.tau_l > 0.0) {
            return Err(Error::InvalidArgument("solver tolerances must be positive".into()));
        }
        if !(self.ds_max > 0.0 && self.ds_max <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "saturation chop limit {} outside (0, 1]",
                self.ds_max
            )));
        }
        if self.max_newton == 0 || self.gmres_maxit == 0 {
            return Err(Error::InvalidArgument("iteration caps must be at least 1".into()));
        }
        self.pattern.validate()
    }
}

/// Time-stepping schedule (days).
#[derive(Debug, Clone)]
pub struct Schedule {
    pub t_end: f64,
    pub dt_init: f64,
    pub dt_max: f64,
    /// Step growth factor on success.
    pub growth: f64,
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_end > 0.0) {
            return Err(Error::InvalidArgument("end time must be positive".into()));
        }
        if !(self.dt_init > 0.0 && self.dt_init <= self.dt_max) {
            return Err(Error::InvalidArgument(format!(
                "initial step {} must lie in (0, {}]",
                self.dt_init, self.dt_max
            )));
        }
        if !(self.growth >= 1.0) {
            return Err(Error::InvalidArgument("step growth factor must be at least 1".into()));
        }
        Ok(())
    }
}

/// A complete simulation definition.
pub struct Scenario {
    pub model: Model,
    pub schedule: Schedule,
    pub settings: NewtonSettings,
    /// Initial pressure (kPa) at the shallowest cell datum.
    pub p_init: f64,
    pub sw_init: f64,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        self.settings.validate()
    }
}

/// Solver metrics for one accepted time step.
#[derive(Debug, Clone, Default)]
pub struct StepMetrics {
    pub step: usize,
    /// Simulated time at the end of the step (d).
    pub time: f64,
    pub dt: f64,
    /// Time-step cuts spent before this step was accepted.
    pub cuts: usize,
    pub n_newton: usize,
    pub n_linear: usize,
    /// Preconditioner build time over the step (s).
    pub t_p: f64,
    /// GMRES time over the step (s).
    pub t_s: f64,
    /// Total step wall time, including assembly (s).
    pub t_t: f64,
    /// First-system figures (the first linear solve of the step).
    pub n_l1: usize,
    pub t_p1: f64,
    pub t_s1: f64,
    pub t_t1: f64,
    pub r_s: f64,
    pub max_cfl: f64,
    /// Net well water inflow integrated over the step (m^3).
    pub well_water: f64,
    /// Change of water in place over the step (m^3).
    pub water_delta: f64,
}

/// Per-run metric series plus cumulative summaries.
#[derive(Debug, Clone, Default)]
pub struct RunMetrics {
    pub steps: Vec<StepMetrics>,
}

impl RunMetrics {
    pub fn total_newton(&self) -> usize {
        self.steps.iter().map(|s| s.n_newton).sum()
    }

    pub fn total_linear(&self) -> usize {
        self.steps.iter().map(|s| s.n_linear).sum()
    }

    pub fn total_t_p(&self) -> f64 {
        self.steps.iter().map(|s| s.t_p).sum()
    }

    pub fn total_t_s(&self) -> f64 {
        self.steps.iter().map(|s| s.t_s).sum()
    }

    pub fn total_t_t(&self) -> f64 {
        self.steps.iter().map(|s| s.t_t).sum()
    }

    /// Mean GMRES iterations per linear system.
    pub fn mean_linear(&self) -> f64 {
        let n = self.total_newton();
        if n == 0 {
            0.0
        } else {
            self.total_linear() as f64 / n as f64
        }
    }

    /// Mean iteration count of the first system of each step.
    pub fn mean_first_linear(&self) -> f64 {
        let solved: Vec<_> = self.steps.iter().filter(|s| s.n_newton > 0).collect();
        if solved.is_empty() {
            0.0
        } else {
            solved.iter().map(|s| s.n_l1 as f64).sum::<f64>() / solved.len() as f64
        }
    }

    pub fn max_cfl(&self) -> f64 {
        self.steps.iter().fold(0.0, |m, s| m.max(s.max_cfl))
    }
}

/// Outcome of one nonlinear solve attempt.
pub struct NewtonOutcome {
    pub state: State,
    pub converged: bool,
    pub n_newton: usize,
    pub n_linear: usize,
    pub t_p: f64,
    pub t_s: f64,
    pub r_s: f64,
    pub n_l1: usize,
    pub t_p1: f64,
    pub t_s1: f64,
    pub t_t1: f64,
    /// Largest block residual norm at the last convergence test.
    pub final_residual: f64,
    /// Largest block norm at each convergence test, starting at iteration 0.
    pub residual_history: Vec<f64>,
}

/// Three-part convergence test: the largest block 2-norm must fall below
/// the absolute tolerance, or all blocks must drop below the relative
/// tolerance against their step-initial norms. A block that started at zero
/// has no meaningful reference, so it falls back to the absolute test
/// instead of passing by fiat (its residual can still grow during the step).
pub fn convergence_check(norms: [f64; 3], norms0: [f64; 3], tau_a: f64, tau_r: f64) -> bool {
    let absolute = norms.iter().fold(0.0f64, |m, &v| m.max(v)) < tau_a;
    let relative = norms
        .iter()
        .zip(&norms0)
        .all(|(&r, &r0)| if r0 == 0.0 { r < tau_a } else { r / r0 < tau_r });
    absolute || relative
}

/// Limits each saturation update to `ds_max` in magnitude and clamps the
/// resulting saturation to the mobile range; pressure components are left
/// to the caller.
pub fn appleyard_chop(delta_s: &mut [f64], sw: &[f64], swr: f64, sor: f64, ds_max: f64) {
    for (d, &s) in delta_s.iter_mut().zip(sw) {
        *d = d.clamp(-ds_max, ds_max);
        let proposed = s + *d;
        let target = proposed.clamp(swr, 1.0 - sor);
        if target != proposed {
            *d = target - s;
        }
    }
}

/// Water volume in place: sum of pore volume times saturation (m^3).
pub fn water_in_place(model: &Model, state: &State) -> Result<f64> {
    let mut total = 0.0;
    for cell in 0..model.n_cells() {
        let (phi, _) = model.rock.porosity(state.p_elem[cell], cell)?;
        total += model.mesh.cell_volume[cell] * phi * state.sw[cell];
    }
    Ok(total)
}

/// Largest cell CFL number: convected volume over the step relative to the
/// cell's pore volume. Diagnostic only; nothing is enforced.
pub fn cfl_report(model: &Model, state: &State, dt: f64) -> Result<f64> {
    let mut worst = 0.0f64;
    for cell in 0..model.n_cells() {
        let mut outflux = 0.0;
        for phase in PHASES {
            for q in local_fluxes(model, state, cell, phase) {
                outflux += q.max(0.0);
            }
        }
        let (phi, _) = model.rock.porosity(state.p_elem[cell], cell)?;
        worst = worst.max(dt * outflux / (phi * model.mesh.cell_volume[cell]));
    }
    Ok(worst)
}

/// Builds the initial state: hydrostatic element pressures when gravity is
/// on (oil gradient, datum at the shallowest cell), then face pressures
/// from a single linear continuity solve with the element pressures held
/// fixed (the face rows do not involve wells).
pub fn initial_state(model: &Model, p_init: f64, sw_init: f64) -> Result<State> {
    let ne = model.n_cells();
    let mut state = State::uniform(ne, model.n_faces(), model.n_wells(), p_init, sw_init);
    if model.gravity {
        let datum = model
            .mesh
            .cell_depth
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        for cell in 0..ne {
            state.p_elem[cell] = p_init + model.fluid.gamma_o * (model.mesh.cell_depth[cell] - datum);
        }
        for face in 0..model.n_faces() {
            let z = model.mesh.face_centroid[face][2];
            state.p_face[face] = p_init + model.fluid.gamma_o * (z - datum);
        }
    }
    for (w, well) in model.wells.wells.iter().enumerate() {
        state.p_bh[w] = match well.control {
            WellControl::Bhp(target) => target,
            WellControl::Rate(_) => state.p_elem[well.cells[0]],
        };
    }
    // The face rows are linear in pi, so one correction solve lands exactly
    // on continuity for the fixed element pressures.
    let prev = state.clone();
    let (res, jac) = assemble_system(model, &state, &prev, 1.0)?;
    let rhs: Vec<f64> = res.r_pi.iter().map(|&v| -v).collect();
    if rhs.iter().all(|&v| v == 0.0) {
        return Ok(state);
    }
    let amg = Amg::setup_with(&jac.j_pipi, AmgParams::default())?;
    let sol = gmres(
        |x| jac.j_pipi.spmv(x),
        &rhs,
        |r| amg.vcycle(r),
        1e-12,
        500,
    )?;
    if !sol.converged {
        return Err(Error::Simulation(
            "initial face-pressure solve did not converge".into(),
        ));
    }
    for (pi, d) in state.p_face.iter_mut().zip(&sol.x) {
        *pi += d;
    }
    state.assert_finite()?;
    Ok(state)
}

/// One fully implicit Newton solve over a step of length `dt`, starting
/// from `prev`. `cache` carries the reusable preconditioner parts between
/// calls on the gravity-free path.
pub fn newton_solve(
    model: &Model,
    settings: &NewtonSettings,
    prev: &State,
    dt: f64,
    cache: &mut Option<Bcpr>,
) -> Result<NewtonOutcome> {
    let t_start = Instant::now();
    let reuse = settings.reuse_decoupling && !model.gravity;
    let mut state = prev.clone();
    let mut out = NewtonOutcome {
        state: prev.clone(),
        converged: false,
        n_newton: 0,
        n_linear: 0,
        t_p: 0.0,
        t_s: 0.0,
        r_s: 0.0,
        n_l1: 0,
        t_p1: 0.0,
        t_s1: 0.0,
        t_t1: 0.0,
        final_residual: f64::INFINITY,
        residual_history: Vec::new(),
    };
    let (nf, ne, nw) = (model.n_faces(), model.n_cells(), model.n_wells());
    let mut norms0 = [0.0f64; 3];
    for it in 0..=settings.max_newton {
        // A diverged iterate can leave the constitutive range (negative
        // porosity, non-finite values); that fails the step, not the run.
        let (res, jac) = match assemble_system(model, &state, prev, dt) {
            Ok(pair) => pair,
            Err(_) if it > 0 => {
                out.state = state;
                return Ok(out);
            }
            Err(e) => return Err(e),
        };
        let norms = res.norms();
        if it == 0 {
            norms0 = norms;
        }
        out.final_residual = norms.iter().fold(0.0f64, |m, &v| m.max(v));
        out.residual_history.push(out.final_residual);
        if convergence_check(norms, norms0, settings.tau_nl_a, settings.tau_nl_r) {
            out.state = state;
            out.converged = true;
            return Ok(out);
        }
        if it == settings.max_newton {
            break;
        }
        // Preconditioner refresh; the decoupling factor and the face-block
        // hierarchy survive across systems when gravity is off.
        let tp0 = Instant::now();
        let pre = match cache.take() {
            Some(p) if reuse => p.rebuild(&jac)?,
            _ => Bcpr::build(&jac, &model.mesh, &settings.pattern, settings.bcpr.clone())?,
        };
        let t_build = tp0.elapsed().as_secs_f64();
        out.t_p += t_build;
        out.r_s = pre.stats().r_s;
        // Right-preconditioned full GMRES on the Newton correction.
        let rhs: Vec<f64> = res.stacked().iter().map(|&v| -v).collect();
        let precond_failed = Cell::new(false);
        let ts0 = Instant::now();
        let sol = gmres(
            |x| pre.full_matrix().spmv(x),
            &rhs,
            |w| {
                pre.apply(w).unwrap_or_else(|_| {
                    precond_failed.set(true);
                    vec![0.0; w.len()]
                })
            },
            settings.tau_l,
            settings.gmres_maxit,
        )?;
        let t_solve = ts0.elapsed().as_secs_f64();
        out.t_s += t_solve;
        out.n_linear += sol.iterations;
        if it == 0 {
            out.n_l1 = sol.iterations;
            out.t_p1 = t_build;
            out.t_s1 = t_solve;
            out.t_t1 = t_start.elapsed().as_secs_f64();
        }
        if reuse {
            *cache = Some(pre);
        }
        if precond_failed.get() || !sol.converged {
            out.state = state;
            return Ok(out);
        }
        // Apply the correction; saturations pass through the chop.
        let dx = sol.x;
        for (p, d) in state.p_face.iter_mut().zip(&dx[..nf]) {
            *p += d;
        }
        for (p, d) in state.p_elem.iter_mut().zip(&dx[nf..nf + ne]) {
            *p += d;
        }
        for (p, d) in state.p_bh.iter_mut().zip(&dx[nf + ne..nf + ne + nw]) {
            *p += d;
        }
        let mut ds = dx[nf + ne + nw..].to_vec();
        appleyard_chop(&mut ds, &state.sw, model.fluid.swr, model.fluid.sor, settings.ds_max);
        for (s, d) in state.sw.iter_mut().zip(&ds) {
            *s += d;
        }
        if state.assert_finite().is_err() {
            out.state = state;
            return Ok(out);
        }
        out.n_newton += 1;
    }
    out.state = state;
    Ok(out)
}

/// Runs the scenario to its end time: Newton per step, step growth on
/// success, halving on failure (at most ten cuts per step).
pub fn timestep_driver(scenario: &Scenario) -> Result<(State, RunMetrics)> {
    scenario.validate()?;
    let model = &scenario.model;
    let schedule = &scenario.schedule;
    let mut state = initial_state(model, scenario.p_init, scenario.sw_init)?;
    let mut metrics = RunMetrics::default();
    let mut cache: Option<Bcpr> = None;
    let mut dt = schedule.dt_init;
    let mut t = 0.0;
    let mut step = 0usize;
    while t < schedule.t_end - 1e-12 * schedule.t_end {
        let mut cuts = 0usize;
        loop {
            let dt_eff = dt.min(schedule.t_end - t);
            let t0 = Instant::now();
            let out = newton_solve(model, &scenario.settings, &state, dt_eff, &mut cache)?;
            if !out.converged {
                cuts += 1;
                if cuts > 10 {
                    return Err(Error::Simulation(format!(
                        "step {step} failed after 10 time-step cuts (dt = {dt_eff:.3e} d)"
                    )));
                }
                dt = 0.5 * dt_eff;
                continue;
            }
            let wip_prev = water_in_place(model, &state)?;
            state = out.state;
            t += dt_eff;
            state.time = t;
            let wip_new = water_in_place(model, &state)?;
            let well_water: f64 =
                dt_eff * well_rates(model, &state).iter().map(|q| q[1]).sum::<f64>();
            metrics.steps.push(StepMetrics {
                step,
                time: t,
                dt: dt_eff,
                cuts,
                n_newton: out.n_newton,
                n_linear: out.n_linear,
                t_p: out.t_p,
                t_s: out.t_s,
                t_t: t0.elapsed().as_secs_f64(),
                n_l1: out.n_l1,
                t_p1: out.t_p1,
                t_s1: out.t_s1,
                t_t1: out.t_t1,
                r_s: out.r_s,
                max_cfl: cfl_report(model, &state, dt_eff)?,
                well_water,
                water_delta: wip_new - wip_prev,
            });
            dt = (dt_eff * schedule.growth).min(schedule.dt_max);
            break;
        }
        step += 1;
    }
    Ok((state, metrics))
}

/// Builds the classical five-spot: a rate-controlled injector in the center
/// column and a BHP producer in each corner column, all fully penetrating.
/// Rock and fluid default to the homogeneous base case (k = 1e-12 m^2,
/// phi0 = 0.25, cr = 5e-7 1/kPa).
pub fn build_five_spot(
    nx: usize,
    ny: usize,
    nz: usize,
    cell: [f64; 3],
    rate: f64,
    bhp: f64,
    gravity: bool,
) -> Result<Scenario> {
    let mesh = build_cartesian(nx, ny, nz, cell[0], cell[1], cell[2], [0.0; 3])?;
    let rock = RockProps::homogeneous(mesh.n_cells(), 1e-12, 0.25, 5e-7, 1000.0);
    let fluid = FluidProps::default();
    five_spot_scenario(mesh, rock, fluid, rate, bhp, gravity)
}

/// Five-spot construction over an existing mesh and property set (used for
/// heterogeneous fields, where the well indices depend on the local
/// permeability).
pub fn five_spot_scenario(
    mesh: crate::grid::HexMesh,
    rock: RockProps,
    fluid: FluidProps,
    rate: f64,
    bhp: f64,
    gravity: bool,
) -> Result<Scenario> {
    let (nx, ny, nz) = mesh.dims;
    let column = |i: usize, j: usize| -> Vec<usize> {
        (0..nz).map(|k| i + j * nx + k * nx * ny).collect()
    };
    let mut wells = vec![Well::perforating(
        "inj",
        &mesh,
        &rock,
        column(nx / 2, ny / 2),
        0.1,
        WellControl::Rate(rate),
        true,
    )?];
    for (n, (i, j)) in [(0, 0), (nx - 1, 0), (0, ny - 1), (nx - 1, ny - 1)]
        .into_iter()
        .enumerate()
    {
        wells.push(Well::perforating(
            format!("prod{}", n + 1),
            &mesh,
            &rock,
            column(i, j),
            0.1,
            WellControl::Bhp(bhp),
            false,
        )?);
    }
    let model = Model::new(mesh, rock, fluid, WellModel { wells }, gravity)?;
    Ok(Scenario {
        model,
        schedule: Schedule {
            t_end: 50.0,
            dt_init: 0.1,
            dt_max: 5.0,
            growth: 1.2,
        },
        settings: NewtonSettings::default(),
        p_init: 1000.0,
        sw_init: 0.0,
    })
}
