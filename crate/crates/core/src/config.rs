//! Run configuration: a TOML document mirroring the scenario, solver
//! settings, pattern choice, and output options. Unknown keys are rejected.
//!
//! Units follow the rest of the crate: lengths in m, pressures in kPa,
//! times in days, permeability in m^2, compressibility in 1/kPa.

use crate::bcpr::{BcprParams, PatternSpec};
use crate::error::{Error, Result};
use crate::grid::{build_cartesian, deform_dome, shear_mesh, HexMesh};
use crate::io::{load_perm_ascii, synthetic_lognormal};
use crate::physics::{FluidProps, RockProps};
use crate::sim::{five_spot_scenario, NewtonSettings, Scenario, Schedule};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    #[serde(default = "default_dx")]
    pub dx: f64,
    #[serde(default = "default_dx")]
    pub dy: f64,
    #[serde(default = "default_dz")]
    pub dz: f64,
    /// Optional deformation: "dome" (cosine bell) or "shear" (affine tilt).
    #[serde(default)]
    pub deform: Option<String>,
    #[serde(default = "default_one")]
    pub deform_amplitude: f64,
}

fn default_dx() -> f64 {
    10.0
}
fn default_dz() -> f64 {
    10.0
}
fn default_one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RockConfig {
    /// Homogeneous permeability (m^2); ignored when a field source is set.
    #[serde(default = "default_k")]
    pub k: f64,
    #[serde(default = "default_phi0")]
    pub phi0: f64,
    #[serde(default = "default_cr")]
    pub cr: f64,
    /// Porosity reference pressure (kPa).
    #[serde(default = "default_p0")]
    pub p0: f64,
    /// Whitespace-separated per-cell file: kx, ky, kz, phi blocks.
    #[serde(default)]
    pub perm_file: Option<String>,
    #[serde(default)]
    pub synthetic: Option<SyntheticConfig>,
    #[serde(default = "default_phi_floor")]
    pub porosity_floor: f64,
}

impl Default for RockConfig {
    fn default() -> Self {
        Self {
            k: default_k(),
            phi0: default_phi0(),
            cr: default_cr(),
            p0: default_p0(),
            perm_file: None,
            synthetic: None,
            porosity_floor: default_phi_floor(),
        }
    }
}

fn default_k() -> f64 {
    1e-12
}
fn default_phi0() -> f64 {
    0.25
}
fn default_cr() -> f64 {
    5e-7
}
fn default_p0() -> f64 {
    1000.0
}
fn default_phi_floor() -> f64 {
    1e-4
}

/// Log-normal synthetic permeability field.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    #[serde(default)]
    pub seed: u64,
    /// Total decades of horizontal-permeability contrast (clamped range).
    #[serde(default = "default_decades")]
    pub decades: f64,
    /// kx/kz anisotropy ratio.
    #[serde(default = "default_one")]
    pub anisotropy: f64,
}

fn default_decades() -> f64 {
    6.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FluidConfig {
    pub mu_o: f64,
    pub mu_w: f64,
    pub gamma_o: f64,
    pub gamma_w: f64,
    pub swr: f64,
    pub sor: f64,
    pub corey_exp: f64,
}

impl Default for FluidConfig {
    fn default() -> Self {
        let f = FluidProps::default();
        Self {
            mu_o: f.mu_o,
            mu_w: f.mu_w,
            gamma_o: f.gamma_o,
            gamma_w: f.gamma_w,
            swr: f.swr,
            sor: f.sor,
            corey_exp: f.corey_exp,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WellsConfig {
    /// Injector rate (m^3/d).
    pub rate: f64,
    /// Producer bottom-hole pressure (kPa).
    pub bhp: f64,
}

impl Default for WellsConfig {
    fn default() -> Self {
        Self { rate: 20.0, bhp: 490.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub t_end: f64,
    pub dt_init: f64,
    pub dt_max: f64,
    #[serde(default = "default_growth")]
    pub growth: f64,
}

fn default_growth() -> f64 {
    1.2
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub tau_nl_a: f64,
    pub tau_nl_r: f64,
    pub tau_l: f64,
    pub tau_i: f64,
    pub max_newton: usize,
    pub gmres_maxit: usize,
    pub inner_maxit: usize,
    pub ds_max: f64,
    /// Decoupling pattern: "Orig", "A".."F", or "dynamic".
    pub pattern: String,
    pub n_ent: usize,
    pub n_add: usize,
    /// Reuse the decoupling factor across systems when gravity is off.
    pub reuse: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let n = NewtonSettings::default();
        Self {
            tau_nl_a: n.tau_nl_a,
            tau_nl_r: n.tau_nl_r,
            tau_l: n.tau_l,
            tau_i: BcprParams::default().tau_i,
            max_newton: n.max_newton,
            gmres_maxit: n.gmres_maxit,
            inner_maxit: BcprParams::default().inner_maxit,
            ds_max: n.ds_max,
            pattern: "A".into(),
            n_ent: 6,
            n_add: 1,
            reuse: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub gravity: bool,
    /// Initial pressure (kPa) at the shallowest cell.
    pub p_init: f64,
    pub sw_init: f64,
}

impl Default for RunSection {
    fn default() -> Self {
        Self { gravity: false, p_init: 1000.0, sw_init: 0.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridConfig,
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub rock: RockConfig,
    #[serde(default)]
    pub fluid: FluidConfig,
    #[serde(default)]
    pub wells: WellsConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub run: RunSection,
}

impl RunConfig {
    pub fn pattern_spec(&self) -> Result<PatternSpec> {
        let spec = if self.solver.pattern.eq_ignore_ascii_case("dynamic") {
            PatternSpec::Dynamic { n_ent: self.solver.n_ent, n_add: self.solver.n_add }
        } else {
            PatternSpec::from_name(&self.solver.pattern)?
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn build_mesh(&self) -> Result<HexMesh> {
        let g = &self.grid;
        let mesh = build_cartesian(g.nx, g.ny, g.nz, g.dx, g.dy, g.dz, [0.0; 3])?;
        match g.deform.as_deref() {
            None | Some("none") => Ok(mesh),
            Some("dome") => {
                let lx = g.nx as f64 * g.dx;
                let ly = g.ny as f64 * g.dy;
                deform_dome(
                    &mesh,
                    g.deform_amplitude * g.dz,
                    0.5 * lx.min(ly),
                    [0.5 * lx, 0.5 * ly],
                )
            }
            Some("shear") => shear_mesh(&mesh, 0.02 * g.deform_amplitude, 0.01 * g.deform_amplitude),
            Some(other) => Err(Error::Config(format!(
                "unknown grid deformation {other:?}; expected \"none\", \"dome\", or \"shear\""
            ))),
        }
    }

    pub fn build_rock(&self, mesh: &HexMesh) -> Result<RockProps> {
        let n = mesh.n_cells();
        let r = &self.rock;
        let mut rock = if let Some(path) = &r.perm_file {
            let (nx, ny, nz) = mesh.dims;
            let (perm, phi) = load_perm_ascii(Path::new(path), nx, ny, nz, r.porosity_floor)?;
            RockProps { perm, phi0: phi, cr: r.cr, p0: vec![r.p0; n] }
        } else if let Some(s) = &self.rock.synthetic {
            let (nx, ny, nz) = mesh.dims;
            let (perm, phi) =
                synthetic_lognormal(nx, ny, nz, s.seed, r.k, s.decades, s.anisotropy, r.phi0);
            RockProps { perm, phi0: phi, cr: r.cr, p0: vec![r.p0; n] }
        } else {
            RockProps::homogeneous(n, r.k, r.phi0, r.cr, r.p0)
        };
        rock.cr = r.cr;
        rock.validate()?;
        Ok(rock)
    }

    pub fn fluid_props(&self) -> FluidProps {
        let f = &self.fluid;
        FluidProps {
            mu_o: f.mu_o,
            mu_w: f.mu_w,
            gamma_o: f.gamma_o,
            gamma_w: f.gamma_w,
            swr: f.swr,
            sor: f.sor,
            corey_exp: f.corey_exp,
        }
    }

    pub fn newton_settings(&self) -> Result<NewtonSettings> {
        let s = &self.solver;
        let settings = NewtonSettings {
            tau_nl_a: s.tau_nl_a,
            tau_nl_r: s.tau_nl_r,
            max_newton: s.max_newton,
            ds_max: s.ds_max,
            tau_l: s.tau_l,
            gmres_maxit: s.gmres_maxit,
            pattern: self.pattern_spec()?,
            bcpr: BcprParams {
                tau_i: s.tau_i,
                inner_maxit: s.inner_maxit,
                ..Default::default()
            },
            reuse_decoupling: s.reuse,
        };
        settings.validate()?;
        Ok(settings)
    }

    /// Assembles the full scenario (five-spot wells over the configured
    /// grid and property field).
    pub fn build_scenario(&self) -> Result<Scenario> {
        let mesh = self.build_mesh()?;
        let rock = self.build_rock(&mesh)?;
        let mut scenario = five_spot_scenario(
            mesh,
            rock,
            self.fluid_props(),
            self.wells.rate,
            self.wells.bhp,
            self.run.gravity,
        )?;
        scenario.schedule = Schedule {
            t_end: self.schedule.t_end,
            dt_init: self.schedule.dt_init,
            dt_max: self.schedule.dt_max,
            growth: self.schedule.growth,
        };
        scenario.settings = self.newton_settings()?;
        scenario.p_init = self.run.p_init;
        scenario.sw_init = self.run.sw_init;
        scenario.validate()?;
        Ok(scenario)
    }
}

/// Parses and validates a configuration file.
pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    if text.trim().is_empty() {
        return Err(Error::Config(format!(
            "{}: empty configuration; required sections are [grid] (nx, ny, nz) and \
             [schedule] (t_end, dt_init, dt_max)",
            path.display()
        )));
    }
    let config: RunConfig = toml::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    // Surface range errors at parse time rather than mid-run.
    config.pattern_spec()?;
    config.newton_settings()?;
    if config.schedule.t_end <= 0.0
        || config.schedule.dt_init <= 0.0
        || config.schedule.dt_init > config.schedule.dt_max
    {
        return Err(Error::Config(format!(
            "{}: schedule must satisfy 0 < dt_init <= dt_max and t_end > 0",
            path.display()
        )));
    }
    if config.grid.nx == 0 || config.grid.ny == 0 || config.grid.nz == 0 {
        return Err(Error::Config(format!("{}: grid dimensions must be positive", path.display())));
    }
    Ok(config)
}
