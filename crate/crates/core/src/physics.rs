//! Rock and fluid constitutive laws with analytical derivatives.
//!
//! Units follow kPa / m / d throughout; no internal conversion layer.

use crate::error::{Error, Result};

/// Fluid phase tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Oil,
    Water,
}

pub const PHASES: [Phase; 2] = [Phase::Oil, Phase::Water];

/// Per-cell rock properties.
#[derive(Debug, Clone)]
pub struct RockProps {
    /// Diagonal permeability tensor per cell (kx, ky, kz) in m^2.
    pub perm: Vec<[f64; 3]>,
    /// Initial porosity per cell.
    pub phi0: Vec<f64>,
    /// Rock compressibility, kPa^-1.
    pub cr: f64,
    /// Reference pressure per cell, kPa.
    pub p0: Vec<f64>,
}

impl RockProps {
    pub fn homogeneous(n_cells: usize, k: f64, phi0: f64, cr: f64, p0: f64) -> Self {
        Self {
            perm: vec![[k, k, k]; n_cells],
            phi0: vec![phi0; n_cells],
            cr,
            p0: vec![p0; n_cells],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (c, k) in self.perm.iter().enumerate() {
            if k.iter().any(|&v| v <= 0.0) {
                return Err(Error::Constitutive(format!("non-positive permeability in cell {c}")));
            }
        }
        for (c, &p) in self.phi0.iter().enumerate() {
            if p <= 0.0 || p > 1.0 {
                return Err(Error::Constitutive(format!("porosity {p} out of (0,1] in cell {c}")));
            }
        }
        if self.cr < 0.0 {
            return Err(Error::Constitutive("negative rock compressibility".into()));
        }
        Ok(())
    }

    /// Porosity and its pressure derivative: phi = phi0 (1 + cr (p - p0)).
    pub fn porosity(&self, p: f64, cell: usize) -> Result<(f64, f64)> {
        let phi = self.phi0[cell] * (1.0 + self.cr * (p - self.p0[cell]));
        if phi <= 0.0 {
            return Err(Error::Constitutive(format!(
                "porosity {phi:.3e} <= 0 at cell {cell} (p = {p:.3e} kPa)"
            )));
        }
        Ok((phi, self.phi0[cell] * self.cr))
    }
}

/// Fluid properties shared by all cells.
#[derive(Debug, Clone, Copy)]
pub struct FluidProps {
    /// Dynamic viscosities, kPa·d.
    pub mu_o: f64,
    pub mu_w: f64,
    /// Specific weights, kPa/m.
    pub gamma_o: f64,
    pub gamma_w: f64,
    /// Residual saturations.
    pub swr: f64,
    pub sor: f64,
    /// Brooks-Corey exponent (2 = parabolic).
    pub corey_exp: f64,
}

impl FluidProps {
    pub fn validate(&self) -> Result<()> {
        if self.mu_o <= 0.0 || self.mu_w <= 0.0 {
            return Err(Error::Constitutive("viscosities must be positive".into()));
        }
        if self.swr < 0.0 || self.sor < 0.0 || self.swr + self.sor >= 1.0 {
            return Err(Error::Constitutive("residual saturations must satisfy 0 <= Swr + Sor < 1".into()));
        }
        if self.corey_exp < 1.0 {
            return Err(Error::Constitutive("corey exponent must be >= 1".into()));
        }
        Ok(())
    }

    pub fn mu(&self, phase: Phase) -> f64 {
        match phase {
            Phase::Oil => self.mu_o,
            Phase::Water => self.mu_w,
        }
    }

    pub fn gamma(&self, phase: Phase) -> f64 {
        match phase {
            Phase::Oil => self.gamma_o,
            Phase::Water => self.gamma_w,
        }
    }

    /// Relative permeability and saturation derivative (Brooks-Corey power
    /// law on the effective saturation, clamped at the residual endpoints).
    pub fn relperm(&self, sw: f64, phase: Phase) -> (f64, f64) {
        let span = 1.0 - self.swr - self.sor;
        let se_raw = (sw - self.swr) / span;
        let se = se_raw.clamp(0.0, 1.0);
        let clamped = se_raw <= 0.0 || se_raw >= 1.0;
        let n = self.corey_exp;
        match phase {
            Phase::Water => {
                let kr = se.powf(n);
                let dkr = if clamped { 0.0 } else { n * se.powf(n - 1.0) / span };
                (kr, dkr)
            }
            Phase::Oil => {
                let kr = (1.0 - se).powf(n);
                let dkr = if clamped { 0.0 } else { -n * (1.0 - se).powf(n - 1.0) / span };
                (kr, dkr)
            }
        }
    }

    /// Phase mobility lambda = kr / mu and its saturation derivative.
    /// Pressure-independent (incompressible fluids).
    pub fn mobility(&self, sw: f64, phase: Phase) -> (f64, f64) {
        let mu = self.mu(phase);
        let (kr, dkr) = self.relperm(sw, phase);
        (kr / mu, dkr / mu)
    }

    /// Total mobility lambda_o + lambda_w and its saturation derivative.
    pub fn total_mobility(&self, sw: f64) -> (f64, f64) {
        let (lo, dlo) = self.mobility(sw, Phase::Oil);
        let (lw, dlw) = self.mobility(sw, Phase::Water);
        (lo + lw, dlo + dlw)
    }
}

/// Viscosities from the reference configuration, kPa·d.
pub const MU_O_DEFAULT: f64 = 2.3148e-11;
pub const MU_W_DEFAULT: f64 = 1.1574e-11;

impl Default for FluidProps {
    fn default() -> Self {
        Self {
            mu_o: MU_O_DEFAULT,
            mu_w: MU_W_DEFAULT,
            gamma_o: 8.0,
            gamma_w: 9.81,
            swr: 0.0,
            sor: 0.0,
            corey_exp: 2.0,
        }
    }
}

/// Full unknown state at one time level.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    /// Element pressures, kPa.
    pub p_elem: Vec<f64>,
    /// Face pressures, kPa.
    pub p_face: Vec<f64>,
    /// Well bottom-hole pressures, kPa.
    pub p_bh: Vec<f64>,
    /// Water saturations.
    pub sw: Vec<f64>,
    /// Time, d.
    pub time: f64,
}

impl State {
    pub fn uniform(n_cells: usize, n_faces: usize, n_wells: usize, p: f64, sw: f64) -> Self {
        Self {
            p_elem: vec![p; n_cells],
            p_face: vec![p; n_faces],
            p_bh: vec![p; n_wells],
            sw: vec![sw; n_cells],
            time: 0.0,
        }
    }

    pub fn assert_finite(&self) -> Result<()> {
        let all = self
            .p_elem
            .iter()
            .chain(&self.p_face)
            .chain(&self.p_bh)
            .chain(&self.sw);
        for v in all {
            if !v.is_finite() {
                return Err(Error::Numeric("non-finite value in state".into()));
            }
        }
        Ok(())
    }
}
