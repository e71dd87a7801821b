//! File I/O: permeability field ingestion and generation, metrics CSV,
//! legacy-VTK field output, and Matrix Market dumps of the Jacobian blocks.

use crate::disc::BlockJacobian;
use crate::error::{Error, Result};
use crate::grid::HexMesh;
use crate::linalg::write_matrix_market;
use crate::physics::State;
use crate::sim::RunMetrics;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

/// Reads a whitespace-separated per-cell property file: all kx values, then
/// ky, then kz, then porosity, each block x-fastest. Zero (or tiny)
/// porosities are clamped to `floor`.
pub fn load_perm_ascii(
    path: &Path,
    nx: usize,
    ny: usize,
    nz: usize,
    floor: f64,
) -> Result<(Vec<[f64; 3]>, Vec<f64>)> {
    let text = std::fs::read_to_string(path)?;
    let n = nx * ny * nz;
    let expected = 4 * n;
    let mut values = Vec::with_capacity(expected);
    for (pos, token) in text.split_whitespace().enumerate() {
        let v: f64 = token.parse().map_err(|_| {
            Error::Ingestion(format!(
                "{}: token {} ({token:?}) is not a number",
                path.display(),
                pos + 1
            ))
        })?;
        values.push(v);
    }
    if values.len() != expected {
        return Err(Error::Ingestion(format!(
            "{}: expected {expected} values (4 x {nx} x {ny} x {nz}), found {}",
            path.display(),
            values.len()
        )));
    }
    let perm: Vec<[f64; 3]> = (0..n)
        .map(|c| [values[c], values[n + c], values[2 * n + c]])
        .collect();
    let mut clamped = 0usize;
    let phi: Vec<f64> = values[3 * n..]
        .iter()
        .map(|&v| {
            if v < floor {
                clamped += 1;
                floor
            } else {
                v
            }
        })
        .collect();
    if clamped > 0 {
        log::info!(
            "{}: clamped {clamped} porosity value(s) to the floor {floor}",
            path.display()
        );
    }
    Ok((perm, phi))
}

/// Writes a property field in the layout `load_perm_ascii` reads. Values
/// are printed with shortest round-trip formatting, so a read-back is
/// bit-exact.
pub fn write_perm_ascii(path: &Path, perm: &[[f64; 3]], phi: &[f64]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    for comp in 0..3 {
        for k in perm {
            writeln!(out, "{}", k[comp])?;
        }
    }
    for &v in phi {
        writeln!(out, "{v}")?;
    }
    Ok(())
}

/// Synthetic log-normal horizontal permeability with a vertical anisotropy
/// ratio. log10(kx) is normal around log10(k_mean), clamped to half the
/// contrast budget on either side, so the realized field spans at most
/// `decades` decades; ky = kx and kz = kx / anisotropy.
#[allow(clippy::too_many_arguments)]
pub fn synthetic_lognormal(
    nx: usize,
    ny: usize,
    nz: usize,
    seed: u64,
    k_mean: f64,
    decades: f64,
    anisotropy: f64,
    phi0: f64,
) -> (Vec<[f64; 3]>, Vec<f64>) {
    let n = nx * ny * nz;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    // Half the contrast sits at ~1.5 sigma, so the clamp is active but not
    // dominant.
    let sigma = decades / 3.0;
    let normal = Normal::new(k_mean.log10(), sigma).unwrap();
    let half = decades / 2.0;
    let perm = (0..n)
        .map(|_| {
            let e = normal
                .sample(&mut rng)
                .clamp(k_mean.log10() - half, k_mean.log10() + half);
            let kx = 10f64.powf(e);
            [kx, kx, kx / anisotropy]
        })
        .collect();
    (perm, vec![phi0; n])
}

/// One row per accepted time step plus a trailing summary row. Counts are
/// summed, first-system figures averaged, R_S and CFL reported as the last
/// and the largest value respectively.
pub fn write_metrics_csv(metrics: &RunMetrics, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(
        out,
        "step,time_d,dt_d,cuts,n_newton,n_linear,t_p_s,t_s_s,t_t_s,n_l1,t_p1_s,t_s1_s,t_t1_s,r_s,max_cfl,well_water_m3,water_delta_m3"
    )?;
    for s in &metrics.steps {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            s.step,
            s.time,
            s.dt,
            s.cuts,
            s.n_newton,
            s.n_linear,
            s.t_p,
            s.t_s,
            s.t_t,
            s.n_l1,
            s.t_p1,
            s.t_s1,
            s.t_t1,
            s.r_s,
            s.max_cfl,
            s.well_water,
            s.water_delta
        )?;
    }
    let last = metrics.steps.last();
    writeln!(
        out,
        "summary,{},,{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        last.map_or(0.0, |s| s.time),
        metrics.steps.iter().map(|s| s.cuts).sum::<usize>(),
        metrics.total_newton(),
        metrics.total_linear(),
        metrics.total_t_p(),
        metrics.total_t_s(),
        metrics.total_t_t(),
        metrics.mean_first_linear(),
        mean(metrics.steps.iter().map(|s| s.t_p1)),
        mean(metrics.steps.iter().map(|s| s.t_s1)),
        mean(metrics.steps.iter().map(|s| s.t_t1)),
        last.map_or(0.0, |s| s.r_s),
        metrics.max_cfl(),
        metrics.steps.iter().map(|s| s.well_water).sum::<f64>(),
        metrics.steps.iter().map(|s| s.water_delta).sum::<f64>(),
    )?;
    Ok(())
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = it.collect();
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Legacy-VTK unstructured grid with cell-centered water saturation and
/// element pressure.
pub fn write_fields_vtk(mesh: &HexMesh, state: &State, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "# vtk DataFile Version 3.0")?;
    writeln!(out, "two-phase flow fields at t = {} d", state.time)?;
    writeln!(out, "ASCII")?;
    writeln!(out, "DATASET UNSTRUCTURED_GRID")?;
    writeln!(out, "POINTS {} double", mesh.nodes.len())?;
    for p in &mesh.nodes {
        writeln!(out, "{} {} {}", p[0], p[1], p[2])?;
    }
    writeln!(out, "CELLS {} {}", mesh.n_cells(), 9 * mesh.n_cells())?;
    for cell in &mesh.cells {
        write!(out, "8")?;
        for v in cell {
            write!(out, " {v}")?;
        }
        writeln!(out)?;
    }
    writeln!(out, "CELL_TYPES {}", mesh.n_cells())?;
    for _ in 0..mesh.n_cells() {
        writeln!(out, "12")?;
    }
    writeln!(out, "CELL_DATA {}", mesh.n_cells())?;
    writeln!(out, "SCALARS Sw double 1")?;
    writeln!(out, "LOOKUP_TABLE default")?;
    for &s in &state.sw {
        writeln!(out, "{s}")?;
    }
    writeln!(out, "SCALARS p double 1")?;
    writeln!(out, "LOOKUP_TABLE default")?;
    for &p in &state.p_elem {
        writeln!(out, "{p}")?;
    }
    Ok(())
}

/// Writes the nine Jacobian blocks as Matrix Market files under `prefix`
/// (`<prefix>_j_pipi.mtx`, ...) plus a dimension sidecar `<prefix>_dims.txt`.
pub fn dump_jacobian_mm(jac: &BlockJacobian, prefix: &Path) -> Result<()> {
    let stem = prefix
        .file_name()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::InvalidArgument("matrix dump prefix has no file name".into()))?
        .to_owned();
    let dir = prefix.parent().unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let blocks = [
        ("j_pipi", &jac.j_pipi),
        ("j_pip", &jac.j_pip),
        ("j_pis", &jac.j_pis),
        ("j_ppi", &jac.j_ppi),
        ("j_pp", &jac.j_pp),
        ("j_ps", &jac.j_ps),
        ("j_spi", &jac.j_spi),
        ("j_sp", &jac.j_sp),
        ("j_ss", &jac.j_ss),
    ];
    for (name, block) in blocks {
        write_matrix_market(block, &dir.join(format!("{stem}_{name}.mtx")))?;
    }
    let mut out = BufWriter::new(File::create(dir.join(format!("{stem}_dims.txt")))?);
    writeln!(out, "n_f {}", jac.n_f)?;
    writeln!(out, "n_e {}", jac.n_e)?;
    writeln!(out, "n_w {}", jac.n_w)?;
    Ok(())
}
