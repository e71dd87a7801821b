//! Hexahedral meshes: Cartesian construction, smooth dome deformation,
//! and the topology/geometry queries the discretization needs.
//!
//! Depth convention: z grows downward, so gravitational potential terms
//! gamma*z increase with depth.

use crate::error::{Error, Result};

pub type Point = [f64; 3];

fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: Point, b: Point) -> Point {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn scale(a: Point, s: f64) -> Point {
    [a[0] * s, a[1] * s, a[2] * s]
}

fn add(a: Point, b: Point) -> Point {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

/// Signed volume of tetrahedron (a,b,c,d).
fn tet_volume(a: Point, b: Point, c: Point, d: Point) -> f64 {
    dot(sub(b, a), cross(sub(c, a), sub(d, a))) / 6.0
}

fn tet_centroid(a: Point, b: Point, c: Point, d: Point) -> Point {
    [
        (a[0] + b[0] + c[0] + d[0]) / 4.0,
        (a[1] + b[1] + c[1] + d[1]) / 4.0,
        (a[2] + b[2] + c[2] + d[2]) / 4.0,
    ]
}

/// Fan decomposition of a hexahedron around the 0-6 diagonal.
/// Node ordering: 0..3 bottom (counterclockwise seen from -z), 4..7 top.
const HEX_TETS: [[usize; 4]; 6] = [
    [0, 1, 2, 6],
    [0, 2, 3, 6],
    [0, 3, 7, 6],
    [0, 7, 4, 6],
    [0, 4, 5, 6],
    [0, 5, 1, 6],
];

/// Per-cell face slots in fixed order.
pub const FACE_XM: usize = 0;
pub const FACE_XP: usize = 1;
pub const FACE_YM: usize = 2;
pub const FACE_YP: usize = 3;
pub const FACE_ZM: usize = 4;
pub const FACE_ZP: usize = 5;

/// Opposite local face slot (x- <-> x+, ...).
pub fn opposite_slot(slot: usize) -> usize {
    slot ^ 1
}

/// Hexahedral mesh with oriented faces and full cell/face incidence.
#[derive(Debug, Clone)]
pub struct HexMesh {
    pub nodes: Vec<Point>,
    /// Eight node indices per cell.
    pub cells: Vec<[usize; 8]>,
    /// Four node indices per face; intrinsic normal along the positive axis.
    pub faces: Vec<[usize; 4]>,
    /// Per cell, six (face index, outward sign) pairs in slot order
    /// [x-, x+, y-, y+, z-, z+].
    pub cell_faces: Vec<[(usize, i8); 6]>,
    /// One or two adjacent cells per face; interior faces store the lower
    /// cell index first.
    pub face_cells: Vec<(usize, Option<usize>)>,
    pub boundary_flag: Vec<bool>,
    pub cell_centroid: Vec<Point>,
    pub cell_volume: Vec<f64>,
    /// Centroid z (depth).
    pub cell_depth: Vec<f64>,
    pub face_centroid: Vec<Point>,
    pub face_area: Vec<f64>,
    /// Cartesian shape when built structured (kept through deformation).
    pub dims: (usize, usize, usize),
}

impl HexMesh {
    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn n_faces(&self) -> usize {
        self.faces.len()
    }

    /// Cell on the other side of face `f` seen from `cell`, if interior.
    pub fn neighbor(&self, cell: usize, f: usize) -> Option<usize> {
        let (a, b) = self.face_cells[f];
        match b {
            Some(b) if a == cell => Some(b),
            Some(b) if b == cell => Some(a),
            _ => None,
        }
    }

    /// Local slot (0..6) of face `f` within `cell`.
    pub fn local_slot(&self, cell: usize, f: usize) -> Option<usize> {
        self.cell_faces[cell].iter().position(|&(g, _)| g == f)
    }

    /// Vector area of a (possibly non-planar) quadrilateral face:
    /// 0.5 * (diagonal1 x diagonal2). Exact for closed surfaces.
    pub fn face_vector_area(&self, f: usize) -> Point {
        let [a, b, c, d] = self.faces[f];
        let d1 = sub(self.nodes[c], self.nodes[a]);
        let d2 = sub(self.nodes[d], self.nodes[b]);
        scale(cross(d1, d2), 0.5)
    }

    /// Recomputes all geometric quantities from node positions.
    fn recompute_geometry(&mut self) -> Result<()> {
        let n_cells = self.cells.len();
        self.cell_centroid = vec![[0.0; 3]; n_cells];
        self.cell_volume = vec![0.0; n_cells];
        self.cell_depth = vec![0.0; n_cells];
        for c in 0..n_cells {
            let (centroid, volume) = self.cell_geometry_raw(c)?;
            self.cell_centroid[c] = centroid;
            self.cell_volume[c] = volume;
            self.cell_depth[c] = centroid[2];
        }
        let n_faces = self.faces.len();
        self.face_centroid = vec![[0.0; 3]; n_faces];
        self.face_area = vec![0.0; n_faces];
        for f in 0..n_faces {
            let [a, b, c, d] = self.faces[f];
            let (pa, pb, pc, pd) = (self.nodes[a], self.nodes[b], self.nodes[c], self.nodes[d]);
            // Triangle split (a,b,c) + (a,c,d) for centroid weighting.
            let a1 = 0.5 * norm(cross(sub(pb, pa), sub(pc, pa)));
            let a2 = 0.5 * norm(cross(sub(pc, pa), sub(pd, pa)));
            let c1 = scale(add(add(pa, pb), pc), 1.0 / 3.0);
            let c2 = scale(add(add(pa, pc), pd), 1.0 / 3.0);
            let total = a1 + a2;
            self.face_centroid[f] = scale(add(scale(c1, a1), scale(c2, a2)), 1.0 / total);
            self.face_area[f] = norm(self.face_vector_area(f));
        }
        Ok(())
    }

    fn cell_geometry_raw(&self, cell: usize) -> Result<(Point, f64)> {
        let nodes = self.cells[cell].map(|i| self.nodes[i]);
        let mut volume = 0.0;
        let mut centroid = [0.0; 3];
        for tet in HEX_TETS {
            let (a, b, c, d) = (nodes[tet[0]], nodes[tet[1]], nodes[tet[2]], nodes[tet[3]]);
            let v = tet_volume(a, b, c, d);
            volume += v;
            centroid = add(centroid, scale(tet_centroid(a, b, c, d), v));
        }
        if volume <= 0.0 || !volume.is_finite() {
            return Err(Error::Geometry(format!(
                "cell {cell} has non-positive volume {volume:.3e}"
            )));
        }
        Ok((scale(centroid, 1.0 / volume), volume))
    }

    /// Centroid, volume, and depth of one cell (volume from the 6-tet
    /// decomposition; centroid volume-weighted).
    pub fn cell_geometry(&self, cell: usize) -> Result<(Point, f64, f64)> {
        if cell >= self.cells.len() {
            return Err(Error::InvalidArgument(format!("cell index {cell} out of range")));
        }
        let (c, v) = self.cell_geometry_raw(cell)?;
        Ok((c, v, c[2]))
    }
}

fn norm(p: Point) -> f64 {
    dot(p, p).sqrt()
}

/// Builds a structured mesh of nx x ny x nz cells; x fastest in all
/// orderings; z is depth (downward).
pub fn build_cartesian(
    nx: usize,
    ny: usize,
    nz: usize,
    dx: f64,
    dy: f64,
    dz: f64,
    origin: Point,
) -> Result<HexMesh> {
    if nx == 0 || ny == 0 || nz == 0 {
        return Err(Error::InvalidArgument("cell counts must be >= 1".into()));
    }
    if dx <= 0.0 || dy <= 0.0 || dz <= 0.0 {
        return Err(Error::InvalidArgument("cell sizes must be positive".into()));
    }

    let node_id = |i: usize, j: usize, k: usize| i + j * (nx + 1) + k * (nx + 1) * (ny + 1);
    let mut nodes = Vec::with_capacity((nx + 1) * (ny + 1) * (nz + 1));
    for k in 0..=nz {
        for j in 0..=ny {
            for i in 0..=nx {
                nodes.push([
                    origin[0] + i as f64 * dx,
                    origin[1] + j as f64 * dy,
                    origin[2] + k as f64 * dz,
                ]);
            }
        }
    }

    let mut cells = Vec::with_capacity(nx * ny * nz);
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                cells.push([
                    node_id(i, j, k),
                    node_id(i + 1, j, k),
                    node_id(i + 1, j + 1, k),
                    node_id(i, j + 1, k),
                    node_id(i, j, k + 1),
                    node_id(i + 1, j, k + 1),
                    node_id(i + 1, j + 1, k + 1),
                    node_id(i, j + 1, k + 1),
                ]);
            }
        }
    }

    // Face enumeration: x-faces, then y-faces, then z-faces.
    let nfx = (nx + 1) * ny * nz;
    let nfy = nx * (ny + 1) * nz;
    let nfz = nx * ny * (nz + 1);
    let fx = |i: usize, j: usize, k: usize| i + j * (nx + 1) + k * (nx + 1) * ny;
    let fy = |i: usize, j: usize, k: usize| nfx + i + j * nx + k * nx * (ny + 1);
    let fz = |i: usize, j: usize, k: usize| nfx + nfy + i + j * nx + k * nx * ny;

    let mut faces = vec![[0usize; 4]; nfx + nfy + nfz];
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..=nx {
                // Normal +x.
                faces[fx(i, j, k)] = [
                    node_id(i, j, k),
                    node_id(i, j + 1, k),
                    node_id(i, j + 1, k + 1),
                    node_id(i, j, k + 1),
                ];
            }
        }
    }
    for k in 0..nz {
        for j in 0..=ny {
            for i in 0..nx {
                // Normal +y.
                faces[fy(i, j, k)] = [
                    node_id(i, j, k),
                    node_id(i, j, k + 1),
                    node_id(i + 1, j, k + 1),
                    node_id(i + 1, j, k),
                ];
            }
        }
    }
    for k in 0..=nz {
        for j in 0..ny {
            for i in 0..nx {
                // Normal +z.
                faces[fz(i, j, k)] = [
                    node_id(i, j, k),
                    node_id(i + 1, j, k),
                    node_id(i + 1, j + 1, k),
                    node_id(i, j + 1, k),
                ];
            }
        }
    }

    let mut cell_faces = Vec::with_capacity(cells.len());
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                cell_faces.push([
                    (fx(i, j, k), -1i8),
                    (fx(i + 1, j, k), 1),
                    (fy(i, j, k), -1),
                    (fy(i, j + 1, k), 1),
                    (fz(i, j, k), -1),
                    (fz(i, j, k + 1), 1),
                ]);
            }
        }
    }

    let n_faces = faces.len();
    let mut adj: Vec<Vec<usize>> = vec![Vec::with_capacity(2); n_faces];
    for (c, cf) in cell_faces.iter().enumerate() {
        for &(f, _) in cf {
            adj[f].push(c);
        }
    }
    let mut face_cells = Vec::with_capacity(n_faces);
    let mut boundary_flag = Vec::with_capacity(n_faces);
    for (f, mut cs) in adj.into_iter().enumerate() {
        cs.sort_unstable();
        match cs.len() {
            1 => {
                face_cells.push((cs[0], None));
                boundary_flag.push(true);
            }
            2 => {
                face_cells.push((cs[0], Some(cs[1])));
                boundary_flag.push(false);
            }
            n => {
                return Err(Error::Geometry(format!("face {f} has {n} adjacent cells")));
            }
        }
    }

    let mut mesh = HexMesh {
        nodes,
        cells,
        faces,
        cell_faces,
        face_cells,
        boundary_flag,
        cell_centroid: Vec::new(),
        cell_volume: Vec::new(),
        cell_depth: Vec::new(),
        face_centroid: Vec::new(),
        face_area: Vec::new(),
        dims: (nx, ny, nz),
    };
    mesh.recompute_geometry()?;
    Ok(mesh)
}

/// Lifts nodes inside a radial cosine bell centered at `apex` (x, y):
/// depth decreases by amplitude * 0.5 * (1 + cos(pi r / radius)) for
/// r < radius. Topology is unchanged.
pub fn deform_dome(mesh: &HexMesh, amplitude: f64, radius: f64, apex: [f64; 2]) -> Result<HexMesh> {
    if amplitude < 0.0 {
        return Err(Error::InvalidArgument("amplitude must be non-negative".into()));
    }
    if radius <= 0.0 {
        return Err(Error::InvalidArgument("radius must be positive".into()));
    }
    let mut out = mesh.clone();
    if amplitude == 0.0 {
        return Ok(out);
    }
    for p in &mut out.nodes {
        let r = ((p[0] - apex[0]).powi(2) + (p[1] - apex[1]).powi(2)).sqrt();
        if r < radius {
            p[2] -= amplitude * 0.5 * (1.0 + (std::f64::consts::PI * r / radius).cos());
        }
    }
    out.recompute_geometry()?;
    Ok(out)
}

/// Shears node depths by a linear map z += sx*x + sy*y. Every cell stays an
/// affinely-mapped parallelepiped, unlike the dome bump.
pub fn shear_mesh(mesh: &HexMesh, sx: f64, sy: f64) -> Result<HexMesh> {
    let mut out = mesh.clone();
    for p in &mut out.nodes {
        p[2] += sx * p[0] + sy * p[1];
    }
    out.recompute_geometry()?;
    Ok(out)
}
