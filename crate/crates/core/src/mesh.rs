//! Structured quadrilateral meshes.
//!
//! Vertices are numbered `j * (nx + 1) + i` and cells `j * nx + i`. Faces are
//! implicit in `(nx, ny)`: vertical faces come first (`j * (nx + 1) + i`),
//! followed by horizontal ones. Morphing only ever touches vertex
//! coordinates; connectivity and patch tags are fixed at generation.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ffd::FfdLattice;

pub type Point = [f64; 2];

/// Boundary patch names, in storage order.
pub const PATCH_NAMES: [&str; 5] = ["inlet", "outlet", "bottom", "bump", "top"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rect {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl Rect {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        Self { x_min, y_min, x_max, y_max }
    }

    pub fn is_degenerate(&self) -> bool {
        !(self.x_max > self.x_min && self.y_max > self.y_min)
            || ![self.x_min, self.y_min, self.x_max, self.y_max].iter().all(|v| v.is_finite())
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }
}

/// Bottom-wall interval tagged as the morphable `bump` patch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BumpSpec {
    pub x_min: f64,
    pub x_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Face {
    /// Ordered so that the edge vector rotated clockwise points from owner to
    /// neighbour (outward on the boundary).
    pub vertices: [usize; 2],
    pub owner: usize,
    pub neighbor: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaceGeometry {
    pub center: Point,
    pub length: f64,
    pub normal: Point,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StructuredMesh {
    nx: usize,
    ny: usize,
    vertices: Vec<Point>,
    faces: Vec<Face>,
    /// Patch name to boundary face ids.
    patches: BTreeMap<String, Vec<usize>>,
}

/// Generates a uniform `nx x ny` mesh of `domain`, tagging bottom faces whose
/// midpoints fall in the bump interval.
pub fn generate_mesh(nx: usize, ny: usize, domain: Rect, bump: BumpSpec) -> Result<StructuredMesh> {
    if nx < 4 || ny < 4 {
        return Err(Error::Config(format!("mesh needs at least 4x4 cells, got {nx}x{ny}")));
    }
    if domain.is_degenerate() {
        return Err(Error::Config(format!("degenerate mesh domain {domain:?}")));
    }
    let hx = domain.width() / nx as f64;
    let hy = domain.height() / ny as f64;
    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        let y = if j == ny { domain.y_max } else { domain.y_min + j as f64 * hy };
        for i in 0..=nx {
            let x = if i == nx { domain.x_max } else { domain.x_min + i as f64 * hx };
            vertices.push([x, y]);
        }
    }
    let faces = build_faces(nx, ny);
    let mut patches: BTreeMap<String, Vec<usize>> =
        PATCH_NAMES.iter().map(|n| (n.to_string(), Vec::new())).collect();
    for (id, face) in faces.iter().enumerate() {
        if face.neighbor.is_some() {
            continue;
        }
        let [a, b] = face.vertices.map(|v| vertices[v]);
        let mid = [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0];
        let name = if id < (nx + 1) * ny {
            if a[0] == domain.x_min { "inlet" } else { "outlet" }
        } else if a[1] == domain.y_min {
            if mid[0] >= bump.x_min && mid[0] <= bump.x_max { "bump" } else { "bottom" }
        } else {
            "top"
        };
        patches.get_mut(name).expect("known patch").push(id);
    }
    Ok(StructuredMesh { nx, ny, vertices, faces, patches })
}

fn build_faces(nx: usize, ny: usize) -> Vec<Face> {
    let v = |i: usize, j: usize| j * (nx + 1) + i;
    let c = |i: usize, j: usize| j * nx + i;
    let mut faces = Vec::with_capacity((nx + 1) * ny + nx * (ny + 1));
    for j in 0..ny {
        for i in 0..=nx {
            let face = if i == 0 {
                Face { vertices: [v(0, j + 1), v(0, j)], owner: c(0, j), neighbor: None }
            } else if i == nx {
                Face { vertices: [v(nx, j), v(nx, j + 1)], owner: c(nx - 1, j), neighbor: None }
            } else {
                Face { vertices: [v(i, j), v(i, j + 1)], owner: c(i - 1, j), neighbor: Some(c(i, j)) }
            };
            faces.push(face);
        }
    }
    for j in 0..=ny {
        for i in 0..nx {
            let face = if j == 0 {
                Face { vertices: [v(i, 0), v(i + 1, 0)], owner: c(i, 0), neighbor: None }
            } else if j == ny {
                Face { vertices: [v(i + 1, ny), v(i, ny)], owner: c(i, ny - 1), neighbor: None }
            } else {
                Face { vertices: [v(i + 1, j), v(i, j)], owner: c(i, j - 1), neighbor: Some(c(i, j)) }
            };
            faces.push(face);
        }
    }
    faces
}

impl StructuredMesh {
    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn cell_count(&self) -> usize {
        self.nx * self.ny
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn faces(&self) -> &[Face] {
        &self.faces
    }

    pub fn patches(&self) -> &BTreeMap<String, Vec<usize>> {
        &self.patches
    }

    pub fn patch(&self, name: &str) -> Result<&[usize]> {
        self.patches
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Config(format!("unknown patch '{name}'")))
    }

    pub fn cell_index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    /// `(i, j)` position of a cell.
    pub fn cell_ij(&self, cell: usize) -> (usize, usize) {
        (cell % self.nx, cell / self.nx)
    }

    /// Corner vertex ids, counter-clockwise from the lower-left corner.
    pub fn cell_vertices(&self, cell: usize) -> [usize; 4] {
        let (i, j) = self.cell_ij(cell);
        let v = |i: usize, j: usize| j * (self.nx + 1) + i;
        [v(i, j), v(i + 1, j), v(i + 1, j + 1), v(i, j + 1)]
    }

    /// Face ids of a cell ordered west, east, south, north.
    pub fn cell_faces(&self, cell: usize) -> [usize; 4] {
        let (i, j) = self.cell_ij(cell);
        let vertical = |i: usize, j: usize| j * (self.nx + 1) + i;
        let offset = (self.nx + 1) * self.ny;
        let horizontal = |i: usize, j: usize| offset + j * self.nx + i;
        [vertical(i, j), vertical(i + 1, j), horizontal(i, j), horizontal(i, j + 1)]
    }

    /// Signed area of a cell (positive for counter-clockwise corners).
    pub fn cell_area(&self, cell: usize) -> f64 {
        let p = self.cell_vertices(cell).map(|v| self.vertices[v]);
        0.5 * (0..4)
            .map(|k| {
                let a = p[k];
                let b = p[(k + 1) % 4];
                a[0] * b[1] - b[0] * a[1]
            })
            .sum::<f64>()
    }

    /// Area centroid of a cell.
    pub fn cell_centroid(&self, cell: usize) -> Point {
        let p = self.cell_vertices(cell).map(|v| self.vertices[v]);
        // centroid relative to the first corner keeps the sums well scaled
        let o = p[0];
        let mut area = 0.0;
        let mut cx = 0.0;
        let mut cy = 0.0;
        for k in 0..4 {
            let a = [p[k][0] - o[0], p[k][1] - o[1]];
            let b = [p[(k + 1) % 4][0] - o[0], p[(k + 1) % 4][1] - o[1]];
            let cross = a[0] * b[1] - b[0] * a[1];
            area += cross;
            cx += (a[0] + b[0]) * cross;
            cy += (a[1] + b[1]) * cross;
        }
        if area == 0.0 {
            let x = p.iter().map(|q| q[0]).sum::<f64>() / 4.0;
            let y = p.iter().map(|q| q[1]).sum::<f64>() / 4.0;
            return [x, y];
        }
        [o[0] + cx / (3.0 * area), o[1] + cy / (3.0 * area)]
    }

    pub fn cell_centroids(&self) -> Vec<Point> {
        (0..self.cell_count()).map(|c| self.cell_centroid(c)).collect()
    }

    pub fn face_geometry(&self, face: usize) -> FaceGeometry {
        let [a, b] = self.faces[face].vertices.map(|v| self.vertices[v]);
        let dx = b[0] - a[0];
        let dy = b[1] - a[1];
        let length = dx.hypot(dy);
        FaceGeometry {
            center: [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0],
            length,
            normal: [dy / length, -dx / length],
        }
    }

    /// Axis-aligned bounding box of the vertices.
    pub fn bounding_box(&self) -> Rect {
        let mut r = Rect::new(f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in &self.vertices {
            r.x_min = r.x_min.min(p[0]);
            r.y_min = r.y_min.min(p[1]);
            r.x_max = r.x_max.max(p[0]);
            r.y_max = r.y_max.max(p[1]);
        }
        r
    }

    /// Cell whose polygon bounding box intersects `rect`.
    pub fn cells_intersecting(&self, rect: &Rect) -> Vec<usize> {
        (0..self.cell_count())
            .filter(|&c| {
                let p = self.cell_vertices(c).map(|v| self.vertices[v]);
                let x0 = p.iter().map(|q| q[0]).fold(f64::INFINITY, f64::min);
                let x1 = p.iter().map(|q| q[0]).fold(f64::NEG_INFINITY, f64::max);
                let y0 = p.iter().map(|q| q[1]).fold(f64::INFINITY, f64::min);
                let y1 = p.iter().map(|q| q[1]).fold(f64::NEG_INFINITY, f64::max);
                x0 < rect.x_max && x1 > rect.x_min && y0 < rect.y_max && y1 > rect.y_min
            })
            .collect()
    }

    /// Hash of connectivity (dims and patch tags); shared by all morphs of a mesh.
    pub fn topology_id(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.nx as u64).to_le_bytes());
        h.update((self.ny as u64).to_le_bytes());
        for (name, faces) in &self.patches {
            h.update(name.as_bytes());
            for f in faces {
                h.update((*f as u64).to_le_bytes());
            }
        }
        hex::encode(h.finalize())[..16].to_string()
    }

    /// Hash of topology and exact vertex coordinates.
    pub fn geometry_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.topology_id().as_bytes());
        h.update(vertex_bytes(&self.vertices));
        hex::encode(h.finalize())
    }

    /// Same mesh with new vertex coordinates.
    pub fn with_vertices(&self, vertices: Vec<Point>) -> Result<Self> {
        if vertices.len() != self.vertices.len() {
            return Err(Error::Shape(format!(
                "expected {} vertices, got {}",
                self.vertices.len(),
                vertices.len()
            )));
        }
        Ok(Self { vertices, ..self.clone() })
    }
}

/// Moves every vertex through the FFD map; connectivity and tags are kept.
pub fn morph_mesh(mesh: &StructuredMesh, lattice: &FfdLattice) -> StructuredMesh {
    if lattice.dim() != 2 {
        log::warn!("morph_mesh: {}-d lattice applied to a 2-d mesh; mesh left unchanged", lattice.dim());
        return mesh.clone();
    }
    let vertices = mesh
        .vertices
        .iter()
        .map(|p| {
            let q = lattice.deform_point(p);
            [q[0], q[1]]
        })
        .collect();
    StructuredMesh { vertices, ..mesh.clone() }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub min_area: f64,
    pub max_skewness: f64,
    /// Degrees.
    pub max_nonorthogonality: f64,
    pub pass: bool,
}

/// Default skewness limit.
pub const DEFAULT_SKEW_LIMIT: f64 = 0.5;
/// Default non-orthogonality limit in degrees.
pub const DEFAULT_ORTHO_LIMIT: f64 = 70.0;

/// Minimum cell area, face skewness and non-orthogonality.
///
/// Skewness is `|face centre - midpoint of the two cell centroids| / face length`
/// on interior faces. Non-orthogonality is the angle between the face normal
/// and the centroid connector (centroid to face centre on boundary faces).
pub fn check_quality(mesh: &StructuredMesh, skew_limit: f64, ortho_limit: f64) -> QualityReport {
    let centroids = mesh.cell_centroids();
    let min_area = (0..mesh.cell_count())
        .map(|c| mesh.cell_area(c))
        .fold(f64::INFINITY, f64::min);
    let mut max_skewness: f64 = 0.0;
    let mut max_nonorthogonality: f64 = 0.0;
    for (id, face) in mesh.faces.iter().enumerate() {
        let g = mesh.face_geometry(id);
        let cp = centroids[face.owner];
        let d = match face.neighbor {
            Some(nb) => {
                let cn = centroids[nb];
                let mid = [(cp[0] + cn[0]) / 2.0, (cp[1] + cn[1]) / 2.0];
                let off = (g.center[0] - mid[0]).hypot(g.center[1] - mid[1]);
                max_skewness = max_skewness.max(off / g.length);
                [cn[0] - cp[0], cn[1] - cp[1]]
            }
            None => [g.center[0] - cp[0], g.center[1] - cp[1]],
        };
        let cross = g.normal[0] * d[1] - g.normal[1] * d[0];
        let dot = g.normal[0] * d[0] + g.normal[1] * d[1];
        let angle = cross.abs().atan2(dot).to_degrees();
        max_nonorthogonality = max_nonorthogonality.max(angle);
    }
    let pass = min_area > 0.0 && max_skewness <= skew_limit && max_nonorthogonality <= ortho_limit;
    QualityReport { min_area, max_skewness, max_nonorthogonality, pass }
}

const MESH_FORMAT_VERSION: u32 = 1;

/// JSON header stored next to the vertex block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshHeader {
    pub version: u32,
    pub nx: usize,
    pub ny: usize,
    pub vertex_count: usize,
    pub patches: BTreeMap<String, Vec<usize>>,
    pub vertices_sha256: String,
}

pub(crate) fn vertex_bytes(vertices: &[Point]) -> Vec<u8> {
    let flat: Vec<f64> = vertices.iter().flat_map(|p| p.iter().copied()).collect();
    crate::pipeline::store::f64_to_bytes(&flat)
}

impl StructuredMesh {
    pub fn header(&self) -> MeshHeader {
        MeshHeader {
            version: MESH_FORMAT_VERSION,
            nx: self.nx,
            ny: self.ny,
            vertex_count: self.vertices.len(),
            patches: self.patches.clone(),
            vertices_sha256: crate::pipeline::store::sha256_hex(&vertex_bytes(&self.vertices)),
        }
    }

    /// Writes `<stem>.json` (header) and `<stem>.f64` (x, y per vertex, little endian).
    pub fn save(&self, dir: &Path, stem: &str) -> Result<()> {
        use crate::pipeline::store::{write_atomic, write_json};
        write_atomic(&dir.join(format!("{stem}.f64")), &vertex_bytes(&self.vertices))?;
        write_json(&dir.join(format!("{stem}.json")), &self.header())
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        use crate::pipeline::store::{bytes_to_f64, read_json, read_verified};
        let header: MeshHeader = read_json(&dir.join(format!("{stem}.json")))?;
        if header.version != MESH_FORMAT_VERSION {
            return Err(Error::Integrity {
                path: dir.join(format!("{stem}.json")),
                reason: format!("unsupported mesh format version {}", header.version),
            });
        }
        let blob = dir.join(format!("{stem}.f64"));
        let bytes = read_verified(&blob, &header.vertices_sha256)?;
        let flat = bytes_to_f64(&bytes, &blob)?;
        if flat.len() != 2 * header.vertex_count || header.vertex_count != (header.nx + 1) * (header.ny + 1) {
            return Err(Error::Integrity { path: blob, reason: "vertex count mismatch".into() });
        }
        let vertices = flat.chunks_exact(2).map(|c| [c[0], c[1]]).collect();
        let faces = build_faces(header.nx, header.ny);
        Ok(Self { nx: header.nx, ny: header.ny, vertices, faces, patches: header.patches })
    }
}
