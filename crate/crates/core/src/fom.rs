//! Full-order model: steady advection-diffusion `-k lap(u) + v . grad(u) = f`
//! on a (possibly morphed) structured quad mesh.
//!
//! Cell-centred finite volumes with two-point diffusive fluxes
//! `T = k |f| (n . d) / |d|^2` and first-order upwind advection. The linear
//! system is solved by Gauss-Seidel sweeps in fixed cell order, so results
//! are bit-reproducible and a solve can be resumed from any iterate with new
//! boundary data (see [`Subsystem`]).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::StructuredMesh;

/// Condition on one patch, one value per patch face.
#[derive(Debug, Clone, PartialEq)]
pub enum BoundaryCondition {
    Dirichlet(Vec<f64>),
    /// Outward diffusive flux `-k du/dn` per unit face length.
    Neumann(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BoundarySpec {
    pub patches: BTreeMap<String, BoundaryCondition>,
}

/// Per-patch constant used to build a [`BoundarySpec`] from configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum UniformCondition {
    Dirichlet(f64),
    Neumann(f64),
}

impl BoundarySpec {
    /// Expands per-patch constants to per-face arrays.
    pub fn uniform(mesh: &StructuredMesh, conditions: &BTreeMap<String, UniformCondition>) -> Result<Self> {
        let mut patches = BTreeMap::new();
        for (name, cond) in conditions {
            let n = mesh.patch(name)?.len();
            let bc = match *cond {
                UniformCondition::Dirichlet(v) => BoundaryCondition::Dirichlet(vec![v; n]),
                UniformCondition::Neumann(q) => BoundaryCondition::Neumann(vec![q; n]),
            };
            patches.insert(name.clone(), bc);
        }
        let spec = Self { patches };
        spec.validate(mesh)?;
        Ok(spec)
    }

    /// Every mesh patch covered exactly once with arrays of the right length.
    pub fn validate(&self, mesh: &StructuredMesh) -> Result<()> {
        for (name, faces) in mesh.patches() {
            if faces.is_empty() {
                continue;
            }
            let bc = self
                .patches
                .get(name)
                .ok_or_else(|| Error::Config(format!("no boundary condition for patch '{name}'")))?;
            let len = match bc {
                BoundaryCondition::Dirichlet(v) | BoundaryCondition::Neumann(v) => v.len(),
            };
            if len != faces.len() {
                return Err(Error::Config(format!(
                    "patch '{name}' has {} faces but {len} boundary values",
                    faces.len()
                )));
            }
        }
        for name in self.patches.keys() {
            mesh.patch(name)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdeParams {
    pub diffusivity: f64,
    pub velocity: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverOptions {
    /// Relative residual target `|r|_inf <= tol * |b|_inf`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 100_000 }
    }
}

/// Cell values bound to a mesh topology.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub values: Vec<f64>,
    pub mesh_id: String,
}

impl Field {
    pub fn new(values: Vec<f64>, mesh_id: impl Into<String>) -> Self {
        Self { values, mesh_id: mesh_id.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QoiSpec {
    pub patch: String,
    pub direction: [f64; 2],
    pub normalization: f64,
}

impl QoiSpec {
    pub fn validate(&self) -> Result<()> {
        let len = self.direction[0].hypot(self.direction[1]);
        if (len - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("QoI direction has length {len}, expected 1")));
        }
        if !(self.normalization > 0.0) {
            return Err(Error::Config("QoI normalization must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    /// Final `|r|_inf / |b|_inf`.
    pub residual: f64,
    /// Relative residual after each sweep.
    #[serde(skip)]
    pub history: Vec<f64>,
}

/// Sparse system with at most four off-diagonal couplings per row.
///
/// Row `i` reads `diag[i] x[i] + sum_k coef[i][k] x[nbr[i][k]] = rhs[i]`.
/// Missing neighbours point at the row itself with a zero coefficient.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    diag: Vec<f64>,
    nbr: Vec<[usize; 4]>,
    coef: Vec<[f64; 4]>,
    rhs: Vec<f64>,
}

impl LinearSystem {
    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn rhs(&self) -> &[f64] {
        &self.rhs
    }

    fn row_residual(&self, x: &[f64], i: usize) -> f64 {
        let mut r = self.rhs[i] - self.diag[i] * x[i];
        for k in 0..4 {
            r -= self.coef[i][k] * x[self.nbr[i][k]];
        }
        r
    }

    /// `b - A x`.
    pub fn residual(&self, x: &[f64]) -> Vec<f64> {
        (0..self.len()).map(|i| self.row_residual(x, i)).collect()
    }

    fn residual_inf(&self, x: &[f64]) -> f64 {
        (0..self.len()).map(|i| self.row_residual(x, i).abs()).fold(0.0, f64::max)
    }

    /// One forward Gauss-Seidel sweep.
    fn sweep(&self, x: &mut [f64]) {
        for i in 0..self.len() {
            let mut s = self.rhs[i];
            for k in 0..4 {
                s -= self.coef[i][k] * x[self.nbr[i][k]];
            }
            x[i] = s / self.diag[i];
        }
    }

    /// Gauss-Seidel from the iterate `x` until the relative residual reaches `opts.tol`.
    pub fn solve_from(&self, x: &mut [f64], opts: &SolverOptions) -> Result<SolveReport> {
        if x.len() != self.len() {
            return Err(Error::Shape(format!("initial guess of length {} for {} unknowns", x.len(), self.len())));
        }
        if !(opts.tol > 0.0) {
            return Err(Error::Config("solver tolerance must be positive".into()));
        }
        let scale = self.rhs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let scale = if scale > 0.0 { scale } else { 1.0 };
        let mut residual = self.residual_inf(x) / scale;
        let mut history = Vec::new();
        let mut iterations = 0;
        while residual > opts.tol {
            if iterations == opts.max_iter {
                return Err(Error::Convergence { iterations, residual });
            }
            self.sweep(x);
            iterations += 1;
            residual = self.residual_inf(x) / scale;
            if !residual.is_finite() {
                return Err(Error::Convergence { iterations, residual });
            }
            history.push(residual);
        }
        Ok(SolveReport { iterations, residual, history })
    }

    /// Rows of `cells` with every coupling to a cell outside the set turned
    /// into a ghost contribution on the right-hand side.
    pub fn restrict(&self, cells: &[usize]) -> Result<Subsystem> {
        let mut local = vec![usize::MAX; self.len()];
        for (l, &c) in cells.iter().enumerate() {
            if c >= self.len() {
                return Err(Error::Index { index: c, len: self.len() });
            }
            local[c] = l;
        }
        let mut ghost_slot: BTreeMap<usize, usize> = BTreeMap::new();
        let mut couplings = Vec::new();
        let mut diag = Vec::with_capacity(cells.len());
        let mut nbr = Vec::with_capacity(cells.len());
        let mut coef = Vec::with_capacity(cells.len());
        let mut rhs = Vec::with_capacity(cells.len());
        for (l, &c) in cells.iter().enumerate() {
            let mut row_nbr = [l; 4];
            let mut row_coef = [0.0; 4];
            for k in 0..4 {
                let g = self.nbr[c][k];
                let a = self.coef[c][k];
                if a == 0.0 || g == c {
                    continue;
                }
                if local[g] != usize::MAX {
                    row_nbr[k] = local[g];
                    row_coef[k] = a;
                } else {
                    let next = ghost_slot.len();
                    let slot = *ghost_slot.entry(g).or_insert(next);
                    couplings.push(GhostCoupling { row: l, slot, coef: a });
                }
            }
            diag.push(self.diag[c]);
            nbr.push(row_nbr);
            coef.push(row_coef);
            rhs.push(self.rhs[c]);
        }
        let mut ghost_cells = vec![0; ghost_slot.len()];
        for (&g, &slot) in &ghost_slot {
            ghost_cells[slot] = g;
        }
        Ok(Subsystem {
            cells: cells.to_vec(),
            base_rhs: rhs.clone(),
            system: LinearSystem { diag, nbr, coef, rhs },
            ghost_cells,
            couplings,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct GhostCoupling {
    row: usize,
    slot: usize,
    coef: f64,
}

/// Restriction of a [`LinearSystem`] to a cell subset with Dirichlet data
/// supplied through the values of the neighbouring outside ("ghost") cells.
#[derive(Debug, Clone, PartialEq)]
pub struct Subsystem {
    cells: Vec<usize>,
    base_rhs: Vec<f64>,
    system: LinearSystem,
    ghost_cells: Vec<usize>,
    couplings: Vec<GhostCoupling>,
}

impl Subsystem {
    /// Global ids of the rows, in local order.
    pub fn cells(&self) -> &[usize] {
        &self.cells
    }

    /// Global ids of the outside cells the rows couple to.
    pub fn ghost_cells(&self) -> &[usize] {
        &self.ghost_cells
    }

    pub fn system(&self) -> &LinearSystem {
        &self.system
    }

    /// Installs ghost values (ordered as [`Self::ghost_cells`]).
    pub fn set_ghost_values(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.ghost_cells.len() {
            return Err(Error::Shape(format!(
                "{} ghost values for {} ghost cells",
                values.len(),
                self.ghost_cells.len()
            )));
        }
        self.system.rhs.copy_from_slice(&self.base_rhs);
        for c in &self.couplings {
            self.system.rhs[c.row] -= c.coef * values[c.slot];
        }
        Ok(())
    }

    pub fn solve_from(&self, x: &mut [f64], opts: &SolverOptions) -> Result<SolveReport> {
        self.system.solve_from(x, opts)
    }
}

fn owner_transmissibility(mesh: &StructuredMesh, face: usize, centroid_from: [f64; 2], target: [f64; 2], kappa: f64) -> Result<f64> {
    let g = mesh.face_geometry(face);
    let d = [target[0] - centroid_from[0], target[1] - centroid_from[1]];
    let nd = g.normal[0] * d[0] + g.normal[1] * d[1];
    if !(nd > 0.0) || !(g.length > 0.0) {
        return Err(Error::Config(format!("face {face} has a non-positive two-point transmissibility; mesh fails quality")));
    }
    Ok(kappa * g.length * nd / (d[0] * d[0] + d[1] * d[1]))
}

fn boundary_lookup<'a>(mesh: &StructuredMesh, bc: &'a BoundarySpec) -> BTreeMap<usize, (&'a BoundaryCondition, usize)> {
    let mut map = BTreeMap::new();
    for (name, faces) in mesh.patches() {
        if let Some(cond) = bc.patches.get(name) {
            for (k, &f) in faces.iter().enumerate() {
                map.insert(f, (cond, k));
            }
        }
    }
    map
}

/// Assembles the finite-volume system.
pub fn assemble(mesh: &StructuredMesh, bc: &BoundarySpec, pde: &PdeParams, source: &[f64]) -> Result<LinearSystem> {
    let n = mesh.cell_count();
    if !(pde.diffusivity > 0.0 && pde.diffusivity.is_finite()) {
        return Err(Error::Config(format!("diffusivity must be positive, got {}", pde.diffusivity)));
    }
    if source.len() != n {
        return Err(Error::Shape(format!("source of length {} for {n} cells", source.len())));
    }
    bc.validate(mesh)?;
    let centroids = mesh.cell_centroids();
    let mut diag = vec![0.0; n];
    let mut nbr: Vec<[usize; 4]> = (0..n).map(|i| [i; 4]).collect();
    let mut coef = vec![[0.0; 4]; n];
    let mut rhs = vec![0.0; n];
    for c in 0..n {
        let area = mesh.cell_area(c);
        if !(area > 0.0) {
            return Err(Error::Config(format!("cell {c} has non-positive area {area}; mesh fails quality")));
        }
        rhs[c] += source[c] * area;
    }
    let lookup = boundary_lookup(mesh, bc);
    let kappa = pde.diffusivity;
    let v = pde.velocity;
    for c in 0..n {
        let cell_faces = mesh.cell_faces(c);
        for (slot, &f) in cell_faces.iter().enumerate() {
            let face = mesh.faces()[f];
            let g = mesh.face_geometry(f);
            // outward normal from this cell
            let sign = if face.owner == c { 1.0 } else { -1.0 };
            let flux = sign * (v[0] * g.normal[0] + v[1] * g.normal[1]) * g.length;
            match face.neighbor {
                Some(_) => {
                    let other = if face.owner == c { face.neighbor.unwrap() } else { face.owner };
                    let t = if face.owner == c {
                        owner_transmissibility(mesh, f, centroids[c], centroids[other], kappa)?
                    } else {
                        owner_transmissibility(mesh, f, centroids[other], centroids[c], kappa)?
                    };
                    diag[c] += t;
                    nbr[c][slot] = other;
                    coef[c][slot] -= t;
                    if flux >= 0.0 {
                        diag[c] += flux;
                    } else {
                        coef[c][slot] += flux;
                    }
                }
                None => {
                    let (cond, k) = *lookup
                        .get(&f)
                        .ok_or_else(|| Error::Config(format!("boundary face {f} has no condition")))?;
                    match cond {
                        BoundaryCondition::Dirichlet(values) => {
                            let t = owner_transmissibility(mesh, f, centroids[c], g.center, kappa)?;
                            diag[c] += t;
                            rhs[c] += t * values[k];
                            if flux >= 0.0 {
                                diag[c] += flux;
                            } else {
                                rhs[c] -= flux * values[k];
                            }
                        }
                        BoundaryCondition::Neumann(values) => {
                            rhs[c] -= values[k] * g.length;
                            // zero-gradient convective value on the face
                            diag[c] += flux;
                        }
                    }
                }
            }
        }
        if !(diag[c] > 0.0) {
            return Err(Error::Config(format!("cell {c} has a non-positive diagonal")));
        }
    }
    Ok(LinearSystem { diag, nbr, coef, rhs })
}

/// Assembles and solves from a zero initial guess.
pub fn solve(
    mesh: &StructuredMesh,
    bc: &BoundarySpec,
    pde: &PdeParams,
    source: &[f64],
    opts: &SolverOptions,
) -> Result<(Field, SolveReport)> {
    let system = assemble(mesh, bc, pde, source)?;
    let mut x = vec![0.0; system.len()];
    let report = system.solve_from(&mut x, opts)?;
    Ok((Field::new(x, mesh.topology_id()), report))
}

/// The interior cell across from a boundary face of `cell`.
fn inward_neighbor(mesh: &StructuredMesh, cell: usize, face: usize) -> Option<usize> {
    let faces = mesh.cell_faces(cell);
    let slot = faces.iter().position(|&f| f == face)?;
    let opposite = faces[slot ^ 1];
    let of = mesh.faces()[opposite];
    of.neighbor.map(|nb| if of.owner == cell { nb } else { of.owner })
}

/// Normalised integral over a patch of the outward diffusive flux projected on
/// a direction: `sum_f q_f (n_f . dir) |f| / normalization`.
///
/// The flux `q_f = -k du/dn` is estimated from the owner cell and the cell
/// opposite the face, so the functional is linear in the field.
pub fn output_functional(mesh: &StructuredMesh, field: &Field, qoi: &QoiSpec, diffusivity: f64) -> Result<f64> {
    if field.values.len() != mesh.cell_count() {
        return Err(Error::Shape(format!(
            "field of length {} on a mesh with {} cells",
            field.values.len(),
            mesh.cell_count()
        )));
    }
    let faces = mesh.patch(&qoi.patch)?;
    let mut total = 0.0;
    for &f in faces {
        let cell = mesh.faces()[f].owner;
        let Some(q) = inward_neighbor(mesh, cell, f) else { continue };
        let g = mesh.face_geometry(f);
        let cp = mesh.cell_centroid(cell);
        let cq = mesh.cell_centroid(q);
        let d = [cp[0] - cq[0], cp[1] - cq[1]];
        let dudn = (field.values[cell] - field.values[q]) * (g.normal[0] * d[0] + g.normal[1] * d[1])
            / (d[0] * d[0] + d[1] * d[1]);
        let flux = -diffusivity * dudn;
        total += flux * (g.normal[0] * qoi.direction[0] + g.normal[1] * qoi.direction[1]) * g.length;
    }
    Ok(total / qoi.normalization)
}

/// Outward diffusive flux through each boundary face, as seen by the discretisation.
pub fn boundary_fluxes(mesh: &StructuredMesh, bc: &BoundarySpec, pde: &PdeParams, field: &Field) -> Result<Vec<(usize, f64)>> {
    bc.validate(mesh)?;
    let lookup = boundary_lookup(mesh, bc);
    let mut out = Vec::with_capacity(lookup.len());
    for (&f, &(cond, k)) in &lookup {
        let c = mesh.faces()[f].owner;
        let g = mesh.face_geometry(f);
        let flux = match cond {
            BoundaryCondition::Dirichlet(values) => {
                let t = owner_transmissibility(mesh, f, mesh.cell_centroid(c), g.center, pde.diffusivity)?;
                t * (field.values[c] - values[k])
            }
            BoundaryCondition::Neumann(values) => values[k] * g.length,
        };
        out.push((f, flux));
    }
    Ok(out)
}

/// Values of `field` at `cells`, in ascending cell order without duplicates.
pub fn restrict(field: &Field, cells: &[usize]) -> Result<Vec<f64>> {
    let mut sorted = cells.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    sorted
        .iter()
        .map(|&c| {
            field
                .values
                .get(c)
                .copied()
                .ok_or(Error::Index { index: c, len: field.values.len() })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{generate_mesh, BumpSpec, Rect};

    fn unit_mesh(n: usize) -> StructuredMesh {
        generate_mesh(n, n, Rect::new(0.0, 0.0, 1.0, 1.0), BumpSpec { x_min: 0.25, x_max: 0.75 }).unwrap()
    }

    fn conditions(list: &[(&str, UniformCondition)]) -> BTreeMap<String, UniformCondition> {
        list.iter().map(|(n, c)| (n.to_string(), *c)).collect()
    }

    fn all_dirichlet(mesh: &StructuredMesh, value: f64) -> BoundarySpec {
        let c = UniformCondition::Dirichlet(value);
        BoundarySpec::uniform(
            mesh,
            &conditions(&[("inlet", c), ("outlet", c), ("bottom", c), ("bump", c), ("top", c)]),
        )
        .unwrap()
    }

    fn linear_x_bc(mesh: &StructuredMesh) -> BoundarySpec {
        BoundarySpec::uniform(
            mesh,
            &conditions(&[
                ("inlet", UniformCondition::Dirichlet(0.0)),
                ("outlet", UniformCondition::Dirichlet(1.0)),
                ("bottom", UniformCondition::Neumann(0.0)),
                ("bump", UniformCondition::Neumann(0.0)),
                ("top", UniformCondition::Neumann(0.0)),
            ]),
        )
        .unwrap()
    }

    const DIFFUSION: PdeParams = PdeParams { diffusivity: 1.0, velocity: [0.0, 0.0] };

    #[test]
    fn constant_dirichlet_gives_constant_field() {
        let mesh = unit_mesh(8);
        let bc = all_dirichlet(&mesh, 2.5);
        let pde = PdeParams { diffusivity: 0.1, velocity: [1.0, 0.3] };
        let opts = SolverOptions { tol: 1e-12, max_iter: 100_000 };
        let (field, _) = solve(&mesh, &bc, &pde, &vec![0.0; 64], &opts).unwrap();
        for v in field.values {
            assert!((v - 2.5).abs() < 1e-10);
        }
    }

    #[test]
    fn linear_field_is_reproduced() {
        let mesh = unit_mesh(10);
        let bc = linear_x_bc(&mesh);
        let opts = SolverOptions { tol: 1e-12, max_iter: 100_000 };
        let (field, _) = solve(&mesh, &bc, &DIFFUSION, &vec![0.0; 100], &opts).unwrap();
        for (c, v) in field.values.iter().enumerate() {
            assert!((v - mesh.cell_centroid(c)[0]).abs() < 1e-10);
        }
    }

    #[test]
    fn residual_history_non_increasing_for_pure_diffusion() {
        let mesh = unit_mesh(16);
        let bc = linear_x_bc(&mesh);
        let opts = SolverOptions { tol: 1e-10, max_iter: 100_000 };
        let (_, report) = solve(&mesh, &bc, &DIFFUSION, &vec![1.0; 256], &opts).unwrap();
        assert!(report.history.len() > 10);
        for w in report.history.windows(2) {
            assert!(w[1] <= w[0], "{} then {}", w[0], w[1]);
        }
    }

    #[test]
    fn solve_is_deterministic() {
        let mesh = unit_mesh(12);
        let bc = linear_x_bc(&mesh);
        let pde = PdeParams { diffusivity: 0.05, velocity: [1.0, 0.0] };
        let opts = SolverOptions::default();
        let a = solve(&mesh, &bc, &pde, &vec![0.5; 144], &opts).unwrap().0;
        let b = solve(&mesh, &bc, &pde, &vec![0.5; 144], &opts).unwrap().0;
        assert_eq!(a.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn config_and_convergence_errors() {
        let mesh = unit_mesh(8);
        let bc = linear_x_bc(&mesh);
        let bad = PdeParams { diffusivity: 0.0, velocity: [0.0, 0.0] };
        assert!(matches!(solve(&mesh, &bc, &bad, &vec![0.0; 64], &SolverOptions::default()), Err(Error::Config(_))));
        let opts = SolverOptions { tol: 1e-14, max_iter: 3 };
        match solve(&mesh, &bc, &DIFFUSION, &vec![0.0; 64], &opts) {
            Err(Error::Convergence { iterations, residual }) => {
                assert_eq!(iterations, 3);
                assert!(residual > 1e-14);
            }
            other => panic!("expected convergence error, got {other:?}"),
        }
        let mut missing = bc.clone();
        missing.patches.remove("top");
        assert!(matches!(missing.validate(&mesh), Err(Error::Config(_))));
    }

    #[test]
    fn output_functional_on_linear_and_constant_fields() {
        let mesh = unit_mesh(8);
        let x: Vec<f64> = (0..64).map(|c| mesh.cell_centroid(c)[0]).collect();
        let qoi = QoiSpec { patch: "outlet".into(), direction: [1.0, 0.0], normalization: 1.0 };
        let f = output_functional(&mesh, &Field::new(x, "m"), &qoi, 1.0).unwrap();
        assert!((f + 1.0).abs() < 1e-12);
        let c = output_functional(&mesh, &Field::new(vec![3.0; 64], "m"), &qoi, 1.0).unwrap();
        assert_eq!(c, 0.0);
        let unknown = QoiSpec { patch: "wing".into(), ..qoi };
        assert!(matches!(output_functional(&mesh, &Field::new(vec![0.0; 64], "m"), &unknown, 1.0), Err(Error::Config(_))));
    }

    #[test]
    fn restrict_orders_and_validates() {
        let field = Field::new((0..8).map(|v| v as f64 * 10.0).collect(), "m");
        assert_eq!(restrict(&field, &[0, 5, 2]).unwrap(), vec![0.0, 20.0, 50.0]);
        assert!(restrict(&field, &[]).unwrap().is_empty());
        assert_eq!(restrict(&field, &(0..8).collect::<Vec<_>>()).unwrap(), field.values);
        assert!(matches!(restrict(&field, &[8]), Err(Error::Index { index: 8, len: 8 })));
    }

    #[test]
    fn subsystem_with_exact_ghosts_reproduces_global_solution() {
        let mesh = unit_mesh(10);
        let bc = linear_x_bc(&mesh);
        let pde = PdeParams { diffusivity: 0.1, velocity: [1.0, 0.2] };
        let source: Vec<f64> = (0..100).map(|c| (c % 7) as f64).collect();
        let system = assemble(&mesh, &bc, &pde, &source).unwrap();
        let mut x = vec![0.0; 100];
        system.solve_from(&mut x, &SolverOptions { tol: 1e-13, max_iter: 100_000 }).unwrap();
        let cells: Vec<usize> = (0..100).filter(|&c| { let (i, j) = mesh.cell_ij(c); (3..7).contains(&i) && j < 5 }).collect();
        let mut sub = system.restrict(&cells).unwrap();
        let ghosts: Vec<f64> = sub.ghost_cells().iter().map(|&g| x[g]).collect();
        sub.set_ghost_values(&ghosts).unwrap();
        let mut local = vec![0.0; cells.len()];
        sub.solve_from(&mut local, &SolverOptions { tol: 1e-13, max_iter: 100_000 }).unwrap();
        for (l, &c) in cells.iter().enumerate() {
            assert!((local[l] - x[c]).abs() < 1e-10);
        }
        // 4 wide, 5 tall block touching the bottom: 5 + 5 + 4 ghosts
        assert_eq!(sub.ghost_cells().len(), 14);
    }
}
