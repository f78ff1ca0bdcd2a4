use std::sync::atomic::{AtomicUsize, Ordering};

use crate::error::{Error, Result};
use crate::ffd::{apply_parameters, FfdLattice, ParameterPoint};
use crate::fom::{assemble, output_functional, BoundarySpec, Field, LinearSystem, SolveReport, SolverOptions};
use crate::mesh::{check_quality, generate_mesh, morph_mesh, StructuredMesh};
use crate::pipeline::config::RunConfig;
use crate::sampling::{FullOrderModel, SnapshotMeta};

/// The configured problem as a function of the shape parameters:
/// morph the base mesh, assemble, solve.
#[derive(Debug)]
pub struct ParametricFom {
    config: RunConfig,
    base_mesh: StructuredMesh,
    lattice: FfdLattice,
    solves: AtomicUsize,
}

impl ParametricFom {
    pub fn new(config: &RunConfig) -> Result<Self> {
        let m = &config.mesh;
        let mesh = generate_mesh(m.nx, m.ny, m.domain, m.bump)?;
        Self::with_mesh(config, mesh)
    }

    pub fn with_mesh(config: &RunConfig, base_mesh: StructuredMesh) -> Result<Self> {
        let lattice = config.lattice()?;
        config.binding.validate_against(&lattice)?;
        Ok(Self { config: config.clone(), base_mesh, lattice, solves: AtomicUsize::new(0) })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn base_mesh(&self) -> &StructuredMesh {
        &self.base_mesh
    }

    /// Number of linear solves performed so far.
    pub fn solve_count(&self) -> usize {
        self.solves.load(Ordering::Relaxed)
    }

    /// Morphed mesh at `mu`; fails when it does not pass the quality check.
    pub fn mesh_at(&self, mu: &ParameterPoint) -> Result<StructuredMesh> {
        let lattice = apply_parameters(&self.config.binding, mu, &self.lattice)?;
        let mesh = morph_mesh(&self.base_mesh, &lattice);
        let q = &self.config.quality;
        let report = check_quality(&mesh, q.skew_limit, q.ortho_limit);
        if !report.pass {
            return Err(Error::Config(format!(
                "morphed mesh at {:?} fails quality (min area {:.3e}, skewness {:.3}, non-orthogonality {:.1} deg)",
                mu.values(),
                report.min_area,
                report.max_skewness,
                report.max_nonorthogonality
            )));
        }
        Ok(mesh)
    }

    pub fn boundary(&self, mesh: &StructuredMesh) -> Result<BoundarySpec> {
        BoundarySpec::uniform(mesh, &self.config.boundary)
    }

    pub fn assemble_on(&self, mesh: &StructuredMesh) -> Result<LinearSystem> {
        let source = vec![self.config.source; mesh.cell_count()];
        assemble(mesh, &self.boundary(mesh)?, &self.config.pde, &source)
    }

    pub fn assemble_at(&self, mu: &ParameterPoint) -> Result<(StructuredMesh, LinearSystem)> {
        let mesh = self.mesh_at(mu)?;
        let system = self.assemble_on(&mesh)?;
        Ok((mesh, system))
    }

    pub fn solve_at(&self, mu: &ParameterPoint, opts: &SolverOptions) -> Result<(StructuredMesh, Field, SolveReport)> {
        let (mesh, system) = self.assemble_at(mu)?;
        let mut x = vec![0.0; system.len()];
        self.solves.fetch_add(1, Ordering::Relaxed);
        let report = system.solve_from(&mut x, opts)?;
        let field = Field::new(x, mesh.topology_id());
        Ok((mesh, field, report))
    }

    pub fn qoi(&self, mesh: &StructuredMesh, values: &[f64]) -> Result<f64> {
        let field = Field::new(values.to_vec(), mesh.topology_id());
        output_functional(mesh, &field, &self.config.qoi, self.config.pde.diffusivity)
    }

    /// Cells owning a face of the QoI patch, ascending.
    pub fn surface_cells(&self) -> Result<Vec<usize>> {
        let mut cells: Vec<usize> = self
            .base_mesh
            .patch(&self.config.qoi.patch)?
            .iter()
            .map(|&f| self.base_mesh.faces()[f].owner)
            .collect();
        cells.sort_unstable();
        cells.dedup();
        Ok(cells)
    }
}

impl FullOrderModel for ParametricFom {
    fn solve(&self, mu: &ParameterPoint) -> Result<(Vec<f64>, SnapshotMeta)> {
        let (mesh, field, report) = self.solve_at(mu, &self.config.solver)?;
        let meta = SnapshotMeta {
            mesh_hash: mesh.geometry_hash(),
            tol: self.config.solver.tol,
            iterations: report.iterations,
            residual: report.residual,
        };
        Ok((field.values, meta))
    }
}
