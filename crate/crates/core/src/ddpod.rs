//! Hybrid full-order / POD Schwarz coupling.
//!
//! The full-order model runs on `omega1`; the rest of the mesh is represented
//! by the POD expansion. Each outer iteration solves on `omega1` with
//! Dirichlet data taken from the ROM in the cells just outside it, fits the
//! POD coefficients to the solution on the overlap by least squares, and
//! re-evaluates the ROM at those outside cells.
//!
//! Inside the loop only `omega1` rows of the system and the basis rows of the
//! overlap and ghost cells are touched; [`OpCount`] records this.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fom::{LinearSystem, SolverOptions};
use crate::linalg::cholesky_solve;
use crate::mesh::{Rect, StructuredMesh};
use crate::pod::{reconstruct, CoefficientVector, PodBasis};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainSplit {
    /// Sorted cell ids of the full-order subdomain.
    pub omega1: Vec<usize>,
    /// Sorted cell ids represented by the POD expansion.
    pub omega2: Vec<usize>,
    /// Sorted `omega1 ∩ omega2`.
    pub overlap: Vec<usize>,
    /// Interior mesh faces with exactly one side in `omega1`.
    pub interface: Vec<usize>,
}

impl DomainSplit {
    /// Cells outside `omega1` across the interface faces, sorted.
    pub fn exterior_cells(&self, mesh: &StructuredMesh) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .interface
            .iter()
            .map(|&f| {
                let face = mesh.faces()[f];
                let nb = face.neighbor.expect("interface faces are interior");
                if self.omega1.binary_search(&face.owner).is_ok() { nb } else { face.owner }
            })
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }
}

/// `omega1` is the cells meeting `core_box` grown by `overlap_layers` rings
/// of 8-connected neighbours; `omega2` is every cell outside the core.
pub fn split_domain(mesh: &StructuredMesh, core_box: &Rect, overlap_layers: usize) -> Result<DomainSplit> {
    if overlap_layers == 0 {
        return Err(Error::Config("DD-POD needs at least one overlap layer".into()));
    }
    let core = mesh.cells_intersecting(core_box);
    if core.is_empty() {
        return Err(Error::Config(format!("core box {core_box:?} does not meet the mesh")));
    }
    let (nx, ny) = (mesh.nx(), mesh.ny());
    let mut in_core = vec![false; mesh.cell_count()];
    core.iter().for_each(|&c| in_core[c] = true);
    let mut in1 = in_core.clone();
    for _ in 0..overlap_layers {
        let prev = in1.clone();
        for j in 0..ny {
            for i in 0..nx {
                if prev[mesh.cell_index(i, j)] {
                    for jj in j.saturating_sub(1)..=(j + 1).min(ny - 1) {
                        for ii in i.saturating_sub(1)..=(i + 1).min(nx - 1) {
                            in1[mesh.cell_index(ii, jj)] = true;
                        }
                    }
                }
            }
        }
    }
    let omega1: Vec<usize> = (0..mesh.cell_count()).filter(|&c| in1[c]).collect();
    let omega2: Vec<usize> = (0..mesh.cell_count()).filter(|&c| !in_core[c]).collect();
    let overlap: Vec<usize> = (0..mesh.cell_count()).filter(|&c| in1[c] && !in_core[c]).collect();
    let interface: Vec<usize> = mesh
        .faces()
        .iter()
        .enumerate()
        .filter(|(_, f)| f.neighbor.is_some_and(|nb| in1[f.owner] != in1[nb]))
        .map(|(id, _)| id)
        .collect();
    if omega2.is_empty() || overlap.is_empty() || interface.is_empty() {
        return Err(Error::Config("core box leaves no exterior subdomain to couple with".into()));
    }
    Ok(DomainSplit { omega1, omega2, overlap, interface })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fit {
    pub alpha: CoefficientVector,
    /// `|u1 - sum alpha_i psi_i|_overlap / |u1|_overlap` (absolute when `u1` vanishes there).
    pub residual: f64,
}

/// Least-squares coefficients from overlap values: `overlap_modes[i]` is mode
/// `i` restricted to the overlap and `target` the matching values.
fn fit_restricted(overlap_modes: &[Vec<f64>], target: &[f64]) -> Result<Fit> {
    let r = overlap_modes.len();
    let mut gram = vec![0.0; r * r];
    let mut rhs = vec![0.0; r];
    for i in 0..r {
        for j in 0..=i {
            let g: f64 = overlap_modes[i].iter().zip(&overlap_modes[j]).map(|(a, b)| a * b).sum();
            gram[i * r + j] = g;
            gram[j * r + i] = g;
        }
        rhs[i] = overlap_modes[i].iter().zip(target).map(|(a, b)| a * b).sum();
    }
    let trace: f64 = (0..r).map(|i| gram[i * r + i]).sum();
    let alpha = if r == 0 {
        Vec::new()
    } else if !(trace > 0.0) {
        return Err(Error::IllPosedFit);
    } else {
        // the Tikhonov guard only kicks in when the plain system is numerically singular
        match cholesky_guarded(&gram, &rhs, r, 0.0, trace) {
            Some(a) => a,
            None => cholesky_guarded(&gram, &rhs, r, 1e-12 * trace, trace).ok_or(Error::IllPosedFit)?,
        }
    };
    let mut res2 = 0.0;
    let mut norm2 = 0.0;
    for (k, t) in target.iter().enumerate() {
        let approx: f64 = overlap_modes.iter().zip(&alpha).map(|(m, a)| a * m[k]).sum();
        res2 += (t - approx) * (t - approx);
        norm2 += t * t;
    }
    let residual = if norm2 > 0.0 { (res2 / norm2).sqrt() } else { res2.sqrt() };
    Ok(Fit { alpha: CoefficientVector(alpha), residual })
}

fn cholesky_guarded(gram: &[f64], rhs: &[f64], r: usize, lambda: f64, trace: f64) -> Option<Vec<f64>> {
    let mut a = gram.to_vec();
    for i in 0..r {
        a[i * r + i] += lambda;
    }
    // reject pivots that are pure round-off relative to the trace
    for i in 0..r {
        if a[i * r + i] <= 1e-14 * trace {
            return None;
        }
    }
    let x = cholesky_solve(&a, rhs, r)?;
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// `argmin_alpha |u1 - sum alpha_i psi_i|` over the overlap cells, where `u1`
/// holds values on `split.omega1` (in its order).
pub fn fit_coefficients(basis: &PodBasis, u1: &[f64], split: &DomainSplit) -> Result<Fit> {
    if u1.len() != split.omega1.len() {
        return Err(Error::Shape(format!("{} values for {} omega1 cells", u1.len(), split.omega1.len())));
    }
    let target: Vec<f64> = split
        .overlap
        .iter()
        .map(|c| u1[split.omega1.binary_search(c).expect("overlap inside omega1")])
        .collect();
    fit_restricted(&basis.restricted_modes(&split.overlap), &target)
}

/// Initial Dirichlet data on the cells outside `omega1`.
#[derive(Debug, Clone, PartialEq)]
pub enum SchwarzInit {
    /// ROM evaluated with these coefficients (e.g. a nearby snapshot's).
    Coefficients(CoefficientVector),
    Constant(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchwarzOptions {
    /// Bound on the max relative change of interface values.
    pub tol: f64,
    pub max_outer: usize,
    /// Bound on `|d alpha|_inf / |alpha|_inf`, checked together with `tol`.
    pub alpha_tol: f64,
    /// Inner solves run to `max(inner_tol_floor, inner_tol_factor * change)`.
    pub inner_tol_floor: f64,
    /// With 0.01 the inner error leaks into the interface change and the
    /// history stops decreasing monotonically on the demo problem.
    pub inner_tol_factor: f64,
    /// Tolerance of the last inner solve after convergence.
    pub final_tol: f64,
    pub max_inner: usize,
    pub init: SchwarzInit,
}

impl Default for SchwarzOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_outer: 30,
            alpha_tol: 1e-3,
            inner_tol_floor: 1e-8,
            inner_tol_factor: 1e-3,
            final_tol: 1e-10,
            max_inner: 100_000,
            init: SchwarzInit::Constant(0.0),
        }
    }
}

/// Work done inside the outer loop.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCount {
    /// Distinct cells whose rows were relaxed.
    pub cells_touched: usize,
    /// Sum over inner sweeps of rows relaxed.
    pub cell_updates: usize,
    /// Distinct basis rows read.
    pub basis_rows_touched: usize,
    pub inner_sweeps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchwarzState {
    pub iteration: usize,
    pub alpha: CoefficientVector,
    /// ROM values at [`SchwarzSolution::exterior_cells`].
    pub interface_values: Vec<f64>,
    /// Interface change per outer iteration.
    pub history: Vec<f64>,
    pub fit_residuals: Vec<f64>,
    pub ops: OpCount,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchwarzSolution {
    /// `u1` on `omega1` and the ROM elsewhere.
    pub composite: Vec<f64>,
    /// Full-order values on `omega1`, in its order.
    pub u1: Vec<f64>,
    pub exterior_cells: Vec<usize>,
    /// Fit residual of the final coefficients.
    pub fit_residual: f64,
    pub state: SchwarzState,
}

fn rel_change(new: &[f64], old: &[f64]) -> f64 {
    let diff = new.iter().zip(old).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    let scale = new.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale > 0.0 { diff / scale } else { diff }
}

fn eval_rows(rows: &[Vec<f64>], alpha: &[f64]) -> Vec<f64> {
    rows.iter().map(|row| row.iter().zip(alpha).map(|(m, a)| m * a).sum()).collect()
}

/// Schwarz iteration on the globally assembled `system`.
pub fn schwarz_solve(system: &LinearSystem, basis: &PodBasis, split: &DomainSplit, opts: &SchwarzOptions) -> Result<SchwarzSolution> {
    if basis.rows() != system.len() {
        return Err(Error::Shape(format!("basis has {} rows for {} cells", basis.rows(), system.len())));
    }
    if !(opts.tol > 0.0) || opts.max_outer == 0 {
        return Err(Error::Config("Schwarz tolerance must be positive and max_outer at least 1".into()));
    }
    let mut sub = system.restrict(&split.omega1)?;
    let exterior = sub.ghost_cells().to_vec();
    let overlap_modes = basis.restricted_modes(&split.overlap);
    let overlap_pos: Vec<usize> = split
        .overlap
        .iter()
        .map(|c| split.omega1.binary_search(c).map_err(|_| Error::Config("overlap cell outside omega1".into())))
        .collect::<Result<_>>()?;
    // rows of the basis at the exterior cells, one vector per cell
    let exterior_rows: Vec<Vec<f64>> = exterior.iter().map(|&c| basis.row(c)).collect();

    let (mut g, mut u1, mut alpha) = match &opts.init {
        SchwarzInit::Coefficients(a) => {
            if a.len() != basis.rank() {
                return Err(Error::Shape(format!("{} initial coefficients for rank {}", a.len(), basis.rank())));
            }
            (eval_rows(&exterior_rows, a.values()), crate::pod::reconstruct_rows(basis, a, &split.omega1)?, a.clone())
        }
        SchwarzInit::Constant(c) => (vec![*c; exterior.len()], vec![*c; split.omega1.len()], CoefficientVector(vec![0.0; basis.rank()])),
    };
    let mut ops = OpCount {
        cells_touched: split.omega1.len(),
        basis_rows_touched: split.overlap.len() + exterior.len(),
        ..OpCount::default()
    };
    let mut history = Vec::new();
    let mut fit_residuals = Vec::new();
    // no interface change is known before the first solve, which therefore runs at the floor
    let mut change = 0.0f64;
    let mut converged = false;
    for _ in 0..opts.max_outer {
        sub.set_ghost_values(&g)?;
        let inner = SolverOptions { tol: opts.inner_tol_floor.max(opts.inner_tol_factor * change), max_iter: opts.max_inner };
        let report = sub.solve_from(&mut u1, &inner)?;
        ops.inner_sweeps += report.iterations;
        ops.cell_updates += report.iterations * split.omega1.len();
        let target: Vec<f64> = overlap_pos.iter().map(|&p| u1[p]).collect();
        let fit = fit_restricted(&overlap_modes, &target)?;
        let g_new = eval_rows(&exterior_rows, fit.alpha.values());
        change = rel_change(&g_new, &g);
        let d_alpha = rel_change(fit.alpha.values(), alpha.values());
        history.push(change);
        fit_residuals.push(fit.residual);
        g = g_new;
        alpha = fit.alpha;
        log::debug!("schwarz iteration {}: change {change:.3e}, d_alpha {d_alpha:.3e}, fit {:.3e}", history.len(), fit.residual);
        if change <= opts.tol && d_alpha <= opts.alpha_tol.max(opts.tol) {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::SchwarzNonConvergence { iterations: history.len(), last_change: change, history });
    }
    sub.set_ghost_values(&g)?;
    let last = sub.solve_from(&mut u1, &SolverOptions { tol: opts.final_tol, max_iter: opts.max_inner })?;
    ops.inner_sweeps += last.iterations;
    ops.cell_updates += last.iterations * split.omega1.len();
    let target: Vec<f64> = overlap_pos.iter().map(|&p| u1[p]).collect();
    let fit = fit_restricted(&overlap_modes, &target)?;
    alpha = fit.alpha;
    g = eval_rows(&exterior_rows, alpha.values());

    let mut composite = reconstruct(basis, &alpha)?;
    for (k, &c) in split.omega1.iter().enumerate() {
        composite[c] = u1[k];
    }
    Ok(SchwarzSolution {
        composite,
        u1,
        exterior_cells: exterior,
        fit_residual: fit.residual,
        state: SchwarzState {
            iteration: history.len(),
            alpha,
            interface_values: g,
            history,
            fit_residuals,
            ops,
        },
    })
}
