//! Greedy enrichment of the snapshot database.
//!
//! Each iteration scores every snapshot by how badly a basis built from the
//! others reconstructs it (leave-one-out), weights each Delaunay triangle by
//! its area times the scores of its vertices, and places the next sample at
//! the score-weighted average of the worst triangle's vertices.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ffd::{ParameterBinding, ParameterPoint};
use crate::pod::{build_basis, project, reconstruct, SnapshotMatrix};
use crate::podi::{delaunay, Triangulation};

/// Solver metadata stored with every snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnapshotMeta {
    pub mesh_hash: String,
    pub tol: f64,
    pub iterations: usize,
    pub residual: f64,
}

/// Anything that produces a snapshot for a parameter point.
pub trait FullOrderModel: Sync {
    fn solve(&self, mu: &ParameterPoint) -> Result<(Vec<f64>, SnapshotMeta)>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotDatabase {
    theta: Option<SnapshotMatrix>,
    provenance: Vec<SnapshotMeta>,
}

impl Default for SnapshotDatabase {
    fn default() -> Self {
        Self::new()
    }
}

impl SnapshotDatabase {
    pub fn new() -> Self {
        Self { theta: None, provenance: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.provenance.len()
    }

    pub fn is_empty(&self) -> bool {
        self.provenance.is_empty()
    }

    pub fn xi(&self) -> &[ParameterPoint] {
        self.theta.as_ref().map_or(&[], |t| t.parameter_points())
    }

    pub fn theta(&self) -> Result<&SnapshotMatrix> {
        self.theta.as_ref().ok_or_else(|| Error::InsufficientData("empty snapshot database".into()))
    }

    pub fn provenance(&self) -> &[SnapshotMeta] {
        &self.provenance
    }

    /// Minimum separation between database points.
    pub fn eps_dup(bounds: &[[f64; 2]]) -> f64 {
        let diam = bounds.iter().map(|b| (b[1] - b[0]).powi(2)).sum::<f64>().sqrt();
        1e-6 * diam
    }

    pub fn contains(&self, mu: &ParameterPoint, eps: f64) -> bool {
        self.xi().iter().any(|p| p.distance(mu) <= eps)
    }

    pub fn push(&mut self, mu: ParameterPoint, column: Vec<f64>, meta: SnapshotMeta) -> Result<()> {
        let theta = match self.theta.take() {
            None => SnapshotMatrix::new(vec![column], vec![mu])?,
            Some(t) => {
                let mut cols = t.columns().to_vec();
                let mut pts = t.parameter_points().to_vec();
                cols.push(column);
                pts.push(mu);
                SnapshotMatrix::new(cols, pts)?
            }
        };
        self.theta = Some(theta);
        self.provenance.push(meta);
        Ok(())
    }

    /// First `n` snapshots.
    pub fn prefix(&self, n: usize) -> Result<Self> {
        if n == 0 {
            return Ok(Self::new());
        }
        let theta = self.theta()?.select(&(0..n).collect::<Vec<_>>())?;
        Ok(Self { theta: Some(theta), provenance: self.provenance[..n].to_vec() })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    RelativeL2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorIndicator {
    pub e_s: Vec<f64>,
    pub norm_kind: NormKind,
    /// Snapshots with zero norm, whose entry is an absolute error.
    pub absolute: Vec<bool>,
}

impl ErrorIndicator {
    pub fn max(&self) -> f64 {
        self.e_s.iter().copied().fold(0.0, f64::max)
    }

    pub fn mean(&self) -> f64 {
        if self.e_s.is_empty() { 0.0 } else { self.e_s.iter().sum::<f64>() / self.e_s.len() as f64 }
    }
}

/// Leave-one-out reconstruction errors, optionally measured on `rows` only.
pub fn loo_errors(theta: &SnapshotMatrix, rows: Option<&[usize]>) -> Result<ErrorIndicator> {
    let n = theta.cols();
    if n < 2 {
        return Err(Error::InsufficientData(format!("leave-one-out needs 2 snapshots, have {n}")));
    }
    let restricted;
    let theta = match rows {
        Some(r) => {
            restricted = theta.restrict_rows(r)?;
            &restricted
        }
        None => theta,
    };
    let results: Vec<Result<(f64, bool)>> = (0..n)
        .into_par_iter()
        .map(|k| {
            let others: Vec<usize> = (0..n).filter(|&j| j != k).collect();
            let basis = build_basis(&theta.select(&others)?);
            let u = theta.column(k);
            let approx = reconstruct(&basis, &project(&basis, u)?)?;
            let err: f64 = u.iter().zip(&approx).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            let norm: f64 = u.iter().map(|v| v * v).sum::<f64>().sqrt();
            Ok(if norm > 0.0 { (err / norm, false) } else { (err, true) })
        })
        .collect();
    let mut e_s = Vec::with_capacity(n);
    let mut absolute = Vec::with_capacity(n);
    for r in results {
        let (e, a) = r?;
        e_s.push(e);
        absolute.push(a);
    }
    Ok(ErrorIndicator { e_s, norm_kind: NormKind::RelativeL2, absolute })
}

/// `e_t = area * sum of vertex indicators`, per simplex.
pub fn simplex_errors(tri: &Triangulation, ind: &ErrorIndicator) -> Result<Vec<f64>> {
    if ind.e_s.len() != tri.points().len() {
        return Err(Error::Shape(format!("{} indicators for {} points", ind.e_s.len(), tri.points().len())));
    }
    Ok(tri
        .simplices()
        .iter()
        .enumerate()
        .map(|(s, verts)| tri.area(s).abs() * verts.iter().map(|&v| ind.e_s[v]).sum::<f64>())
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub mu: ParameterPoint,
    pub simplex: usize,
    pub simplex_vertices: [[f64; 2]; 3],
    /// True when the weighted point duplicated a database point and the
    /// centroid was used instead.
    pub centroid_fallback: bool,
}

/// Error-weighted point in the triangle of largest `e_t` (lowest id on ties).
pub fn next_point(tri: &Triangulation, ind: &ErrorIndicator, eps_dup: f64) -> Result<Proposal> {
    if !(ind.max() > 0.0) {
        return Err(Error::NoRefinement);
    }
    let e_t = simplex_errors(tri, ind)?;
    let mut best = 0;
    for (s, &e) in e_t.iter().enumerate() {
        if e > e_t[best] {
            best = s;
        }
    }
    let verts = tri.simplices()[best];
    let xs = tri.vertices(best);
    let w: f64 = verts.iter().map(|&v| ind.e_s[v]).sum();
    let weighted = if w > 0.0 {
        let mut mu = [0.0; 2];
        for (&v, x) in verts.iter().zip(&xs) {
            mu[0] += x[0] * ind.e_s[v];
            mu[1] += x[1] * ind.e_s[v];
        }
        Some([mu[0] / w, mu[1] / w])
    } else {
        None
    };
    let centroid = [(xs[0][0] + xs[1][0] + xs[2][0]) / 3.0, (xs[0][1] + xs[1][1] + xs[2][1]) / 3.0];
    let duplicate = |p: [f64; 2]| tri.points().iter().any(|q| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt() <= eps_dup);
    let (mu, centroid_fallback) = match weighted {
        Some(p) if !duplicate(p) => (p, false),
        _ => (centroid, true),
    };
    Ok(Proposal { mu: ParameterPoint::new(mu.to_vec()), simplex: best, simplex_vertices: xs, centroid_fallback })
}

/// One row of the sampling history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub n_snapshots: usize,
    pub max_e: f64,
    pub mean_e: f64,
    pub e_s: Vec<f64>,
    /// `None` once the indicator is below tolerance or nothing can be refined.
    pub proposal: Option<Proposal>,
    /// Whether the proposal was solved and added.
    pub solved: bool,
}

/// Initial design: a tensor grid with `per_axis` points per parameter (first
/// parameter fastest).
pub fn grid_points(binding: &ParameterBinding, per_axis: usize) -> Result<Vec<ParameterPoint>> {
    if per_axis < 2 {
        return Err(Error::Config("initial grid needs at least 2 points per axis".into()));
    }
    let d = binding.parameter_dim();
    let total = per_axis.pow(d as u32);
    Ok((0..total)
        .map(|mut k| {
            let mut mu = Vec::with_capacity(d);
            for b in &binding.bounds {
                let i = k % per_axis;
                k /= per_axis;
                let t = i as f64 / (per_axis - 1) as f64;
                mu.push(if i + 1 == per_axis { b[1] } else { b[0] + t * (b[1] - b[0]) });
            }
            ParameterPoint::new(mu)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GreedyOptions {
    pub tol: f64,
    pub max_new: usize,
    /// Cells the indicator is measured on; all cells when `None`.
    pub indicator_rows: Option<Vec<usize>>,
}

/// Observer of database growth, used to persist partial progress.
pub trait Checkpoint {
    fn snapshot_added(&mut self, db: &SnapshotDatabase) -> Result<()>;
}

impl Checkpoint for () {
    fn snapshot_added(&mut self, _: &SnapshotDatabase) -> Result<()> {
        Ok(())
    }
}

fn evaluate(db: &SnapshotDatabase, opts: &GreedyOptions, iteration: usize, eps_dup: f64) -> Result<IterationRecord> {
    let theta = db.theta()?;
    let ind = loo_errors(theta, opts.indicator_rows.as_deref())?;
    let points: Vec<[f64; 2]> = db
        .xi()
        .iter()
        .map(|p| match p.values() {
            [a, b] => Ok([*a, *b]),
            v => Err(Error::Shape(format!("greedy sampling needs 2 parameters, got {}", v.len()))),
        })
        .collect::<Result<_>>()?;
    let tri = delaunay(&points)?;
    let (max_e, mean_e) = (ind.max(), ind.mean());
    let proposal = if max_e > opts.tol {
        match next_point(&tri, &ind, eps_dup) {
            Ok(p) => Some(p),
            Err(Error::NoRefinement) => None,
            Err(e) => return Err(e),
        }
    } else {
        None
    };
    Ok(IterationRecord { iteration, n_snapshots: db.len(), max_e, mean_e, e_s: ind.e_s, proposal, solved: false })
}

/// Runs the greedy loop, resuming from whatever `db` already holds.
///
/// `db` must contain a prefix of the deterministic sequence this call would
/// produce (the initial design in order, then the greedy points); the
/// history of the existing prefix is recomputed rather than trusted.
pub fn greedy_sample(
    fom: &dyn FullOrderModel,
    binding: &ParameterBinding,
    init: &[ParameterPoint],
    opts: &GreedyOptions,
    mut db: SnapshotDatabase,
    checkpoint: &mut dyn Checkpoint,
) -> Result<(SnapshotDatabase, Vec<IterationRecord>)> {
    binding.validate()?;
    for mu in init {
        binding.check_bounds(mu)?;
    }
    for corner in binding.corners() {
        if !init.iter().any(|p| p.distance(&corner) <= 1e-12) {
            return Err(Error::Config(format!("initial design misses parameter-domain corner {:?}", corner.values())));
        }
    }
    let eps_dup = SnapshotDatabase::eps_dup(&binding.bounds);
    for (k, p) in db.xi().iter().take(init.len()).enumerate() {
        if p.distance(&init[k]) > 0.0 {
            return Err(Error::Config(format!("stored snapshot {k} does not match the initial design")));
        }
    }
    if db.len() < init.len() {
        let missing = &init[db.len()..];
        let solved: Vec<Result<(Vec<f64>, SnapshotMeta)>> = missing.par_iter().map(|mu| fom.solve(mu)).collect();
        for (mu, res) in missing.iter().zip(solved) {
            let (u, meta) = res?;
            db.push(mu.clone(), u, meta)?;
            checkpoint.snapshot_added(&db)?;
        }
    }
    let n_init = init.len();
    let mut records = Vec::new();
    for iteration in 0..=opts.max_new {
        let n = n_init + iteration;
        let current = db.prefix(n)?;
        let mut record = evaluate(&current, opts, iteration, eps_dup)?;
        let proposal = match (&record.proposal, iteration < opts.max_new) {
            (Some(p), true) => p.mu.clone(),
            _ => {
                records.push(record);
                break;
            }
        };
        if db.len() > n {
            if db.xi()[n].distance(&proposal) > 0.0 {
                return Err(Error::Config(format!("stored snapshot {n} does not match the greedy sequence")));
            }
        } else {
            log::info!("greedy iteration {iteration}: max e_s {:.3e}, solving at {:?}", record.max_e, proposal.values());
            let (u, meta) = fom.solve(&proposal)?;
            db.push(proposal, u, meta)?;
            checkpoint.snapshot_added(&db)?;
        }
        record.solved = true;
        records.push(record);
    }
    Ok((db, records))
}
