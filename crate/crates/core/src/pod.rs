//! Proper orthogonal decomposition of a snapshot matrix.
//!
//! Two independent routes produce the same basis: a one-sided Jacobi SVD of
//! the `M x N` matrix, and the method of snapshots (eigenvectors of the
//! `N x N` Gram matrix lifted back through the snapshots). Snapshots are not
//! mean-centred and the inner product is the plain Euclidean one on cell
//! values.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ffd::ParameterPoint;
use crate::linalg::{dot, norm, one_sided_jacobi_svd, symmetric_eigen};
use crate::pipeline::store::{read_block, read_json, write_block, write_json, BlockRef};

/// Eigenvalues below `DROP_TOL * lambda_max` are treated as numerically null.
pub const DROP_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotMatrix {
    columns: Vec<Vec<f64>>,
    parameter_points: Vec<ParameterPoint>,
}

impl SnapshotMatrix {
    pub fn new(columns: Vec<Vec<f64>>, parameter_points: Vec<ParameterPoint>) -> Result<Self> {
        if columns.is_empty() {
            return Err(Error::InsufficientData("snapshot matrix needs at least one column".into()));
        }
        if columns.len() != parameter_points.len() {
            return Err(Error::Shape(format!(
                "{} snapshots for {} parameter points",
                columns.len(),
                parameter_points.len()
            )));
        }
        let m = columns[0].len();
        if columns.iter().any(|c| c.len() != m) {
            return Err(Error::Shape("snapshot columns differ in length".into()));
        }
        Ok(Self { columns, parameter_points })
    }

    /// Columns without parameter information (points default to the column index).
    pub fn from_columns(columns: Vec<Vec<f64>>) -> Result<Self> {
        let points = (0..columns.len()).map(|k| ParameterPoint::new(vec![k as f64])).collect();
        Self::new(columns, points)
    }

    pub fn rows(&self) -> usize {
        self.columns[0].len()
    }

    pub fn cols(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    pub fn column(&self, k: usize) -> &[f64] {
        &self.columns[k]
    }

    pub fn parameter_points(&self) -> &[ParameterPoint] {
        &self.parameter_points
    }

    pub fn frobenius_norm_sq(&self) -> f64 {
        self.columns.iter().map(|c| dot(c, c)).sum()
    }

    /// Same snapshots with rows gathered at `rows` (in the given order).
    pub fn restrict_rows(&self, rows: &[usize]) -> Result<Self> {
        let m = self.rows();
        if let Some(&bad) = rows.iter().find(|&&r| r >= m) {
            return Err(Error::Index { index: bad, len: m });
        }
        let columns = self.columns.iter().map(|c| rows.iter().map(|&r| c[r]).collect()).collect();
        Ok(Self { columns, parameter_points: self.parameter_points.clone() })
    }

    /// Subset of columns, in the given order.
    pub fn select(&self, cols: &[usize]) -> Result<Self> {
        let n = self.cols();
        if let Some(&bad) = cols.iter().find(|&&k| k >= n) {
            return Err(Error::Index { index: bad, len: n });
        }
        Self::new(
            cols.iter().map(|&k| self.columns[k].clone()).collect(),
            cols.iter().map(|&k| self.parameter_points[k].clone()).collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PodBasis {
    rows: usize,
    modes: Vec<Vec<f64>>,
    singular_values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CoefficientVector(pub Vec<f64>);

impl CoefficientVector {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Flips `mode` so that its entry of largest magnitude (first on ties) is positive.
fn normalize_sign(mode: &mut [f64]) {
    let mut best = 0;
    for (i, v) in mode.iter().enumerate() {
        if v.abs() > mode[best].abs() {
            best = i;
        }
    }
    if mode.get(best).is_some_and(|v| *v < 0.0) {
        mode.iter_mut().for_each(|v| *v = -*v);
    }
}

impl PodBasis {
    /// Wraps modes after checking lengths, ordering and orthonormality.
    pub fn new(rows: usize, modes: Vec<Vec<f64>>, singular_values: Vec<f64>) -> Result<Self> {
        if modes.len() != singular_values.len() {
            return Err(Error::Shape(format!("{} modes for {} singular values", modes.len(), singular_values.len())));
        }
        if modes.iter().any(|m| m.len() != rows) {
            return Err(Error::Shape("mode length differs from row count".into()));
        }
        if singular_values.iter().any(|s| !(*s >= 0.0)) || singular_values.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::Domain("singular values must be non-negative and non-increasing".into()));
        }
        for i in 0..modes.len() {
            for j in 0..=i {
                let expected = if i == j { 1.0 } else { 0.0 };
                if (dot(&modes[i], &modes[j]) - expected).abs() > 1e-10 {
                    return Err(Error::Domain(format!("modes {i} and {j} are not orthonormal")));
                }
            }
        }
        Ok(Self { rows, modes, singular_values })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn rank(&self) -> usize {
        self.modes.len()
    }

    pub fn modes(&self) -> &[Vec<f64>] {
        &self.modes
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    /// Modes restricted to `rows` (no longer orthonormal in general).
    pub fn restricted_modes(&self, rows: &[usize]) -> Vec<Vec<f64>> {
        self.modes.iter().map(|m| rows.iter().map(|&r| m[r]).collect()).collect()
    }

    /// Entry `row` of every mode.
    pub fn row(&self, row: usize) -> Vec<f64> {
        self.modes.iter().map(|m| m[row]).collect()
    }

    pub fn save(&self, root: &Path, stem: &str) -> Result<BasisRef> {
        let flat: Vec<f64> = self.modes.iter().flatten().copied().collect();
        let modes = write_block(root, &format!("{stem}.f64"), &flat)?;
        let header = BasisRef {
            header: format!("{stem}.json"),
            rows: self.rows,
            rank: self.rank(),
            singular_values: self.singular_values.clone(),
            modes,
        };
        write_json(&root.join(&header.header), &header)?;
        Ok(header)
    }

    pub fn load(root: &Path, reference: &BasisRef) -> Result<Self> {
        let header: BasisRef = read_json(&root.join(&reference.header))?;
        if &header != reference {
            return Err(Error::Integrity {
                path: root.join(&reference.header),
                reason: "basis header differs from the manifest entry".into(),
            });
        }
        let flat = read_block(root, &header.modes)?;
        if flat.len() != header.rows * header.rank || header.singular_values.len() != header.rank {
            return Err(Error::Integrity { path: root.join(&header.modes.file), reason: "basis dimensions mismatch".into() });
        }
        let modes = if header.rows == 0 { vec![Vec::new(); header.rank] } else { flat.chunks_exact(header.rows).map(<[f64]>::to_vec).collect() };
        Ok(Self { rows: header.rows, modes, singular_values: header.singular_values })
    }
}

/// JSON header of a stored basis; also embedded in the store manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisRef {
    pub header: String,
    pub rows: usize,
    pub rank: usize,
    pub singular_values: Vec<f64>,
    pub modes: BlockRef,
}

fn empty_basis(rows: usize) -> PodBasis {
    log::warn!("snapshot matrix is numerically zero; returning a rank-0 basis");
    PodBasis { rows, modes: Vec::new(), singular_values: Vec::new() }
}

/// Left singular vectors of the snapshot matrix by one-sided Jacobi.
///
/// Singular values with `sigma^2 <= DROP_TOL * sigma_max^2` have no
/// well-defined left vector and are dropped together with it.
pub fn build_basis_svd(theta: &SnapshotMatrix) -> PodBasis {
    let m = theta.rows();
    let n = theta.cols();
    let (sigma, left) = if m >= n {
        let (s, u, _) = one_sided_jacobi_svd(theta.columns.clone());
        (s, u)
    } else {
        // Theta^T = U' S V'^T, so the left vectors of Theta are V'
        let transposed: Vec<Vec<f64>> = (0..m).map(|i| theta.columns.iter().map(|c| c[i]).collect()).collect();
        let (s, _, v) = one_sided_jacobi_svd(transposed);
        (s, v)
    };
    let s_max = sigma.first().copied().unwrap_or(0.0);
    if !(s_max > 0.0) {
        return empty_basis(m);
    }
    let mut modes = Vec::new();
    let mut values = Vec::new();
    for (s, mut u) in sigma.into_iter().zip(left) {
        if s * s <= DROP_TOL * s_max * s_max {
            break;
        }
        normalize_sign(&mut u);
        modes.push(u);
        values.push(s);
    }
    PodBasis { rows: m, modes, singular_values: values }
}

/// Method of snapshots: `Theta^T Theta phi = lambda phi`, `psi = Theta phi / sqrt(lambda)`.
pub fn build_basis_snapshots(theta: &SnapshotMatrix) -> PodBasis {
    let m = theta.rows();
    let n = theta.cols();
    let mut gram = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let g = dot(&theta.columns[i], &theta.columns[j]);
            gram[i * n + j] = g;
            gram[j * n + i] = g;
        }
    }
    let (lambda, phi) = symmetric_eigen(gram, n);
    let l_max = lambda.first().copied().unwrap_or(0.0);
    if !(l_max > 0.0) {
        return empty_basis(m);
    }
    let mut modes: Vec<Vec<f64>> = Vec::new();
    let mut values = Vec::new();
    for (l, p) in lambda.into_iter().zip(phi) {
        if l <= DROP_TOL * l_max {
            break;
        }
        let s = l.sqrt();
        let mut psi = vec![0.0; m];
        for (coef, col) in p.iter().zip(&theta.columns) {
            for (acc, v) in psi.iter_mut().zip(col) {
                *acc += coef * v;
            }
        }
        psi.iter_mut().for_each(|v| *v /= s);
        // one Gram-Schmidt pass restores orthogonality lost to small lambda
        for prev in &modes {
            let c = dot(prev, &psi);
            psi.iter_mut().zip(prev).for_each(|(v, q)| *v -= c * q);
        }
        let len = norm(&psi);
        psi.iter_mut().for_each(|v| *v /= len);
        normalize_sign(&mut psi);
        modes.push(psi);
        values.push(s);
    }
    PodBasis { rows: m, modes, singular_values: values }
}

/// Method of snapshots when `M > 4N`, SVD otherwise.
pub fn build_basis(theta: &SnapshotMatrix) -> PodBasis {
    if theta.rows() > 4 * theta.cols() {
        build_basis_snapshots(theta)
    } else {
        build_basis_svd(theta)
    }
}

/// Smallest leading basis whose energy fraction reaches `energy`.
pub fn truncate(basis: &PodBasis, energy: f64) -> Result<PodBasis> {
    if !(energy > 0.0 && energy <= 1.0) {
        return Err(Error::Domain(format!("energy fraction {energy} outside (0, 1]")));
    }
    let total: f64 = basis.singular_values.iter().map(|s| s * s).sum();
    let mut r = basis.rank();
    if energy < 1.0 && total > 0.0 {
        let mut acc = 0.0;
        for (k, s) in basis.singular_values.iter().enumerate() {
            acc += s * s;
            if acc / total >= energy {
                r = k + 1;
                break;
            }
        }
    }
    Ok(PodBasis {
        rows: basis.rows,
        modes: basis.modes[..r].to_vec(),
        singular_values: basis.singular_values[..r].to_vec(),
    })
}

pub fn project(basis: &PodBasis, u: &[f64]) -> Result<CoefficientVector> {
    if u.len() != basis.rows {
        return Err(Error::Shape(format!("field of length {} for a basis with {} rows", u.len(), basis.rows)));
    }
    Ok(CoefficientVector(basis.modes.iter().map(|m| dot(m, u)).collect()))
}

pub fn reconstruct(basis: &PodBasis, alpha: &CoefficientVector) -> Result<Vec<f64>> {
    if alpha.len() != basis.rank() {
        return Err(Error::Shape(format!("{} coefficients for a rank-{} basis", alpha.len(), basis.rank())));
    }
    let mut u = vec![0.0; basis.rows];
    for (a, m) in alpha.0.iter().zip(&basis.modes) {
        for (acc, v) in u.iter_mut().zip(m) {
            *acc += a * v;
        }
    }
    Ok(u)
}

/// Reconstruction of `u` at the given rows only (`rows` index the full field).
pub fn reconstruct_rows(basis: &PodBasis, alpha: &CoefficientVector, rows: &[usize]) -> Result<Vec<f64>> {
    if alpha.len() != basis.rank() {
        return Err(Error::Shape(format!("{} coefficients for a rank-{} basis", alpha.len(), basis.rank())));
    }
    Ok(rows
        .iter()
        .map(|&r| basis.modes.iter().zip(&alpha.0).map(|(m, a)| a * m[r]).sum())
        .collect())
}
