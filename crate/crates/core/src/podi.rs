//! POD with interpolation over a Delaunay triangulation of the 2D parameter
//! space.
//!
//! The triangulation is built by incremental Bowyer-Watson insertion. Hull
//! edges carry "ghost" triangles joined to a vertex at infinity, so points
//! outside the current hull are handled without a bounding super-triangle.
//! Predicates are plain f64 with tolerances scaled by the squared diameter
//! of the point set.

use std::collections::{BTreeMap, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ffd::ParameterPoint;
use crate::pod::{project, reconstruct, BasisRef, CoefficientVector, PodBasis, SnapshotMatrix};
use crate::pipeline::store::{read_block, write_block, BlockRef};

const GHOST: usize = usize::MAX;
const REL_EPS: f64 = 1e-12;

fn orient(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

/// Circumcentre and squared radius.
fn circumcircle(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> ([f64; 2], f64) {
    let bx = b[0] - a[0];
    let by = b[1] - a[1];
    let cx = c[0] - a[0];
    let cy = c[1] - a[1];
    let d = 2.0 * (bx * cy - by * cx);
    let b2 = bx * bx + by * by;
    let c2 = cx * cx + cy * cy;
    let ux = (cy * b2 - by * c2) / d;
    let uy = (bx * c2 - cx * b2) / d;
    ([a[0] + ux, a[1] + uy], ux * ux + uy * uy)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Triangulation {
    points: Vec<[f64; 2]>,
    /// Counter-clockwise vertex triples.
    simplices: Vec<[usize; 3]>,
    /// Neighbour across the edge opposite vertex `k`, `None` on the hull.
    adjacency: Vec<[Option<usize>; 3]>,
    /// Tolerance on squared distances and doubled areas.
    eps: f64,
}

struct Builder<'a> {
    pts: &'a [[f64; 2]],
    tris: Vec<Option<[usize; 3]>>,
    eps: f64,
}

impl Builder<'_> {
    fn is_ghost(t: &[usize; 3]) -> bool {
        t[2] == GHOST
    }

    fn in_conflict(&self, t: &[usize; 3], p: [f64; 2]) -> bool {
        if Self::is_ghost(t) {
            // ghost (a, b, inf): outside region left of a->b
            let a = self.pts[t[0]];
            let b = self.pts[t[1]];
            let o = orient(a, b, p);
            if o > self.eps {
                return true;
            }
            if o < -self.eps {
                return false;
            }
            let ab = [b[0] - a[0], b[1] - a[1]];
            let s = ((p[0] - a[0]) * ab[0] + (p[1] - a[1]) * ab[1]) / (ab[0] * ab[0] + ab[1] * ab[1]);
            s > 0.0 && s < 1.0
        } else {
            let (c, r2) = circumcircle(self.pts[t[0]], self.pts[t[1]], self.pts[t[2]]);
            let d2 = (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2);
            d2 < r2 - self.eps
        }
    }

    fn edges(t: &[usize; 3]) -> [(usize, usize); 3] {
        [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])]
    }

    fn edge_map(&self) -> BTreeMap<(usize, usize), usize> {
        let mut map = BTreeMap::new();
        for (id, t) in self.tris.iter().enumerate() {
            if let Some(t) = t {
                for e in Self::edges(t) {
                    map.insert(e, id);
                }
            }
        }
        map
    }

    fn seed(&self, p: [f64; 2]) -> Option<usize> {
        let mut best_ghost: Option<(usize, f64)> = None;
        for (id, t) in self.tris.iter().enumerate() {
            let Some(t) = t else { continue };
            if Self::is_ghost(t) {
                let o = orient(self.pts[t[0]], self.pts[t[1]], p);
                if self.in_conflict(t, p) && best_ghost.is_none_or(|(_, b)| o > b) {
                    best_ghost = Some((id, o));
                }
            } else {
                let [a, b, c] = t.map(|v| self.pts[v]);
                if orient(a, b, p) >= -self.eps && orient(b, c, p) >= -self.eps && orient(c, a, p) >= -self.eps {
                    return Some(id);
                }
            }
        }
        best_ghost.map(|(id, _)| id)
    }

    fn insert(&mut self, v: usize) -> Result<()> {
        let p = self.pts[v];
        let seed = self.seed(p).ok_or_else(|| Error::Degenerate(format!("could not place point {v}")))?;
        let edges = self.edge_map();
        let mut in_cavity = BTreeMap::new();
        in_cavity.insert(seed, ());
        let mut queue = VecDeque::from([seed]);
        while let Some(id) = queue.pop_front() {
            let t = self.tris[id].expect("live triangle");
            for (a, b) in Self::edges(&t) {
                if let Some(&nb) = edges.get(&(b, a)) {
                    if !in_cavity.contains_key(&nb) && self.in_conflict(&self.tris[nb].expect("live"), p) {
                        in_cavity.insert(nb, ());
                        queue.push_back(nb);
                    }
                }
            }
        }
        let mut boundary = Vec::new();
        for &id in in_cavity.keys() {
            let t = self.tris[id].expect("live triangle");
            for (a, b) in Self::edges(&t) {
                let inner = edges.get(&(b, a)).is_some_and(|nb| in_cavity.contains_key(nb));
                if !inner {
                    boundary.push((a, b));
                }
            }
        }
        for &id in in_cavity.keys() {
            self.tris[id] = None;
        }
        for (a, b) in boundary {
            let t = if b == GHOST {
                [v, a, GHOST]
            } else if a == GHOST {
                [b, v, GHOST]
            } else {
                if orient(self.pts[a], self.pts[b], p) <= 0.0 {
                    return Err(Error::Degenerate(format!("point {v} produced a degenerate triangle")));
                }
                [a, b, v]
            };
            self.tris.push(Some(t));
        }
        Ok(())
    }
}

impl Triangulation {
    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn simplices(&self) -> &[[usize; 3]] {
        &self.simplices
    }

    pub fn adjacency(&self) -> &[[Option<usize>; 3]] {
        &self.adjacency
    }

    /// Tolerance applied to squared lengths (`1e-12 * diameter^2`).
    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn area(&self, simplex: usize) -> f64 {
        let [a, b, c] = self.simplices[simplex].map(|v| self.points[v]);
        0.5 * orient(a, b, c)
    }

    pub fn vertices(&self, simplex: usize) -> [[f64; 2]; 3] {
        self.simplices[simplex].map(|v| self.points[v])
    }

    /// Barycentric coordinates of `p` with respect to `simplex` (unclamped).
    pub fn barycentric(&self, simplex: usize, p: [f64; 2]) -> [f64; 3] {
        let [a, b, c] = self.vertices(simplex);
        let total = orient(a, b, c);
        let l0 = orient(b, c, p) / total;
        let l1 = orient(c, a, p) / total;
        [l0, l1, 1.0 - l0 - l1]
    }

    /// Containing simplex and barycentric coordinates, by walking from
    /// simplex 0 towards `p`.
    pub fn locate(&self, p: [f64; 2]) -> Result<(usize, [f64; 3])> {
        if !(p[0].is_finite() && p[1].is_finite()) {
            return Err(Error::Domain(format!("non-finite parameter point ({}, {})", p[0], p[1])));
        }
        let tol = REL_EPS;
        let mut current = 0;
        for _ in 0..=self.simplices.len() * 2 {
            let lambda = self.barycentric(current, p);
            let (worst, value) = lambda
                .iter()
                .enumerate()
                .fold((0, f64::INFINITY), |acc, (k, &l)| if l < acc.1 { (k, l) } else { acc });
            if value >= -tol {
                return Ok((current, clamp(lambda)));
            }
            match self.adjacency[current][worst] {
                Some(next) => current = next,
                None => return Err(Error::Extrapolation(p[0], p[1])),
            }
        }
        // walking cycles are impossible on a Delaunay mesh; scan as a fallback
        for s in 0..self.simplices.len() {
            let lambda = self.barycentric(s, p);
            if lambda.iter().all(|&l| l >= -tol) {
                return Ok((s, clamp(lambda)));
            }
        }
        Err(Error::Extrapolation(p[0], p[1]))
    }

    fn rebuild_adjacency(&mut self) {
        let mut edges = BTreeMap::new();
        for (id, t) in self.simplices.iter().enumerate() {
            for k in 0..3 {
                edges.insert((t[(k + 1) % 3], t[(k + 2) % 3]), id);
            }
        }
        self.adjacency = self
            .simplices
            .iter()
            .map(|t| {
                let mut adj = [None; 3];
                for (k, slot) in adj.iter_mut().enumerate() {
                    *slot = edges.get(&(t[(k + 2) % 3], t[(k + 1) % 3])).copied();
                }
                adj
            })
            .collect();
    }
}

fn clamp(lambda: [f64; 3]) -> [f64; 3] {
    let l = lambda.map(|v| v.max(0.0));
    let s: f64 = l.iter().sum();
    l.map(|v| v / s)
}

/// Delaunay triangulation of `points`, deterministic for a fixed order.
pub fn delaunay(points: &[[f64; 2]]) -> Result<Triangulation> {
    if points.len() < 3 {
        return Err(Error::Degenerate(format!("{} points cannot be triangulated", points.len())));
    }
    if points.iter().any(|p| !(p[0].is_finite() && p[1].is_finite())) {
        return Err(Error::Degenerate("non-finite point".into()));
    }
    let mut diam2: f64 = 0.0;
    for (i, a) in points.iter().enumerate() {
        for b in &points[i + 1..] {
            diam2 = diam2.max((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2));
        }
    }
    let eps = REL_EPS * diam2;
    for (i, a) in points.iter().enumerate() {
        for (j, b) in points.iter().enumerate().skip(i + 1) {
            if (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) <= eps {
                return Err(Error::Degenerate(format!("points {i} and {j} coincide")));
            }
        }
    }
    let k = (2..points.len())
        .find(|&k| orient(points[0], points[1], points[k]).abs() > eps)
        .ok_or_else(|| Error::Degenerate("all points are collinear".into()))?;
    let (a, b) = if orient(points[0], points[1], points[k]) > 0.0 { (0, 1) } else { (1, 0) };
    let mut builder = Builder {
        pts: points,
        tris: vec![Some([a, b, k]), Some([b, a, GHOST]), Some([k, b, GHOST]), Some([a, k, GHOST])],
        eps,
    };
    for v in (2..points.len()).filter(|&v| v != k) {
        builder.insert(v)?;
    }
    let simplices = builder.tris.into_iter().flatten().filter(|t| t[2] != GHOST).collect();
    let mut tri = Triangulation { points: points.to_vec(), simplices, adjacency: Vec::new(), eps };
    tri.rebuild_adjacency();
    Ok(tri)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PodiModel {
    pub basis: PodBasis,
    pub triangulation: Triangulation,
    pub coeff_table: Vec<CoefficientVector>,
}

fn point2(mu: &ParameterPoint) -> Result<[f64; 2]> {
    match mu.values() {
        [a, b] => Ok([*a, *b]),
        v => Err(Error::Shape(format!("PODI needs 2 parameters, got {}", v.len()))),
    }
}

/// Projects every snapshot on `basis` and triangulates the parameter points.
pub fn build_podi(theta: &SnapshotMatrix, basis: &PodBasis) -> Result<PodiModel> {
    let points = theta.parameter_points().iter().map(point2).collect::<Result<Vec<_>>>()?;
    let triangulation = delaunay(&points)?;
    let coeff_table = theta.columns().iter().map(|u| project(basis, u)).collect::<Result<Vec<_>>>()?;
    Ok(PodiModel { basis: basis.clone(), triangulation, coeff_table })
}

impl PodiModel {
    /// Barycentric blend of the three vertex rows of a given simplex.
    pub fn coefficients_in(&self, simplex: usize, mu: [f64; 2]) -> CoefficientVector {
        let lambda = self.triangulation.barycentric(simplex, mu);
        self.blend(simplex, lambda)
    }

    fn blend(&self, simplex: usize, lambda: [f64; 3]) -> CoefficientVector {
        let verts = self.triangulation.simplices()[simplex];
        let r = self.basis.rank();
        let mut alpha = vec![0.0; r];
        for (l, v) in lambda.iter().zip(verts) {
            for (a, c) in alpha.iter_mut().zip(self.coeff_table[v].values()) {
                *a += l * c;
            }
        }
        CoefficientVector(alpha)
    }

    pub fn coefficients(&self, mu: &ParameterPoint) -> Result<CoefficientVector> {
        let (simplex, lambda) = self.triangulation.locate(point2(mu)?)?;
        Ok(self.blend(simplex, lambda))
    }

    pub fn save(&self, root: &Path, stem: &str, basis: BasisRef) -> Result<PodiRef> {
        let flat: Vec<f64> = self.coeff_table.iter().flat_map(|c| c.values().iter().copied()).collect();
        let coefficients = write_block(root, &format!("{stem}_coefficients.f64"), &flat)?;
        Ok(PodiRef { triangulation: self.triangulation.clone(), coefficients, basis })
    }

    pub fn load(root: &Path, reference: &PodiRef) -> Result<Self> {
        let basis = PodBasis::load(root, &reference.basis)?;
        let flat = read_block(root, &reference.coefficients)?;
        let n = reference.triangulation.points().len();
        let r = basis.rank();
        if flat.len() != n * r {
            return Err(Error::Integrity {
                path: root.join(&reference.coefficients.file),
                reason: format!("expected {n} x {r} coefficients"),
            });
        }
        let coeff_table = (0..n).map(|k| CoefficientVector(flat[k * r..(k + 1) * r].to_vec())).collect();
        Ok(Self { basis, triangulation: reference.triangulation.clone(), coeff_table })
    }
}

/// Manifest entry for a stored PODI model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PodiRef {
    pub triangulation: Triangulation,
    pub coefficients: BlockRef,
    pub basis: BasisRef,
}

/// Interpolated coefficients at `mu`, lifted back to a full field.
pub fn evaluate_podi(model: &PodiModel, mu: &ParameterPoint) -> Result<Vec<f64>> {
    reconstruct(&model.basis, &model.coefficients(mu)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid3() -> Vec<[f64; 2]> {
        let mut pts = Vec::new();
        for j in 0..3 {
            for i in 0..3 {
                pts.push([i as f64 * 0.5, j as f64 * 0.5]);
            }
        }
        pts
    }

    #[test]
    fn single_triangle() {
        let t = delaunay(&[[0.0, 0.0], [0.0, 1.0], [1.0, 0.0]]).unwrap();
        assert_eq!(t.simplices().len(), 1);
        assert!((t.area(0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn grid_has_eight_triangles_of_total_area_one() {
        let t = delaunay(&grid3()).unwrap();
        assert_eq!(t.simplices().len(), 8);
        let total: f64 = (0..8).map(|s| t.area(s)).sum();
        assert!((total - 1.0).abs() < 1e-14);
        assert!((0..8).all(|s| t.area(s) > 0.0));
    }

    #[test]
    fn degenerate_inputs() {
        assert!(matches!(delaunay(&[[0.0, 0.0], [1.0, 0.0]]), Err(Error::Degenerate(_))));
        assert!(matches!(delaunay(&[[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]), Err(Error::Degenerate(_))));
        assert!(matches!(delaunay(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 0.0]]), Err(Error::Degenerate(_))));
    }

    #[test]
    fn leading_collinear_points() {
        let t = delaunay(&[[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [3.0, 0.0], [1.5, 1.0]]).unwrap();
        assert_eq!(t.simplices().len(), 3);
        let total: f64 = (0..3).map(|s| t.area(s)).sum();
        assert!((total - 1.5).abs() < 1e-14);
    }

    #[test]
    fn locate_vertex_centroid_and_outside() {
        let t = delaunay(&grid3()).unwrap();
        let (s, l) = t.locate([0.5, 0.5]).unwrap();
        let k = t.simplices()[s].iter().position(|&v| v == 4).unwrap();
        assert!((l[k] - 1.0).abs() < 1e-15);
        for s in 0..8 {
            let [a, b, c] = t.vertices(s);
            let g = [(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0];
            let (found, l) = t.locate(g).unwrap();
            assert_eq!(found, s);
            assert!(l.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-12));
        }
        assert!(matches!(t.locate([1.2, 0.5]), Err(Error::Extrapolation(..))));
        assert!(matches!(t.locate([-0.01, -0.01]), Err(Error::Extrapolation(..))));
    }

    #[test]
    fn edge_midpoint_averages_rows() {
        let pts = grid3();
        let columns: Vec<Vec<f64>> = (0..9).map(|k| (0..12).map(|i| ((k * 7 + i * 3) % 11) as f64).collect()).collect();
        let theta = SnapshotMatrix::new(columns, pts.iter().map(|p| ParameterPoint::new(p.to_vec())).collect()).unwrap();
        let basis = crate::pod::build_basis_svd(&theta);
        let model = build_podi(&theta, &basis).unwrap();
        assert_eq!(model.coeff_table.len(), 9);
        let alpha = model.coefficients(&ParameterPoint::new(vec![0.25, 0.0])).unwrap();
        for (i, a) in alpha.values().iter().enumerate() {
            let mean = 0.5 * (model.coeff_table[0].values()[i] + model.coeff_table[1].values()[i]);
            assert!((a - mean).abs() < 1e-12);
        }
    }
}
