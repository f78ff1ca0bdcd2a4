//! Free-form deformation.
//!
//! The map is the composition `psi^-1 o T_hat o psi`: an axis-aligned affine
//! map `psi` sends the lattice box to the unit cube, `T_hat` moves points by a
//! tensor-product Bernstein combination of the (perturbed) control points, and
//! `psi^-1` maps back. Displacements are stored in reference coordinates and
//! scaled by the box lengths on the way out.
//!
//! Because Bernstein polynomials reproduce linear functions, the regular
//! control grid contributes exactly `s`, so the implementation evaluates
//! `p + L * sum(d_ijk B_i B_j B_k)`. Zero displacements therefore give back
//! `p` bit for bit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAX_TABLE_DEGREE: usize = 20;

const fn binomial_table() -> [[f64; MAX_TABLE_DEGREE + 1]; MAX_TABLE_DEGREE + 1] {
    let mut table = [[0.0; MAX_TABLE_DEGREE + 1]; MAX_TABLE_DEGREE + 1];
    let mut n = 0;
    while n <= MAX_TABLE_DEGREE {
        table[n][0] = 1.0;
        let mut i = 1;
        while i <= n {
            table[n][i] = table[n - 1][i - 1] + if i < n { table[n - 1][i] } else { 0.0 };
            i += 1;
        }
        n += 1;
    }
    table
}

static BINOMIAL: [[f64; MAX_TABLE_DEGREE + 1]; MAX_TABLE_DEGREE + 1] = binomial_table();

fn binomial(n: usize, i: usize) -> f64 {
    if n <= MAX_TABLE_DEGREE {
        BINOMIAL[n][i]
    } else {
        (0..i).fold(1.0, |acc, k| acc * (n - k) as f64 / (k + 1) as f64)
    }
}

/// Bernstein polynomial `C(n,i) t^i (1-t)^(n-i)`.
pub fn bernstein(i: usize, n: usize, t: f64) -> Result<f64> {
    if i > n {
        return Err(Error::Domain(format!("bernstein index {i} exceeds degree {n}")));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Domain(format!("bernstein argument {t} outside [0, 1]")));
    }
    Ok(bernstein_unchecked(i, n, t))
}

#[inline]
fn bernstein_unchecked(i: usize, n: usize, t: f64) -> f64 {
    binomial(n, i) * t.powi(i as i32) * (1.0 - t).powi((n - i) as i32)
}

/// Derivative of `B_{i,n}` with respect to `t`.
#[inline]
fn bernstein_derivative(i: usize, n: usize, t: f64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let left = if i >= 1 { bernstein_unchecked(i - 1, n - 1, t) } else { 0.0 };
    let right = if i < n { bernstein_unchecked(i, n - 1, t) } else { 0.0 };
    n as f64 * (left - right)
}

/// Control lattice wrapped around the region to be morphed.
#[derive(Debug, Clone, PartialEq)]
pub struct FfdLattice {
    origin: Vec<f64>,
    box_lengths: Vec<f64>,
    dims: Vec<usize>,
    /// Flat `[control point][axis]`, control points ordered with the first axis fastest.
    displacements: Vec<f64>,
}

impl FfdLattice {
    /// Unperturbed lattice. `dims` counts control points per axis.
    pub fn new(origin: Vec<f64>, box_lengths: Vec<f64>, dims: Vec<usize>) -> Result<Self> {
        let d = origin.len();
        if !(1..=3).contains(&d) {
            return Err(Error::Config(format!("lattice dimension {d} not in 1..=3")));
        }
        if box_lengths.len() != d || dims.len() != d {
            return Err(Error::Config(
                "origin, box_lengths and dims must have the same length".into(),
            ));
        }
        if box_lengths.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return Err(Error::Config("box lengths must be strictly positive".into()));
        }
        if dims.iter().any(|&n| n < 2) {
            return Err(Error::Config("each lattice axis needs at least 2 control points".into()));
        }
        let count: usize = dims.iter().product();
        Ok(Self {
            origin,
            box_lengths,
            displacements: vec![0.0; count * d],
            dims,
        })
    }

    pub fn dim(&self) -> usize {
        self.origin.len()
    }

    pub fn origin(&self) -> &[f64] {
        &self.origin
    }

    pub fn box_lengths(&self) -> &[f64] {
        &self.box_lengths
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn control_point_count(&self) -> usize {
        self.dims.iter().product()
    }

    /// Flat index of a control point, first axis fastest.
    pub fn flat_index(&self, index: &[usize]) -> Result<usize> {
        if index.len() != self.dim() {
            return Err(Error::Config(format!(
                "control index {index:?} has wrong arity for a {}-d lattice",
                self.dim()
            )));
        }
        let mut flat = 0;
        for axis in (0..self.dim()).rev() {
            if index[axis] >= self.dims[axis] {
                return Err(Error::Config(format!(
                    "control index {index:?} outside lattice dims {:?}",
                    self.dims
                )));
            }
            flat = flat * self.dims[axis] + index[axis];
        }
        Ok(flat)
    }

    /// Displacement (reference units) of a control point.
    pub fn displacement(&self, index: &[usize]) -> Result<&[f64]> {
        let d = self.dim();
        let flat = self.flat_index(index)?;
        Ok(&self.displacements[flat * d..(flat + 1) * d])
    }

    pub fn set_displacement(&mut self, index: &[usize], value: &[f64]) -> Result<()> {
        let d = self.dim();
        if value.len() != d {
            return Err(Error::Shape(format!("displacement of length {} for a {d}-d lattice", value.len())));
        }
        let flat = self.flat_index(index)?;
        self.displacements[flat * d..(flat + 1) * d].copy_from_slice(value);
        Ok(())
    }

    fn add_displacement(&mut self, flat: usize, axis: usize, value: f64) {
        let d = self.dim();
        self.displacements[flat * d + axis] += value;
    }

    /// Copy of the lattice geometry with every displacement reset to zero.
    pub fn unperturbed(&self) -> Self {
        Self {
            displacements: vec![0.0; self.displacements.len()],
            ..self.clone()
        }
    }

    pub fn is_unperturbed(&self) -> bool {
        self.displacements.iter().all(|&v| v == 0.0)
    }

    /// Closed-box membership test.
    pub fn contains(&self, p: &[f64]) -> bool {
        p.len() == self.dim()
            && p.iter()
                .zip(&self.origin)
                .zip(&self.box_lengths)
                .all(|((&x, &o), &l)| x >= o && x <= o + l)
    }

    /// Physical-to-reference map `psi`.
    pub fn to_reference(&self, p: &[f64]) -> Result<Vec<f64>> {
        if !self.contains(p) {
            return Err(Error::OutOfBox);
        }
        Ok(p.iter()
            .zip(&self.origin)
            .zip(&self.box_lengths)
            .map(|((&x, &o), &l)| ((x - o) / l).clamp(0.0, 1.0))
            .collect())
    }

    /// Bernstein weights per axis at reference point `s`.
    fn axis_weights(&self, s: &[f64]) -> Vec<Vec<f64>> {
        s.iter()
            .zip(&self.dims)
            .map(|(&t, &n)| (0..n).map(|i| bernstein_unchecked(i, n - 1, t)).collect())
            .collect()
    }

    fn axis_weight_derivatives(&self, s: &[f64]) -> Vec<Vec<f64>> {
        s.iter()
            .zip(&self.dims)
            .map(|(&t, &n)| (0..n).map(|i| bernstein_derivative(i, n - 1, t)).collect())
            .collect()
    }

    /// Visit every control point with its multi-index and flat index.
    fn for_each_control_point(&self, mut visit: impl FnMut(&[usize], usize)) {
        let d = self.dim();
        let mut index = vec![0usize; d];
        for flat in 0..self.control_point_count() {
            visit(&index, flat);
            for axis in 0..d {
                index[axis] += 1;
                if index[axis] < self.dims[axis] {
                    break;
                }
                index[axis] = 0;
            }
        }
    }

    /// Reference-space displacement `sum d_ijk B_i B_j B_k` at `s`.
    fn reference_displacement(&self, s: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let weights = self.axis_weights(s);
        let mut out = vec![0.0; d];
        self.for_each_control_point(|index, flat| {
            let disp = &self.displacements[flat * d..(flat + 1) * d];
            if disp.iter().all(|&v| v == 0.0) {
                return;
            }
            let w: f64 = index.iter().enumerate().map(|(a, &i)| weights[a][i]).product();
            for (o, &v) in out.iter_mut().zip(disp) {
                *o += w * v;
            }
        });
        out
    }

    /// Apply the FFD map. Points outside the box come back unchanged.
    pub fn deform_point(&self, p: &[f64]) -> Vec<f64> {
        if !self.contains(p) || self.is_unperturbed() {
            return p.to_vec();
        }
        let s = self.to_reference(p).expect("contains() checked");
        let disp = self.reference_displacement(&s);
        p.iter()
            .zip(&disp)
            .zip(&self.box_lengths)
            .map(|((&x, &dv), &l)| x + l * dv)
            .collect()
    }

    /// Spatial Jacobian of the composed map, row `a` holding `d T_a / d p_b`.
    pub fn jacobian(&self, p: &[f64]) -> Result<Vec<Vec<f64>>> {
        let s = self.to_reference(p)?;
        let d = self.dim();
        let weights = self.axis_weights(&s);
        let derivs = self.axis_weight_derivatives(&s);
        // reference-space gradient of the displacement field
        let mut grad = vec![vec![0.0; d]; d];
        self.for_each_control_point(|index, flat| {
            let disp = &self.displacements[flat * d..(flat + 1) * d];
            if disp.iter().all(|&v| v == 0.0) {
                return;
            }
            for b in 0..d {
                let w: f64 = index
                    .iter()
                    .enumerate()
                    .map(|(a, &i)| if a == b { derivs[a][i] } else { weights[a][i] })
                    .product();
                for a in 0..d {
                    grad[a][b] += w * disp[a];
                }
            }
        });
        let mut jac = vec![vec![0.0; d]; d];
        for a in 0..d {
            for b in 0..d {
                let id = if a == b { 1.0 } else { 0.0 };
                jac[a][b] = id + self.box_lengths[a] * grad[a][b] / self.box_lengths[b];
            }
        }
        Ok(jac)
    }
}

/// A point in parameter space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParameterPoint(pub Vec<f64>);

impl ParameterPoint {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn distance(&self, other: &ParameterPoint) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

impl From<Vec<f64>> for ParameterPoint {
    fn from(values: Vec<f64>) -> Self {
        Self(values)
    }
}

/// One control-point coordinate driven by a scalar parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BindingEntry {
    pub index: Vec<usize>,
    pub axis: usize,
    pub param: usize,
    #[serde(default = "unit_scale")]
    pub scale: f64,
}

fn unit_scale() -> f64 {
    1.0
}

/// Binding of the parameter vector to control-point displacements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParameterBinding {
    pub entries: Vec<BindingEntry>,
    /// Closed interval `[lower, upper]` per parameter.
    pub bounds: Vec<[f64; 2]>,
}

impl ParameterBinding {
    pub fn new(entries: Vec<BindingEntry>, bounds: Vec<[f64; 2]>) -> Result<Self> {
        let binding = Self { entries, bounds };
        binding.validate()?;
        Ok(binding)
    }

    pub fn parameter_dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.bounds.is_empty() {
            return Err(Error::Config("binding has no parameters".into()));
        }
        for (j, [lo, hi]) in self.bounds.iter().enumerate() {
            if !(lo < hi) {
                return Err(Error::Config(format!("parameter {j}: lower bound {lo} not below upper {hi}")));
            }
        }
        for entry in &self.entries {
            if entry.param >= self.parameter_dim() {
                return Err(Error::Config(format!(
                    "binding entry refers to parameter {} of {}",
                    entry.param,
                    self.parameter_dim()
                )));
            }
        }
        Ok(())
    }

    /// Checks that every entry addresses a control point of `lattice`.
    pub fn validate_against(&self, lattice: &FfdLattice) -> Result<()> {
        self.validate()?;
        for entry in &self.entries {
            lattice.flat_index(&entry.index)?;
            if entry.axis >= lattice.dim() {
                return Err(Error::Config(format!("binding axis {} outside lattice dimension", entry.axis)));
            }
        }
        Ok(())
    }

    pub fn check_bounds(&self, mu: &ParameterPoint) -> Result<()> {
        if mu.dim() != self.parameter_dim() {
            return Err(Error::Bounds(format!(
                "expected {} parameters, got {}",
                self.parameter_dim(),
                mu.dim()
            )));
        }
        for (j, (&v, [lo, hi])) in mu.0.iter().zip(&self.bounds).enumerate() {
            if !(v >= *lo && v <= *hi) {
                return Err(Error::Bounds(format!("mu[{j}] = {v} outside [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    /// Corners of the parameter box, first parameter fastest.
    pub fn corners(&self) -> Vec<ParameterPoint> {
        let n = self.parameter_dim();
        (0..1usize << n)
            .map(|mask| {
                ParameterPoint(
                    (0..n)
                        .map(|j| self.bounds[j][(mask >> j) & 1])
                        .collect(),
                )
            })
            .collect()
    }
}

/// Lattice with each bound entry displaced by `scale * mu[param]` along its axis.
pub fn apply_parameters(
    binding: &ParameterBinding,
    mu: &ParameterPoint,
    base: &FfdLattice,
) -> Result<FfdLattice> {
    binding.validate_against(base)?;
    binding.check_bounds(mu)?;
    let mut lattice = base.unperturbed();
    for entry in &binding.entries {
        let flat = lattice.flat_index(&entry.index)?;
        lattice.add_displacement(flat, entry.axis, entry.scale * mu.0[entry.param]);
    }
    Ok(lattice)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_square(dims: Vec<usize>) -> FfdLattice {
        FfdLattice::new(vec![0.0, 0.0], vec![1.0, 1.0], dims).unwrap()
    }

    #[test]
    fn bernstein_values() {
        assert_eq!(bernstein(0, 2, 0.5).unwrap(), 0.25);
        assert_eq!(bernstein(0, 4, 0.0).unwrap(), 1.0);
        assert_eq!(bernstein(2, 4, 0.0).unwrap(), 0.0);
        // 3 * 0.3 * 0.7^2
        assert!((bernstein(1, 3, 0.3).unwrap() - 0.441).abs() < 1e-15);
    }

    #[test]
    fn bernstein_domain_errors() {
        assert!(matches!(bernstein(3, 2, 0.5), Err(Error::Domain(_))));
        assert!(matches!(bernstein(0, 2, 1.5), Err(Error::Domain(_))));
        assert!(matches!(bernstein(0, 2, -0.1), Err(Error::Domain(_))));
    }

    #[test]
    fn binomial_table_beyond_limit() {
        assert_eq!(binomial(20, 10), 184756.0);
        assert_eq!(binomial(22, 11), 705432.0);
    }

    #[test]
    fn reference_map_corners() {
        let lat = FfdLattice::new(vec![0.0, 0.0], vec![2.0, 4.0], vec![2, 2]).unwrap();
        assert_eq!(lat.to_reference(&[1.0, 1.0]).unwrap(), vec![0.5, 0.25]);
        assert_eq!(lat.to_reference(&[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(lat.to_reference(&[2.0, 4.0]).unwrap(), vec![1.0, 1.0]);
        assert!(matches!(lat.to_reference(&[2.1, 1.0]), Err(Error::OutOfBox)));
    }

    #[test]
    fn single_control_point_displacement() {
        let mut lat = unit_square(vec![3, 2]);
        lat.set_displacement(&[1, 1], &[0.0, 0.1]).unwrap();
        let q = lat.deform_point(&[0.5, 1.0]);
        assert!((q[0] - 0.5).abs() < 1e-15);
        assert!((q[1] - 1.05).abs() < 1e-15);
    }

    #[test]
    fn outside_points_untouched() {
        let mut lat = unit_square(vec![3, 3]);
        lat.set_displacement(&[1, 1], &[0.2, -0.1]).unwrap();
        let p = [1.0 + f64::EPSILON, 0.3];
        assert_eq!(lat.deform_point(&p), p.to_vec());
        assert!(matches!(lat.jacobian(&p), Err(Error::OutOfBox)));
    }

    #[test]
    fn jacobian_identity_for_unperturbed() {
        let lat = FfdLattice::new(vec![0.0, 0.0, 0.0], vec![1.0, 2.0, 3.0], vec![3, 4, 2]).unwrap();
        let j = lat.jacobian(&[0.3, 1.1, 2.0]).unwrap();
        for (a, row) in j.iter().enumerate() {
            for (b, &v) in row.iter().enumerate() {
                assert_eq!(v, if a == b { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let mut lat = unit_square(vec![3, 2]);
        lat.set_displacement(&[1, 1], &[0.0, 0.1]).unwrap();
        let p = [0.5, 0.5];
        let j = lat.jacobian(&p).unwrap();
        let h = 1e-6;
        for b in 0..2 {
            let mut plus = p;
            let mut minus = p;
            plus[b] += h;
            minus[b] -= h;
            let fp = lat.deform_point(&plus);
            let fm = lat.deform_point(&minus);
            for a in 0..2 {
                let fd = (fp[a] - fm[a]) / (2.0 * h);
                assert!((fd - j[a][b]).abs() < 1e-6, "J[{a}][{b}] = {} vs fd {fd}", j[a][b]);
            }
        }
    }

    fn demo_binding() -> ParameterBinding {
        let mut entries = Vec::new();
        for i in 1..=3 {
            for j in 1..=2 {
                entries.push(BindingEntry { index: vec![i, j], axis: 0, param: 0, scale: 1.0 });
                entries.push(BindingEntry { index: vec![i, j], axis: 1, param: 1, scale: 1.0 });
            }
        }
        ParameterBinding::new(entries, vec![[-0.18, 0.18], [-0.3, 0.3]]).unwrap()
    }

    #[test]
    fn zero_parameters_leave_lattice_unperturbed() {
        let base = FfdLattice::new(vec![0.5, -0.3], vec![1.0, 0.6], vec![6, 4]).unwrap();
        let lat = apply_parameters(&demo_binding(), &ParameterPoint(vec![0.0, 0.0]), &base).unwrap();
        assert!(lat.is_unperturbed());
    }

    #[test]
    fn demo_binding_moves_six_points_together() {
        let base = FfdLattice::new(vec![0.5, -0.3], vec![1.0, 0.6], vec![6, 4]).unwrap();
        let lat = apply_parameters(&demo_binding(), &ParameterPoint(vec![0.18, -0.3]), &base).unwrap();
        let mut moved = 0;
        for j in 0..4 {
            for i in 0..6 {
                let d = lat.displacement(&[i, j]).unwrap();
                if (1..=3).contains(&i) && (1..=2).contains(&j) {
                    assert_eq!(d, &[0.18, -0.3]);
                    moved += 1;
                } else {
                    assert_eq!(d, &[0.0, 0.0]);
                }
            }
        }
        assert_eq!(moved, 6);
    }

    #[test]
    fn opposite_scales_give_antisymmetric_displacements() {
        let entries = vec![
            BindingEntry { index: vec![1, 1], axis: 1, param: 0, scale: 1.0 },
            BindingEntry { index: vec![2, 1], axis: 1, param: 0, scale: -1.0 },
        ];
        let binding = ParameterBinding::new(entries, vec![[-1.0, 1.0]]).unwrap();
        let base = unit_square(vec![4, 3]);
        let lat = apply_parameters(&binding, &ParameterPoint(vec![0.25]), &base).unwrap();
        assert_eq!(lat.displacement(&[1, 1]).unwrap()[1], 0.25);
        assert_eq!(lat.displacement(&[2, 1]).unwrap()[1], -0.25);
    }

    #[test]
    fn binding_errors() {
        let base = unit_square(vec![3, 3]);
        let binding = demo_binding();
        assert!(matches!(
            apply_parameters(&binding, &ParameterPoint(vec![0.2, 0.0]), &base),
            Err(Error::Config(_))
        ));
        let base = FfdLattice::new(vec![0.0, 0.0], vec![1.0, 1.0], vec![6, 4]).unwrap();
        assert!(matches!(
            apply_parameters(&binding, &ParameterPoint(vec![0.2, 0.0]), &base),
            Err(Error::Bounds(_))
        ));
        assert!(ParameterBinding::new(vec![], vec![[1.0, 1.0]]).is_err());
        assert!(FfdLattice::new(vec![0.0], vec![1.0], vec![1]).is_err());
        assert!(FfdLattice::new(vec![0.0, 0.0], vec![1.0, 0.0], vec![2, 2]).is_err());
    }

    #[test]
    fn corners_enumerated_first_parameter_fastest() {
        let c = demo_binding().corners();
        assert_eq!(c.len(), 4);
        assert_eq!(c[0].0, vec![-0.18, -0.3]);
        assert_eq!(c[1].0, vec![0.18, -0.3]);
        assert_eq!(c[3].0, vec![0.18, 0.3]);
    }
}
