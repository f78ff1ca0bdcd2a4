//! Small dense kernels: cyclic Jacobi for symmetric eigenproblems, one-sided
//! (Hestenes) Jacobi SVD and Cholesky solves. Sizes here are at most a few
//! dozen columns, so plain `Vec` storage is enough.

const MAX_SWEEPS: usize = 100;

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Symmetric eigendecomposition of the row-major `n x n` matrix `a`.
///
/// Returns eigenvalues sorted non-increasing and the matching eigenvectors.
pub(crate) fn symmetric_eigen(mut a: Vec<f64>, n: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    debug_assert_eq!(a.len(), n * n);
    // v stored row-major, column k is eigenvector k
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum();
        let total: f64 = a.iter().map(|x| x * x).sum();
        if off <= f64::EPSILON * f64::EPSILON * total || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j * n + j].total_cmp(&a[i * n + i]).then(i.cmp(&j)));
    let values = order.iter().map(|&k| a[k * n + k]).collect();
    let vectors = order
        .iter()
        .map(|&k| (0..n).map(|i| v[i * n + k]).collect())
        .collect();
    (values, vectors)
}

/// Thin SVD by one-sided Jacobi rotations on the columns of `cols`
/// (each entry one column of length `m`, requires `m >= cols.len()`).
///
/// Returns `(sigma, u, v)` sorted by non-increasing sigma. Columns of `u`
/// whose sigma is exactly zero are returned as zero vectors.
pub(crate) fn one_sided_jacobi_svd(mut cols: Vec<Vec<f64>>) -> (Vec<f64>, Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let n = cols.len();
    // v columns, v[k] is right singular vector k
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|k| (0..n).map(|i| if i == k { 1.0 } else { 0.0 }).collect())
        .collect();
    let tol = f64::EPSILON;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = dot(&cols[p], &cols[p]);
                let beta = dot(&cols[q], &cols[q]);
                let gamma = dot(&cols[p], &cols[q]);
                if gamma == 0.0 || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let (left, right) = cols.split_at_mut(q);
                for (xp, xq) in left[p].iter_mut().zip(right[0].iter_mut()) {
                    let a = *xp;
                    let b = *xq;
                    *xp = c * a - s * b;
                    *xq = s * a + c * b;
                }
                let (left, right) = v.split_at_mut(q);
                for (xp, xq) in left[p].iter_mut().zip(right[0].iter_mut()) {
                    let a = *xp;
                    let b = *xq;
                    *xp = c * a - s * b;
                    *xq = s * a + c * b;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let sigma: Vec<f64> = cols.iter().map(|c| norm(c)).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| sigma[j].total_cmp(&sigma[i]).then(i.cmp(&j)));
    let sorted_sigma: Vec<f64> = order.iter().map(|&k| sigma[k]).collect();
    let u = order
        .iter()
        .map(|&k| {
            let s = sigma[k];
            if s > 0.0 {
                cols[k].iter().map(|x| x / s).collect()
            } else {
                vec![0.0; cols[k].len()]
            }
        })
        .collect();
    let v_sorted = order.iter().map(|&k| v[k].clone()).collect();
    (sorted_sigma, u, v_sorted)
}

/// Solves `a x = b` for a symmetric positive definite row-major `a`.
/// Returns `None` when a pivot is not strictly positive.
pub(crate) fn cholesky_solve(a: &[f64], b: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[i * n + j];
            for k in 0..j {
                sum -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if !(sum > 0.0) || !sum.is_finite() {
                    return None;
                }
                l[i * n + i] = sum.sqrt();
            } else {
                l[i * n + j] = sum / l[j * n + j];
            }
        }
    }
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l[i * n + k] * y[k];
        }
        y[i] = sum / l[i * n + i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut sum = y[i];
        for k in i + 1..n {
            sum -= l[k * n + i] * x[k];
        }
        x[i] = sum / l[i * n + i];
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigen_of_diagonal_sorted() {
        let (vals, vecs) = symmetric_eigen(vec![1.0, 0.0, 0.0, 3.0], 2);
        assert_eq!(vals, vec![3.0, 1.0]);
        assert_eq!(vecs[0], vec![0.0, 1.0]);
    }

    #[test]
    fn eigen_reconstructs_matrix() {
        let a = vec![4.0, 1.0, 2.0, 1.0, 3.0, 0.5, 2.0, 0.5, 5.0];
        let (vals, vecs) = symmetric_eigen(a.clone(), 3);
        for i in 0..3 {
            for j in 0..3 {
                let r: f64 = (0..3).map(|k| vals[k] * vecs[k][i] * vecs[k][j]).sum();
                assert!((r - a[i * 3 + j]).abs() < 1e-13);
            }
        }
        assert!((vals.iter().sum::<f64>() - 12.0).abs() < 1e-13);
    }

    #[test]
    fn svd_reconstructs_columns() {
        let cols = vec![vec![1.0, 2.0, 3.0, 4.0], vec![0.0, 1.0, -1.0, 2.0], vec![2.0, 0.5, 0.0, 1.0]];
        let (s, u, v) = one_sided_jacobi_svd(cols.clone());
        for (j, col) in cols.iter().enumerate() {
            for i in 0..4 {
                let r: f64 = (0..3).map(|k| u[k][i] * s[k] * v[k][j]).sum();
                assert!((r - col[i]).abs() < 1e-13);
            }
        }
        assert!(s.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn cholesky_solves_spd() {
        let a = vec![4.0, 2.0, 2.0, 3.0];
        let x = cholesky_solve(&a, &[2.0, 1.0], 2).unwrap();
        assert!((4.0 * x[0] + 2.0 * x[1] - 2.0).abs() < 1e-14);
        assert!((2.0 * x[0] + 3.0 * x[1] - 1.0).abs() < 1e-14);
        assert!(cholesky_solve(&[0.0], &[1.0], 1).is_none());
    }
}
