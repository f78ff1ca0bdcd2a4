//! Independent oracles shared by the integration tests. None of these call
//! into the library's own geometry or linear algebra.
#![allow(dead_code, clippy::needless_range_loop)]

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Columns of an `m x n` matrix with entries uniform in [-1, 1).
pub fn random_columns(rng: &mut impl Rng, m: usize, n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn diff_norm(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Twice the signed area of `abc`.
pub fn orient(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

/// Circumcentre and squared radius, solved directly from the perpendicular
/// bisector equations.
pub fn circumcircle(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> ([f64; 2], f64) {
    let d = 2.0 * orient(a, b, c);
    let (a2, b2, c2) = (a[0] * a[0] + a[1] * a[1], b[0] * b[0] + b[1] * b[1], c[0] * c[0] + c[1] * c[1]);
    let ux = (a2 * (b[1] - c[1]) + b2 * (c[1] - a[1]) + c2 * (a[1] - b[1])) / d;
    let uy = (a2 * (c[0] - b[0]) + b2 * (a[0] - c[0]) + c2 * (b[0] - a[0])) / d;
    let r2 = (a[0] - ux).powi(2) + (a[1] - uy).powi(2);
    ([ux, uy], r2)
}

/// Number of (triangle, point) pairs with the point strictly inside the
/// circumcircle, with a relative slack `rel` on the squared radius.
pub fn empty_circle_violations(points: &[[f64; 2]], simplices: &[[usize; 3]], rel: f64) -> usize {
    let mut bad = 0;
    for s in simplices {
        let (c, r2) = circumcircle(points[s[0]], points[s[1]], points[s[2]]);
        for (k, p) in points.iter().enumerate() {
            if s.contains(&k) {
                continue;
            }
            let d2 = (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2);
            if d2 < r2 * (1.0 - rel) {
                bad += 1;
            }
        }
    }
    bad
}

/// Area of the convex hull by Andrew's monotone chain and the shoelace formula.
pub fn hull_area(points: &[[f64; 2]]) -> f64 {
    let mut p = points.to_vec();
    p.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    p.dedup();
    if p.len() < 3 {
        return 0.0;
    }
    let mut hull: Vec<[f64; 2]> = Vec::new();
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &[f64; 2]>> = if pass == 0 { Box::new(p.iter()) } else { Box::new(p.iter().rev()) };
        for &q in iter {
            while hull.len() >= start + 2 && orient(hull[hull.len() - 2], hull[hull.len() - 1], q) <= 0.0 {
                hull.pop();
            }
            hull.push(q);
        }
        hull.pop();
    }
    let n = hull.len();
    (0..n).map(|i| hull[i][0] * hull[(i + 1) % n][1] - hull[(i + 1) % n][0] * hull[i][1]).sum::<f64>() / 2.0
}

/// Symmetric eigenvalues by the classical (largest off-diagonal) Jacobi
/// method, sorted descending.
pub fn symmetric_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let n = a.len();
    for _ in 0..100 * n * n + 100 {
        let (mut p, mut q, mut big) = (0, 1, 0.0f64);
        for i in 0..n {
            for j in i + 1..n {
                if a[i][j].abs() > big {
                    big = a[i][j].abs();
                    p = i;
                    q = j;
                }
            }
        }
        let scale: f64 = (0..n).map(|i| a[i][i].abs()).fold(0.0, f64::max);
        if n < 2 || big <= 1e-300 || big <= 1e-17 * scale {
            break;
        }
        let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
        let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
        let t = if theta == 0.0 { 1.0 } else { t };
        let c = 1.0 / (t * t + 1.0).sqrt();
        let s = t * c;
        for k in 0..n {
            let (akp, akq) = (a[k][p], a[k][q]);
            a[k][p] = c * akp - s * akq;
            a[k][q] = s * akp + c * akq;
        }
        for k in 0..n {
            let (apk, aqk) = (a[p][k], a[q][k]);
            a[p][k] = c * apk - s * aqk;
            a[q][k] = s * apk + c * aqk;
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    ev.sort_by(|x, y| y.total_cmp(x));
    ev
}
