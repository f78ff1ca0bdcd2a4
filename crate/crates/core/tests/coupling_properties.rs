//! DD-POD coupling and greedy sampling.

mod common;

use std::sync::OnceLock;

use morphrom::ddpod::{fit_coefficients, schwarz_solve, split_domain, DomainSplit, SchwarzInit, SchwarzOptions};
use morphrom::ffd::{ParameterBinding, ParameterPoint};
use morphrom::fom::LinearSystem;
use morphrom::mesh::Rect;
use morphrom::pipeline::{ParametricFom, RunConfig};
use morphrom::pod::{build_basis, reconstruct, PodBasis, SnapshotMatrix};
use morphrom::podi::delaunay;
use morphrom::sampling::{
    greedy_sample, grid_points, loo_errors, next_point, ErrorIndicator, FullOrderModel, GreedyOptions, NormKind, SnapshotDatabase,
    SnapshotMeta,
};
use proptest::prelude::*;
use rand::Rng;

use common::{dot, norm, orient, random_columns, rng};

struct Problem {
    fom: ParametricFom,
    basis: PodBasis,
    split: DomainSplit,
    grid: Vec<ParameterPoint>,
    columns: Vec<Vec<f64>>,
}

/// The demo physics on a 32 x 32 mesh with a basis from the 3 x 3 grid.
fn problem() -> &'static Problem {
    static P: OnceLock<Problem> = OnceLock::new();
    P.get_or_init(|| {
        let mut config = RunConfig::demo();
        config.mesh.nx = 32;
        config.mesh.ny = 32;
        let fom = ParametricFom::new(&config).unwrap();
        let grid = grid_points(&config.binding, 3).unwrap();
        let columns: Vec<Vec<f64>> = grid.iter().map(|mu| fom.solve(mu).unwrap().0).collect();
        let basis = build_basis(&SnapshotMatrix::new(columns.clone(), grid.clone()).unwrap());
        let split = split_domain(fom.base_mesh(), &config.ddpod.core_box, 2).unwrap();
        Problem { fom, basis, split, grid, columns }
    })
}

fn system_at(mu: &ParameterPoint) -> LinearSystem {
    problem().fom.assemble_at(mu).unwrap().1
}

fn options(init: SchwarzInit) -> SchwarzOptions {
    SchwarzOptions { init, ..SchwarzOptions::default() }
}

#[test]
fn converged_answer_does_not_depend_on_the_start() {
    let p = problem();
    for k in [0, 4, 7] {
        let system = system_at(&p.grid[k]);
        let a = schwarz_solve(&system, &p.basis, &p.split, &options(SchwarzInit::Constant(0.0))).unwrap();
        let b = schwarz_solve(&system, &p.basis, &p.split, &options(SchwarzInit::Constant(0.5))).unwrap();
        let scale = a.composite.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let diff = a.composite.iter().zip(&b.composite).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        assert!(diff <= 5.0 * SchwarzOptions::default().tol * scale, "point {k}: {diff:e}");
    }
}

#[test]
fn reported_fit_residual_matches_the_overlap_mismatch() {
    let p = problem();
    let mu = ParameterPoint::new(vec![0.1, -0.2]);
    let sol = schwarz_solve(&system_at(&mu), &p.basis, &p.split, &options(SchwarzInit::Constant(0.5))).unwrap();
    let rom = reconstruct(&p.basis, &sol.state.alpha).unwrap();
    let (mut num, mut den) = (0.0, 0.0);
    for &c in &p.split.overlap {
        let u1 = sol.u1[p.split.omega1.binary_search(&c).unwrap()];
        num += (u1 - rom[c]).powi(2);
        den += u1 * u1;
    }
    let mismatch = (num / den).sqrt();
    assert!(mismatch <= sol.fit_residual + 1e-12, "{mismatch} vs reported {}", sol.fit_residual);
}

#[test]
fn outer_loop_stays_local() {
    let p = problem();
    let mu = ParameterPoint::new(vec![-0.05, 0.1]);
    let sol = schwarz_solve(&system_at(&mu), &p.basis, &p.split, &options(SchwarzInit::Constant(0.0))).unwrap();
    let ops = &sol.state.ops;
    let cells = p.fom.base_mesh().cell_count();
    assert_eq!(ops.cells_touched, p.split.omega1.len());
    assert!(ops.cells_touched < cells / 2);
    assert_eq!(ops.cell_updates, ops.inner_sweeps * p.split.omega1.len());
    assert_eq!(ops.basis_rows_touched, p.split.overlap.len() + sol.exterior_cells.len());
    assert!(sol.exterior_cells.iter().all(|c| p.split.omega1.binary_search(c).is_err()));
}

#[test]
fn database_point_is_recovered() {
    let p = problem();
    let k = 2;
    let sol = schwarz_solve(&system_at(&p.grid[k]), &p.basis, &p.split, &options(SchwarzInit::Constant(0.0))).unwrap();
    let truth = &p.columns[k];
    let scale = truth.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let err = sol.composite.iter().zip(truth).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())) / scale;
    assert!(err <= 1e-6, "{err:e}");
}

/// Orthonormal modes supported on the overlap only.
fn overlap_modes(split: &DomainSplit, cells: usize, r: usize, seed: u64) -> PodBasis {
    let mut g = rng(seed);
    let mut modes: Vec<Vec<f64>> = Vec::new();
    for _ in 0..r {
        let mut v = vec![0.0; cells];
        for &c in &split.overlap {
            v[c] = g.gen_range(-1.0..1.0);
        }
        for _ in 0..2 {
            for m in &modes {
                let d = dot(&v, m);
                v.iter_mut().zip(m).for_each(|(x, y)| *x -= d * y);
            }
        }
        let n = norm(&v);
        modes.push(v.into_iter().map(|x| x / n).collect());
    }
    PodBasis::new(cells, modes, (0..r).map(|k| (r - k) as f64).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn orthonormal_fit_is_a_plain_projection(r in 1usize..8, seed in any::<u64>()) {
        let mesh = morphrom::mesh::generate_mesh(16, 16, Rect::new(0.0, 0.0, 1.0, 1.0), morphrom::mesh::BumpSpec { x_min: 0.3, x_max: 0.7 }).unwrap();
        let split = split_domain(&mesh, &Rect::new(0.3, 0.0, 0.7, 0.3), 2).unwrap();
        let basis = overlap_modes(&split, mesh.cell_count(), r, seed);
        let mut g = rng(seed ^ 1);
        let u1: Vec<f64> = split.omega1.iter().map(|_| g.gen_range(-1.0..1.0)).collect();
        let fit = fit_coefficients(&basis, &u1, &split).unwrap();
        for (i, m) in basis.modes().iter().enumerate() {
            let direct: f64 = split.omega1.iter().zip(&u1).map(|(&c, u)| m[c] * u).sum();
            prop_assert!((fit.alpha.values()[i] - direct).abs() <= 1e-12);
        }
    }

    #[test]
    fn loo_errors_follow_column_permutations(m in 3usize..40, n in 3usize..10, seed in any::<u64>()) {
        let mut g = rng(seed);
        let columns = random_columns(&mut g, m, n);
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, g.gen_range(0..=i));
        }
        let a = loo_errors(&SnapshotMatrix::from_columns(columns.clone()).unwrap(), None).unwrap();
        let b = loo_errors(&SnapshotMatrix::from_columns(perm.iter().map(|&k| columns[k].clone()).collect()).unwrap(), None).unwrap();
        for (i, &k) in perm.iter().enumerate() {
            prop_assert!((b.e_s[i] - a.e_s[k]).abs() <= 1e-10 * a.e_s[k] + 1e-13, "{} vs {}", b.e_s[i], a.e_s[k]);
        }
        prop_assert!(a.max() >= a.mean());
    }

    #[test]
    fn proposals_lie_in_their_simplex(points in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0).prop_map(|(x, y)| [x, y]), 3..25), seed in any::<u64>()) {
        let tri = delaunay(&points).unwrap();
        let mut g = rng(seed);
        let e_s: Vec<f64> = points.iter().map(|_| if g.gen_bool(0.2) { 0.0 } else { g.gen_range(0.0..1.0) }).collect();
        prop_assume!(e_s.iter().any(|&e| e > 0.0));
        let ind = ErrorIndicator { absolute: vec![false; e_s.len()], e_s, norm_kind: NormKind::RelativeL2 };
        let eps = SnapshotDatabase::eps_dup(&[[0.0, 1.0], [0.0, 1.0]]);
        let prop = next_point(&tri, &ind, eps).unwrap();
        let v = prop.simplex_vertices;
        let mu = [prop.mu.values()[0], prop.mu.values()[1]];
        let total = orient(v[0], v[1], v[2]);
        for l in [orient(mu, v[1], v[2]), orient(v[0], mu, v[2]), orient(v[0], v[1], mu)] {
            prop_assert!(l / total >= -1e-12);
        }
        prop_assert!(points.iter().all(|q| (q[0] - mu[0]).hypot(q[1] - mu[1]) > eps));
    }
}

/// Cheap analytic model whose snapshots are not in a low-dimensional space.
struct Analytic;

impl FullOrderModel for Analytic {
    fn solve(&self, mu: &ParameterPoint) -> morphrom::Result<(Vec<f64>, SnapshotMeta)> {
        let (a, b) = (mu.values()[0], mu.values()[1]);
        let u = (0..60).map(|i| {
            let x = i as f64 / 59.0;
            (1.0 + a * x).recip() + (3.0 * b * x).sin() + (a * b * x).exp()
        }).collect();
        Ok((u, SnapshotMeta { mesh_hash: "analytic".into(), tol: 0.0, iterations: 0, residual: 0.0 }))
    }
}

fn analytic_run(max_new: usize) -> (SnapshotDatabase, Vec<morphrom::sampling::IterationRecord>) {
    let binding = ParameterBinding::new(Vec::new(), vec![[0.0, 1.0], [0.0, 1.0]]).unwrap();
    let init = grid_points(&binding, 3).unwrap();
    let opts = GreedyOptions { tol: 0.0, max_new, indicator_rows: None };
    greedy_sample(&Analytic, &binding, &init, &opts, SnapshotDatabase::new(), &mut ()).unwrap()
}

#[test]
fn greedy_sequence_is_deterministic() {
    let (a, ra) = analytic_run(5);
    let (b, rb) = analytic_run(5);
    assert_eq!(a.xi().len(), 14);
    for (p, q) in a.xi().iter().zip(b.xi()) {
        assert!(p.values().iter().zip(q.values()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
    assert_eq!(ra, rb);
    for rec in &ra {
        assert!(rec.max_e >= rec.mean_e);
    }
}

#[test]
fn greedy_resumes_from_a_prefix() {
    let (full, records) = analytic_run(5);
    let binding = ParameterBinding::new(Vec::new(), vec![[0.0, 1.0], [0.0, 1.0]]).unwrap();
    let init = grid_points(&binding, 3).unwrap();
    let opts = GreedyOptions { tol: 0.0, max_new: 5, indicator_rows: None };
    let (resumed, again) = greedy_sample(&Analytic, &binding, &init, &opts, full.prefix(11).unwrap(), &mut ()).unwrap();
    assert_eq!(resumed.xi(), full.xi());
    assert_eq!(again, records);
}
