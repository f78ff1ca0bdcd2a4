use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::ddpod::{schwarz_solve, DomainSplit, SchwarzInit, SchwarzOptions};
use crate::error::{Error, Result};
use crate::ffd::ParameterPoint;
use crate::mesh::StructuredMesh;
use crate::pipeline::config::{DdInit, RunConfig};
use crate::pipeline::manifest::{Store, StoreManifest, StoreStatus, MESH_STEM};
use crate::pipeline::model::ParametricFom;
use crate::pipeline::offline::{build_pod, mu_tag};
use crate::pipeline::store::{read_json, write_atomic, write_json, BlockRef};
use crate::pod::{PodBasis, SnapshotMatrix};
use crate::podi::{build_podi, evaluate_podi, PodiModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Podi,
    Ddpod,
    Fom,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Podi => "podi",
            Method::Ddpod => "ddpod",
            Method::Fom => "fom",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "podi" => Ok(Method::Podi),
            "ddpod" => Ok(Method::Ddpod),
            "fom" => Ok(Method::Fom),
            other => Err(Error::Config(format!("unknown method '{other}' (expected podi, ddpod or fom)"))),
        }
    }
}

/// Everything needed online, loaded from a complete store (or rebuilt from a
/// prefix of its snapshots).
#[derive(Debug)]
pub struct OnlineModels {
    pub fom: ParametricFom,
    pub theta: SnapshotMatrix,
    pub basis: PodBasis,
    pub podi: PodiModel,
    pub split: DomainSplit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DdpodInfo {
    pub outer_iterations: usize,
    pub history: Vec<f64>,
    pub fit_residuals: Vec<f64>,
    pub final_fit_residual: f64,
    pub cell_updates: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub method: Method,
    pub mu: ParameterPoint,
    pub field: Vec<f64>,
    pub qoi: f64,
    pub eval_seconds: f64,
    pub n_snapshots: Option<usize>,
    pub ddpod: Option<DdpodInfo>,
}

pub(crate) fn load_config(store: &Store, manifest: &StoreManifest) -> Result<RunConfig> {
    let config: RunConfig = read_json(&store.path("config.json"))?;
    config.validate()?;
    if config.hash() != manifest.config_hash {
        return Err(Error::Integrity { path: store.path("config.json"), reason: "config copy does not match the manifest hash".into() });
    }
    Ok(config)
}

impl OnlineModels {
    pub fn load(store: &Store) -> Result<(Self, StoreManifest)> {
        let manifest = store.load_manifest()?;
        if manifest.status != StoreStatus::Complete {
            return Err(Error::Config(format!("store at {} is incomplete; run offline first", store.root().display())));
        }
        let config = load_config(store, &manifest)?;
        let fom = ParametricFom::with_mesh(&config, StructuredMesh::load(store.root(), MESH_STEM)?)?;
        let theta = store.database(&manifest)?.theta()?.clone();
        let podi_ref = manifest.podi.as_ref().ok_or_else(|| Error::Integrity { path: store.path("manifest.json"), reason: "no PODI model".into() })?;
        let podi = PodiModel::load(store.root(), podi_ref)?;
        let split = manifest.ddpod.clone().ok_or_else(|| Error::Integrity { path: store.path("manifest.json"), reason: "no DD-POD split".into() })?;
        Ok((Self { fom, theta, basis: podi.basis.clone(), podi, split }, manifest))
    }

    /// Models rebuilt from the configuration and an explicit snapshot set.
    pub fn build(fom: ParametricFom, theta: SnapshotMatrix, split: DomainSplit) -> Result<Self> {
        let basis = build_pod(fom.config(), &theta)?;
        let podi = build_podi(&theta, &basis)?;
        Ok(Self { fom, theta, basis, podi, split })
    }

    /// Same problem with only the first `n` snapshots.
    pub fn prefix(&self, n: usize) -> Result<Self> {
        let theta = self.theta.select(&(0..n).collect::<Vec<_>>())?;
        let fom = ParametricFom::with_mesh(self.fom.config(), self.fom.base_mesh().clone())?;
        Self::build(fom, theta, self.split.clone())
    }

    pub fn config(&self) -> &RunConfig {
        self.fom.config()
    }

    pub fn n_snapshots(&self) -> usize {
        self.theta.cols()
    }

    fn schwarz_options(&self, mu: &ParameterPoint, tol: Option<f64>) -> SchwarzOptions {
        let c = self.config();
        let init = match c.ddpod.init {
            DdInit::Nearest => {
                let nearest = (0..self.theta.cols())
                    .min_by(|&a, &b| {
                        let da = self.theta.parameter_points()[a].distance(mu);
                        let db = self.theta.parameter_points()[b].distance(mu);
                        da.total_cmp(&db).then(a.cmp(&b))
                    })
                    .expect("non-empty database");
                SchwarzInit::Coefficients(self.podi.coeff_table[nearest].clone())
            }
            DdInit::BoundaryMean => SchwarzInit::Constant(c.boundary_mean()),
        };
        SchwarzOptions {
            tol: tol.unwrap_or(c.ddpod.tol),
            max_outer: c.ddpod.max_outer,
            final_tol: c.solver.tol,
            max_inner: c.solver.max_iter,
            init,
            ..SchwarzOptions::default()
        }
    }

    /// Evaluates `method` at `mu`. ROM timings are the best of `repeats`
    /// runs; the full-order solve is timed once. Store loading and the QoI
    /// post-processing are not timed.
    pub fn evaluate(&self, mu: &ParameterPoint, method: Method, repeats: usize, tol: Option<f64>) -> Result<Evaluation> {
        self.config().binding.check_bounds(mu)?;
        let repeats = repeats.max(1);
        let mut best = f64::INFINITY;
        let (field, ddpod) = match method {
            Method::Podi => {
                let mut out = Vec::new();
                for _ in 0..repeats {
                    let t = Instant::now();
                    out = evaluate_podi(&self.podi, mu)?;
                    best = best.min(t.elapsed().as_secs_f64());
                }
                (out, None)
            }
            Method::Ddpod => {
                let opts = self.schwarz_options(mu, tol);
                let mut out = None;
                for _ in 0..repeats {
                    let t = Instant::now();
                    let (_, system) = self.fom.assemble_at(mu)?;
                    let sol = schwarz_solve(&system, &self.basis, &self.split, &opts)?;
                    best = best.min(t.elapsed().as_secs_f64());
                    out = Some(sol);
                }
                let sol = out.expect("at least one run");
                let info = DdpodInfo {
                    outer_iterations: sol.state.iteration,
                    history: sol.state.history.clone(),
                    fit_residuals: sol.state.fit_residuals.clone(),
                    final_fit_residual: sol.fit_residual,
                    cell_updates: sol.state.ops.cell_updates,
                };
                (sol.composite, Some(info))
            }
            Method::Fom => {
                let mut opts = self.config().solver;
                if let Some(t) = tol {
                    opts.tol = t;
                }
                let t = Instant::now();
                let (_, field, _) = self.fom.solve_at(mu, &opts)?;
                best = t.elapsed().as_secs_f64();
                (field.values, None)
            }
        };
        let mesh = self.fom.mesh_at(mu)?;
        let qoi = self.fom.qoi(&mesh, &field)?;
        let n_snapshots = (method != Method::Fom).then_some(self.n_snapshots());
        Ok(Evaluation { method, mu: mu.clone(), field, qoi, eval_seconds: best, n_snapshots, ddpod })
    }
}

/// JSON result written by `eval`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalRecord {
    pub config_hash: String,
    pub method: Method,
    pub mu: ParameterPoint,
    pub n_snapshots: Option<usize>,
    pub qoi: f64,
    pub eval_seconds: f64,
    pub field: BlockRef,
    pub ddpod: Option<DdpodInfo>,
}

/// Evaluates one parameter point and writes `results/<method>_<mu>.{f64,json}`
/// (plus a convergence history CSV for DD-POD).
pub fn cmd_eval(root: &Path, mu: &ParameterPoint, method: Method, tol: Option<f64>) -> Result<(EvalRecord, std::path::PathBuf)> {
    let store = Store::new(root);
    let (models, manifest) = OnlineModels::load(&store)?;
    let repeats = if method == Method::Fom { 1 } else { 3 };
    let eval = models.evaluate(mu, method, repeats, tol)?;
    let stem = format!("results/{method}_{}", mu_tag(mu));
    let mesh_id = models.fom.base_mesh().topology_id();
    let (field, _) = store.write_field(&stem, &eval.field, &mesh_id)?;
    if let Some(info) = &eval.ddpod {
        let mut out = Vec::new();
        writeln!(out, "# config_hash={}", manifest.config_hash).expect("in-memory write");
        writeln!(out, "iteration,interface_change,fit_residual").expect("in-memory write");
        for (k, (c, r)) in info.history.iter().zip(&info.fit_residuals).enumerate() {
            writeln!(out, "{},{c},{r}", k + 1).expect("in-memory write");
        }
        write_atomic(&store.path(&format!("{stem}_history.csv")), &out)?;
    }
    let record = EvalRecord {
        config_hash: manifest.config_hash,
        method,
        mu: mu.clone(),
        n_snapshots: eval.n_snapshots,
        qoi: eval.qoi,
        eval_seconds: eval.eval_seconds,
        field,
        ddpod: eval.ddpod,
    };
    let path = store.path(&format!("{stem}.json"));
    write_json(&path, &record)?;
    Ok((record, path))
}
