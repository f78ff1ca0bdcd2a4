use std::io::Write;
use std::path::Path;

use crate::ddpod::split_domain;
use crate::error::{Error, Result};
use crate::ffd::ParameterPoint;
use crate::mesh::StructuredMesh;
use crate::pipeline::config::{IndicatorRegion, PodMethod, RunConfig};
use crate::pipeline::manifest::{BasesEntry, MeshEntry, SamplingEntry, SnapshotEntry, Store, StoreManifest, StoreStatus, FORMAT_VERSION, MESH_STEM};
use crate::pipeline::model::ParametricFom;
use crate::pipeline::store::{to_json_bytes, write_atomic};
use crate::pod::{build_basis, build_basis_snapshots, build_basis_svd, truncate, PodBasis, SnapshotMatrix};
use crate::podi::build_podi;
use crate::sampling::{greedy_sample, grid_points, Checkpoint, FullOrderModel, GreedyOptions, IterationRecord, SnapshotDatabase};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OfflineOutcome {
    Built,
    UpToDate,
}

#[derive(Debug, Clone)]
pub struct OfflineSummary {
    pub manifest: StoreManifest,
    pub outcome: OfflineOutcome,
    /// Full-order solves performed by this call.
    pub solver_calls: usize,
}

pub(crate) fn build_pod(config: &RunConfig, theta: &SnapshotMatrix) -> Result<PodBasis> {
    let basis = match config.pod.method {
        PodMethod::Auto => build_basis(theta),
        PodMethod::Svd => build_basis_svd(theta),
        PodMethod::Snapshots => build_basis_snapshots(theta),
    };
    truncate(&basis, config.pod.energy)
}

pub(crate) fn baseline_point(config: &RunConfig) -> Result<ParameterPoint> {
    let mu = ParameterPoint::new(vec![0.0; config.binding.parameter_dim()]);
    config
        .binding
        .check_bounds(&mu)
        .map_err(|_| Error::Config("baseline mu = 0 lies outside the parameter bounds".into()))?;
    Ok(mu)
}

pub(crate) fn mu_tag(mu: &ParameterPoint) -> String {
    mu.values().iter().map(|v| format!("{v}")).collect::<Vec<_>>().join("_")
}

fn snapshot_entry(store: &Store, fom: &ParametricFom, stem: &str, mu: &ParameterPoint, values: &[f64], meta: &crate::sampling::SnapshotMeta) -> Result<SnapshotEntry> {
    let mesh = fom.mesh_at(mu)?;
    let (field, sidecar) = store.write_field(stem, values, &mesh.topology_id())?;
    Ok(SnapshotEntry { mu: mu.clone(), field, sidecar, meta: meta.clone(), qoi: fom.qoi(&mesh, values)? })
}

struct StoreCheckpoint<'a> {
    store: &'a Store,
    manifest: &'a mut StoreManifest,
    fom: &'a ParametricFom,
}

impl Checkpoint for StoreCheckpoint<'_> {
    fn snapshot_added(&mut self, db: &SnapshotDatabase) -> Result<()> {
        let k = db.len() - 1;
        let mu = &db.xi()[k];
        let values = db.theta()?.column(k);
        let entry = snapshot_entry(self.store, self.fom, &format!("fields/snapshot_{k:03}"), mu, values, &db.provenance()[k])?;
        self.manifest.snapshots.push(entry);
        self.store.save_manifest(self.manifest)
    }
}

/// CSV with one row per greedy iteration.
pub fn write_sampling_history(path: &Path, config_hash: &str, history: &[IterationRecord]) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "# config_hash={config_hash}").expect("in-memory write");
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    w.write_record(["iteration", "max_e", "mean_e", "mu_new_1", "mu_new_2"]).map_err(io)?;
    for r in history {
        let (a, b) = match &r.proposal {
            Some(p) if r.solved => (p.mu.values()[0].to_string(), p.mu.values()[1].to_string()),
            _ => (String::new(), String::new()),
        };
        w.write_record([r.iteration.to_string(), r.max_e.to_string(), r.mean_e.to_string(), a, b]).map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))?;
    write_atomic(path, &bytes)
}

fn fresh_manifest(store: &Store, config: &RunConfig) -> Result<StoreManifest> {
    let fom = ParametricFom::new(config)?;
    let mesh = fom.base_mesh();
    mesh.save(store.root(), MESH_STEM)?;
    write_atomic(&store.path("config.json"), &to_json_bytes(config))?;
    Ok(StoreManifest {
        format_version: FORMAT_VERSION,
        revision: 0,
        config_hash: config.hash(),
        mesh: MeshEntry {
            header: format!("{MESH_STEM}.json"),
            vertices_sha256: mesh.header().vertices_sha256,
            topology_id: mesh.topology_id(),
        },
        binding: config.binding.clone(),
        snapshots: Vec::new(),
        baseline: None,
        sampling: None,
        bases: None,
        podi: None,
        ddpod: None,
        status: StoreStatus::Sampling,
    })
}

/// Sampling, basis construction and model building into the store at
/// `root`. Resumes a partial store and does nothing on a complete one.
pub fn cmd_offline(config: &RunConfig, root: &Path) -> Result<OfflineSummary> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {} workers: {e}", config.workers)))?;
    pool.install(|| offline_inner(config, root))
}

fn offline_inner(config: &RunConfig, root: &Path) -> Result<OfflineSummary> {
    let store = Store::new(root);
    let mut manifest = if store.has_manifest() {
        let m = store.load_manifest()?;
        if m.config_hash != config.hash() {
            return Err(Error::Config(format!("store at {} was built from a different configuration", root.display())));
        }
        if m.status == StoreStatus::Complete {
            log::info!("store is up to date");
            return Ok(OfflineSummary { manifest: m, outcome: OfflineOutcome::UpToDate, solver_calls: 0 });
        }
        m
    } else {
        let mut m = fresh_manifest(&store, config)?;
        store.save_manifest(&mut m)?;
        m
    };
    let base = StructuredMesh::load(store.root(), MESH_STEM)?;
    let fom = ParametricFom::with_mesh(config, base)?;

    let init = grid_points(&config.binding, config.sampling.grid_per_axis)?;
    let opts = GreedyOptions {
        tol: config.sampling.tol,
        max_new: config.sampling.max_new,
        indicator_rows: match config.sampling.indicator {
            IndicatorRegion::All => None,
            IndicatorRegion::Surface => Some(fom.surface_cells()?),
        },
    };
    let db = store.database(&manifest)?;
    let (db, history) = {
        let mut checkpoint = StoreCheckpoint { store: &store, manifest: &mut manifest, fom: &fom };
        greedy_sample(&fom, &config.binding, &init, &opts, db, &mut checkpoint)?
    };
    write_sampling_history(&store.path("sampling_history.csv"), &manifest.config_hash, &history)?;
    manifest.sampling = Some(SamplingEntry { history, n_initial: init.len() });

    let mu0 = baseline_point(config)?;
    let eps = SnapshotDatabase::eps_dup(&config.binding.bounds);
    manifest.baseline = Some(match manifest.snapshots.iter().find(|e| e.mu.distance(&mu0) <= eps) {
        Some(e) => e.clone(),
        None => {
            let (values, meta) = fom.solve(&mu0)?;
            snapshot_entry(&store, &fom, "fields/baseline", &mu0, &values, &meta)?
        }
    });

    let theta = db.theta()?;
    let full = build_pod(config, theta)?;
    let surface_cells = fom.surface_cells()?;
    let surface = build_pod(config, &theta.restrict_rows(&surface_cells)?)?;
    let full_ref = full.save(store.root(), "basis/full")?;
    let surface_ref = surface.save(store.root(), "basis/surface")?;
    let podi = build_podi(theta, &full)?;
    manifest.podi = Some(podi.save(store.root(), "models/podi", full_ref.clone())?);
    manifest.bases = Some(BasesEntry { full: full_ref, surface: surface_ref, surface_cells });
    manifest.ddpod = Some(split_domain(fom.base_mesh(), &config.ddpod.core_box, config.ddpod.overlap_layers)?);
    manifest.status = StoreStatus::Complete;
    store.save_manifest(&mut manifest)?;
    Ok(OfflineSummary { manifest, outcome: OfflineOutcome::Built, solver_calls: fom.solve_count() })
}
