//! Store persistence, idempotence, integrity checks and provenance of
//! result files.

use std::fs;
use std::path::Path;

use morphrom::ffd::ParameterPoint;
use morphrom::pipeline::store::read_json;
use morphrom::pipeline::{cmd_eval, cmd_offline, cmd_report, Method, OfflineOutcome, RunConfig, Store, StoreManifest, StoreStatus};
use morphrom::pod::PodBasis;
use morphrom::Error;

fn small_config() -> RunConfig {
    let mut config = RunConfig::demo();
    config.mesh.nx = 32;
    config.mesh.ny = 32;
    config.sampling.max_new = 2;
    config.validation.truncate(2);
    config
}

fn built_store() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    cmd_offline(&small_config(), dir.path()).unwrap();
    dir
}

fn first_line(path: &Path) -> String {
    fs::read_to_string(path).unwrap().lines().next().unwrap_or_default().to_string()
}

#[test]
fn manifest_and_blocks_round_trip_byte_for_byte() {
    let dir = built_store();
    let store = Store::new(dir.path());
    let on_disk = fs::read(store.path("manifest.json")).unwrap();
    let manifest = store.load_manifest().unwrap();
    assert_eq!(Store::manifest_bytes(&manifest), on_disk);

    let bases = manifest.bases.as_ref().unwrap();
    let basis = PodBasis::load(dir.path(), &bases.full).unwrap();
    let other = tempfile::tempdir().unwrap();
    let again = basis.save(other.path(), "basis/full").unwrap();
    assert_eq!(again, bases.full);
    assert_eq!(fs::read(dir.path().join(&bases.full.modes.file)).unwrap(), fs::read(other.path().join(&again.modes.file)).unwrap());

    // a save after load only moves the revision
    let mut copy = manifest.clone();
    store.save_manifest(&mut copy).unwrap();
    let reloaded = store.load_manifest().unwrap();
    assert_eq!(reloaded.revision, manifest.revision + 1);
    assert_eq!(StoreManifest { revision: manifest.revision, ..reloaded }, manifest);
}

#[test]
fn offline_is_idempotent() {
    let dir = built_store();
    let before = fs::read(dir.path().join("manifest.json")).unwrap();
    let summary = cmd_offline(&small_config(), dir.path()).unwrap();
    assert_eq!(summary.outcome, OfflineOutcome::UpToDate);
    assert_eq!(summary.solver_calls, 0);
    assert_eq!(fs::read(dir.path().join("manifest.json")).unwrap(), before);
}

#[test]
fn a_different_config_is_refused() {
    let dir = built_store();
    let mut config = small_config();
    config.pde.diffusivity *= 2.0;
    assert!(matches!(cmd_offline(&config, dir.path()), Err(Error::Config(_))));
}

#[test]
fn corrupted_blocks_are_detected() {
    let dir = built_store();
    let store = Store::new(dir.path());
    let manifest = store.load_manifest().unwrap();
    let file = dir.path().join(&manifest.snapshots[3].field.file);
    let mut bytes = fs::read(&file).unwrap();
    bytes[17] ^= 0x01;
    fs::write(&file, bytes).unwrap();
    assert!(matches!(store.load_manifest(), Err(Error::Integrity { .. })));
    let err = cmd_eval(dir.path(), &ParameterPoint::new(vec![0.0, 0.0]), Method::Podi, None).unwrap_err();
    assert!(matches!(err, Error::Integrity { .. }));
    assert_eq!(err.exit_code(), 4);
}

#[test]
fn interrupted_sampling_resumes_to_the_same_store() {
    let reference = built_store();
    let dir = built_store();
    let store = Store::new(dir.path());
    let mut manifest = store.load_manifest().unwrap();
    // roll back to the moment the tenth snapshot was written
    manifest.snapshots.truncate(10);
    manifest.status = StoreStatus::Sampling;
    manifest.sampling = None;
    manifest.bases = None;
    manifest.podi = None;
    manifest.ddpod = None;
    manifest.baseline = None;
    store.save_manifest(&mut manifest).unwrap();

    let summary = cmd_offline(&small_config(), dir.path()).unwrap();
    assert_eq!(summary.solver_calls, 1);
    let expected = Store::new(reference.path()).load_manifest().unwrap();
    assert_eq!(summary.manifest.snapshots, expected.snapshots);
    assert_eq!(summary.manifest.sampling, expected.sampling);
    assert_eq!(summary.manifest.bases, expected.bases);
    assert_eq!(summary.manifest.podi, expected.podi);
}

#[test]
fn every_result_file_names_its_config() {
    let dir = built_store();
    let hash = small_config().hash();
    let tag = format!("# config_hash={hash}");
    let manifest: StoreManifest = read_json(&dir.path().join("manifest.json")).unwrap();
    assert_eq!(manifest.config_hash, hash);
    assert_eq!(first_line(&dir.path().join("sampling_history.csv")), tag);

    let mu = ParameterPoint::new(vec![0.05, 0.05]);
    for method in [Method::Podi, Method::Ddpod, Method::Fom] {
        let (record, path) = cmd_eval(dir.path(), &mu, method, None).unwrap();
        assert_eq!(record.config_hash, hash);
        let json: serde_json::Value = serde_json::from_slice(&fs::read(&path).unwrap()).unwrap();
        assert_eq!(json["config_hash"], hash.as_str());
    }
    let history = fs::read_dir(dir.path().join("results"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.to_string_lossy().ends_with("_history.csv"))
        .expect("DD-POD history file");
    assert_eq!(first_line(&history), tag);

    let report = cmd_report(dir.path(), None).unwrap();
    assert_eq!(report.config_hash, hash);
    assert_eq!(first_line(&dir.path().join("report.csv")), tag);
}

#[test]
fn held_out_point_matches_a_fresh_solve() {
    let dir = built_store();
    let mu = ParameterPoint::new(vec![0.05, 0.05]);
    let (fom, _) = cmd_eval(dir.path(), &mu, Method::Fom, None).unwrap();
    let (podi, _) = cmd_eval(dir.path(), &mu, Method::Podi, None).unwrap();
    let (ddpod, _) = cmd_eval(dir.path(), &mu, Method::Ddpod, None).unwrap();
    let read = |r: &morphrom::pipeline::EvalRecord| morphrom::pipeline::store::read_block(dir.path(), &r.field).unwrap();
    let truth = read(&fom);
    let norm = truth.iter().map(|v| v * v).sum::<f64>().sqrt();
    let err = |u: Vec<f64>| u.iter().zip(&truth).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() / norm;
    let (e_podi, e_dd) = (err(read(&podi)), err(read(&ddpod)));
    // DD-POD solves the full-order equations where the shape changes
    assert!(e_dd < e_podi, "ddpod {e_dd:e} vs podi {e_podi:e}");
    assert!(e_podi < 5e-2, "podi {e_podi:e}");
}

#[test]
fn out_of_bounds_points_are_reported() {
    let dir = built_store();
    let err = cmd_eval(dir.path(), &ParameterPoint::new(vec![0.5, 0.0]), Method::Podi, None).unwrap_err();
    assert!(matches!(err, Error::Bounds(_)));
    assert_eq!(err.exit_code(), 2);
}
