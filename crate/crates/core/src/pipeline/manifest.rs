//! Store layout and manifest.
//!
//! ```text
//! <root>/manifest.json      everything below, with checksums
//! <root>/config.json        copy of the producing configuration
//! <root>/mesh/base.{json,f64}
//! <root>/fields/*.f64       snapshot fields (+ .json sidecars)
//! <root>/basis/*.{json,f64}
//! <root>/models/*.f64       PODI coefficient table
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ddpod::DomainSplit;
use crate::error::{Error, Result};
use crate::ffd::{ParameterBinding, ParameterPoint};
use crate::mesh::StructuredMesh;
use crate::pipeline::store::{read_block, read_json, read_verified, to_json_bytes, write_block, write_json, BlockRef};
use crate::pod::BasisRef;
use crate::podi::PodiRef;
use crate::sampling::{IterationRecord, SnapshotDatabase, SnapshotMeta};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";
pub const MESH_STEM: &str = "mesh/base";

/// Sidecar written next to every field block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSidecar {
    pub mesh_id: String,
    pub len: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnapshotEntry {
    pub mu: ParameterPoint,
    pub field: BlockRef,
    pub sidecar: String,
    pub meta: SnapshotMeta,
    pub qoi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshEntry {
    pub header: String,
    pub vertices_sha256: String,
    pub topology_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingEntry {
    pub history: Vec<IterationRecord>,
    pub n_initial: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasesEntry {
    pub full: BasisRef,
    /// Basis of the snapshots restricted to `surface_cells`.
    pub surface: BasisRef,
    pub surface_cells: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StoreStatus {
    Sampling,
    Complete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoreManifest {
    pub format_version: u32,
    /// Bumped on every save.
    pub revision: u64,
    pub config_hash: String,
    pub mesh: MeshEntry,
    pub binding: ParameterBinding,
    pub snapshots: Vec<SnapshotEntry>,
    pub baseline: Option<SnapshotEntry>,
    pub sampling: Option<SamplingEntry>,
    pub bases: Option<BasesEntry>,
    pub podi: Option<PodiRef>,
    pub ddpod: Option<DomainSplit>,
    pub status: StoreStatus,
}

/// A store directory.
#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
}

impl Store {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, relative: &str) -> PathBuf {
        self.root.join(relative)
    }

    pub fn has_manifest(&self) -> bool {
        self.path(MANIFEST).is_file()
    }

    /// Reads the manifest and checks every file it references.
    pub fn load_manifest(&self) -> Result<StoreManifest> {
        let manifest: StoreManifest = read_json(&self.path(MANIFEST))?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::Integrity {
                path: self.path(MANIFEST),
                reason: format!("unsupported store format {}", manifest.format_version),
            });
        }
        self.verify(&manifest)?;
        Ok(manifest)
    }

    fn verify(&self, m: &StoreManifest) -> Result<()> {
        let mesh = StructuredMesh::load(&self.root, MESH_STEM)?;
        if mesh.header().vertices_sha256 != m.mesh.vertices_sha256 || mesh.topology_id() != m.mesh.topology_id {
            return Err(Error::Integrity { path: self.path(&m.mesh.header), reason: "mesh differs from manifest".into() });
        }
        for entry in m.snapshots.iter().chain(&m.baseline) {
            self.read_field(entry)?;
        }
        if let Some(b) = &m.bases {
            read_verified(&self.path(&b.full.modes.file), &b.full.modes.sha256)?;
            read_verified(&self.path(&b.surface.modes.file), &b.surface.modes.sha256)?;
        }
        if let Some(p) = &m.podi {
            read_verified(&self.path(&p.coefficients.file), &p.coefficients.sha256)?;
        }
        Ok(())
    }

    /// Writes the manifest with its revision bumped.
    pub fn save_manifest(&self, manifest: &mut StoreManifest) -> Result<()> {
        manifest.revision += 1;
        write_json(&self.path(MANIFEST), manifest)
    }

    /// Canonical manifest bytes (what [`Self::save_manifest`] writes).
    pub fn manifest_bytes(manifest: &StoreManifest) -> Vec<u8> {
        to_json_bytes(manifest)
    }

    pub fn write_field(&self, stem: &str, values: &[f64], mesh_id: &str) -> Result<(BlockRef, String)> {
        let block = write_block(&self.root, &format!("{stem}.f64"), values)?;
        let sidecar = format!("{stem}.json");
        let meta = FieldSidecar { mesh_id: mesh_id.to_string(), len: block.len, sha256: block.sha256.clone() };
        write_json(&self.path(&sidecar), &meta)?;
        Ok((block, sidecar))
    }

    pub fn read_field(&self, entry: &SnapshotEntry) -> Result<Vec<f64>> {
        let sidecar: FieldSidecar = read_json(&self.path(&entry.sidecar))?;
        if sidecar.sha256 != entry.field.sha256 || sidecar.len != entry.field.len {
            return Err(Error::Integrity { path: self.path(&entry.sidecar), reason: "sidecar disagrees with manifest".into() });
        }
        read_block(&self.root, &entry.field)
    }

    pub fn database(&self, manifest: &StoreManifest) -> Result<SnapshotDatabase> {
        let mut db = SnapshotDatabase::new();
        for entry in &manifest.snapshots {
            db.push(entry.mu.clone(), self.read_field(entry)?, entry.meta.clone())?;
        }
        Ok(db)
    }
}
