//! Run configuration: parsed from JSON, checked against the published schema
//! (`docs/config.schema.json`) and then semantically validated.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ffd::{FfdLattice, ParameterBinding, ParameterPoint};
use crate::fom::{PdeParams, QoiSpec, SolverOptions, UniformCondition};
use crate::mesh::{BumpSpec, Rect, DEFAULT_ORTHO_LIMIT, DEFAULT_SKEW_LIMIT, PATCH_NAMES};
use crate::pipeline::store::sha256_hex;

pub const SCHEMA: &str = include_str!("../../../../docs/config.schema.json");
const DEMO: &str = include_str!("../../../../configs/demo.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshConfig {
    pub nx: usize,
    pub ny: usize,
    pub domain: Rect,
    pub bump: BumpSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FfdConfig {
    pub origin: Vec<f64>,
    pub box_lengths: Vec<f64>,
    pub dims: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QualityConfig {
    pub skew_limit: f64,
    pub ortho_limit: f64,
}

impl Default for QualityConfig {
    fn default() -> Self {
        Self { skew_limit: DEFAULT_SKEW_LIMIT, ortho_limit: DEFAULT_ORTHO_LIMIT }
    }
}

/// Cells on which the leave-one-out indicator is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndicatorRegion {
    All,
    /// Cells owning a face of the QoI patch.
    Surface,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingConfig {
    pub grid_per_axis: usize,
    pub tol: f64,
    pub max_new: usize,
    pub indicator: IndicatorRegion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PodMethod {
    Auto,
    Svd,
    Snapshots,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PodConfig {
    pub energy: f64,
    pub method: PodMethod,
}

/// Initial interface data for the Schwarz iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DdInit {
    /// ROM with the coefficients of the nearest database snapshot.
    Nearest,
    /// Mean of the Dirichlet values of the outer boundary.
    BoundaryMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DdpodConfig {
    pub core_box: Rect,
    pub overlap_layers: usize,
    pub tol: f64,
    pub max_outer: usize,
    pub init: DdInit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mesh: MeshConfig,
    pub ffd: FfdConfig,
    pub binding: ParameterBinding,
    pub pde: PdeParams,
    pub boundary: BTreeMap<String, UniformCondition>,
    /// Uniform volumetric source.
    pub source: f64,
    pub solver: SolverOptions,
    pub qoi: QoiSpec,
    #[serde(default)]
    pub quality: QualityConfig,
    pub sampling: SamplingConfig,
    pub pod: PodConfig,
    pub ddpod: DdpodConfig,
    /// Held-out parameter points for the report.
    pub validation: Vec<ParameterPoint>,
    /// Worker threads for snapshot solves (0 = all cores).
    #[serde(default)]
    pub workers: usize,
    pub output_dir: String,
}

fn check_schema(value: &serde_json::Value) -> Result<()> {
    let schema: serde_json::Value = serde_json::from_str(SCHEMA).expect("bundled schema is valid JSON");
    let validator = jsonschema::validator_for(&schema).expect("bundled schema compiles");
    let messages: Vec<String> = validator
        .iter_errors(value)
        .map(|e| format!("{} at '{}'", e, e.instance_path()))
        .collect();
    if messages.is_empty() {
        Ok(())
    } else {
        Err(Error::Config(format!("config violates schema: {}", messages.join("; "))))
    }
}

impl RunConfig {
    /// Schema check, typed parse and semantic validation.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("config is not valid JSON: {e}")))?;
        check_schema(&value)?;
        let config: RunConfig =
            serde_json::from_value(value).map_err(|e| Error::Config(format!("config does not parse: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// The bundled demonstration problem.
    pub fn demo() -> Self {
        Self::from_json(DEMO).expect("bundled demo config is valid")
    }

    pub fn lattice(&self) -> Result<FfdLattice> {
        FfdLattice::new(self.ffd.origin.clone(), self.ffd.box_lengths.clone(), self.ffd.dims.clone())
    }

    pub fn validate(&self) -> Result<()> {
        if self.mesh.nx < 4 || self.mesh.ny < 4 || self.mesh.domain.is_degenerate() {
            return Err(Error::Config("mesh needs a non-degenerate domain and at least 4x4 cells".into()));
        }
        if !(self.mesh.bump.x_min < self.mesh.bump.x_max) {
            return Err(Error::Config("bump interval is empty".into()));
        }
        let lattice = self.lattice()?;
        if lattice.dim() != 2 {
            return Err(Error::Config("the mesh is 2D; the FFD lattice must be too".into()));
        }
        self.binding.validate_against(&lattice)?;
        if self.binding.parameter_dim() != 2 {
            return Err(Error::Config("triangulated parameter spaces are 2D; bind exactly 2 parameters".into()));
        }
        for name in PATCH_NAMES {
            if !self.boundary.contains_key(name) {
                return Err(Error::Config(format!("no boundary condition for patch '{name}'")));
            }
        }
        if let Some(extra) = self.boundary.keys().find(|k| !PATCH_NAMES.contains(&k.as_str())) {
            return Err(Error::Config(format!("boundary condition for unknown patch '{extra}'")));
        }
        if !(self.pde.diffusivity > 0.0) {
            return Err(Error::Config("diffusivity must be positive".into()));
        }
        if !(self.solver.tol > 0.0) || self.solver.max_iter == 0 {
            return Err(Error::Config("solver tolerance and iteration cap must be positive".into()));
        }
        self.qoi.validate()?;
        if !PATCH_NAMES.contains(&self.qoi.patch.as_str()) {
            return Err(Error::Config(format!("QoI patch '{}' does not exist", self.qoi.patch)));
        }
        if self.sampling.grid_per_axis < 2 || !(self.sampling.tol >= 0.0) {
            return Err(Error::Config("sampling grid needs 2+ points per axis and tol >= 0".into()));
        }
        if !(self.pod.energy > 0.0 && self.pod.energy <= 1.0) {
            return Err(Error::Config("POD energy must lie in (0, 1]".into()));
        }
        if self.ddpod.overlap_layers == 0 || !(self.ddpod.tol > 0.0) || self.ddpod.max_outer == 0 {
            return Err(Error::Config("DD-POD needs overlap_layers >= 1, tol > 0 and max_outer >= 1".into()));
        }
        if self.ddpod.core_box.is_degenerate() {
            return Err(Error::Config("DD-POD core box is degenerate".into()));
        }
        for mu in &self.validation {
            self.binding.check_bounds(mu).map_err(|e| Error::Config(format!("validation point: {e}")))?;
        }
        if self.output_dir.is_empty() {
            return Err(Error::Config("output_dir is empty".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON of every setting that affects results
    /// (the output directory and worker count are excluded).
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output_dir = String::new();
        canonical.workers = 0;
        sha256_hex(&serde_json::to_vec(&canonical).expect("serialisable config"))
    }

    /// Mean of the Dirichlet values over the outer boundary patches.
    pub fn boundary_mean(&self) -> f64 {
        let values: Vec<f64> = self
            .boundary
            .values()
            .filter_map(|c| match c {
                UniformCondition::Dirichlet(v) => Some(*v),
                UniformCondition::Neumann(_) => None,
            })
            .collect();
        if values.is_empty() { 0.0 } else { values.iter().sum::<f64>() / values.len() as f64 }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn demo_config_is_valid_and_hash_ignores_output_dir() {
        let demo = RunConfig::demo();
        let mut moved = demo.clone();
        moved.output_dir = "elsewhere".into();
        moved.workers = 3;
        assert_eq!(demo.hash(), moved.hash());
        let mut changed = demo.clone();
        changed.pde.diffusivity *= 2.0;
        assert_ne!(demo.hash(), changed.hash());
    }

    #[test]
    fn schema_rejects_unknown_keys_and_bad_values() {
        let mut value: serde_json::Value = serde_json::from_str(DEMO).unwrap();
        value["mystery"] = serde_json::json!(1);
        assert!(matches!(RunConfig::from_json(&value.to_string()), Err(Error::Config(_))));
        let mut value: serde_json::Value = serde_json::from_str(DEMO).unwrap();
        value["pde"]["diffusivity"] = serde_json::json!(-1.0);
        assert!(matches!(RunConfig::from_json(&value.to_string()), Err(Error::Config(_))));
        let mut value: serde_json::Value = serde_json::from_str(DEMO).unwrap();
        value["validation"] = serde_json::json!([[5.0, 0.0]]);
        assert!(matches!(RunConfig::from_json(&value.to_string()), Err(Error::Config(_))));
    }
}
