//! Solve result bundles: a JSON index plus flat binary value and policy
//! arrays, so external tools can slice the field without this crate.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::grid::{Axis, GridError, GridFunction};
use crate::intervention::{PolicySlice, Regime};
use crate::solver::{SolveResult, SpaceTimeGrid, ValueField};

pub const BUNDLE_INDEX: &str = "bundle.json";
pub const VALUES_FILE: &str = "values.bin";
pub const POLICIES_FILE: &str = "policies.bin";
const VALUE_ENCODING: &str = "f64-le";
const POLICY_ENCODING: &str = "label-u8 action-u32-le";
const NO_ACTION: u32 = u32::MAX;

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("bundle index: {0}")]
    Json(#[from] serde_json::Error),
    #[error("bundle layout: {0}")]
    Layout(String),
    #[error(transparent)]
    Grid(#[from] GridError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> BundleError + '_ {
    move |source| BundleError::Io { path: path.to_path_buf(), source }
}

/// Hash of the problem config the bundle was solved from.
pub fn spec_hash(config_text: &str) -> String {
    hex::encode(Sha256::digest(config_text.as_bytes()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridMeta {
    pub axes: Vec<Axis>,
    pub steps: usize,
    pub dt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleMeta {
    pub format_version: u32,
    pub spec_hash: String,
    pub grid: GridMeta,
    pub tol: Option<f64>,
    pub max_iter: usize,
    /// Fixed-point iteration count per time level, 0..=K.
    pub fixed_point_iterations: Vec<usize>,
    pub slices: usize,
    pub nodes_per_slice: usize,
    pub values_file: String,
    pub policies_file: String,
    pub value_encoding: String,
    pub policy_encoding: String,
}

impl BundleMeta {
    pub fn from_json(text: &str) -> Result<Self, BundleError> {
        let meta: BundleMeta = serde_json::from_str(text)?;
        meta.validate()?;
        Ok(meta)
    }

    pub fn validate(&self) -> Result<(), BundleError> {
        if self.format_version != 1 {
            return Err(BundleError::Layout(format!(
                "unsupported format version {}",
                self.format_version
            )));
        }
        if self.grid.axes.is_empty() {
            return Err(BundleError::Layout("no space axes".to_string()));
        }
        let nodes: usize = self
            .grid
            .axes
            .iter()
            .map(|a| a.count)
            .try_fold(1usize, |acc, c| acc.checked_mul(c))
            .ok_or_else(|| BundleError::Layout("node count overflows".to_string()))?;
        if nodes != self.nodes_per_slice {
            return Err(BundleError::Layout(format!(
                "nodes_per_slice {} does not match axes product {nodes}",
                self.nodes_per_slice
            )));
        }
        for axis in &self.grid.axes {
            if axis.count < 2 || !(axis.min < axis.max) {
                return Err(BundleError::Layout(format!("invalid axis {axis:?}")));
            }
        }
        if self.slices != self.grid.steps + 1 {
            return Err(BundleError::Layout(format!(
                "slices {} must equal steps + 1 = {}",
                self.slices,
                self.grid.steps + 1
            )));
        }
        if !(self.grid.dt > 0.0 && self.grid.dt.is_finite()) {
            return Err(BundleError::Layout(format!("invalid dt {}", self.grid.dt)));
        }
        if self.fixed_point_iterations.len() != self.slices {
            return Err(BundleError::Layout(
                "one fixed-point iteration count per slice required".to_string(),
            ));
        }
        if self.value_encoding != VALUE_ENCODING || self.policy_encoding != POLICY_ENCODING {
            return Err(BundleError::Layout(format!(
                "unsupported encoding {} / {}",
                self.value_encoding, self.policy_encoding
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SolveBundle {
    pub meta: BundleMeta,
    pub field: ValueField,
    pub policies: Vec<PolicySlice>,
}

impl SolveBundle {
    pub fn grid(&self) -> SpaceTimeGrid {
        SpaceTimeGrid {
            space: self.meta.grid.axes.clone(),
            steps: self.meta.grid.steps,
            dt: self.meta.grid.dt,
        }
    }
}

/// Writes `bundle.json`, `values.bin` and `policies.bin` into `dir`.
pub fn write_bundle(
    dir: &Path,
    result: &SolveResult,
    grid: &SpaceTimeGrid,
    spec_hash: &str,
    tol: Option<f64>,
    max_iter: usize,
) -> Result<BundleMeta, BundleError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let nodes = grid.node_count();
    let slices = result.field.slices.len();

    let mut values = Vec::with_capacity(slices * nodes * 8);
    for slice in &result.field.slices {
        for &v in &slice.values {
            values.extend_from_slice(&v.to_le_bytes());
        }
    }
    let values_path = dir.join(VALUES_FILE);
    fs::File::create(&values_path)
        .and_then(|mut f| f.write_all(&values))
        .map_err(io_err(&values_path))?;

    let mut policies = Vec::with_capacity(slices * nodes * 5);
    for slice in &result.policies {
        for regime in &slice.regimes {
            policies.push(regime.label());
            let idx = regime.action_index().map_or(NO_ACTION, |i| i as u32);
            policies.extend_from_slice(&idx.to_le_bytes());
        }
    }
    let policies_path = dir.join(POLICIES_FILE);
    fs::File::create(&policies_path)
        .and_then(|mut f| f.write_all(&policies))
        .map_err(io_err(&policies_path))?;

    let meta = BundleMeta {
        format_version: 1,
        spec_hash: spec_hash.to_string(),
        grid: GridMeta { axes: grid.space.clone(), steps: grid.steps, dt: grid.dt },
        tol,
        max_iter,
        fixed_point_iterations: result.fixed_point_stats.iter().map(|s| s.iterations).collect(),
        slices,
        nodes_per_slice: nodes,
        values_file: VALUES_FILE.to_string(),
        policies_file: POLICIES_FILE.to_string(),
        value_encoding: VALUE_ENCODING.to_string(),
        policy_encoding: POLICY_ENCODING.to_string(),
    };
    let index_path = dir.join(BUNDLE_INDEX);
    let json = serde_json::to_string_pretty(&meta)?;
    fs::write(&index_path, json).map_err(io_err(&index_path))?;
    Ok(meta)
}

/// Reads a bundle directory back into value slices and policies.
pub fn read_bundle(dir: &Path) -> Result<SolveBundle, BundleError> {
    let index_path = dir.join(BUNDLE_INDEX);
    let text = fs::read_to_string(&index_path).map_err(io_err(&index_path))?;
    let meta = BundleMeta::from_json(&text)?;

    let values_path = dir.join(&meta.values_file);
    let raw_values = fs::read(&values_path).map_err(io_err(&values_path))?;
    let expected = meta.slices * meta.nodes_per_slice * 8;
    if raw_values.len() != expected {
        return Err(BundleError::Layout(format!(
            "values file has {} bytes, expected {expected}",
            raw_values.len()
        )));
    }
    let mut slices = Vec::with_capacity(meta.slices);
    for k in 0..meta.slices {
        let mut values = Vec::with_capacity(meta.nodes_per_slice);
        let base = k * meta.nodes_per_slice * 8;
        for i in 0..meta.nodes_per_slice {
            let start = base + i * 8;
            let bytes: [u8; 8] = raw_values[start..start + 8].try_into().expect("8 bytes");
            values.push(f64::from_le_bytes(bytes));
        }
        let time = k as f64 * meta.grid.dt;
        slices.push(GridFunction::new(meta.grid.axes.clone(), values, time)?);
    }

    let policies_path = dir.join(&meta.policies_file);
    let raw_policies = fs::read(&policies_path).map_err(io_err(&policies_path))?;
    let expected = meta.slices * meta.nodes_per_slice * 5;
    if raw_policies.len() != expected {
        return Err(BundleError::Layout(format!(
            "policies file has {} bytes, expected {expected}",
            raw_policies.len()
        )));
    }
    let mut policies = Vec::with_capacity(meta.slices);
    for k in 0..meta.slices {
        let mut regimes = Vec::with_capacity(meta.nodes_per_slice);
        let base = k * meta.nodes_per_slice * 5;
        for i in 0..meta.nodes_per_slice {
            let start = base + i * 5;
            let label = raw_policies[start];
            let idx_bytes: [u8; 4] =
                raw_policies[start + 1..start + 5].try_into().expect("4 bytes");
            let idx = u32::from_le_bytes(idx_bytes);
            let regime = match (label, idx) {
                (0, _) => Regime::Continue,
                (1, i) if i != NO_ACTION => Regime::ImpulseI { action: i as usize },
                (2, i) if i != NO_ACTION => Regime::ImpulseII { action: i as usize },
                _ => {
                    return Err(BundleError::Layout(format!(
                        "invalid policy record label={label} action={idx} at slice {k} node {i}"
                    )))
                }
            };
            regimes.push(regime);
        }
        policies.push(PolicySlice { time: k as f64 * meta.grid.dt, regimes });
    }

    Ok(SolveBundle { meta, field: ValueField { slices }, policies })
}
