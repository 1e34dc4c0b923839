//! The instance file format.
//!
//! Version-1 JSON schema, 0-based resource indices:
//!
//! ```json
//! {
//!   "version": 1,
//!   "T": 2,
//!   "resources": [
//!     { "reward": 1.0, "dist": { "type": "geometric", "p": 0.5 } },
//!     { "reward": 1.1, "dist": { "type": "finite", "pmf": [[1, 0.5], [3, 0.5]] } }
//!   ],
//!   "arrivals": [[0, 1], [1]]
//! }
//! ```
//!
//! Unknown fields are rejected, as are versions other than 1. Loading
//! canonicalizes (rewards ascending, arrival sets sorted and remapped),
//! so a written file re-parses to a hash-identical instance.

use std::path::Path;

use serde::{Deserialize, Serialize};

use rematch_core::instance::{validate_parts, Resource, UsageDistribution, ValidationReport};
use rematch_core::Instance64;

use crate::exit::{CliError, EXIT_PARSE, EXIT_VALIDATION};

pub const FILE_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceFile {
    pub version: u32,
    #[serde(rename = "T")]
    pub horizon: usize,
    pub resources: Vec<ResourceFile>,
    pub arrivals: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResourceFile {
    pub reward: f64,
    pub dist: DistFile,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum DistFile {
    Geometric { p: f64 },
    Finite { pmf: Vec<(u32, f64)> },
}

impl From<&DistFile> for UsageDistribution<f64> {
    fn from(d: &DistFile) -> Self {
        match d {
            DistFile::Geometric { p } => UsageDistribution::Geometric { p: *p },
            DistFile::Finite { pmf } => UsageDistribution::FiniteSupport { pmf: pmf.clone() },
        }
    }
}

impl From<&UsageDistribution<f64>> for DistFile {
    fn from(d: &UsageDistribution<f64>) -> Self {
        match d {
            UsageDistribution::Geometric { p } => DistFile::Geometric { p: *p },
            UsageDistribution::FiniteSupport { pmf } => DistFile::Finite { pmf: pmf.clone() },
        }
    }
}

impl InstanceFile {
    pub fn resources_vec(&self) -> Vec<Resource<f64>> {
        self.resources
            .iter()
            .map(|r| Resource {
                reward: r.reward,
                dist: (&r.dist).into(),
            })
            .collect()
    }

    pub fn from_instance(instance: &Instance64) -> Self {
        Self {
            version: FILE_VERSION,
            horizon: instance.horizon(),
            resources: instance
                .resources()
                .iter()
                .map(|r| ResourceFile {
                    reward: r.reward,
                    dist: (&r.dist).into(),
                })
                .collect(),
            arrivals: instance.arrivals().to_vec(),
        }
    }
}

/// Parses a file into the schema; exit 2 on IO trouble, malformed
/// JSON (with location), or a version mismatch.
pub fn parse_file(path: &Path) -> Result<InstanceFile, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::new(EXIT_PARSE, format!("cannot read {}: {e}", path.display())))?;
    let file: InstanceFile = serde_json::from_str(&text).map_err(|e| {
        CliError::new(
            EXIT_PARSE,
            format!(
                "{}: parse error at line {}, column {}: {e}",
                path.display(),
                e.line(),
                e.column()
            ),
        )
    })?;
    if file.version != FILE_VERSION {
        return Err(CliError::new(
            EXIT_PARSE,
            format!(
                "{}: unsupported file version {} (expected {FILE_VERSION})",
                path.display(),
                file.version
            ),
        ));
    }
    Ok(file)
}

/// Strict validation of the raw file content (before canonicalization).
pub fn validate_file(path: &Path) -> Result<ValidationReport, CliError> {
    let file = parse_file(path)?;
    Ok(validate_parts(
        file.horizon,
        &file.resources_vec(),
        &file.arrivals,
    ))
}

/// Loads and canonicalizes; exit 1 when the content is invalid.
pub fn load_instance(path: &Path) -> Result<Instance64, CliError> {
    let file = parse_file(path)?;
    Instance64::new(file.horizon, file.resources_vec(), file.arrivals)
        .map_err(|e| CliError::new(EXIT_VALIDATION, format!("{}: {e}", path.display())))
}

/// Serializes an instance to the canonical file form.
pub fn instance_to_json(instance: &Instance64) -> String {
    serde_json::to_string_pretty(&InstanceFile::from_instance(instance))
        .expect("instance file serializes")
}
