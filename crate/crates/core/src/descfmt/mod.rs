//! YAML description documents: ODE methods, IVPs, machines, kernel templates
//! and implementation skeletons, plus scenario cross-checking.

pub mod ivp;
pub mod machine;
pub mod method;
pub mod scenario;
pub mod skeleton;
pub mod template;
mod units;

use std::path::Path;

pub use ivp::{parse_ivp, AccessDistance, Ivp, IvpComponent, IvpConstant};
pub use machine::{parse_machine, CacheLevel, MachineModel, OpClass};
pub use method::{parse_method, OdeMethod};
pub use scenario::{validate_scenario, SizingMode, TuningScenario, ValidatedScenario};
pub use skeleton::{parse_skeleton, ImplSkeleton};
pub use template::{parse_kernel_template, DataStruct, KernelTemplate, KernelVariantDef};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DescErrorKind {
    Io,
    Yaml,
    /// Missing or malformed key.
    Schema,
    /// Wrong number of entries.
    Arity,
    /// A value that parses but violates an invariant.
    Value,
    /// Overlapping or non-covering IVP components.
    Tiling,
    /// A name that refers to nothing.
    Reference,
    /// Out-of-range scenario setting.
    Bounds,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{document}: {message}")]
pub struct DescError {
    pub kind: DescErrorKind,
    pub document: String,
    pub message: String,
}

impl DescError {
    pub fn new(kind: DescErrorKind, document: &str, message: impl Into<String>) -> DescError {
        DescError {
            kind,
            document: document.to_string(),
            message: message.into(),
        }
    }
}

pub(crate) fn from_yaml<T: serde::de::DeserializeOwned>(text: &str, what: &str) -> Result<T, DescError> {
    serde_yaml::from_str(text).map_err(|e| DescError::new(DescErrorKind::Yaml, what, e.to_string()))
}

pub(crate) fn to_yaml<T: serde::Serialize>(doc: &T) -> String {
    serde_yaml::to_string(doc).expect("description documents always serialize")
}

fn read(path: &Path) -> Result<(String, String), DescError> {
    let label = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| DescError::new(DescErrorKind::Io, &label, e.to_string()))?;
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("unnamed").to_string();
    Ok((text, stem))
}

fn relabel(mut e: DescError, path: &Path) -> DescError {
    e.document = path.display().to_string();
    e
}

/// Reads a method document; a missing `name` defaults to the file stem.
pub fn load_method(path: &Path) -> Result<OdeMethod, DescError> {
    let (text, stem) = read(path)?;
    method::parse_method_named(&text, &stem).map_err(|e| relabel(e, path))
}

pub fn load_ivp(path: &Path) -> Result<Ivp, DescError> {
    let (text, stem) = read(path)?;
    ivp::parse_ivp_named(&text, &stem).map_err(|e| relabel(e, path))
}

pub fn load_machine(path: &Path) -> Result<MachineModel, DescError> {
    let (text, stem) = read(path)?;
    machine::parse_machine_named(&text, &stem).map_err(|e| relabel(e, path))
}

pub fn load_template(path: &Path) -> Result<KernelTemplate, DescError> {
    let (text, stem) = read(path)?;
    template::parse_kernel_template_named(&text, &stem).map_err(|e| relabel(e, path))
}

pub fn load_skeleton(path: &Path) -> Result<ImplSkeleton, DescError> {
    let (text, stem) = read(path)?;
    skeleton::parse_skeleton_named(&text, &stem).map_err(|e| relabel(e, path))
}

/// Every `*.yaml` / `*.yml` file in `dir`, sorted by file name.
pub fn yaml_files(dir: &Path) -> Result<Vec<std::path::PathBuf>, DescError> {
    let label = dir.display().to_string();
    let entries = std::fs::read_dir(dir).map_err(|e| DescError::new(DescErrorKind::Io, &label, e.to_string()))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry
            .map_err(|e| DescError::new(DescErrorKind::Io, &label, e.to_string()))?
            .path();
        if matches!(path.extension().and_then(|e| e.to_str()), Some("yaml" | "yml")) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}
