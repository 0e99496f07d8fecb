//! Single-file JSON store of kernel predictions, barrier fits and rankings.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::descfmt::{Ivp, KernelTemplate};
use crate::predict::{CommModel, KernelPrediction, Selection};

pub const STORE_VERSION: u32 = 1;

/// IVP field of keys for kernels that do not evaluate the IVP.
pub const NO_IVP: &str = "NONE";

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("store {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("store {path}: {message}")]
    Format { path: String, message: String },
    #[error("store {path} has schema version {found}, expected {STORE_VERSION}")]
    Version { path: String, found: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PredictionKey {
    pub kernel: String,
    pub machine: String,
    pub method: String,
    pub ivp: String,
    pub tau: u32,
    pub n: u64,
    /// Core clock in Hz.
    pub frequency: u64,
}

impl PredictionKey {
    /// `ivp` is ignored unless `contains_rhs` is set.
    #[allow(clippy::too_many_arguments)]
    pub fn new(kernel: &str, machine: &str, method: &str, ivp: Option<&str>, contains_rhs: bool, tau: u32, n: u64, frequency: f64) -> Self {
        PredictionKey {
            kernel: kernel.to_string(),
            machine: machine.to_string(),
            method: method.to_string(),
            ivp: match (contains_rhs, ivp) {
                (true, Some(i)) => i.to_string(),
                _ => NO_IVP.to_string(),
            },
            tau,
            n,
            frequency: frequency.round() as u64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub prediction: KernelPrediction,
    /// Digest of the specialized kernel source the prediction was made for.
    pub source_hash: String,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RankingKey {
    pub machine: String,
    pub method: String,
    pub ivp: String,
    pub tau: u32,
    pub n: u64,
}

#[derive(Serialize, Deserialize)]
struct Entry<K, V> {
    key: K,
    value: V,
}

#[derive(Default, Serialize, Deserialize)]
struct Document {
    version: u32,
    predictions: Vec<Entry<PredictionKey, PredictionRecord>>,
    comm_models: Vec<Entry<String, CommModel>>,
    rankings: Vec<Entry<RankingKey, Selection>>,
}

/// In-memory view of the store; `save` writes the whole file atomically.
#[derive(Debug, Clone, Default)]
pub struct Store {
    path: Option<PathBuf>,
    predictions: BTreeMap<PredictionKey, PredictionRecord>,
    comm_models: BTreeMap<String, CommModel>,
    rankings: BTreeMap<RankingKey, Selection>,
}

impl Store {
    /// A store that is never written to disk.
    pub fn in_memory() -> Store {
        Store::default()
    }

    /// Opens `path`; a missing file yields an empty store.
    pub fn open(path: &Path) -> Result<Store, StoreError> {
        let label = path.display().to_string();
        let mut store = Store {
            path: Some(path.to_path_buf()),
            ..Store::default()
        };
        let text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(store),
            Err(source) => return Err(StoreError::Io { path: label, source }),
        };
        let header: serde_json::Value = serde_json::from_str(&text).map_err(|e| StoreError::Format {
            path: label.clone(),
            message: e.to_string(),
        })?;
        let found = header.get("version").and_then(|v| v.as_u64()).ok_or_else(|| StoreError::Format {
            path: label.clone(),
            message: "missing version header".into(),
        })?;
        if found != STORE_VERSION as u64 {
            return Err(StoreError::Version {
                path: label,
                found: found as u32,
            });
        }
        let doc: Document = serde_json::from_value(header).map_err(|e| StoreError::Format {
            path: label,
            message: e.to_string(),
        })?;
        store.predictions = doc.predictions.into_iter().map(|e| (e.key, e.value)).collect();
        store.comm_models = doc.comm_models.into_iter().map(|e| (e.key, e.value)).collect();
        store.rankings = doc.rankings.into_iter().map(|e| (e.key, e.value)).collect();
        Ok(store)
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    /// Writes to a temporary file next to the store and renames it over the
    /// old one. In-memory stores are left untouched.
    pub fn save(&self) -> Result<(), StoreError> {
        let Some(path) = &self.path else { return Ok(()) };
        let label = path.display().to_string();
        let io = |source| StoreError::Io {
            path: label.clone(),
            source,
        };
        let doc = Document {
            version: STORE_VERSION,
            predictions: entries(&self.predictions),
            comm_models: entries(&self.comm_models),
            rankings: entries(&self.rankings),
        };
        let text = serde_json::to_string_pretty(&doc).expect("store records always serialize");
        let dir = match path.parent() {
            Some(d) if !d.as_os_str().is_empty() => d,
            _ => Path::new("."),
        };
        std::fs::create_dir_all(dir).map_err(io)?;
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
        tmp.write_all(text.as_bytes()).map_err(io)?;
        tmp.as_file().sync_all().map_err(io)?;
        tmp.persist(path).map_err(|e| io(e.error))?;
        Ok(())
    }

    pub fn put_prediction(&mut self, key: PredictionKey, record: PredictionRecord) {
        self.predictions.insert(key, record);
    }

    pub fn get_prediction(&self, key: &PredictionKey) -> Option<&PredictionRecord> {
        self.predictions.get(key)
    }

    pub fn predictions(&self) -> impl Iterator<Item = (&PredictionKey, &PredictionRecord)> {
        self.predictions.iter()
    }

    pub fn put_comm_model(&mut self, machine: &str, cm: CommModel) {
        self.comm_models.insert(machine.to_string(), cm);
    }

    pub fn get_comm_model(&self, machine: &str) -> Option<&CommModel> {
        self.comm_models.get(machine)
    }

    pub fn put_ranking(&mut self, key: RankingKey, sel: Selection) {
        self.rankings.insert(key, sel);
    }

    pub fn get_ranking(&self, key: &RankingKey) -> Option<&Selection> {
        self.rankings.get(key)
    }

    /// Kernel predictions as CSV, one row per key.
    pub fn export_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["kernel", "machine", "method", "ivp", "tau", "n", "frequency", "alpha", "beta", "delta", "phi"])
            .expect("in-memory write");
        for (k, r) in &self.predictions {
            let p = &r.prediction;
            w.write_record([
                k.kernel.clone(),
                k.machine.clone(),
                k.method.clone(),
                k.ivp.clone(),
                k.tau.to_string(),
                k.n.to_string(),
                k.frequency.to_string(),
                p.alpha.to_string(),
                p.beta.to_string(),
                p.delta.to_string(),
                p.phi.to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
    }
}

fn entries<K: Clone, V: Clone>(m: &BTreeMap<K, V>) -> Vec<Entry<K, V>> {
    m.iter()
        .map(|(k, v)| Entry {
            key: k.clone(),
            value: v.clone(),
        })
        .collect()
}

/// Kernels whose predictions no longer apply after switching from `old` to
/// `new`: every IVP-evaluating kernel, or none when the IVP is unchanged.
pub fn stale_kernels_on_ivp_change(templates: &[KernelTemplate], old: &Ivp, new: &Ivp) -> BTreeSet<String> {
    if old == new {
        return BTreeSet::new();
    }
    templates
        .iter()
        .flat_map(|t| t.variants.iter())
        .filter(|v| v.contains_rhs)
        .map(|v| v.name.clone())
        .collect()
}
