//! Machine documents in the style of Kerncraft machine files: execution
//! architecture, cache/memory hierarchy, and streaming-bandwidth benchmarks.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::units::Quantity;
use super::{from_yaml, to_yaml, DescError, DescErrorKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum OpClass {
    Add,
    Mul,
    Fma,
    Div,
    Load,
    Store,
}

impl OpClass {
    pub const ALL: [OpClass; 6] = [OpClass::Add, OpClass::Mul, OpClass::Fma, OpClass::Div, OpClass::Load, OpClass::Store];

    pub fn key(self) -> &'static str {
        match self {
            OpClass::Add => "ADD",
            OpClass::Mul => "MUL",
            OpClass::Fma => "FMA",
            OpClass::Div => "DIV",
            OpClass::Load => "LOAD",
            OpClass::Store => "STORE",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CacheLevel {
    pub name: String,
    pub size: u64,
    pub shared: bool,
}

/// Cost of moving one cache line between two adjacent levels.
#[derive(Debug, Clone, PartialEq)]
pub struct Transfer {
    /// Name of the outer level, e.g. `L2` for the L1-L2 pair.
    pub from: String,
    pub cycles: f64,
    pub penalty: f64,
    /// Whether this transfer overlaps with in-core execution.
    pub overlap: bool,
    /// True when `cycles` was derived from the bandwidth benchmark.
    pub derived: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MachineModel {
    pub name: String,
    pub micro_architecture: String,
    pub clock_hz: f64,
    pub cores: u32,
    pub cache_line: u32,
    pub compiler: String,
    /// Double-precision operations per cycle; an FMA entry of 0 means no FMA unit.
    pub throughput: BTreeMap<OpClass, f64>,
    pub caches: Vec<CacheLevel>,
    /// `transfers[k]` moves lines between level `k` and level `k + 1`, where
    /// level `caches.len()` is main memory.
    pub transfers: Vec<Transfer>,
    /// Memory bandwidth in bytes/s for 1..=cores active cores.
    pub mem_bandwidth: Vec<f64>,
    /// Fraction of each cache's nominal capacity usable for residency.
    pub fill_factor: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LevelDoc {
    level: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    size: Option<Quantity>,
    #[serde(default)]
    shared: bool,
    #[serde(rename = "transfer cycles", default, skip_serializing_if = "Option::is_none")]
    transfer_cycles: Option<f64>,
    #[serde(rename = "penalty cycles", default)]
    penalty_cycles: f64,
    #[serde(default)]
    overlap: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BenchDoc {
    bandwidth: BTreeMap<String, BTreeMap<u32, Quantity>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MachineDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    #[serde(rename = "micro-architecture", default)]
    micro_architecture: String,
    #[serde(rename = "model name", default, skip_serializing_if = "Option::is_none")]
    model_name: Option<String>,
    clock: Quantity,
    #[serde(rename = "cores per socket")]
    cores: u32,
    #[serde(rename = "cacheline size")]
    cache_line: Quantity,
    #[serde(default)]
    compiler: String,
    throughput: BTreeMap<String, Quantity>,
    #[serde(rename = "cache fill factor", default, skip_serializing_if = "Option::is_none")]
    fill_factor: Option<f64>,
    #[serde(rename = "memory hierarchy")]
    hierarchy: Vec<LevelDoc>,
    benchmarks: BenchDoc,
}

pub fn parse_machine(text: &str) -> Result<MachineModel, DescError> {
    parse_machine_named(text, "machine")
}

pub(crate) fn parse_machine_named(text: &str, default_name: &str) -> Result<MachineModel, DescError> {
    let doc: MachineDoc = from_yaml(text, default_name)?;
    let name = doc.name.clone().unwrap_or_else(|| default_name.to_string());
    let fail = |kind: DescErrorKind, msg: String| DescError::new(kind, &name, msg);
    let qty = |q: &Quantity, base: &str, what: &str| q.value(base).map_err(|e| fail(DescErrorKind::Schema, format!("{what}: {e}")));

    let clock_hz = qty(&doc.clock, "Hz", "clock")?;
    let cache_line = qty(&doc.cache_line, "B", "cacheline size")?;
    if !(clock_hz > 0.0) {
        return Err(fail(DescErrorKind::Value, "clock must be positive".into()));
    }
    if !(cache_line >= 8.0) || cache_line.fract() != 0.0 || !(cache_line as u64).is_multiple_of(8) {
        return Err(fail(DescErrorKind::Value, "cacheline size must be a positive multiple of 8 bytes".into()));
    }
    if doc.cores == 0 {
        return Err(fail(DescErrorKind::Value, "cores per socket must be positive".into()));
    }

    let mut throughput = BTreeMap::new();
    for class in OpClass::ALL {
        let v = match doc.throughput.get(class.key()) {
            None if class == OpClass::Fma => 0.0,
            None => return Err(fail(DescErrorKind::Schema, format!("missing throughput entry {}", class.key()))),
            Some(Quantity::Text(t)) if class == OpClass::Fma && t.trim() == "-" => 0.0,
            Some(q) => qty(q, "", class.key())?,
        };
        let ok = if class == OpClass::Fma { v >= 0.0 } else { v > 0.0 };
        if !ok || !v.is_finite() {
            return Err(fail(DescErrorKind::Value, format!("throughput {} must be positive", class.key())));
        }
        throughput.insert(class, v);
    }
    if let Some(unknown) = doc.throughput.keys().find(|k| !OpClass::ALL.iter().any(|c| c.key() == k.as_str())) {
        return Err(fail(DescErrorKind::Schema, format!("unknown throughput class `{unknown}`")));
    }

    let fill_factor = doc.fill_factor.unwrap_or(1.0);
    if !(fill_factor > 0.0 && fill_factor <= 1.0) {
        return Err(fail(DescErrorKind::Value, "cache fill factor must lie in (0, 1]".into()));
    }

    let Some((mem, cache_docs)) = doc.hierarchy.split_last() else {
        return Err(fail(DescErrorKind::Schema, "empty memory hierarchy".into()));
    };
    if cache_docs.is_empty() {
        return Err(fail(DescErrorKind::Schema, "the memory hierarchy needs at least one cache and main memory".into()));
    }
    if mem.size.is_some() {
        return Err(fail(DescErrorKind::Schema, "the last hierarchy entry is main memory and takes no size".into()));
    }
    let mut caches: Vec<CacheLevel> = Vec::new();
    for l in cache_docs {
        let size = l
            .size
            .as_ref()
            .ok_or_else(|| fail(DescErrorKind::Schema, format!("cache {} has no size", l.level)))?;
        let size = qty(size, "B", &l.level)?;
        if !(size > 0.0) || size.fract() != 0.0 {
            return Err(fail(DescErrorKind::Value, format!("cache {} size must be a positive byte count", l.level)));
        }
        if let Some(prev) = caches.last() {
            if size as u64 <= prev.size {
                return Err(fail(
                    DescErrorKind::Value,
                    format!("cache {} is not larger than {}", l.level, prev.name),
                ));
            }
        }
        caches.push(CacheLevel {
            name: l.level.clone(),
            size: size as u64,
            shared: l.shared,
        });
    }
    if let Some(t) = cache_docs[0].transfer_cycles {
        if t != 0.0 {
            return Err(fail(DescErrorKind::Schema, "the first cache level takes no transfer cycles".into()));
        }
    }

    let table = doc
        .benchmarks
        .bandwidth
        .get("MEM")
        .ok_or_else(|| fail(DescErrorKind::Schema, "missing MEM bandwidth benchmark".into()))?;
    if table.is_empty() {
        return Err(fail(DescErrorKind::Value, "empty bandwidth table".into()));
    }
    let mut mem_bandwidth = Vec::new();
    for tau in 1..=doc.cores {
        let q = table
            .get(&tau)
            .ok_or_else(|| fail(DescErrorKind::Value, format!("bandwidth table has no entry for {tau} cores")))?;
        let bw = qty(q, "B/s", "bandwidth")?;
        if !(bw > 0.0) || !bw.is_finite() {
            return Err(fail(DescErrorKind::Value, format!("bandwidth for {tau} cores must be positive")));
        }
        mem_bandwidth.push(bw);
    }
    if let Some(extra) = table.keys().find(|&&t| t == 0 || t > doc.cores) {
        return Err(fail(DescErrorKind::Value, format!("bandwidth entry for {extra} cores is out of range")));
    }

    let mut transfers = Vec::new();
    for l in &doc.hierarchy[1..] {
        let (cycles, derived) = match l.transfer_cycles {
            Some(c) => (c, false),
            None if std::ptr::eq(l, mem) => (cache_line * clock_hz / mem_bandwidth[0], true),
            None => return Err(fail(DescErrorKind::Schema, format!("level {} has no transfer cycles", l.level))),
        };
        if !(cycles >= 0.0) || !cycles.is_finite() || !(l.penalty_cycles >= 0.0) {
            return Err(fail(DescErrorKind::Value, format!("level {} has negative transfer costs", l.level)));
        }
        transfers.push(Transfer {
            from: l.level.clone(),
            cycles,
            penalty: l.penalty_cycles,
            overlap: l.overlap,
            derived,
        });
    }

    Ok(MachineModel {
        name,
        micro_architecture: doc.micro_architecture,
        clock_hz,
        cores: doc.cores,
        cache_line: cache_line as u32,
        compiler: doc.compiler,
        throughput,
        caches,
        transfers,
        mem_bandwidth,
        fill_factor,
    })
}

impl MachineModel {
    /// Double-precision elements per cache line.
    pub fn delta(&self) -> f64 {
        self.cache_line as f64 / 8.0
    }

    pub fn throughput(&self, class: OpClass) -> f64 {
        self.throughput[&class]
    }

    pub fn has_fma(&self) -> bool {
        self.throughput(OpClass::Fma) > 0.0
    }

    /// Names of the residency levels: every cache, then `MEM`.
    pub fn level_names(&self) -> Vec<String> {
        let mut v: Vec<String> = self.caches.iter().map(|c| c.name.clone()).collect();
        v.push("MEM".into());
        v
    }

    /// Best memory bandwidth achievable with at most `tau` active cores.
    pub fn effective_bandwidth(&self, tau: u32) -> f64 {
        self.mem_bandwidth[..tau as usize].iter().cloned().fold(0.0, f64::max)
    }

    /// Usable capacity of cache `level` per core when `tau` cores are active.
    pub fn effective_capacity(&self, level: usize, tau: u32) -> f64 {
        let c = &self.caches[level];
        let per = if c.shared { tau.max(1) as f64 } else { 1.0 };
        c.size as f64 * self.fill_factor / per
    }

    /// Hash over every field that affects predictions. Name, compiler and
    /// micro-architecture label are excluded.
    pub fn fingerprint(&self) -> String {
        let mut canon = format!(
            "clock={:?};cores={};cl={};fill={:?};",
            self.clock_hz, self.cores, self.cache_line, self.fill_factor
        );
        for (k, v) in &self.throughput {
            canon.push_str(&format!("{}={v:?};", k.key()));
        }
        for c in &self.caches {
            canon.push_str(&format!("cache={},{},{};", c.name, c.size, c.shared));
        }
        for t in &self.transfers {
            canon.push_str(&format!("xfer={},{:?},{:?},{};", t.from, t.cycles, t.penalty, t.overlap));
        }
        for bw in &self.mem_bandwidth {
            canon.push_str(&format!("bw={bw:?};"));
        }
        let digest = Sha256::digest(canon.as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn to_yaml(&self) -> String {
        let mut hierarchy: Vec<LevelDoc> = self
            .caches
            .iter()
            .enumerate()
            .map(|(k, c)| LevelDoc {
                level: c.name.clone(),
                size: Some(Quantity::Num(c.size as f64)),
                shared: c.shared,
                transfer_cycles: None,
                penalty_cycles: 0.0,
                overlap: false,
            }
            .with_transfer(k.checked_sub(1).map(|p| &self.transfers[p])))
            .collect();
        let mem_transfer = self.transfers.last().expect("at least one transfer");
        hierarchy.push(
            LevelDoc {
                level: "MEM".into(),
                size: None,
                shared: true,
                transfer_cycles: None,
                penalty_cycles: 0.0,
                overlap: false,
            }
            .with_transfer(Some(mem_transfer)),
        );
        to_yaml(&MachineDoc {
            name: Some(self.name.clone()),
            micro_architecture: self.micro_architecture.clone(),
            model_name: None,
            clock: Quantity::Num(self.clock_hz),
            cores: self.cores,
            cache_line: Quantity::Num(self.cache_line as f64),
            compiler: self.compiler.clone(),
            throughput: self
                .throughput
                .iter()
                .map(|(k, v)| (k.key().to_string(), Quantity::Num(*v)))
                .collect(),
            fill_factor: Some(self.fill_factor),
            hierarchy,
            benchmarks: BenchDoc {
                bandwidth: BTreeMap::from([(
                    "MEM".to_string(),
                    self.mem_bandwidth
                        .iter()
                        .enumerate()
                        .map(|(k, bw)| (k as u32 + 1, Quantity::Num(*bw)))
                        .collect(),
                )]),
            },
        })
    }
}

impl LevelDoc {
    fn with_transfer(mut self, t: Option<&Transfer>) -> LevelDoc {
        if let Some(t) = t {
            self.transfer_cycles = (!t.derived).then_some(t.cycles);
            self.penalty_cycles = t.penalty;
            self.overlap = t.overlap;
        }
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const HSW: &str = r#"
name: HSW
micro-architecture: Haswell EP
model name: Xeon E5-2630 v3
clock: 2.3 GHz
cores per socket: 8
cacheline size: 64 B
compiler: icc 19.0.5
throughput: {ADD: 2, FMA: 1, MUL: 1, DIV: 0.125, LOAD: 2, STORE: 1}
memory hierarchy:
  - {level: L1, size: 32 KiB}
  - {level: L2, size: 256 KiB, transfer cycles: 2}
  - {level: L3, size: 20 MiB, shared: true, transfer cycles: 2}
  - {level: MEM}
benchmarks:
  bandwidth:
    MEM: {1: 73.6 GB/s, 2: 73.6 GB/s, 3: 73.6 GB/s, 4: 73.6 GB/s,
          5: 73.6 GB/s, 6: 73.6 GB/s, 7: 73.6 GB/s, 8: 73.6 GB/s}
"#;

    #[test]
    fn haswell_fields() {
        let m = parse_machine(HSW).unwrap();
        assert_eq!(m.clock_hz, 2.3e9);
        assert_eq!(m.cores, 8);
        assert_eq!(m.caches[0].size, 32768);
        assert_eq!(m.cache_line, 64);
        assert_eq!(m.throughput(OpClass::Add), 2.0);
        assert_eq!(m.throughput(OpClass::Fma), 1.0);
        assert_eq!(m.throughput(OpClass::Mul), 1.0);
        assert_eq!(m.delta(), 8.0);
    }

    #[test]
    fn memory_transfer_cost_from_bandwidth() {
        let m = parse_machine(HSW).unwrap();
        let mem = m.transfers.last().unwrap();
        assert!(mem.derived);
        assert!((mem.cycles - 64.0 * 2.3e9 / 73.6e9).abs() < 1e-12);
        assert!((mem.cycles - 2.0).abs() < 1e-12);
    }

    #[test]
    fn ordering_and_schema_errors() {
        let bad = HSW.replace("size: 256 KiB", "size: 16 KiB");
        assert_eq!(parse_machine(&bad).unwrap_err().kind, DescErrorKind::Value);
        let no_div = HSW.replace("DIV: 0.125, ", "");
        assert_eq!(parse_machine(&no_div).unwrap_err().kind, DescErrorKind::Schema);
        let short = HSW.replace(", 8: 73.6 GB/s", "");
        assert_eq!(parse_machine(&short).unwrap_err().kind, DescErrorKind::Value);
    }

    #[test]
    fn fma_dash_means_absent() {
        let m = parse_machine(&HSW.replace("FMA: 1", "FMA: \"-\"")).unwrap();
        assert!(!m.has_fma());
    }

    #[test]
    fn fingerprint_ignores_labels_only() {
        let m = parse_machine(HSW).unwrap();
        let relabeled = parse_machine(&HSW.replace("icc 19.0.5", "gcc 9").replace("name: HSW", "name: other")).unwrap();
        assert_eq!(m.fingerprint(), relabeled.fingerprint());
        let edited = parse_machine(&HSW.replace("ADD: 2", "ADD: 4")).unwrap();
        assert_ne!(m.fingerprint(), edited.fingerprint());
    }

    #[test]
    fn yaml_round_trip() {
        let m = parse_machine(HSW).unwrap();
        assert_eq!(parse_machine(&m.to_yaml()).unwrap(), m);
    }
}
