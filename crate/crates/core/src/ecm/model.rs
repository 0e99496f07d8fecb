//! Single-core and multicore ECM predictions.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{EcmError, KernelCharacterization};
use crate::descfmt::{MachineModel, OpClass};

/// ECM terms in cycles per cache line of work (δ iterations).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EcmPrediction {
    pub kernel: String,
    /// Residency level names, innermost first, ending with `MEM`.
    pub levels: Vec<String>,
    pub t_ol: f64,
    pub t_nol: f64,
    /// Transfer time between level `k` and `k + 1`, for every adjacent pair.
    pub contributions: Vec<f64>,
    pub penalties: Vec<f64>,
    /// Pairs whose transfers overlap with in-core execution and are
    /// therefore left out of `t_data`.
    pub overlap: Vec<bool>,
    /// Accumulated non-overlapping transfer time with data at most `level`
    /// deep; `t_data[0]` is 0.
    pub t_data: Vec<f64>,
    pub t_ecm: Vec<f64>,
    /// Deepest level any array resides in.
    pub level: usize,
    /// Lines per unit of work crossing the memory interface.
    pub mem_cls: f64,
}

impl EcmPrediction {
    /// `T_ECM` at the kernel's residency level.
    pub fn t_ecm_resident(&self) -> f64 {
        self.t_ecm[self.level]
    }

    pub fn memory_level(&self) -> usize {
        self.levels.len() - 1
    }

    /// ECM notation: `{ T_OL || T_nOL | T_L1L2 | ... } cy/CL` followed by
    /// `{ T_ECM^L1 ] T_ECM^L2 ] ... } cy/CL`.
    pub fn notation(&self) -> String {
        let mut out = format!("{{ {} || {}", num(self.t_ol), num(self.t_nol));
        for (k, c) in self.contributions.iter().enumerate() {
            let p = if self.penalties[k] > 0.0 {
                format!(" + {}", num(self.penalties[k]))
            } else {
                String::new()
            };
            let o = if self.overlap[k] { " (ovl)" } else { "" };
            let _ = write!(out, " | {}{p}{o}", num(*c));
        }
        out.push_str(" } cy/CL  {");
        let ecm: Vec<String> = self.t_ecm.iter().map(|v| num(*v)).collect();
        let _ = write!(out, " {} }} cy/CL", ecm.join(" ] "));
        out
    }
}

fn num(v: f64) -> String {
    let r = (v * 100.0).round() / 100.0 + 0.0;
    if r.fract() == 0.0 {
        format!("{r:.0}")
    } else {
        format!("{r}")
    }
}

fn class_cycles(count: f64, class: OpClass, m: &MachineModel, delta: f64) -> Result<f64, EcmError> {
    if count == 0.0 {
        return Ok(0.0);
    }
    let tp = m.throughput.get(&class).copied().unwrap_or(0.0);
    if tp <= 0.0 {
        return Err(EcmError::MissingThroughput {
            machine: m.name.clone(),
            class: class.key().to_string(),
        });
    }
    Ok(count * delta / tp)
}

/// Single-core ECM prediction. `residency[k]` is the level index of
/// `c.arrays[k]` (0 = L1, `caches.len()` = memory).
pub fn ecm_single(c: &KernelCharacterization, residency: &[usize], m: &MachineModel) -> Result<EcmPrediction, EcmError> {
    let delta = m.delta();
    if residency.len() != c.arrays.len() {
        return Err(EcmError::Residency(format!(
            "{} residency entries for {} arrays",
            residency.len(),
            c.arrays.len()
        )));
    }
    let levels = m.level_names();
    let mem = levels.len() - 1;
    if let Some(&bad) = residency.iter().find(|&&r| r > mem) {
        return Err(EcmError::Residency(format!("level {bad} beyond memory level {mem}")));
    }
    let t_ol = [
        (c.adds, OpClass::Add),
        (c.muls, OpClass::Mul),
        (c.fmas, OpClass::Fma),
        (c.divs, OpClass::Div),
    ]
    .iter()
    .map(|&(n, class)| class_cycles(n, class, m, delta))
    .try_fold(0.0f64, |acc, v| v.map(|v| acc.max(v)))?;
    let t_nol = class_cycles(c.loads, OpClass::Load, m, delta)?.max(class_cycles(c.stores, OpClass::Store, m, delta)?);

    let mut contributions = Vec::with_capacity(mem);
    let mut penalties = Vec::with_capacity(mem);
    let mut overlap = Vec::with_capacity(mem);
    let mut t_data = vec![0.0];
    for (k, tr) in m.transfers.iter().enumerate() {
        let cls: f64 = c
            .arrays
            .iter()
            .zip(residency)
            .filter(|(_, &r)| r > k)
            .map(|(a, _)| a.traffic())
            .sum::<f64>()
            * delta;
        let contrib = cls * tr.cycles;
        let penalty = if cls > 0.0 { tr.penalty } else { 0.0 };
        let prev = *t_data.last().expect("seeded");
        t_data.push(if tr.overlap { prev } else { prev + contrib + penalty });
        contributions.push(contrib);
        penalties.push(penalty);
        overlap.push(tr.overlap);
    }
    let t_ecm = t_data.iter().map(|d| t_ol.max(t_nol + d)).collect();
    let mem_cls = c
        .arrays
        .iter()
        .zip(residency)
        .filter(|(_, &r)| r == mem)
        .map(|(a, _)| a.traffic())
        .sum::<f64>()
        * delta;
    Ok(EcmPrediction {
        kernel: c.kernel.clone(),
        levels,
        t_ol,
        t_nol,
        contributions,
        penalties,
        overlap,
        t_data,
        t_ecm,
        level: residency.iter().copied().max().unwrap_or(0),
        mem_cls,
    })
}

/// Memory-transfer cycles per unit of work when `tau` cores share the
/// memory bandwidth.
pub fn saturation_cycles(p: &EcmPrediction, tau: u32, m: &MachineModel) -> f64 {
    if p.level < p.memory_level() || p.mem_cls == 0.0 {
        return 0.0;
    }
    p.mem_cls * m.cache_line as f64 * m.clock_hz / m.effective_bandwidth(tau)
}

/// Cycles per cache line of work with `tau` active cores:
/// `max(T_ECM / tau, T_sat)` for memory-resident data, `T_ECM / tau` otherwise.
pub fn ecm_multicore(p: &EcmPrediction, tau: u32, m: &MachineModel) -> Result<f64, EcmError> {
    if tau == 0 || tau > m.cores {
        return Err(EcmError::Cores { tau, cores: m.cores });
    }
    Ok((p.t_ecm_resident() / tau as f64).max(saturation_cycles(p, tau, m)))
}
