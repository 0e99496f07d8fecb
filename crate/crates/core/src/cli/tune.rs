//! The tuning workflow: enumerate variants, predict kernels, rank variants,
//! select and emit code.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::CliError;
use crate::codegen::{
    count_barriers, emit_analyzer_file, enumerate_variants, generate_variant_code, instantiate, specialize_kernels,
    template_executions, GeneratedKernel, ImplVariant, KernelSet,
};
use crate::descfmt::{Ivp, KernelVariantDef, MachineModel, OdeMethod, SizingMode, ValidatedScenario};
use crate::ecm::{characterize, ecm_multicore, ecm_single, EcmPrediction};
use crate::predict::{
    fit_comm_model, rank_and_select, variant_prediction, CommModel, KernelPrediction, Selection, VariantPrediction,
};
use crate::refexec::Expr;
use crate::store::{PredictionKey, PredictionRecord, RankingKey, Store, NO_IVP};
use crate::wsm;

/// Bytes per double-precision element.
const ELEM_BYTES: u64 = 8;

#[derive(Debug, Clone, Default)]
pub struct TuneOptions {
    /// Barrier benchmark samples `(tau, seconds)`; when absent the stored fit
    /// for the machine is used, or barriers are free.
    pub barrier_samples: Option<Vec<(u32, f64)>>,
    /// Directory receiving `report.json`, `report.txt` and variant sources.
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TuneStats {
    /// Kernel predictions computed by the ECM engine.
    pub ecm_evaluations: usize,
    /// Kernel predictions taken from the store.
    pub reused: usize,
    /// Distinct kernels that needed an ECM evaluation.
    pub evaluated_kernels: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedVariant {
    pub rank: usize,
    pub variant: String,
    pub theta: f64,
    pub t_com: f64,
    pub barriers: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub method: String,
    pub ivp: String,
    pub tau: u32,
    pub n: u64,
    pub ranking: Vec<RankedVariant>,
    pub lambda: Vec<String>,
    /// Emitted sources of the selected variants, relative to the output
    /// directory.
    pub files: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneReport {
    pub machine: String,
    pub fingerprint: String,
    pub frequency: f64,
    pub deviation: f64,
    pub variants: usize,
    pub comm_model: CommModel,
    pub entries: Vec<ReportEntry>,
}

impl TuneReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("reports always serialize");
        s.push('\n');
        s
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "machine {} ({}), {} Hz, deviation {} %, {} variants",
            self.machine, self.fingerprint, self.frequency, self.deviation, self.variants
        );
        let _ = writeln!(
            out,
            "barrier cost: {:e} + {:e} * tau s ({} samples)",
            self.comm_model.intercept, self.comm_model.slope, self.comm_model.samples
        );
        for e in &self.entries {
            let _ = writeln!(out, "\nmethod {}  ivp {}  tau {}  n {}", e.method, e.ivp, e.tau, e.n);
            let _ = writeln!(out, "{:>5}  {:<28} {:>14} {:>14} {:>9}  sel", "rank", "variant", "theta [s]", "t_com [s]", "barriers");
            for r in &e.ranking {
                let mark = if r.rank <= e.lambda.len() { "*" } else { "" };
                let _ = writeln!(
                    out,
                    "{:>5}  {:<28} {:>14.6e} {:>14.6e} {:>9}  {mark}",
                    r.rank, r.variant, r.theta, r.t_com, r.barriers
                );
            }
            for f in &e.files {
                let _ = writeln!(out, "  emitted {f}");
            }
        }
        out
    }
}

/// ECM terms of one freshly evaluated kernel component.
#[derive(Debug, Clone, PartialEq)]
pub struct EcmRecord {
    pub kernel: String,
    pub component: Option<usize>,
    pub tau: u32,
    pub n: u64,
    pub ecm: EcmPrediction,
    pub alpha: f64,
}

#[derive(Debug, Clone)]
pub struct TuneOutcome {
    pub report: TuneReport,
    pub stats: TuneStats,
    pub ecm: Vec<EcmRecord>,
    pub predictions: Vec<VariantPrediction>,
}

fn model(stage: &str, e: impl std::fmt::Display) -> CliError {
    CliError::Model(format!("{stage}: {e}"))
}

fn kernel_defs(sc: &ValidatedScenario) -> BTreeMap<&str, &KernelVariantDef> {
    sc.templates
        .iter()
        .flat_map(|t| t.variants.iter())
        .map(|v| (v.name.as_str(), v))
        .collect()
}

/// System sizes to predict at for `method`: the fixed size, or the sampled
/// midpoints between the union of all kernels' cut points for every core
/// count.
pub fn sizes_for(sc: &ValidatedScenario, method: &OdeMethod) -> Vec<u64> {
    match sc.sizing {
        SizingMode::Fixed(n) => vec![n],
        SizingMode::Sampled { n_min, n_max } => {
            let exprs: Vec<Expr> = kernel_defs(sc).values().flat_map(|v| v.working_sets.iter().cloned()).collect();
            let mut cuts: Vec<u64> = sc
                .cores
                .iter()
                .flat_map(|&tau| wsm::cache_cutpoints(&exprs, method.stages as u64, &sc.machine, ELEM_BYTES, tau))
                .collect();
            cuts.sort_unstable();
            cuts.dedup();
            wsm::sample_sizes(&cuts, n_min, n_max)
        }
    }
}

fn source_hash(specs: &[GeneratedKernel], def: &KernelVariantDef) -> Result<String, CliError> {
    let mut text = emit_analyzer_file(specs).map_err(CliError::Codegen)?;
    for w in &def.working_sets {
        let _ = writeln!(text, "// working set {w}");
    }
    let digest = Sha256::digest(text.as_bytes());
    Ok(digest[..16].iter().map(|b| format!("{b:02x}")).collect())
}

/// Evaluates the ECM model for every component of a kernel and combines the
/// per-component cycles into one prediction.
fn evaluate_kernel(
    m: &MachineModel,
    specs: &[GeneratedKernel],
    def: &KernelVariantDef,
    s: u64,
    n: u64,
    tau: u32,
    ecm_log: &mut Vec<EcmRecord>,
) -> Result<KernelPrediction, CliError> {
    let mut parts = Vec::with_capacity(specs.len());
    for g in specs {
        let c = characterize(g, m.has_fma(), m.delta()).map_err(|e| model("ecm", e))?;
        let elements: Vec<u64> = c.arrays.iter().map(|a| a.elements).collect();
        let residency =
            wsm::residency(&def.working_sets, &elements, s, n, m, ELEM_BYTES, tau).map_err(|e| model("working set", e))?;
        let p = ecm_single(&c, &residency, m).map_err(|e| model("ecm", e))?;
        let alpha = ecm_multicore(&p, tau, m).map_err(|e| model("ecm", e))?;
        ecm_log.push(EcmRecord {
            kernel: g.kernel.clone(),
            component: g.component,
            tau,
            n,
            ecm: p,
            alpha,
        });
        parts.push((alpha, c.beta as f64));
    }
    KernelPrediction::combine(&def.name, tau, n, &parts, m.delta(), m.clock_hz)
        .map_err(|e| model(&format!("kernel {}", def.name), e))
}

fn comm_model(sc: &ValidatedScenario, store: &mut Store, opts: &TuneOptions) -> Result<CommModel, CliError> {
    let fp = sc.machine.fingerprint();
    match &opts.barrier_samples {
        Some(samples) => {
            let cm = fit_comm_model(samples).map_err(|e| model("barrier fit", e))?;
            store.put_comm_model(&fp, cm.clone());
            Ok(cm)
        }
        None => Ok(store.get_comm_model(&fp).cloned().unwrap_or_else(CommModel::zero)),
    }
}

fn code_dir(method: &str, ivp: &str, n: u64) -> String {
    format!("code/{method}_{ivp}_n{n}")
}

/// Runs the whole workflow. The store is updated in memory only; the caller
/// saves it once every stage has succeeded.
pub fn tune(sc: &ValidatedScenario, store: &mut Store, opts: &TuneOptions) -> Result<TuneOutcome, CliError> {
    let m = &sc.machine;
    let fp = m.fingerprint();
    let variants = enumerate_variants(&sc.skeletons, &sc.templates);
    let defs = kernel_defs(sc);
    let cm = comm_model(sc, store, opts)?;
    let mut stats = TuneStats::default();
    let mut ecm_log = Vec::new();
    let mut entries = Vec::new();
    let mut all_predictions = Vec::new();
    let mut emitted: BTreeMap<PathBuf, String> = BTreeMap::new();

    let ivps: Vec<Option<&Ivp>> = if sc.templates.iter().any(|t| t.contains_rhs()) {
        sc.ivps.iter().map(Some).collect()
    } else {
        vec![None]
    };
    for method in &sc.methods {
        let s = method.stages as u64;
        for n in sizes_for(sc, method) {
            for &ivp in &ivps {
                let kset = specialize_kernels(&sc.templates, method, ivp, Some(n)).map_err(CliError::Codegen)?;
                let ivp_name = ivp.map(|i| i.name.as_str());
                let mut hashes = BTreeMap::new();
                for (name, specs) in &kset.kernels {
                    hashes.insert(name.clone(), source_hash(specs, defs[name.as_str()])?);
                }
                for &tau in &sc.cores {
                    let mut kp: BTreeMap<&str, KernelPrediction> = BTreeMap::new();
                    for (name, specs) in &kset.kernels {
                        let def = defs[name.as_str()];
                        let key = PredictionKey::new(name, &fp, &method.name, ivp_name, def.contains_rhs, tau, n, m.clock_hz);
                        let hash = &hashes[name];
                        let pred = match store.get_prediction(&key) {
                            Some(r) if &r.source_hash == hash => {
                                stats.reused += 1;
                                r.prediction.clone()
                            }
                            _ => {
                                let p = evaluate_kernel(m, specs, def, s, n, tau, &mut ecm_log)?;
                                stats.ecm_evaluations += 1;
                                stats.evaluated_kernels.insert(name.clone());
                                store.put_prediction(
                                    key,
                                    PredictionRecord {
                                        prediction: p.clone(),
                                        source_hash: hash.clone(),
                                    },
                                );
                                p
                            }
                        };
                        kp.insert(name.as_str(), pred);
                    }
                    let preds = predict_variants(&variants, sc, method, &kp, &cm, tau)?;
                    let sel = rank_and_select(&preds, sc.deviation).map_err(|e| model("ranking", e))?;
                    let ivp_label = ivp_name.unwrap_or(NO_IVP).to_string();
                    store.put_ranking(
                        RankingKey {
                            machine: fp.clone(),
                            method: method.name.clone(),
                            ivp: ivp_label.clone(),
                            tau,
                            n,
                        },
                        sel.clone(),
                    );
                    let files = match &opts.out_dir {
                        Some(_) => emit_selected(&sel, &variants, sc, method, &kset, &ivp_label, n, &mut emitted)?,
                        None => Vec::new(),
                    };
                    entries.push(entry(method, &ivp_label, tau, n, &sel, &preds, files));
                    all_predictions.extend(preds);
                }
            }
        }
    }

    let report = TuneReport {
        machine: m.name.clone(),
        fingerprint: fp,
        frequency: m.clock_hz,
        deviation: sc.deviation,
        variants: variants.len(),
        comm_model: cm,
        entries,
    };
    if let Some(dir) = &opts.out_dir {
        let io = |e: std::io::Error| CliError::Other(format!("{}: {e}", dir.display()));
        for (rel, code) in &emitted {
            let path = dir.join(rel);
            std::fs::create_dir_all(path.parent().expect("relative file path")).map_err(io)?;
            std::fs::write(&path, code).map_err(io)?;
        }
        std::fs::create_dir_all(dir).map_err(io)?;
        std::fs::write(dir.join("report.json"), report.to_json()).map_err(io)?;
        std::fs::write(dir.join("report.txt"), report.to_text()).map_err(io)?;
    }
    Ok(TuneOutcome {
        report,
        stats,
        ecm: ecm_log,
        predictions: all_predictions,
    })
}

fn predict_variants(
    variants: &[ImplVariant],
    sc: &ValidatedScenario,
    method: &OdeMethod,
    kp: &BTreeMap<&str, KernelPrediction>,
    cm: &CommModel,
    tau: u32,
) -> Result<Vec<VariantPrediction>, CliError> {
    let mut out = Vec::with_capacity(variants.len());
    for v in variants {
        let sk = sc
            .skeletons
            .iter()
            .find(|s| s.name == v.skeleton)
            .expect("variants come from scenario skeletons");
        let mut terms = Vec::new();
        for (template, executions) in template_executions(sk, method) {
            let kernel = v.kernel_for(&template).expect("every skeleton template has a kernel");
            terms.push((&kp[kernel], executions));
        }
        let p = variant_prediction(&v.id, &terms, count_barriers(sk, method), cm, tau)
            .map_err(|e| model(&format!("variant {}", v.id), e))?;
        out.push(p);
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn emit_selected(
    sel: &Selection,
    variants: &[ImplVariant],
    sc: &ValidatedScenario,
    method: &OdeMethod,
    kset: &KernelSet,
    ivp: &str,
    n: u64,
    emitted: &mut BTreeMap<PathBuf, String>,
) -> Result<Vec<String>, CliError> {
    let mut files = Vec::new();
    for r in sel.lambda() {
        let rel = Path::new(&code_dir(&method.name, ivp, n)).join(format!("{}.c", r.variant));
        if !emitted.contains_key(&rel) {
            let v = variants.iter().find(|v| v.id == r.variant).expect("ranked variants are enumerated");
            let sk = sc.skeletons.iter().find(|s| s.name == v.skeleton).expect("known skeleton");
            let inst = instantiate(v, sk, &sc.templates, kset, method).map_err(CliError::Codegen)?;
            emitted.insert(rel.clone(), generate_variant_code(&inst));
        }
        files.push(rel.to_string_lossy().into_owned());
    }
    Ok(files)
}

fn entry(
    method: &OdeMethod,
    ivp: &str,
    tau: u32,
    n: u64,
    sel: &Selection,
    preds: &[VariantPrediction],
    files: Vec<String>,
) -> ReportEntry {
    let by_id: BTreeMap<&str, &VariantPrediction> = preds.iter().map(|p| (p.variant.as_str(), p)).collect();
    ReportEntry {
        method: method.name.clone(),
        ivp: ivp.to_string(),
        tau,
        n,
        ranking: sel
            .ranking
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let p = by_id[r.variant.as_str()];
                RankedVariant {
                    rank: i + 1,
                    variant: r.variant.clone(),
                    theta: r.theta,
                    t_com: p.t_com,
                    barriers: p.barriers,
                }
            })
            .collect(),
        lambda: sel.lambda().iter().map(|r| r.variant.clone()).collect(),
        files,
    }
}
