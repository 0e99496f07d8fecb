//! Tuning scenarios: one machine plus the methods, IVPs, templates and
//! skeletons to tune over.

use super::{DescError, DescErrorKind, ImplSkeleton, Ivp, KernelTemplate, MachineModel, OdeMethod};

#[derive(Debug, Clone, PartialEq)]
pub struct TuningScenario {
    pub machine: MachineModel,
    pub methods: Vec<OdeMethod>,
    pub ivps: Vec<Ivp>,
    pub templates: Vec<KernelTemplate>,
    pub skeletons: Vec<ImplSkeleton>,
    pub n: Option<u64>,
    pub n_max: Option<u64>,
    pub cores: Vec<u32>,
    pub deviation: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SizingMode {
    Fixed(u64),
    /// Predictions at working-set sample sizes in `[n_min, n_max]`.
    Sampled { n_min: u64, n_max: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedScenario {
    pub machine: MachineModel,
    pub methods: Vec<OdeMethod>,
    pub ivps: Vec<Ivp>,
    /// Only templates used by at least one skeleton, sorted by name.
    pub templates: Vec<KernelTemplate>,
    /// Sorted by name.
    pub skeletons: Vec<ImplSkeleton>,
    pub sizing: SizingMode,
    /// Sorted and deduplicated.
    pub cores: Vec<u32>,
    pub deviation: f64,
}

impl ValidatedScenario {
    pub fn template(&self, name: &str) -> Option<&KernelTemplate> {
        self.templates.iter().find(|t| t.name == name)
    }
}

fn unique_names<'a>(names: impl Iterator<Item = &'a str>, what: &str) -> Result<(), DescError> {
    let mut seen = std::collections::BTreeSet::new();
    for n in names {
        if !seen.insert(n) {
            return Err(DescError::new(DescErrorKind::Value, "scenario", format!("duplicate {what} `{n}`")));
        }
    }
    Ok(())
}

pub fn validate_scenario(s: TuningScenario) -> Result<ValidatedScenario, DescError> {
    let fail = |kind, msg: String| DescError::new(kind, "scenario", msg);
    unique_names(s.methods.iter().map(|m| m.name.as_str()), "method")?;
    unique_names(s.ivps.iter().map(|m| m.name.as_str()), "IVP")?;
    unique_names(s.templates.iter().map(|m| m.name.as_str()), "template")?;
    unique_names(s.skeletons.iter().map(|m| m.name.as_str()), "skeleton")?;
    unique_names(
        s.templates.iter().flat_map(|t| t.variants.iter().map(|v| v.name.as_str())),
        "kernel",
    )?;
    if s.methods.is_empty() {
        return Err(fail(DescErrorKind::Reference, "no ODE method given".into()));
    }
    if s.skeletons.is_empty() {
        return Err(fail(DescErrorKind::Reference, "no skeleton given".into()));
    }
    for sk in &s.skeletons {
        for t in &sk.required_templates {
            if !s.templates.iter().any(|x| &x.name == t) {
                return Err(fail(
                    DescErrorKind::Reference,
                    format!("skeleton {} uses unknown template {t}", sk.name),
                ));
            }
        }
    }
    let mut templates: Vec<KernelTemplate> = s
        .templates
        .into_iter()
        .filter(|t| s.skeletons.iter().any(|sk| sk.required_templates.contains(&t.name)))
        .collect();
    templates.sort_by(|a, b| a.name.cmp(&b.name));
    if templates.iter().any(|t| t.contains_rhs()) && s.ivps.is_empty() {
        return Err(fail(DescErrorKind::Reference, "templates evaluate the IVP but no IVP is given".into()));
    }

    if !(s.deviation >= 0.0 && s.deviation.is_finite()) {
        return Err(fail(DescErrorKind::Bounds, format!("deviation {} must be a non-negative percentage", s.deviation)));
    }
    if s.cores.is_empty() {
        return Err(fail(DescErrorKind::Bounds, "no core counts given".into()));
    }
    for &tau in &s.cores {
        if tau == 0 || tau > s.machine.cores {
            return Err(fail(
                DescErrorKind::Bounds,
                format!("{tau} cores requested but {} has {} cores", s.machine.name, s.machine.cores),
            ));
        }
    }
    let mut cores = s.cores.clone();
    cores.sort_unstable();
    cores.dedup();

    let ivp_fixed: Vec<u64> = s.ivps.iter().filter_map(|i| i.n).collect();
    let n = match (s.n, ivp_fixed.first()) {
        (Some(n), _) => Some(n),
        (None, Some(&f)) if s.n_max.is_none() => Some(f),
        _ => None,
    };
    let sizing = match (n, s.n_max) {
        (Some(_), Some(_)) => return Err(fail(DescErrorKind::Bounds, "give either n or n_max, not both".into())),
        (None, None) => return Err(fail(DescErrorKind::Bounds, "either n or n_max is required".into())),
        (Some(n), None) => {
            for ivp in &s.ivps {
                ivp.check_size(n)?;
            }
            SizingMode::Fixed(n)
        }
        (None, Some(n_max)) => {
            if let Some(ivp) = s.ivps.iter().find(|i| i.n.is_some()) {
                return Err(fail(
                    DescErrorKind::Bounds,
                    format!("IVP {} fixes n, which conflicts with sampling up to n_max", ivp.name),
                ));
            }
            let n_min = s.ivps.iter().map(|i| i.n_min).max().unwrap_or(1).max(1);
            if n_max < n_min {
                return Err(fail(DescErrorKind::Bounds, format!("n_max = {n_max} is below n_min = {n_min}")));
            }
            SizingMode::Sampled { n_min, n_max }
        }
    };
    let mut skeletons = s.skeletons;
    skeletons.sort_by(|a, b| a.name.cmp(&b.name));
    Ok(ValidatedScenario {
        machine: s.machine,
        methods: s.methods,
        ivps: s.ivps,
        templates,
        skeletons,
        sizing,
        cores,
        deviation: s.deviation,
    })
}
