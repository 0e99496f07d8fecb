//! Kernel and variant runtime predictions, barrier cost regression, ranking
//! and selection, and autotuning strategy evaluation.

mod strategy;

use serde::{Deserialize, Serialize};

pub use strategy::{
    performance_gain, performance_loss, read_measurements, run_strategy, t_at, tuning_overhead, Measurement, Strategy,
    StrategyOutcome,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PredictError {
    #[error("{what} must be positive, got {value}")]
    NonPositive { what: &'static str, value: f64 },
    #[error("barrier samples need at least two distinct thread counts")]
    DegenerateSamples,
    #[error("predictions mix {what}: {a} and {b}")]
    Mixed { what: &'static str, a: u64, b: u64 },
    #[error("no predictions to rank")]
    Empty,
    #[error("no measurement for variant `{0}`")]
    MissingMeasurement(String),
    #[error("{0}")]
    Input(String),
}

fn positive(what: &'static str, value: f64) -> Result<f64, PredictError> {
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(PredictError::NonPositive { what, value })
    }
}

/// Seconds for `beta` iterations at `alpha` cycles per cache line of `delta`
/// elements on a core clocked at `f` Hz.
pub fn kernel_runtime(alpha: f64, beta: f64, delta: f64, f: f64) -> Result<f64, PredictError> {
    positive("alpha", alpha)?;
    positive("beta", beta)?;
    positive("delta", delta)?;
    positive("frequency", f)?;
    Ok(alpha * beta / (delta * f))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelPrediction {
    pub kernel: String,
    pub tau: u32,
    pub n: u64,
    /// Cycles per cache line at `tau` cores.
    pub alpha: f64,
    pub beta: f64,
    pub delta: f64,
    pub frequency: f64,
    pub phi: f64,
}

impl KernelPrediction {
    pub fn new(kernel: &str, tau: u32, n: u64, alpha: f64, beta: f64, delta: f64, frequency: f64) -> Result<Self, PredictError> {
        Ok(KernelPrediction {
            kernel: kernel.to_string(),
            tau,
            n,
            alpha,
            beta,
            delta,
            frequency,
            phi: kernel_runtime(alpha, beta, delta, frequency)?,
        })
    }

    /// Combines per-component predictions of one kernel into a single record
    /// whose `alpha` is the iteration-weighted mean.
    pub fn combine(kernel: &str, tau: u32, n: u64, parts: &[(f64, f64)], delta: f64, frequency: f64) -> Result<Self, PredictError> {
        let beta: f64 = parts.iter().map(|p| p.1).sum();
        positive("beta", beta)?;
        let alpha = parts.iter().map(|(a, b)| a * b).sum::<f64>() / beta;
        KernelPrediction::new(kernel, tau, n, alpha, beta, delta, frequency)
    }
}

/// Barrier cost per synchronization as a linear function of thread count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommModel {
    pub intercept: f64,
    pub slope: f64,
    pub samples: usize,
    pub residual: f64,
    pub tau_min: u32,
    pub tau_max: u32,
}

impl CommModel {
    /// A model charging nothing for barriers.
    pub fn zero() -> CommModel {
        CommModel {
            intercept: 0.0,
            slope: 0.0,
            samples: 0,
            residual: 0.0,
            tau_min: 1,
            tau_max: 1,
        }
    }

    /// Seconds per barrier; `tau` is clamped to the fitted range and the
    /// result to non-negative values.
    pub fn barrier_cost(&self, tau: u32) -> f64 {
        let t = tau.clamp(self.tau_min, self.tau_max.max(self.tau_min)) as f64;
        (self.intercept + self.slope * t).max(0.0)
    }
}

/// Ordinary least squares fit of `seconds = a + b * tau`.
pub fn fit_comm_model(samples: &[(u32, f64)]) -> Result<CommModel, PredictError> {
    let tau_min = samples.iter().map(|s| s.0).min().ok_or(PredictError::DegenerateSamples)?;
    let tau_max = samples.iter().map(|s| s.0).max().unwrap_or(tau_min);
    if tau_min == tau_max {
        return Err(PredictError::DegenerateSamples);
    }
    if let Some(s) = samples.iter().find(|s| !s.1.is_finite()) {
        return Err(PredictError::Input(format!("barrier time {} at tau={}", s.1, s.0)));
    }
    let k = samples.len() as f64;
    let mx = samples.iter().map(|s| s.0 as f64).sum::<f64>() / k;
    let my = samples.iter().map(|s| s.1).sum::<f64>() / k;
    let sxx: f64 = samples.iter().map(|s| (s.0 as f64 - mx).powi(2)).sum();
    let sxy: f64 = samples.iter().map(|s| (s.0 as f64 - mx) * (s.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual = samples
        .iter()
        .map(|s| (s.1 - intercept - slope * s.0 as f64).powi(2))
        .sum::<f64>()
        .sqrt();
    Ok(CommModel {
        intercept,
        slope,
        samples: samples.len(),
        residual,
        tau_min,
        tau_max,
    })
}

/// Reads `tau,seconds` rows.
pub fn read_barrier_csv(text: &str) -> Result<Vec<(u32, f64)>, PredictError> {
    #[derive(Deserialize)]
    struct Row {
        tau: u32,
        seconds: f64,
    }
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    rdr.deserialize::<Row>()
        .map(|r| r.map(|r| (r.tau, r.seconds)).map_err(|e| PredictError::Input(e.to_string())))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelTerm {
    pub kernel: String,
    /// Executions per timestep.
    pub executions: u64,
    pub phi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantPrediction {
    pub variant: String,
    pub tau: u32,
    pub n: u64,
    pub theta: f64,
    pub kernels: Vec<KernelTerm>,
    pub t_com: f64,
    pub barriers: u64,
}

impl VariantPrediction {
    /// `Σ executions·φ + t_com`, summed in stored order.
    pub fn recompute_theta(&self) -> f64 {
        self.kernels.iter().map(|k| k.executions as f64 * k.phi).sum::<f64>() + self.t_com
    }
}

/// Runtime of one timestep: every kernel's `φ` times its executions plus
/// `barriers` synchronizations.
pub fn variant_prediction(
    variant: &str,
    kernels: &[(&KernelPrediction, u64)],
    barriers: u64,
    cm: &CommModel,
    tau: u32,
) -> Result<VariantPrediction, PredictError> {
    let mut n = None;
    for (k, _) in kernels {
        if k.tau != tau {
            return Err(PredictError::Mixed {
                what: "core counts",
                a: tau as u64,
                b: k.tau as u64,
            });
        }
        match n {
            None => n = Some(k.n),
            Some(v) if v != k.n => return Err(PredictError::Mixed { what: "sizes", a: v, b: k.n }),
            _ => {}
        }
    }
    let mut p = VariantPrediction {
        variant: variant.to_string(),
        tau,
        n: n.unwrap_or(0),
        theta: 0.0,
        kernels: kernels
            .iter()
            .map(|(k, e)| KernelTerm {
                kernel: k.kernel.clone(),
                executions: *e,
                phi: k.phi,
            })
            .collect(),
        t_com: barriers as f64 * cm.barrier_cost(tau),
        barriers,
    };
    p.theta = p.recompute_theta();
    Ok(p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranked {
    pub variant: String,
    pub theta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    /// Ascending by `theta`, ties by variant id.
    pub ranking: Vec<Ranked>,
    pub deviation: f64,
    /// Length of the selected prefix of `ranking`.
    pub selected: usize,
}

impl Selection {
    pub fn lambda(&self) -> &[Ranked] {
        &self.ranking[..self.selected]
    }

    pub fn best(&self) -> &Ranked {
        &self.ranking[0]
    }

    /// The prefix within `deviation` percent of the best, for another bound.
    pub fn with_deviation(&self, deviation: f64) -> Selection {
        let bound = self.ranking[0].theta * (1.0 + deviation / 100.0);
        Selection {
            ranking: self.ranking.clone(),
            deviation,
            selected: self.ranking.iter().take_while(|r| r.theta <= bound).count().max(1),
        }
    }
}

/// Ranks `(variant, theta)` pairs and selects those within `deviation`
/// percent of the best.
pub fn rank_thetas(thetas: &[(String, f64)], deviation: f64) -> Result<Selection, PredictError> {
    if thetas.is_empty() {
        return Err(PredictError::Empty);
    }
    if !(deviation >= 0.0 && deviation.is_finite()) {
        return Err(PredictError::Input(format!("deviation {deviation} must be a non-negative percentage")));
    }
    if let Some((v, t)) = thetas.iter().find(|(_, t)| t.is_nan()) {
        return Err(PredictError::Input(format!("variant {v} has runtime {t}")));
    }
    let mut ranking: Vec<Ranked> = thetas
        .iter()
        .map(|(v, t)| Ranked {
            variant: v.clone(),
            theta: *t,
        })
        .collect();
    ranking.sort_by(|a, b| a.theta.total_cmp(&b.theta).then_with(|| a.variant.cmp(&b.variant)));
    Ok(Selection {
        ranking,
        deviation,
        selected: 0,
    }
    .with_deviation(deviation))
}

pub fn rank_and_select(preds: &[VariantPrediction], deviation: f64) -> Result<Selection, PredictError> {
    let first = preds.first().ok_or(PredictError::Empty)?;
    for p in preds {
        if p.tau != first.tau {
            return Err(PredictError::Mixed {
                what: "core counts",
                a: first.tau as u64,
                b: p.tau as u64,
            });
        }
        if p.n != first.n {
            return Err(PredictError::Mixed {
                what: "sizes",
                a: first.n,
                b: p.n,
            });
        }
    }
    let thetas: Vec<(String, f64)> = preds.iter().map(|p| (p.variant.clone(), p.theta)).collect();
    rank_thetas(&thetas, deviation)
}

#[cfg(test)]
mod tests;
