//! Autotuning strategies simulated against measured runtimes.

use std::collections::BTreeMap;
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{positive, PredictError, Selection};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Strategy {
    /// The fastest variant is known in advance and run every time.
    BestVariant,
    /// Every variant is run once, then the fastest for the remaining steps.
    RunAll,
    /// Variants within the given percent of the best prediction are tested.
    OffsitePreselect(f64),
    /// `k` variants drawn without replacement are tested.
    RandomSelect { k: usize },
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::BestVariant => write!(f, "BestVariant"),
            Strategy::RunAll => write!(f, "RunAll"),
            Strategy::OffsitePreselect(d) => write!(f, "OffsitePreselect{d}"),
            Strategy::RandomSelect { .. } => write!(f, "RandomSelect"),
        }
    }
}

/// Percent extra time of testing every variant in `tested` compared with
/// running the fastest one as often.
pub fn tuning_overhead(tested: &[f64], t_best: f64) -> Result<f64, PredictError> {
    positive("t_best", t_best)?;
    if tested.is_empty() {
        return Err(PredictError::Empty);
    }
    let k = tested.len() as f64;
    let excess: f64 = tested.iter().map(|t| t - t_best).sum();
    Ok(excess / (k * t_best) * 100.0)
}

/// Percent time saved relative to `t_ra`.
pub fn performance_gain(t_ra: f64, t_at: f64) -> Result<f64, PredictError> {
    positive("t_RA", t_ra)?;
    Ok((t_ra - t_at) / t_ra * 100.0)
}

/// Percent slowdown of `t_chosen` relative to `t_best`.
pub fn performance_loss(t_chosen: f64, t_best: f64) -> Result<f64, PredictError> {
    positive("t_best", t_best)?;
    Ok((t_chosen - t_best) / t_best * 100.0)
}

/// Time of `total` timesteps when the variants in `tested` are each run once
/// and the fastest of them runs the remaining `total - |tested|` steps.
pub fn t_at(tested: &[f64], total: usize) -> Result<f64, PredictError> {
    let best = tested.iter().copied().reduce(f64::min).ok_or(PredictError::Empty)?;
    let rest = total.checked_sub(tested.len()).ok_or_else(|| {
        PredictError::Input(format!("{} variants tested out of {total}", tested.len()))
    })?;
    Ok(tested.iter().sum::<f64>() + rest as f64 * best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyOutcome {
    pub strategy: String,
    /// Variants run while tuning, in evaluation order.
    pub tested: Vec<String>,
    pub chosen: String,
    pub t_step: f64,
    /// Percent slowdown of `chosen` against the measured best variant.
    pub loss: f64,
    pub overhead: f64,
    pub t_at: f64,
    /// Percent gain over running all variants.
    pub gain: f64,
}

fn lookup(measured: &BTreeMap<String, f64>, v: &str) -> Result<f64, PredictError> {
    let t = *measured
        .get(v)
        .ok_or_else(|| PredictError::MissingMeasurement(v.to_string()))?;
    positive("measured runtime", t)
}

fn argmin<'a>(set: &[(&'a String, f64)]) -> (&'a String, f64) {
    *set.iter()
        .min_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(b.0)))
        .expect("non-empty")
}

/// Simulates `strategy` over all measured variants. `selection` supplies the
/// predicted ranking for the offsite strategies; `seed` drives RandomSelect.
pub fn run_strategy(
    strategy: Strategy,
    measured: &BTreeMap<String, f64>,
    selection: &Selection,
    seed: u64,
) -> Result<StrategyOutcome, PredictError> {
    if measured.is_empty() {
        return Err(PredictError::Empty);
    }
    let all: Vec<(&String, f64)> = measured.keys().map(|v| lookup(measured, v).map(|t| (v, t)))
        .collect::<Result<_, _>>()?;
    let total = all.len();
    let (global_best, t_best) = argmin(&all);

    let tested: Vec<(&String, f64)> = match strategy {
        Strategy::BestVariant => vec![(global_best, t_best)],
        Strategy::RunAll => all.clone(),
        Strategy::OffsitePreselect(d) => selection
            .with_deviation(d)
            .lambda()
            .iter()
            .map(|r| {
                let (v, _) = measured
                    .get_key_value(&r.variant)
                    .ok_or_else(|| PredictError::MissingMeasurement(r.variant.clone()))?;
                Ok((v, lookup(measured, v)?))
            })
            .collect::<Result<_, PredictError>>()?,
        Strategy::RandomSelect { k } => {
            if k == 0 {
                return Err(PredictError::Input("RandomSelect needs k > 0".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rand::seq::index::sample(&mut rng, total, k.min(total))
                .into_iter()
                .map(|i| all[i])
                .collect()
        }
    };
    let (chosen, t_step) = argmin(&tested);
    let times: Vec<f64> = tested.iter().map(|t| t.1).collect();
    let t_at = match strategy {
        Strategy::BestVariant => total as f64 * t_best,
        _ => t_at(&times, total)?,
    };
    let t_ra: f64 = all.iter().map(|t| t.1).sum();
    let saved: f64 = match strategy {
        Strategy::BestVariant => all.iter().map(|t| t.1 - t_best).sum(),
        _ => all
            .iter()
            .filter(|a| !tested.iter().any(|t| t.0 == a.0))
            .map(|t| t.1 - t_step)
            .sum(),
    };
    positive("t_RA", t_ra)?;
    Ok(StrategyOutcome {
        strategy: strategy.to_string(),
        tested: tested.iter().map(|t| t.0.clone()).collect(),
        chosen: chosen.clone(),
        t_step,
        loss: performance_loss(t_step, t_best)?,
        overhead: tuning_overhead(&times, t_step)?,
        t_at,
        gain: saved / t_ra * 100.0,
    })
}

/// Reads `variant,tau,n,seconds` rows.
pub fn read_measurements(text: &str) -> Result<Vec<Measurement>, PredictError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    rdr.deserialize::<Measurement>()
        .map(|r| r.map_err(|e| PredictError::Input(e.to_string())))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub variant: String,
    pub tau: u32,
    pub n: u64,
    pub seconds: f64,
}
