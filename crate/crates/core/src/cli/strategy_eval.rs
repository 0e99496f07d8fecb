//! Comparison of autotuning strategies on measured variant runtimes.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::tune::{ReportEntry, TuneReport};
use super::CliError;
use crate::predict::{rank_thetas, run_strategy, Measurement, Strategy, StrategyOutcome};

/// The five strategies compared by default.
pub fn default_strategies(k: usize) -> Vec<Strategy> {
    vec![
        Strategy::BestVariant,
        Strategy::RunAll,
        Strategy::OffsitePreselect(5.0),
        Strategy::OffsitePreselect(10.0),
        Strategy::RandomSelect { k },
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyComparison {
    pub method: String,
    pub ivp: String,
    pub tau: u32,
    pub n: u64,
    /// Number of measured variants.
    pub variants: usize,
    pub seed: u64,
    pub outcomes: Vec<StrategyOutcome>,
}

/// Evaluates `strategies` for every `(tau, n)` present in `measurements`
/// against the matching ranking of `report`. `method`/`ivp` pick the report
/// entries when the report covers several.
pub fn evaluate(
    report: &TuneReport,
    measurements: &[Measurement],
    method: Option<&str>,
    ivp: Option<&str>,
    strategies: &[Strategy],
    seed: u64,
) -> Result<Vec<StrategyComparison>, CliError> {
    let mut groups: BTreeMap<(u32, u64), BTreeMap<String, f64>> = BTreeMap::new();
    for m in measurements {
        if groups.entry((m.tau, m.n)).or_default().insert(m.variant.clone(), m.seconds).is_some() {
            return Err(CliError::Measurement(format!(
                "variant {} measured twice at tau={}, n={}",
                m.variant, m.tau, m.n
            )));
        }
    }
    if groups.is_empty() {
        return Err(CliError::Measurement("no measurements".into()));
    }
    let mut out = Vec::new();
    for ((tau, n), measured) in groups {
        let matching: Vec<&ReportEntry> = report
            .entries
            .iter()
            .filter(|e| e.tau == tau && e.n == n)
            .filter(|e| method.is_none_or(|m| e.method == m) && ivp.is_none_or(|i| e.ivp == i))
            .collect();
        let e = match matching.as_slice() {
            [e] => *e,
            [] => {
                return Err(CliError::Measurement(format!("report has no ranking for tau={tau}, n={n}")));
            }
            _ => {
                return Err(CliError::Usage(format!(
                    "report has {} rankings for tau={tau}, n={n}; pick one with --method and --ivp",
                    matching.len()
                )))
            }
        };
        for r in &e.ranking {
            if !measured.contains_key(&r.variant) {
                return Err(CliError::Measurement(format!(
                    "no measurement for variant `{}` at tau={tau}, n={n}",
                    r.variant
                )));
            }
        }
        let thetas: Vec<(String, f64)> = e.ranking.iter().map(|r| (r.variant.clone(), r.theta)).collect();
        let sel = rank_thetas(&thetas, report.deviation).map_err(|x| CliError::Model(format!("ranking: {x}")))?;
        let outcomes = strategies
            .iter()
            .map(|&s| run_strategy(s, &measured, &sel, seed).map_err(|x| CliError::Measurement(x.to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        out.push(StrategyComparison {
            method: e.method.clone(),
            ivp: e.ivp.clone(),
            tau,
            n,
            variants: measured.len(),
            seed,
            outcomes,
        });
    }
    Ok(out)
}

fn pct(v: f64) -> String {
    if v == 0.0 {
        "--".into()
    } else {
        format!("{v:.1}%")
    }
}

/// Table with `t_step (loss)`, `|Λ| (overhead)` and the gain over RunAll
/// per strategy.
pub fn comparison_text(cmps: &[StrategyComparison]) -> String {
    let mut out = String::new();
    for c in cmps {
        let _ = writeln!(
            out,
            "method {}  ivp {}  tau {}  n {}  variants {}  seed {}",
            c.method, c.ivp, c.tau, c.n, c.variants, c.seed
        );
        let _ = writeln!(
            out,
            "{:<20} {:<28} {:>22} {:>18} {:>10}",
            "strategy", "chosen", "t_step [s] (loss)", "|L| (overhead)", "gain"
        );
        for o in &c.outcomes {
            let _ = writeln!(
                out,
                "{:<20} {:<28} {:>22} {:>18} {:>10}",
                o.strategy,
                o.chosen,
                format!("{:.4e} ({})", o.t_step, pct(o.loss)),
                format!("{} ({})", o.tested.len(), pct(o.overhead)),
                format!("{:.1}%", o.gain)
            );
        }
        let _ = writeln!(
            out,
            "t_AT charges the best tested variant {} - |L| further timesteps.\n",
            c.variants
        );
    }
    out
}
