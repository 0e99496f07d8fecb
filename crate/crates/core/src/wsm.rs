//! Working-set model: cache-capacity cut points in `n` and the sample sizes
//! at which predictions are taken.

use crate::descfmt::MachineModel;
use crate::refexec::Expr;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum WsmError {
    #[error("working set `{expr}` is {value} at s={s}, n={n}; it must be positive")]
    NonPositive { expr: String, value: f64, s: u64, n: u64 },
    #[error("working set `{expr}`: {message}")]
    Eval { expr: String, message: String },
}

/// Element count of `expr` at `(s, n)`, rounded up.
pub fn eval_ws(expr: &Expr, s: u64, n: u64) -> Result<u64, WsmError> {
    let v = expr
        .eval_scalar(&|name| match name {
            "s" => Some(s as f64),
            "n" => Some(n as f64),
            _ => None,
        })
        .map_err(|e| WsmError::Eval {
            expr: expr.to_string(),
            message: e.to_string(),
        })?;
    if !(v > 0.0) {
        return Err(WsmError::NonPositive {
            expr: expr.to_string(),
            value: v,
            s,
            n,
        });
    }
    Ok(v.ceil() as u64)
}

const N_LIMIT: u64 = 1 << 50;

fn fits(expr: &Expr, s: u64, n: u64, bytes: u64, capacity: f64) -> bool {
    match eval_ws(expr, s, n) {
        Ok(v) => (v as f64) * (bytes as f64) <= capacity,
        Err(WsmError::NonPositive { .. }) => true,
        Err(_) => false,
    }
}

/// Largest `n` for which `expr` fits into `capacity` bytes, or `None` when no
/// `n` fits or every `n` up to 2^50 fits. Working sets are non-decreasing in `n`.
pub fn max_fitting_n(expr: &Expr, s: u64, bytes: u64, capacity: f64) -> Option<u64> {
    if !fits(expr, s, 1, bytes, capacity) || fits(expr, s, N_LIMIT, bytes, capacity) {
        return None;
    }
    let (mut lo, mut hi) = (1, N_LIMIT);
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if fits(expr, s, mid, bytes, capacity) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(lo)
}

/// For every expression and cache level, the largest `n` whose working set
/// still fits; sorted and deduplicated. Shared caches are divided among `tau`
/// cores.
pub fn cache_cutpoints(exprs: &[Expr], s: u64, m: &MachineModel, elem_bytes: u64, tau: u32) -> Vec<u64> {
    let mut cuts: Vec<u64> = exprs
        .iter()
        .flat_map(|e| {
            (0..m.caches.len()).filter_map(move |k| max_fitting_n(e, s, elem_bytes, m.effective_capacity(k, tau)))
        })
        .collect();
    cuts.sort_unstable();
    cuts.dedup();
    cuts
}

/// Midpoints of `[n_min, c1], (c1, c2], ..., (ck, n_max]`, rounded down.
/// Cut points outside `[n_min, n_max)` are ignored.
pub fn sample_sizes(cuts: &[u64], n_min: u64, n_max: u64) -> Vec<u64> {
    let mut bounds = vec![n_min];
    let mut lo = n_min;
    for &c in cuts {
        if c >= lo && c < n_max {
            bounds.push(c + 1);
            lo = c + 1;
        }
    }
    let mut out = Vec::new();
    for (k, &start) in bounds.iter().enumerate() {
        let end = bounds.get(k + 1).map(|b| b - 1).unwrap_or(n_max);
        let mid = if k == 0 {
            (start + end) / 2
        } else {
            // Range (c, end] written with its exclusive lower bound.
            (start - 1 + end) / 2
        };
        out.push(mid.max(start));
    }
    out
}

/// Residency level of a working set of `elements` doubles: the first cache
/// that holds it, or `caches.len()` for memory.
pub fn level_of(elements: u64, elem_bytes: u64, m: &MachineModel, tau: u32) -> usize {
    let bytes = elements as f64 * elem_bytes as f64;
    (0..m.caches.len())
        .find(|&k| m.effective_capacity(k, tau) >= bytes)
        .unwrap_or(m.caches.len())
}

/// Residency level of every working-set expression at `(s, n)`.
pub fn ws_levels(exprs: &[Expr], s: u64, n: u64, m: &MachineModel, elem_bytes: u64, tau: u32) -> Result<Vec<usize>, WsmError> {
    exprs
        .iter()
        .map(|e| eval_ws(e, s, n).map(|v| level_of(v, elem_bytes, m, tau)))
        .collect()
}

/// Residency of arrays with the given element counts: each array takes the
/// level of the smallest working set that covers it, or of the largest one
/// when none does.
pub fn residency(
    exprs: &[Expr],
    array_elements: &[u64],
    s: u64,
    n: u64,
    m: &MachineModel,
    elem_bytes: u64,
    tau: u32,
) -> Result<Vec<usize>, WsmError> {
    let sizes: Vec<u64> = exprs.iter().map(|e| eval_ws(e, s, n)).collect::<Result<_, _>>()?;
    let Some(&largest) = sizes.iter().max() else {
        return Ok(array_elements.iter().map(|&e| level_of(e, elem_bytes, m, tau)).collect());
    };
    Ok(array_elements
        .iter()
        .map(|&e| {
            let cover = sizes.iter().copied().filter(|&w| w >= e).min().unwrap_or(largest);
            level_of(cover, elem_bytes, m, tau)
        })
        .collect())
}
