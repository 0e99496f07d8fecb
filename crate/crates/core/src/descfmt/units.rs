//! Quantities such as `2.3 GHz`, `32 kB` or `73.6 GB/s`.

use serde::{Deserialize, Serialize};

/// A number, or a string holding a number with an optional unit suffix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Quantity {
    Num(f64),
    Text(String),
}

const PREFIXES: &[(&str, f64)] = &[
    ("Ki", 1024.0),
    ("Mi", 1024.0 * 1024.0),
    ("Gi", 1024.0 * 1024.0 * 1024.0),
    ("k", 1e3),
    ("K", 1e3),
    ("M", 1e6),
    ("G", 1e9),
    ("T", 1e12),
];

impl Quantity {
    /// Value in base units. `base` is the expected unit (`Hz`, `B`, `B/s`);
    /// a bare number or a bare unit means a factor of one.
    pub fn value(&self, base: &str) -> Result<f64, String> {
        match self {
            Quantity::Num(v) => Ok(*v),
            Quantity::Text(text) => {
                let t = text.trim();
                let split = t
                    .find(|c: char| !(c.is_ascii_digit() || c == '.' || c == 'e' || c == 'E' || c == '-' || c == '+'))
                    .unwrap_or(t.len());
                let (num, unit) = t.split_at(split);
                let num: f64 = num.trim().parse().map_err(|_| format!("malformed quantity `{text}`"))?;
                let unit = unit.trim();
                if unit.is_empty() || unit == base {
                    return Ok(num);
                }
                for (p, factor) in PREFIXES {
                    if unit.strip_prefix(p) == Some(base) {
                        return Ok(num * factor);
                    }
                }
                Err(format!("unit of `{text}` is not a multiple of {base}"))
            }
        }
    }
}
