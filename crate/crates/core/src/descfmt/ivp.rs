//! IVP documents: right-hand-side component blocks and constants.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::{from_yaml, to_yaml, DescError, DescErrorKind};
use crate::refexec::expr::format_f64;
use crate::refexec::{parse_expr, Expr};

#[derive(Debug, Clone, PartialEq)]
pub struct IvpComponent {
    /// 1-based index of the first component, affine in `n`.
    pub first: Expr,
    /// Number of adjacent components, affine in `n`.
    pub size: Expr,
    /// Right-hand side with `%in[...]` as the input-vector placeholder and
    /// `j` as the 0-based component index.
    pub code: Expr,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IvpConstant {
    pub ty: String,
    pub name: String,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AccessDistance {
    Limited(u64),
    Unlimited,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ivp {
    pub name: String,
    pub components: Vec<IvpComponent>,
    pub constants: Vec<IvpConstant>,
    pub access_distance: Option<AccessDistance>,
    pub n: Option<u64>,
    /// Smallest `n` for which every component block is non-empty.
    pub n_min: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum IntOrExpr {
    Int(i64),
    Text(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ComponentDoc {
    first: IntOrExpr,
    size: IntOrExpr,
    code: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum AccessDoc {
    Limited(u64),
    Text(String),
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct IvpDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    components: OneOrMany<ComponentDoc>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    constants: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    access_distance: Option<AccessDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    n: Option<u64>,
}

pub fn parse_ivp(text: &str) -> Result<Ivp, DescError> {
    parse_ivp_named(text, "ivp")
}

fn parse_constant(line: &str, doc: &str) -> Result<IvpConstant, DescError> {
    let bad = |msg: &str| DescError::new(DescErrorKind::Schema, doc, format!("constant `{line}`: {msg}"));
    let (decl, value) = line.split_once('=').ok_or_else(|| bad("expected `<type> <name> = <value>`"))?;
    let words: Vec<&str> = decl.split_whitespace().collect();
    let [ty @ .., name] = words.as_slice() else {
        return Err(bad("missing name"));
    };
    if ty.is_empty() {
        return Err(bad("missing type"));
    }
    let value = parse_expr(value.trim())
        .map_err(|e| bad(&e.to_string()))?
        .eval_scalar(&|_| None)
        .map_err(|_| bad("value must be a finite literal"))?;
    Ok(IvpConstant {
        ty: ty.join(" "),
        name: name.to_string(),
        value,
    })
}

fn index_expr(v: &IntOrExpr, what: &str, doc: &str) -> Result<Expr, DescError> {
    match v {
        IntOrExpr::Int(i) => Ok(Expr::Int(*i)),
        IntOrExpr::Text(t) => {
            parse_expr(t).map_err(|e| DescError::new(DescErrorKind::Schema, doc, format!("{what}: {e}")))
        }
    }
}

/// Integer `(slope, offset)` of an expression affine in `n`.
fn affine(e: &Expr, what: &str, doc: &str) -> Result<(i64, i64), DescError> {
    let (a, b) = e
        .affine_in("n")
        .ok_or_else(|| DescError::new(DescErrorKind::Value, doc, format!("{what} `{e}` must be affine in n")))?;
    if a.fract() != 0.0 || b.fract() != 0.0 {
        return Err(DescError::new(
            DescErrorKind::Value,
            doc,
            format!("{what} `{e}` must have integer coefficients"),
        ));
    }
    Ok((a as i64, b as i64))
}

pub(crate) fn parse_ivp_named(text: &str, default_name: &str) -> Result<Ivp, DescError> {
    let doc: IvpDoc = from_yaml(text, default_name)?;
    let name = doc.name.clone().unwrap_or_else(|| default_name.to_string());
    let constants = doc
        .constants
        .iter()
        .map(|c| parse_constant(c, &name))
        .collect::<Result<Vec<_>, _>>()?;
    for (k, c) in constants.iter().enumerate() {
        if constants[..k].iter().any(|o| o.name == c.name) {
            return Err(DescError::new(
                DescErrorKind::Value,
                &name,
                format!("duplicate constant `{}`", c.name),
            ));
        }
        if ["j", "t", "n"].contains(&c.name.as_str()) {
            return Err(DescError::new(
                DescErrorKind::Value,
                &name,
                format!("constant `{}` shadows a reserved name", c.name),
            ));
        }
    }
    let comp_docs = match doc.components {
        OneOrMany::One(c) => vec![c],
        OneOrMany::Many(v) => v,
    };
    if comp_docs.is_empty() {
        return Err(DescError::new(DescErrorKind::Schema, &name, "no components"));
    }
    let mut components = Vec::new();
    for (k, c) in comp_docs.iter().enumerate() {
        let code = parse_expr(c.code.trim())
            .map_err(|e| DescError::new(DescErrorKind::Value, &name, format!("component {}: {e}", k + 1)))?;
        check_code(&code, &constants, &name, k)?;
        components.push(IvpComponent {
            first: index_expr(&c.first, "first", &name)?,
            size: index_expr(&c.size, "size", &name)?,
            code,
        });
    }
    let access_distance = match doc.access_distance {
        None => None,
        Some(AccessDoc::Limited(d)) => Some(AccessDistance::Limited(d)),
        Some(AccessDoc::Text(t)) if t == "unlimited" => Some(AccessDistance::Unlimited),
        Some(AccessDoc::Text(t)) => {
            return Err(DescError::new(
                DescErrorKind::Schema,
                &name,
                format!("access_distance must be an integer or `unlimited`, got `{t}`"),
            ))
        }
    };
    let n_min = check_tiling(&components, &name)?;
    if let Some(n) = doc.n {
        if n < n_min {
            return Err(DescError::new(
                DescErrorKind::Value,
                &name,
                format!("fixed n = {n} is below the smallest valid size {n_min}"),
            ));
        }
    }
    Ok(Ivp {
        name,
        components,
        constants,
        access_distance,
        n: doc.n,
        n_min,
    })
}

fn check_code(code: &Expr, constants: &[IvpConstant], doc: &str, k: usize) -> Result<(), DescError> {
    let fail = |msg: String| DescError::new(DescErrorKind::Value, doc, format!("component {}: {msg}", k + 1));
    if code.contains_rhs() {
        return Err(fail("%RHS is not allowed in IVP code".into()));
    }
    if let Some(a) = code.arrays().into_iter().next() {
        return Err(fail(format!("array `{a}` is not allowed; read the state through %in")));
    }
    for id in code.identifiers() {
        if !["j", "t", "n"].contains(&id.as_str()) && !constants.iter().any(|c| c.name == id) {
            return Err(fail(format!("unknown identifier `{id}`")));
        }
    }
    let mut bad_rank = false;
    code.visit(&mut |e| {
        if let Expr::Input(idx) = e {
            bad_rank |= idx.len() != 1;
        }
    });
    if bad_rank {
        return Err(fail("%in takes exactly one subscript".into()));
    }
    Ok(())
}

/// Checks that the blocks tile `[1, n]` for every admissible `n` and returns
/// the smallest such `n`.
fn check_tiling(components: &[IvpComponent], doc: &str) -> Result<u64, DescError> {
    let mut n_min: i64 = 1;
    let mut lines = Vec::new();
    for (k, c) in components.iter().enumerate() {
        let first = affine(&c.first, "first", doc)?;
        let size = affine(&c.size, "size", doc)?;
        match size.0 {
            a if a > 0 => n_min = n_min.max((1 - size.1 + a - 1).div_euclid(a)),
            0 if size.1 >= 1 => {}
            _ => {
                return Err(DescError::new(
                    DescErrorKind::Value,
                    doc,
                    format!("component {}: size `{}` is not positive for large n", k + 1, c.size),
                ))
            }
        }
        lines.push((first, size));
    }
    let at = |(a, b): (i64, i64)| a * n_min + b;
    let mut order: Vec<usize> = (0..lines.len()).collect();
    order.sort_by_key(|&k| at(lines[k].0));
    let overlap = |k1: usize, k2: usize| {
        DescError::new(
            DescErrorKind::Tiling,
            doc,
            format!("components {} and {} overlap", k1 + 1, k2 + 1),
        )
    };
    // Next uncovered index as an affine function of n.
    let mut next = (0i64, 1i64);
    let mut prev: Option<usize> = None;
    for &k in &order {
        let (first, size) = lines[k];
        if first != next {
            let gap = at(first) > at(next);
            return Err(match (gap, prev) {
                (false, Some(p)) => overlap(p, k),
                _ => DescError::new(
                    DescErrorKind::Tiling,
                    doc,
                    format!("component {} does not start where the previous block ends", k + 1),
                ),
            });
        }
        next = (first.0 + size.0, first.1 + size.1);
        prev = Some(k);
    }
    if next != (1, 1) {
        return Err(DescError::new(DescErrorKind::Tiling, doc, "components do not end at index n"));
    }
    Ok(n_min as u64)
}

impl IvpComponent {
    /// 0-based index range covered at size `n`.
    pub fn range(&self, n: u64) -> Range<usize> {
        let eval = |e: &Expr| {
            e.eval_scalar(&|v| (v == "n").then_some(n as f64))
                .expect("validated component expression") as i64
        };
        let first = eval(&self.first) - 1;
        let size = eval(&self.size);
        first as usize..(first + size) as usize
    }
}

impl Ivp {
    /// Component ranges at `n`; fails below `n_min` or when `n` differs from a
    /// fixed size.
    pub fn ranges(&self, n: u64) -> Result<Vec<Range<usize>>, DescError> {
        self.check_size(n)?;
        Ok(self.components.iter().map(|c| c.range(n)).collect())
    }

    pub fn check_size(&self, n: u64) -> Result<(), DescError> {
        if n < self.n_min {
            return Err(DescError::new(
                DescErrorKind::Bounds,
                &self.name,
                format!("n = {n} is below the smallest valid size {}", self.n_min),
            ));
        }
        if let Some(fixed) = self.n {
            if fixed != n {
                return Err(DescError::new(
                    DescErrorKind::Bounds,
                    &self.name,
                    format!("the IVP is fixed to n = {fixed}, not {n}"),
                ));
            }
        }
        Ok(())
    }

    pub fn constant(&self, name: &str) -> Option<f64> {
        self.constants.iter().find(|c| c.name == name).map(|c| c.value)
    }

    pub fn to_yaml(&self) -> String {
        let ix = |e: &Expr| match e {
            Expr::Int(i) => IntOrExpr::Int(*i),
            other => IntOrExpr::Text(other.to_string()),
        };
        to_yaml(&IvpDoc {
            name: Some(self.name.clone()),
            components: OneOrMany::Many(
                self.components
                    .iter()
                    .map(|c| ComponentDoc {
                        first: ix(&c.first),
                        size: ix(&c.size),
                        code: c.code.to_string(),
                    })
                    .collect(),
            ),
            constants: self
                .constants
                .iter()
                .map(|c| format!("{} {} = {}", c.ty, c.name, format_f64(c.value)))
                .collect(),
            access_distance: self.access_distance.map(|d| match d {
                AccessDistance::Limited(d) => AccessDoc::Limited(d),
                AccessDistance::Unlimited => AccessDoc::Text("unlimited".into()),
            }),
            n: self.n,
        })
    }
}
