//! ODE method documents: a Butcher table plus stage, order and corrector counts.

use serde::{Deserialize, Serialize};

use super::{from_yaml, to_yaml, DescError, DescErrorKind};
use crate::refexec::parse_expr;

#[derive(Debug, Clone, PartialEq)]
pub struct OdeMethod {
    pub name: String,
    pub stages: usize,
    pub order: u32,
    pub corrector_steps: u32,
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
}

/// A coefficient: a YAML number or an arithmetic expression string.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum Coef {
    Num(f64),
    Text(String),
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MethodDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    stages: u32,
    order: u32,
    corrector_steps: u32,
    #[serde(rename = "A")]
    a: Vec<Vec<Coef>>,
    b: Vec<Coef>,
    c: Vec<Coef>,
}

fn coef(value: &Coef, name: &str, at: &str) -> Result<f64, DescError> {
    let v = match value {
        Coef::Num(v) => *v,
        Coef::Text(text) => {
            let e = parse_expr(text).map_err(|e| DescError::new(DescErrorKind::Value, name, format!("{at}: {e}")))?;
            e.eval_scalar(&|_| None)
                .map_err(|e| DescError::new(DescErrorKind::Value, name, format!("{at}: {e}")))?
        }
    };
    if !v.is_finite() {
        return Err(DescError::new(DescErrorKind::Value, name, format!("{at} is not finite")));
    }
    Ok(v)
}

pub fn parse_method(text: &str) -> Result<OdeMethod, DescError> {
    parse_method_named(text, "method")
}

pub(crate) fn parse_method_named(text: &str, default_name: &str) -> Result<OdeMethod, DescError> {
    let doc: MethodDoc = from_yaml(text, default_name)?;
    let name = doc.name.unwrap_or_else(|| default_name.to_string());
    let s = doc.stages as usize;
    let arity = |what: &str, got: usize| {
        DescError::new(
            DescErrorKind::Arity,
            &name,
            format!("{what} has {got} entries but the method has {s} stages"),
        )
    };
    if s == 0 {
        return Err(DescError::new(DescErrorKind::Value, &name, "stages must be at least 1"));
    }
    if doc.corrector_steps == 0 {
        return Err(DescError::new(DescErrorKind::Value, &name, "corrector_steps must be at least 1"));
    }
    if doc.order == 0 {
        return Err(DescError::new(DescErrorKind::Value, &name, "order must be at least 1"));
    }
    if doc.a.len() != s {
        return Err(arity("A", doc.a.len()));
    }
    let mut a = Vec::with_capacity(s);
    for (l, row) in doc.a.iter().enumerate() {
        if row.len() != s {
            return Err(arity(&format!("row {l} of A"), row.len()));
        }
        a.push(
            row.iter()
                .enumerate()
                .map(|(i, v)| coef(v, &name, &format!("A[{l}][{i}]")))
                .collect::<Result<Vec<_>, _>>()?,
        );
    }
    if doc.b.len() != s {
        return Err(arity("b", doc.b.len()));
    }
    if doc.c.len() != s {
        return Err(arity("c", doc.c.len()));
    }
    let b = doc.b.iter().enumerate().map(|(i, v)| coef(v, &name, &format!("b[{i}]"))).collect::<Result<_, _>>()?;
    let c = doc.c.iter().enumerate().map(|(i, v)| coef(v, &name, &format!("c[{i}]"))).collect::<Result<_, _>>()?;
    Ok(OdeMethod {
        name,
        stages: s,
        order: doc.order,
        corrector_steps: doc.corrector_steps,
        a,
        b,
        c,
    })
}

impl OdeMethod {
    pub fn to_yaml(&self) -> String {
        let nums = |v: &[f64]| v.iter().map(|x| Coef::Num(*x)).collect::<Vec<_>>();
        to_yaml(&MethodDoc {
            name: Some(self.name.clone()),
            stages: self.stages as u32,
            order: self.order,
            corrector_steps: self.corrector_steps,
            a: self.a.iter().map(|r| nums(r)).collect(),
            b: nums(&self.b),
            c: nums(&self.c),
        })
    }
}
