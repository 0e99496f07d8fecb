//! Kernel template documents.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{from_yaml, to_yaml, DescError, DescErrorKind};
use crate::codegen::block::{parse_code_block, BlockContext, CodeBlock};
use crate::refexec::{parse_expr, parse_stmt, Expr, Stmt};

#[derive(Debug, Clone, PartialEq)]
pub struct DataStruct {
    pub ty: String,
    pub name: String,
    /// Extents over `s` and `n`; empty for scalars.
    pub dims: Vec<Expr>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelVariantDef {
    pub name: String,
    pub code: CodeBlock,
    pub working_sets: Vec<Expr>,
    pub contains_rhs: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelTemplate {
    pub name: String,
    pub datastructs: Vec<DataStruct>,
    pub computations: BTreeMap<String, Stmt>,
    /// Arrays exchanged after every execution of the template (double buffering).
    pub swap: Option<(String, String)>,
    pub variants: Vec<KernelVariantDef>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VariantDoc {
    name: String,
    code: String,
    #[serde(rename = "working sets")]
    working_sets: serde_yaml::Value,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TemplateDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    datastructs: Vec<String>,
    computations: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    swap: Option<(String, String)>,
    variants: Vec<VariantDoc>,
}

pub fn parse_kernel_template(text: &str) -> Result<KernelTemplate, DescError> {
    parse_kernel_template_named(text, "template")
}

const WS_PROBE_S: std::ops::RangeInclusive<i64> = 1..=8;
const WS_PROBE_N: std::ops::RangeInclusive<i64> = 1..=64;

fn parse_datastruct(decl: &str, doc: &str) -> Result<DataStruct, DescError> {
    let bad = |msg: String| DescError::new(DescErrorKind::Schema, doc, format!("datastruct `{decl}`: {msg}"));
    let head_end = decl.find('[').unwrap_or(decl.len());
    let words: Vec<&str> = decl[..head_end].split_whitespace().collect();
    let [ty @ .., name] = words.as_slice() else {
        return Err(bad("missing name".into()));
    };
    if ty.is_empty() {
        return Err(bad("missing element type".into()));
    }
    let access = format!("{name}{}", &decl[head_end..]);
    let dims = match parse_expr(&access).map_err(|e| bad(e.to_string()))? {
        Expr::Var(_) => Vec::new(),
        Expr::Index { indices, .. } => indices,
        _ => return Err(bad("expected `<type> <name>[dim]...`".into())),
    };
    for d in &dims {
        if let Some(bad_id) = d.identifiers().into_iter().find(|i| i != "s" && i != "n") {
            return Err(bad(format!("dimension uses unknown parameter `{bad_id}`")));
        }
        for s in WS_PROBE_S {
            let v = eval_sn(d, s, 1).map_err(&bad)?;
            if v < 1.0 {
                return Err(bad(format!("dimension `{d}` is not positive")));
            }
        }
    }
    Ok(DataStruct {
        ty: ty.join(" "),
        name: name.to_string(),
        dims,
    })
}

pub(crate) fn eval_sn(e: &Expr, s: i64, n: i64) -> Result<f64, String> {
    e.eval_scalar(&|v| match v {
        "s" => Some(s as f64),
        "n" => Some(n as f64),
        _ => None,
    })
    .map_err(|err| err.to_string())
}

fn working_sets(v: &serde_yaml::Value, doc: &str, variant: &str) -> Result<Vec<Expr>, DescError> {
    let bad = |msg: String| DescError::new(DescErrorKind::Schema, doc, format!("variant {variant}: {msg}"));
    let texts: Vec<String> = match v {
        serde_yaml::Value::Sequence(items) => items
            .iter()
            .map(|i| scalar_text(i).ok_or_else(|| bad("working set entries must be strings".into())))
            .collect::<Result<_, _>>()?,
        // `{ "(s+1)*n+s", "2*n" }` is a flow mapping whose keys carry the sets.
        serde_yaml::Value::Mapping(map) => map
            .iter()
            .map(|(k, val)| match (scalar_text(k), val) {
                (Some(t), serde_yaml::Value::Null) => Ok(t),
                _ => Err(bad("working sets must be a set or list of expressions".into())),
            })
            .collect::<Result<_, _>>()?,
        other => vec![scalar_text(other).ok_or_else(|| bad("working sets must be expressions".into()))?],
    };
    if texts.is_empty() {
        return Err(bad("at least one working set is required".into()));
    }
    let mut out = Vec::new();
    for t in texts {
        let e = parse_expr(&t).map_err(|e| bad(e.to_string()))?;
        if let Some(id) = e.identifiers().into_iter().find(|i| i != "s" && i != "n") {
            return Err(bad(format!("working set `{t}` uses unknown parameter `{id}`")));
        }
        if !e.arrays().is_empty() || e.contains_input() || e.contains_rhs() {
            return Err(bad(format!("working set `{t}` must be an expression over s and n")));
        }
        for s in WS_PROBE_S {
            let mut prev = f64::NEG_INFINITY;
            for n in WS_PROBE_N {
                let v = eval_sn(&e, s, n).map_err(&bad)?;
                if v <= 0.0 {
                    return Err(bad(format!("working set `{t}` is not positive at s={s}, n={n}")));
                }
                if v < prev {
                    return Err(bad(format!("working set `{t}` decreases with n")));
                }
                prev = v;
            }
        }
        out.push(e);
    }
    Ok(out)
}

fn scalar_text(v: &serde_yaml::Value) -> Option<String> {
    match v {
        serde_yaml::Value::String(s) => Some(s.clone()),
        serde_yaml::Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

pub(crate) fn parse_kernel_template_named(text: &str, default_name: &str) -> Result<KernelTemplate, DescError> {
    let doc: TemplateDoc = from_yaml(text, default_name)?;
    let name = doc.name.clone().unwrap_or_else(|| default_name.to_string());
    let datastructs = doc
        .datastructs
        .iter()
        .map(|d| parse_datastruct(d, &name))
        .collect::<Result<Vec<_>, _>>()?;
    for (k, d) in datastructs.iter().enumerate() {
        if datastructs[..k].iter().any(|o| o.name == d.name) {
            return Err(DescError::new(DescErrorKind::Value, &name, format!("datastruct `{}` declared twice", d.name)));
        }
    }
    let mut computations = BTreeMap::new();
    for (id, src) in &doc.computations {
        let stmt = parse_stmt(src)
            .map_err(|e| DescError::new(DescErrorKind::Value, &name, format!("computation {id}: {e}")))?;
        if stmt.value.contains_input() {
            return Err(DescError::new(
                DescErrorKind::Value,
                &name,
                format!("computation {id}: %in may only appear in IVP code"),
            ));
        }
        let mut arrays = stmt.arrays();
        stmt.value.visit(&mut |e| {
            if let Expr::Rhs { input, .. } = e {
                if let Expr::Var(v) = input.as_ref() {
                    arrays.insert(v.clone());
                }
            }
        });
        for a in arrays {
            match datastructs.iter().find(|d| d.name == a) {
                None => {
                    return Err(DescError::new(
                        DescErrorKind::Reference,
                        &name,
                        format!("computation {id} uses undeclared array `{a}`"),
                    ))
                }
                Some(d) if d.dims.is_empty() => {
                    return Err(DescError::new(
                        DescErrorKind::Value,
                        &name,
                        format!("computation {id} indexes scalar `{a}`"),
                    ))
                }
                _ => {}
            }
        }
        computations.insert(id.clone(), stmt);
    }
    if let Some((x, y)) = &doc.swap {
        let dims = |a: &str| datastructs.iter().find(|d| d.name == a).map(|d| d.dims.clone());
        match (dims(x), dims(y)) {
            (Some(dx), Some(dy)) if dx == dy => {}
            (Some(_), Some(_)) => {
                return Err(DescError::new(
                    DescErrorKind::Value,
                    &name,
                    format!("swapped arrays `{x}` and `{y}` differ in shape"),
                ))
            }
            _ => {
                return Err(DescError::new(
                    DescErrorKind::Reference,
                    &name,
                    "swap names an undeclared array",
                ))
            }
        }
    }
    if doc.variants.is_empty() {
        return Err(DescError::new(DescErrorKind::Schema, &name, "a template needs at least one variant"));
    }
    let mut variants: Vec<KernelVariantDef> = Vec::new();
    for v in &doc.variants {
        if variants.iter().any(|o| o.name == v.name) {
            return Err(DescError::new(DescErrorKind::Value, &name, format!("variant `{}` declared twice", v.name)));
        }
        let code = parse_code_block(&v.code, BlockContext::Kernel)
            .map_err(|e| DescError::new(DescErrorKind::Schema, &name, format!("variant {}: {e}", v.name)))?;
        let ids = code.comp_ids();
        if let Some(missing) = ids.iter().find(|id| !computations.contains_key(*id)) {
            return Err(DescError::new(
                DescErrorKind::Reference,
                &name,
                format!("variant {} references unknown computation {missing}", v.name),
            ));
        }
        let contains_rhs = ids.iter().any(|id| computations[id].value.contains_rhs());
        variants.push(KernelVariantDef {
            name: v.name.clone(),
            code,
            working_sets: working_sets(&v.working_sets, &name, &v.name)?,
            contains_rhs,
        });
    }
    Ok(KernelTemplate {
        name,
        datastructs,
        computations,
        swap: doc.swap,
        variants,
    })
}

impl KernelTemplate {
    pub fn contains_rhs(&self) -> bool {
        self.variants.iter().any(|v| v.contains_rhs)
    }

    pub fn variant(&self, name: &str) -> Option<&KernelVariantDef> {
        self.variants.iter().find(|v| v.name == name)
    }

    pub fn datastruct(&self, name: &str) -> Option<&DataStruct> {
        self.datastructs.iter().find(|d| d.name == name)
    }

    pub fn to_yaml(&self) -> String {
        to_yaml(&TemplateDoc {
            name: Some(self.name.clone()),
            datastructs: self
                .datastructs
                .iter()
                .map(|d| {
                    let dims: String = d.dims.iter().map(|e| format!("[{e}]")).collect();
                    format!("{} {}{dims}", d.ty, d.name)
                })
                .collect(),
            computations: self
                .computations
                .iter()
                .map(|(id, s)| (id.clone(), s.to_string()))
                .collect(),
            swap: self.swap.clone(),
            variants: self
                .variants
                .iter()
                .map(|v| VariantDoc {
                    name: v.name.clone(),
                    code: v.code.to_string(),
                    working_sets: serde_yaml::Value::Sequence(
                        v.working_sets
                            .iter()
                            .map(|w| serde_yaml::Value::String(w.to_string()))
                            .collect(),
                    ),
                })
                .collect(),
        })
    }
}
