//! Implementation variants: enumeration, barrier counting, instantiation
//! and whole-timestep source emission.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::block::Node;
use super::kernel::{declaration, ArrayDecl, GeneratedKernel, KernelSet};
use super::CodegenError;
use crate::descfmt::{ImplSkeleton, KernelTemplate, OdeMethod};
use crate::refexec::Expr;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ImplVariant {
    pub id: String,
    pub skeleton: String,
    /// `(template, kernel)` in the skeleton's required-template order.
    pub kernel_choice: Vec<(String, String)>,
}

impl ImplVariant {
    pub fn kernel_for(&self, template: &str) -> Option<&str> {
        self.kernel_choice
            .iter()
            .find(|(t, _)| t == template)
            .map(|(_, k)| k.as_str())
    }
}

/// Skeleton name followed by the chosen kernel of every template that offers
/// more than one, with underscores removed: `A_LCjli_APRXji`.
fn variant_id(skeleton: &str, choice: &[(String, String)], templates: &[&KernelTemplate]) -> String {
    let mut id = skeleton.to_string();
    for ((_, kernel), t) in choice.iter().zip(templates) {
        if t.variants.len() > 1 {
            id.push('_');
            id.extend(kernel.chars().filter(|&c| c != '_'));
        }
    }
    id
}

/// Cartesian product over each skeleton's required templates, sorted by id.
/// Skeletons that reference a missing template contribute nothing.
pub fn enumerate_variants(skeletons: &[ImplSkeleton], templates: &[KernelTemplate]) -> Vec<ImplVariant> {
    let mut out = Vec::new();
    for sk in skeletons {
        let Some(ts) = sk
            .required_templates
            .iter()
            .map(|name| templates.iter().find(|t| &t.name == name))
            .collect::<Option<Vec<_>>>()
        else {
            continue;
        };
        let mut partial: Vec<Vec<(String, String)>> = vec![Vec::new()];
        for t in &ts {
            partial = partial
                .into_iter()
                .flat_map(|p| {
                    t.variants.iter().map(move |v| {
                        let mut next = p.clone();
                        next.push((t.name.clone(), v.name.clone()));
                        next
                    })
                })
                .collect();
        }
        for choice in partial {
            out.push(ImplVariant {
                id: variant_id(&sk.name, &choice, &ts),
                skeleton: sk.name.clone(),
                kernel_choice: choice,
            });
        }
    }
    out.sort();
    out
}

fn trips(e: &Expr, method: &OdeMethod) -> u64 {
    let v = e
        .eval_scalar(&|name| match name {
            "s" => Some(method.stages as f64),
            "m" => Some(method.corrector_steps as f64),
            _ => None,
        })
        .unwrap_or(0.0);
    if v > 0.0 {
        v.floor() as u64
    } else {
        0
    }
}

fn walk_counts(nodes: &[Node], method: &OdeMethod, mult: u64, barriers: &mut u64, kernels: &mut BTreeMap<String, u64>) {
    for n in nodes {
        match n {
            Node::Loop(l) => walk_counts(&l.body, method, mult * trips(&l.trips, method), barriers, kernels),
            Node::Comm(_) => *barriers += mult,
            Node::KernelRef(t) => *kernels.entry(t.clone()).or_default() += mult,
            Node::Comp(_) | Node::Pragma(_) => {}
        }
    }
}

/// Barrier executions per timestep.
pub fn count_barriers(sk: &ImplSkeleton, method: &OdeMethod) -> u64 {
    let mut barriers = 0;
    walk_counts(&sk.code.nodes, method, 1, &mut barriers, &mut BTreeMap::new());
    barriers
}

/// Executions of each template per timestep.
pub fn template_executions(sk: &ImplSkeleton, method: &OdeMethod) -> BTreeMap<String, u64> {
    let mut kernels = BTreeMap::new();
    walk_counts(&sk.code.nodes, method, 1, &mut 0, &mut kernels);
    kernels
}

#[derive(Debug, Clone, PartialEq)]
pub enum VNode {
    Loop {
        var: String,
        trips: u64,
        note: Option<String>,
        body: Vec<VNode>,
    },
    Barrier,
    Kernel {
        template: String,
        kernel: String,
        /// One entry per IVP component for IVP-evaluating kernels.
        specs: Vec<GeneratedKernel>,
        swap: Option<(String, String)>,
    },
}

/// A skeleton with every `%KERNEL` replaced by specialized kernel code.
#[derive(Debug, Clone, PartialEq)]
pub struct VariantInstance {
    pub variant: ImplVariant,
    pub method: String,
    pub ivp: Option<String>,
    pub n: u64,
    pub body: Vec<VNode>,
    pub arrays: Vec<ArrayDecl>,
    pub scalars: Vec<String>,
}

impl VariantInstance {
    pub fn barrier_executions(&self) -> u64 {
        fn go(nodes: &[VNode], mult: u64) -> u64 {
            nodes
                .iter()
                .map(|n| match n {
                    VNode::Barrier => mult,
                    VNode::Loop { trips, body, .. } => go(body, mult * trips),
                    VNode::Kernel { .. } => 0,
                })
                .sum()
        }
        go(&self.body, 1)
    }
}

pub fn instantiate(
    variant: &ImplVariant,
    skeleton: &ImplSkeleton,
    templates: &[KernelTemplate],
    kernels: &KernelSet,
    method: &OdeMethod,
) -> Result<VariantInstance, CodegenError> {
    let fail = |message: String| CodegenError::Variant {
        variant: variant.id.clone(),
        message,
    };
    if variant.skeleton != skeleton.name {
        return Err(fail(format!("belongs to skeleton {}, not {}", variant.skeleton, skeleton.name)));
    }
    if kernels.method != method.name {
        return Err(fail(format!("kernels were specialized for {}, not {}", kernels.method, method.name)));
    }
    let n = kernels.n.ok_or_else(|| fail("variants need a fixed n".into()))?;
    let mut arrays: Vec<ArrayDecl> = Vec::new();
    let mut scalars: Vec<String> = Vec::new();

    fn build(
        nodes: &[Node],
        ctx: &mut dyn FnMut(&str) -> Result<VNode, CodegenError>,
        method: &OdeMethod,
    ) -> Result<Vec<VNode>, CodegenError> {
        nodes
            .iter()
            .filter_map(|node| match node {
                Node::Loop(l) => Some(build(&l.body, ctx, method).map(|body| VNode::Loop {
                    var: l.var.clone(),
                    trips: trips(&l.trips, method),
                    note: {
                        let ids = l.trips.identifiers();
                        let mut parts = Vec::new();
                        if ids.contains("s") {
                            parts.push(format!("s={}", method.stages));
                        }
                        if ids.contains("m") {
                            parts.push(format!("m={}", method.corrector_steps));
                        }
                        (!parts.is_empty()).then(|| parts.join("; "))
                    },
                    body,
                })),
                Node::Comm(_) => Some(Ok(VNode::Barrier)),
                Node::KernelRef(t) => Some(ctx(t)),
                Node::Comp(_) | Node::Pragma(_) => None,
            })
            .collect()
    }

    let mut resolve = |tname: &str| -> Result<VNode, CodegenError> {
        let kernel = variant
            .kernel_for(tname)
            .ok_or_else(|| fail(format!("no kernel chosen for template {tname}")))?;
        let tmpl = templates
            .iter()
            .find(|t| t.name == tname)
            .ok_or_else(|| fail(format!("unknown template {tname}")))?;
        let specs = kernels
            .kernels
            .get(kernel)
            .ok_or_else(|| fail(format!("kernel {kernel} has not been specialized")))?
            .clone();
        for g in &specs {
            for a in &g.arrays {
                if !arrays.iter().any(|x| x.name == a.name) {
                    arrays.push(a.clone());
                }
            }
            for s in &g.scalars {
                if !scalars.contains(s) {
                    scalars.push(s.clone());
                }
            }
        }
        if let Some((x, y)) = &tmpl.swap {
            for name in [x, y] {
                if !arrays.iter().any(|a| &a.name == name) {
                    let d = tmpl.datastruct(name).expect("validated swap target");
                    let sub = |e: &Expr| {
                        e.substitute(&|v| match v {
                            "s" => Some(Expr::Int(method.stages as i64)),
                            "n" => Some(Expr::Int(n as i64)),
                            _ => None,
                        })
                        .simplify()
                    };
                    arrays.push(ArrayDecl {
                        ty: d.ty.clone(),
                        name: d.name.clone(),
                        dims: d.dims.iter().map(sub).collect(),
                        note: String::new(),
                    });
                }
            }
        }
        Ok(VNode::Kernel {
            template: tname.to_string(),
            kernel: kernel.to_string(),
            specs,
            swap: tmpl.swap.clone(),
        })
    };
    let body = build(&skeleton.code.nodes, &mut resolve, method)?;
    scalars.sort();
    Ok(VariantInstance {
        variant: variant.clone(),
        method: method.name.clone(),
        ivp: kernels.ivp.clone(),
        n,
        body,
        arrays,
        scalars,
    })
}

fn swapped(nodes: &[VNode], out: &mut Vec<String>) {
    for n in nodes {
        match n {
            VNode::Kernel { swap: Some((a, b)), .. } => {
                for x in [a, b] {
                    if !out.contains(x) {
                        out.push(x.clone());
                    }
                }
            }
            VNode::Loop { body, .. } => swapped(body, out),
            _ => {}
        }
    }
}

fn pointer_suffix(a: &ArrayDecl) -> String {
    a.dims[1..].iter().map(|d| format!("[{d}]")).collect()
}

fn write_vnodes(nodes: &[VNode], arrays: &[ArrayDecl], out: &mut String, depth: usize) {
    let pad = "  ".repeat(depth);
    for n in nodes {
        match n {
            VNode::Barrier => out.push_str("#pragma omp barrier\n"),
            VNode::Loop { var, trips, note, body } => {
                let note = note.as_ref().map(|n| format!(" // {n}")).unwrap_or_default();
                let _ = writeln!(out, "{pad}for (int {var}=0; {var}<{trips}; ++{var}) {{{note}");
                write_vnodes(body, arrays, out, depth + 1);
                let _ = writeln!(out, "{pad}}}");
            }
            VNode::Kernel {
                template,
                kernel,
                specs,
                swap,
            } => {
                let _ = writeln!(out, "{pad}// Kernel {kernel} (template {template})");
                for g in specs {
                    if let (Some(k), Some(ivp)) = (g.component, &g.ivp) {
                        let _ = writeln!(out, "{pad}// {ivp} component {}", k + 1);
                    }
                    g.write_body(out, depth);
                }
                if let Some((a, b)) = swap {
                    let decl = arrays.iter().find(|d| &d.name == a).expect("swapped array declared");
                    let _ = writeln!(
                        out,
                        "{pad}{{ {} (*swap_tmp){} = {a}; {a} = {b}; {b} = swap_tmp; }}",
                        decl.ty,
                        pointer_suffix(decl)
                    );
                }
            }
        }
    }
}

/// C source of one timestep of the variant, with OpenMP barrier directives.
pub fn generate_variant_code(inst: &VariantInstance) -> String {
    let mut out = String::new();
    let ivp = inst.ivp.as_deref().unwrap_or("none");
    let _ = writeln!(
        out,
        "// Variant {}: method {}, IVP {ivp}, n={}",
        inst.variant.id, inst.method, inst.n
    );
    let mut swaps = Vec::new();
    swapped(&inst.body, &mut swaps);
    for a in &inst.arrays {
        if swaps.contains(&a.name) && !a.dims.is_empty() {
            let dims: String = a.dims.iter().map(|d| format!("[{d}]")).collect();
            let _ = writeln!(out, "static {} {}_data{dims};", a.ty, a.name);
            let _ = writeln!(
                out,
                "static {} (*{}){} = {}_data;",
                a.ty,
                a.name,
                pointer_suffix(a),
                a.name
            );
        } else {
            let _ = writeln!(out, "static {}", declaration(a));
        }
    }
    let params: Vec<String> = inst.scalars.iter().map(|s| format!("double {s}")).collect();
    let _ = writeln!(out, "\nvoid timestep({}) {{", params.join(", "));
    write_vnodes(&inst.body, &inst.arrays, &mut out, 1);
    out.push_str("}\n");
    out
}
