//! Specialization of kernel variants on an ODE method, an IVP component and
//! a system size.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use super::block::Node;
use super::CodegenError;
use crate::descfmt::{Ivp, KernelTemplate, KernelVariantDef, OdeMethod};
use crate::refexec::interp::ProgramNode;
use crate::refexec::{BinOp, Expr, Stmt};

#[derive(Debug, Clone, PartialEq)]
pub struct KLoop {
    pub var: String,
    pub start: Expr,
    pub trips: Expr,
    pub body: Vec<KNode>,
    /// Annotations printed after the loop header.
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum KNode {
    Loop(KLoop),
    Stmt(Stmt),
    Pragma(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArrayDecl {
    pub ty: String,
    pub name: String,
    pub dims: Vec<Expr>,
    /// Parameters the extents were specialized from, e.g. `s=4; n=161`.
    pub note: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedKernel {
    pub template: String,
    pub kernel: String,
    pub method: String,
    /// Set only for kernels that evaluate the IVP.
    pub ivp: Option<String>,
    /// 0-based IVP component index.
    pub component: Option<usize>,
    pub n: Option<u64>,
    pub s: usize,
    /// Arrays referenced by the specialized code, in declaration order.
    pub arrays: Vec<ArrayDecl>,
    /// Free scalars such as `h` and `t`.
    pub scalars: Vec<String>,
    pub body: Vec<KNode>,
    /// Innermost iterations: the sum, over loop bodies holding statements, of
    /// the product of enclosing trip counts.
    pub beta: Expr,
    pub contains_rhs: bool,
}

/// All specialized kernels of a set of templates for one (method, IVP, n).
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSet {
    pub method: String,
    pub ivp: Option<String>,
    pub n: Option<u64>,
    /// Kernel name to its specializations, one per IVP component for
    /// IVP-evaluating kernels.
    pub kernels: BTreeMap<String, Vec<GeneratedKernel>>,
}

const BUTCHER: [(&str, usize); 3] = [("a", 2), ("b", 1), ("c", 1)];

struct Ctx<'a> {
    kernel: &'a str,
    tmpl: &'a KernelTemplate,
    method: &'a OdeMethod,
    comp: Option<(&'a Ivp, usize)>,
    n: Option<u64>,
    bound: Vec<(String, i64)>,
    n_loops: Vec<String>,
    notes: Vec<Vec<String>>,
}

fn note(notes: &mut Vec<Vec<String>>, text: String) {
    let top = notes.last_mut().expect("note frame");
    if !top.contains(&text) {
        top.push(text);
    }
}

impl Ctx<'_> {
    fn lookup(&self, name: &str) -> Option<Expr> {
        match name {
            "s" => Some(Expr::Int(self.method.stages as i64)),
            "n" => self.n.map(|n| Expr::Int(n as i64)),
            _ => self
                .bound
                .iter()
                .rev()
                .find(|(v, _)| v == name)
                .map(|(_, i)| Expr::Int(*i)),
        }
    }

    fn params(&self, e: &Expr) -> Expr {
        e.substitute(&|v| self.lookup(v)).simplify()
    }

    fn spec_err(&self, message: impl Into<String>) -> CodegenError {
        CodegenError::Specialize {
            kernel: self.kernel.to_string(),
            message: message.into(),
        }
    }

    fn nodes(&mut self, nodes: &[Node]) -> Result<Vec<KNode>, CodegenError> {
        let mut out = Vec::new();
        for node in nodes {
            match node {
                Node::Loop(l) => {
                    let trips = self.params(&l.trips);
                    if l.unroll {
                        let k = trips.as_int().ok_or_else(|| CodegenError::UnrollSymbolic {
                            kernel: self.kernel.to_string(),
                            var: l.var.clone(),
                            trips: l.trips.to_string(),
                        })?;
                        note(&mut self.notes, format!("unrolled {}", l.var));
                        for it in 0..k.max(0) {
                            self.bound.push((l.var.clone(), it));
                            let body = self.nodes(&l.body);
                            self.bound.pop();
                            out.extend(body?);
                        }
                        continue;
                    }
                    let over_n = l.trips == Expr::var("n");
                    let (start, trips) = match (over_n, self.comp) {
                        (true, Some((ivp, k))) => {
                            let c = &ivp.components[k];
                            let first = Expr::bin(BinOp::Sub, c.first.clone(), Expr::Int(1));
                            (self.params(&first), self.params(&c.size))
                        }
                        _ => (Expr::Int(0), trips),
                    };
                    let mut notes = Vec::new();
                    if let Some(n) = self.n {
                        if l.trips.identifiers().contains("n") {
                            notes.push(format!("n={n}"));
                        }
                    }
                    self.notes.push(notes);
                    if over_n {
                        self.n_loops.push(l.var.clone());
                    }
                    let body = self.nodes(&l.body);
                    if over_n {
                        self.n_loops.pop();
                    }
                    let notes = self.notes.pop().expect("note frame");
                    out.push(KNode::Loop(KLoop {
                        var: l.var.clone(),
                        start,
                        trips,
                        body: body?,
                        notes,
                    }));
                }
                Node::Comp(id) => {
                    let stmt = self
                        .tmpl
                        .computations
                        .get(id)
                        .ok_or_else(|| self.spec_err(format!("unknown computation {id}")))?;
                    if let Some(s) = self.stmt(stmt)? {
                        out.push(KNode::Stmt(s));
                    }
                }
                Node::Pragma(text) => out.push(KNode::Pragma(text.clone())),
                Node::Comm(_) | Node::KernelRef(_) => {
                    return Err(self.spec_err("skeleton keyword inside a kernel"));
                }
            }
        }
        Ok(out)
    }

    fn stmt(&mut self, stmt: &Stmt) -> Result<Option<Stmt>, CodegenError> {
        let mut st = stmt.clone();
        if st.value.contains_rhs() {
            st.value = self.expand_rhs(&st.value)?;
        }
        let butcher_before: BTreeMap<&str, String> = BUTCHER
            .iter()
            .filter_map(|(name, _)| {
                let mut text = None;
                st.value.visit(&mut |e| {
                    if let Expr::Index { array, .. } = e {
                        if array == name && text.is_none() {
                            text = Some(e.to_string());
                        }
                    }
                });
                text.map(|t| (*name, t))
            })
            .collect();
        let st = st.map(&mut |e| self.params(e));
        let value = self.replace_butcher(&st.value)?;
        let st = Stmt::new(st.target, value).simplify();
        let remaining = st.arrays();
        for (name, text) in butcher_before {
            if !remaining.contains(name) {
                note(&mut self.notes, format!("replaced {text}"));
            }
        }
        Ok((!st.is_identity()).then_some(st))
    }

    fn replace_butcher(&self, e: &Expr) -> Result<Expr, CodegenError> {
        e.try_rewrite(&mut |node| {
            let Expr::Index { array, indices } = &node else {
                return Ok(node);
            };
            let Some(&(_, rank)) = BUTCHER.iter().find(|(n, _)| n == array) else {
                return Ok(node);
            };
            if self.tmpl.datastruct(array).is_none() {
                return Ok(node);
            }
            if indices.len() != rank {
                return Err(self.spec_err(format!("Butcher array `{array}` needs {rank} subscripts")));
            }
            let Some(ix) = indices.iter().map(|i| i.as_int()).collect::<Option<Vec<i64>>>() else {
                return Ok(node);
            };
            let s = self.method.stages as i64;
            if ix.iter().any(|&i| i < 0 || i >= s) {
                return Err(self.spec_err(format!("`{node}` is outside the {s}-stage Butcher table")));
            }
            let v = match array.as_str() {
                "a" => self.method.a[ix[0] as usize][ix[1] as usize],
                "b" => self.method.b[ix[0] as usize],
                _ => self.method.c[ix[0] as usize],
            };
            Ok(Expr::Num(v))
        })
    }

    fn expand_rhs(&self, e: &Expr) -> Result<Expr, CodegenError> {
        let rhs_err = |message: &str| CodegenError::Rhs {
            kernel: self.kernel.to_string(),
            message: message.to_string(),
        };
        let (ivp, k) = self.comp.ok_or_else(|| rhs_err("%RHS needs an IVP component"))?;
        let nvar = self
            .n_loops
            .last()
            .ok_or_else(|| rhs_err("%RHS must sit inside a loop over n"))?
            .clone();
        let code = &ivp.components[k].code;
        e.try_rewrite(&mut |node| {
            let Expr::Rhs { input, time } = node else {
                return Ok(node);
            };
            Ok(code.rewrite(&mut |x| match x {
                Expr::Var(ref v) if v == "j" => Expr::Var(nvar.clone()),
                Expr::Var(ref v) if v == "t" => time.as_deref().cloned().unwrap_or(x),
                Expr::Var(ref v) => match ivp.constant(v) {
                    Some(c) => Expr::Num(c),
                    None => x,
                },
                Expr::Input(idx) => match input.as_ref() {
                    Expr::Var(a) => Expr::Index {
                        array: a.clone(),
                        indices: idx,
                    },
                    Expr::Index { array, indices } => Expr::Index {
                        array: array.clone(),
                        indices: indices.iter().cloned().chain(idx).collect(),
                    },
                    _ => unreachable!("parser restricts %RHS inputs"),
                },
                other => other,
            }))
        })
    }
}

fn has_stmt(nodes: &[KNode]) -> bool {
    nodes.iter().any(|n| match n {
        KNode::Stmt(_) => true,
        KNode::Loop(l) => has_stmt(&l.body),
        KNode::Pragma(_) => false,
    })
}

/// Drops loops without statements together with the pragmas in front of them.
fn prune(nodes: Vec<KNode>) -> Vec<KNode> {
    let mut out = Vec::new();
    let mut pending = Vec::new();
    for n in nodes {
        match n {
            KNode::Pragma(_) => pending.push(n),
            KNode::Loop(mut l) => {
                l.body = prune(l.body);
                if has_stmt(&l.body) {
                    out.append(&mut pending);
                    out.push(KNode::Loop(l));
                } else {
                    pending.clear();
                }
            }
            KNode::Stmt(_) => {
                out.append(&mut pending);
                out.push(n);
            }
        }
    }
    out
}

fn beta_terms(nodes: &[KNode], prod: &Expr, out: &mut Vec<Expr>) {
    if nodes.iter().any(|n| matches!(n, KNode::Stmt(_))) {
        out.push(prod.clone());
    }
    for n in nodes {
        if let KNode::Loop(l) = n {
            let p = Expr::bin(BinOp::Mul, prod.clone(), l.trips.clone()).simplify();
            beta_terms(&l.body, &p, out);
        }
    }
}

fn compute_beta(body: &[KNode]) -> Expr {
    let mut terms = Vec::new();
    beta_terms(body, &Expr::Int(1), &mut terms);
    let sum = terms.into_iter().reduce(|a, b| Expr::bin(BinOp::Add, a, b));
    match (sum, body.first()) {
        (Some(e), _) => e.simplify(),
        (None, Some(KNode::Loop(l))) => l.trips.clone(),
        (None, _) => Expr::Int(1),
    }
}

fn visit_stmts<'a>(nodes: &'a [KNode], f: &mut dyn FnMut(&'a Stmt)) {
    for n in nodes {
        match n {
            KNode::Stmt(s) => f(s),
            KNode::Loop(l) => visit_stmts(&l.body, f),
            KNode::Pragma(_) => {}
        }
    }
}

fn loop_vars(nodes: &[KNode], out: &mut BTreeSet<String>) {
    for n in nodes {
        if let KNode::Loop(l) = n {
            out.insert(l.var.clone());
            loop_vars(&l.body, out);
        }
    }
}

/// Specializes one kernel variant. `comp` names the IVP component for
/// kernels that evaluate the IVP and must be `None` otherwise.
pub fn specialize_kernel(
    tmpl: &KernelTemplate,
    v: &KernelVariantDef,
    method: &OdeMethod,
    comp: Option<(&Ivp, usize)>,
    n: Option<u64>,
) -> Result<GeneratedKernel, CodegenError> {
    if v.contains_rhs && comp.is_none() {
        return Err(CodegenError::Rhs {
            kernel: v.name.clone(),
            message: "%RHS present but no IVP component supplied".into(),
        });
    }
    let comp = if v.contains_rhs { comp } else { None };
    if let (Some((ivp, k)), Some(n)) = (comp, n) {
        if k >= ivp.components.len() {
            return Err(CodegenError::Rhs {
                kernel: v.name.clone(),
                message: format!("IVP {} has no component {}", ivp.name, k + 1),
            });
        }
        ivp.check_size(n).map_err(|e| CodegenError::Rhs {
            kernel: v.name.clone(),
            message: e.to_string(),
        })?;
    }
    let mut ctx = Ctx {
        kernel: &v.name,
        tmpl,
        method,
        comp,
        n,
        bound: Vec::new(),
        n_loops: Vec::new(),
        notes: vec![Vec::new()],
    };
    let raw = ctx.nodes(&v.code.nodes)?;
    let mut body = prune(raw.clone());
    if !has_stmt(&body) {
        body = raw
            .into_iter()
            .find_map(|n| match n {
                KNode::Loop(mut l) => {
                    l.body.clear();
                    Some(vec![KNode::Loop(l)])
                }
                _ => None,
            })
            .unwrap_or_default();
    }
    let beta = compute_beta(&body);

    let mut used_arrays = BTreeSet::new();
    let mut idents = BTreeSet::new();
    visit_stmts(&body, &mut |s| {
        used_arrays.extend(s.arrays());
        idents.extend(s.identifiers());
    });
    let mut lv = BTreeSet::new();
    loop_vars(&body, &mut lv);
    let scalars = idents.into_iter().filter(|i| !lv.contains(i)).collect();
    let arrays = tmpl
        .datastructs
        .iter()
        .filter(|d| used_arrays.contains(&d.name))
        .map(|d| {
            let mut params: Vec<String> = Vec::new();
            for p in ["s", "n"] {
                if d.dims.iter().any(|e| e.identifiers().contains(p)) {
                    if let Some(Expr::Int(v)) = ctx.lookup(p) {
                        params.push(format!("{p}={v}"));
                    }
                }
            }
            ArrayDecl {
                ty: d.ty.clone(),
                name: d.name.clone(),
                dims: d.dims.iter().map(|e| ctx.params(e)).collect(),
                note: params.join("; "),
            }
        })
        .collect();

    Ok(GeneratedKernel {
        template: tmpl.name.clone(),
        kernel: v.name.clone(),
        method: method.name.clone(),
        ivp: comp.map(|(ivp, _)| ivp.name.clone()),
        component: comp.map(|(_, k)| k),
        n,
        s: method.stages,
        arrays,
        scalars,
        body,
        beta,
        contains_rhs: v.contains_rhs,
    })
}

/// Specializes every kernel of `templates`; IVP-evaluating kernels are
/// specialized once per component of `ivp`.
pub fn specialize_kernels(
    templates: &[KernelTemplate],
    method: &OdeMethod,
    ivp: Option<&Ivp>,
    n: Option<u64>,
) -> Result<KernelSet, CodegenError> {
    let mut kernels = BTreeMap::new();
    for t in templates {
        for v in &t.variants {
            let specs = if v.contains_rhs {
                let ivp = ivp.ok_or_else(|| CodegenError::Rhs {
                    kernel: v.name.clone(),
                    message: "%RHS present but no IVP supplied".into(),
                })?;
                (0..ivp.components.len())
                    .map(|k| specialize_kernel(t, v, method, Some((ivp, k)), n))
                    .collect::<Result<Vec<_>, _>>()?
            } else {
                vec![specialize_kernel(t, v, method, None, n)?]
            };
            kernels.insert(v.name.clone(), specs);
        }
    }
    Ok(KernelSet {
        method: method.name.clone(),
        ivp: ivp.map(|i| i.name.clone()),
        n,
        kernels,
    })
}

impl GeneratedKernel {
    pub fn beta_value(&self) -> Option<u64> {
        self.beta.as_int().map(|b| b.max(0) as u64)
    }

    pub fn statements(&self) -> Vec<&Stmt> {
        let mut v = Vec::new();
        visit_stmts(&self.body, &mut |s| v.push(s));
        v
    }

    /// `<kernel>_<method>_<ivp|none>_<n>.c`
    pub fn file_name(&self) -> String {
        let n = self.n.map(|n| n.to_string()).unwrap_or_else(|| "n".into());
        let ivp = self.ivp.as_deref().unwrap_or("none");
        format!("{}_{}_{}_{}.c", self.kernel, self.method, ivp, n)
    }

    pub fn to_program(&self) -> Vec<ProgramNode> {
        fn conv(nodes: &[KNode]) -> Vec<ProgramNode> {
            nodes
                .iter()
                .filter_map(|n| match n {
                    KNode::Stmt(s) => Some(ProgramNode::Stmt(s.clone())),
                    KNode::Loop(l) => Some(ProgramNode::Loop {
                        var: l.var.clone(),
                        start: l.start.clone(),
                        trips: l.trips.clone(),
                        body: conv(&l.body),
                    }),
                    KNode::Pragma(_) => None,
                })
                .collect()
        }
        conv(&self.body)
    }

    /// Writes the loop nest with `depth` levels of two-space indentation.
    pub fn write_body(&self, out: &mut String, depth: usize) {
        write_nodes(&self.body, out, depth);
    }
}

pub(crate) fn write_nodes(nodes: &[KNode], out: &mut String, depth: usize) {
    let pad = "  ".repeat(depth);
    for n in nodes {
        match n {
            KNode::Stmt(s) => {
                let _ = writeln!(out, "{pad}{s}");
            }
            KNode::Pragma(p) => {
                let _ = writeln!(out, "{pad}#pragma {p}");
            }
            KNode::Loop(l) => {
                let end = Expr::bin(BinOp::Add, l.start.clone(), l.trips.clone()).simplify();
                let v = &l.var;
                let notes = if l.notes.is_empty() {
                    String::new()
                } else {
                    format!(" // {}", l.notes.join("; "))
                };
                let _ = writeln!(out, "{pad}for (int {v}={}; {v}<{end}; ++{v}) {{{notes}", l.start);
                write_nodes(&l.body, out, depth + 1);
                let _ = writeln!(out, "{pad}}}");
            }
        }
    }
}

pub(crate) fn declaration(a: &ArrayDecl) -> String {
    let dims: String = a.dims.iter().map(|d| format!("[{d}]")).collect();
    if a.note.is_empty() {
        format!("{} {}{dims};", a.ty, a.name)
    } else {
        format!("{} {}{dims}; // {}", a.ty, a.name, a.note)
    }
}

/// Self-contained analyzer input: declarations with literal extents followed
/// by the loop nest.
pub fn emit_analyzer_kernel(g: &GeneratedKernel) -> Result<String, CodegenError> {
    emit_analyzer_file(std::slice::from_ref(g))
}

/// One analyzer file for all component specializations of a kernel.
pub fn emit_analyzer_file(kernels: &[GeneratedKernel]) -> Result<String, CodegenError> {
    let mut out = String::new();
    let mut declared = BTreeSet::new();
    for g in kernels {
        if g.n.is_none() {
            return Err(CodegenError::SymbolicN { kernel: g.kernel.clone() });
        }
        for a in &g.arrays {
            if declared.insert(a.name.clone()) {
                out.push_str(&declaration(a));
                out.push('\n');
            }
        }
    }
    for g in kernels {
        for s in &g.scalars {
            if declared.insert(s.clone()) {
                let _ = writeln!(out, "double {s};");
            }
        }
    }
    for g in kernels {
        if let (Some(k), Some(ivp)) = (g.component, &g.ivp) {
            let _ = writeln!(out, "// {ivp} component {}", k + 1);
        }
        g.write_body(&mut out, 0);
    }
    Ok(out)
}
