//! Statement-count characterization of specialized kernels.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::EcmError;
use crate::codegen::{GeneratedKernel, KNode};
use crate::refexec::{BinOp, Expr, Func, Stmt};

/// Per-iteration cache-line traffic of one array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamedArray {
    pub name: String,
    /// Declared element count.
    pub elements: u64,
    pub read: bool,
    pub write: bool,
    /// Lines brought into L1 per iteration, write-allocates included.
    pub load_cls: f64,
    /// Dirty lines written back per iteration.
    pub evict_cls: f64,
}

impl StreamedArray {
    /// Lines crossing each level boundary per iteration.
    pub fn traffic(&self) -> f64 {
        self.load_cls + self.evict_cls
    }
}

/// Operation and traffic counts per innermost loop iteration.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct KernelCharacterization {
    pub kernel: String,
    pub adds: f64,
    pub muls: f64,
    pub fmas: f64,
    pub divs: f64,
    pub loads: f64,
    pub stores: f64,
    pub arrays: Vec<StreamedArray>,
    /// Iterations the counts were normalized by.
    pub beta: u64,
}

#[derive(Debug, Clone, Copy, Default)]
struct Ops {
    adds: f64,
    muls: f64,
    fmas: f64,
    divs: f64,
    loads: f64,
}

fn is_mul(e: &Expr) -> bool {
    matches!(e, Expr::Bin(BinOp::Mul, _, _))
}

/// Counts arithmetic and loads; an add or subtract with a multiply operand is
/// fused into one FMA when `fma` is set.
fn count(e: &Expr, fma: bool, ops: &mut Ops) {
    match e {
        Expr::Int(_) | Expr::Num(_) | Expr::Var(_) => {}
        // Subscript arithmetic is address computation, not floating point.
        Expr::Index { .. } => ops.loads += 1.0,
        Expr::Input(_) | Expr::Rhs { .. } => {}
        Expr::Neg(x) => count(x, fma, ops),
        Expr::Bin(op, a, b) => match op {
            BinOp::Add | BinOp::Sub if fma && (is_mul(a) || is_mul(b)) => {
                ops.fmas += 1.0;
                let (m, other) = if is_mul(a) { (a, b) } else { (b, a) };
                let Expr::Bin(_, x, y) = m.as_ref() else { unreachable!() };
                count(x, fma, ops);
                count(y, fma, ops);
                count(other, fma, ops);
            }
            _ => {
                match op {
                    BinOp::Add | BinOp::Sub => ops.adds += 1.0,
                    BinOp::Mul => ops.muls += 1.0,
                    BinOp::Div => ops.divs += 1.0,
                }
                count(a, fma, ops);
                count(b, fma, ops);
            }
        },
        Expr::Call(f, args) => {
            if *f != Func::Fabs {
                ops.divs += 1.0;
            }
            for a in args {
                count(a, fma, ops);
            }
        }
    }
}

#[derive(Default)]
struct Stream {
    total_cls: f64,
    read: bool,
    write: bool,
}

struct Frame {
    id: usize,
    var: String,
    trips: f64,
}

struct Walker<'a> {
    g: &'a GeneratedKernel,
    fma: bool,
    delta: f64,
    ops: Ops,
    stores: f64,
    next_id: usize,
    frames: Vec<Frame>,
    streams: BTreeMap<(String, String, usize), Stream>,
}

impl Walker<'_> {
    fn weight(&self, upto: usize) -> f64 {
        self.frames[..upto].iter().map(|f| f.trips).product()
    }

    /// Lines per execution of the deciding loop's body: 1/δ for a unit
    /// stride in the last subscript, otherwise one line per access.
    fn access(&mut self, array: &str, indices: &[Expr], write: bool) {
        let Some(depth) = self
            .frames
            .iter()
            .rposition(|f| indices.iter().any(|i| i.identifiers().contains(&f.var)))
        else {
            return;
        };
        let var = &self.frames[depth].var;
        let (last, rest) = indices.split_last().expect("indexed access");
        let strided = if rest.iter().any(|i| i.identifiers().contains(var)) {
            None
        } else {
            last.slope_in(var).filter(|s| s.abs() < self.delta)
        };
        let rest_text = rest.iter().map(|i| format!("[{i}]")).collect::<String>();
        // Accesses differing only by an offset along the stride share lines.
        let (cls, text) = match strided {
            Some(s) => (s.abs().max(1.0) / self.delta, format!("{rest_text}[*]")),
            None => (1.0, format!("{rest_text}[{last}]")),
        };
        let key = (array.to_string(), text, self.frames[depth].id);
        let weight = self.weight(depth + 1);
        let s = self.streams.entry(key).or_insert_with(|| Stream {
            total_cls: cls * weight,
            ..Stream::default()
        });
        s.read |= !write;
        s.write |= write;
    }

    fn stmt(&mut self, st: &Stmt) -> Result<(), EcmError> {
        for a in st.arrays() {
            if !self.g.arrays.iter().any(|d| d.name == a) {
                return Err(EcmError::UndeclaredArray {
                    kernel: self.g.kernel.clone(),
                    array: a,
                });
            }
        }
        let w = self.weight(self.frames.len());
        let mut ops = Ops::default();
        count(&st.value, self.fma, &mut ops);
        self.ops.adds += w * ops.adds;
        self.ops.muls += w * ops.muls;
        self.ops.fmas += w * ops.fmas;
        self.ops.divs += w * ops.divs;
        self.ops.loads += w * ops.loads;
        if let Expr::Index { .. } = st.target {
            self.stores += w;
        }
        let mut reads = Vec::new();
        st.value.visit(&mut |e| {
            if let Expr::Index { array, indices } = e {
                reads.push((array.clone(), indices.clone()));
            }
        });
        for (array, indices) in reads {
            self.access(&array, &indices, false);
        }
        if let Expr::Index { array, indices } = &st.target {
            self.access(array, indices, true);
        }
        Ok(())
    }

    fn nodes(&mut self, nodes: &[KNode]) -> Result<(), EcmError> {
        for n in nodes {
            match n {
                KNode::Pragma(_) => {}
                KNode::Stmt(s) => self.stmt(s)?,
                KNode::Loop(l) => {
                    let trips = l.trips.as_int().ok_or_else(|| EcmError::SymbolicN {
                        kernel: self.g.kernel.clone(),
                    })?;
                    self.next_id += 1;
                    self.frames.push(Frame {
                        id: self.next_id,
                        var: l.var.clone(),
                        trips: trips.max(0) as f64,
                    });
                    let r = self.nodes(&l.body);
                    self.frames.pop();
                    r?;
                }
            }
        }
        Ok(())
    }
}

/// Counts operations and cache-line traffic of `g`, normalized to one of its
/// `β` innermost iterations. `delta` is the number of elements per line.
pub fn characterize(g: &GeneratedKernel, fma: bool, delta: f64) -> Result<KernelCharacterization, EcmError> {
    let beta = g.beta_value().ok_or_else(|| EcmError::SymbolicN { kernel: g.kernel.clone() })?;
    let mut w = Walker {
        g,
        fma,
        delta,
        ops: Ops::default(),
        stores: 0.0,
        next_id: 0,
        frames: Vec::new(),
        streams: BTreeMap::new(),
    };
    w.nodes(&g.body)?;
    let per_iter = |total: f64| {
        if beta == 0 || !has_stmt(&g.body) {
            0.0
        } else {
            total / beta as f64
        }
    };
    let mut arrays: Vec<StreamedArray> = Vec::new();
    for d in &g.arrays {
        let mut a = StreamedArray {
            name: d.name.clone(),
            elements: d.dims.iter().map(|e| e.as_int().unwrap_or(0).max(0) as u64).product(),
            read: false,
            write: false,
            load_cls: 0.0,
            evict_cls: 0.0,
        };
        for ((name, _, _), s) in &w.streams {
            if name == &d.name {
                a.read |= s.read;
                a.write |= s.write;
                a.load_cls += per_iter(s.total_cls);
                if s.write {
                    a.evict_cls += per_iter(s.total_cls);
                }
            }
        }
        arrays.push(a);
    }
    Ok(KernelCharacterization {
        kernel: g.kernel.clone(),
        adds: per_iter(w.ops.adds),
        muls: per_iter(w.ops.muls),
        fmas: per_iter(w.ops.fmas),
        divs: per_iter(w.ops.divs),
        loads: per_iter(w.ops.loads),
        stores: per_iter(w.stores),
        arrays,
        beta,
    })
}

fn has_stmt(nodes: &[KNode]) -> bool {
    nodes.iter().any(|n| match n {
        KNode::Stmt(_) => true,
        KNode::Loop(l) => has_stmt(&l.body),
        KNode::Pragma(_) => false,
    })
}
