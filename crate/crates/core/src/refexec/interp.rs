//! Slot-resolved interpreter for kernel statements and loop nests.

use std::collections::HashMap;

use super::expr::{BinOp, Expr, Func, Stmt};
use super::EvalError;

/// Dense row-major array of doubles.
#[derive(Debug, Clone, PartialEq)]
pub struct Array {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl Array {
    pub fn zeros(dims: &[usize]) -> Array {
        Array {
            dims: dims.to_vec(),
            data: vec![0.0; dims.iter().product()],
        }
    }

    pub fn from_vec(dims: &[usize], data: Vec<f64>) -> Array {
        assert_eq!(dims.iter().product::<usize>(), data.len());
        Array { dims: dims.to_vec(), data }
    }

    /// Row `r` of a two-dimensional array.
    pub fn row(&self, r: usize) -> &[f64] {
        let w = self.dims[1];
        &self.data[r * w..(r + 1) * w]
    }
}

/// Variable bindings for interpretation: named arrays and scalars.
#[derive(Debug, Clone, Default)]
pub struct Env {
    arrays: Vec<Array>,
    array_names: HashMap<String, usize>,
    array_labels: Vec<String>,
    scalars: Vec<f64>,
    scalar_names: HashMap<String, usize>,
    /// Number of statement executions since creation.
    pub statements_executed: u64,
}

impl Env {
    pub fn new() -> Env {
        Env::default()
    }

    pub fn set_array(&mut self, name: &str, array: Array) {
        match self.array_names.get(name) {
            Some(&slot) => self.arrays[slot] = array,
            None => {
                self.array_names.insert(name.to_string(), self.arrays.len());
                self.array_labels.push(name.to_string());
                self.arrays.push(array);
            }
        }
    }

    pub fn array(&self, name: &str) -> Option<&Array> {
        self.array_names.get(name).map(|&s| &self.arrays[s])
    }

    pub fn array_mut(&mut self, name: &str) -> Option<&mut Array> {
        self.array_names.get(name).map(|&s| &mut self.arrays[s])
    }

    pub fn set_scalar(&mut self, name: &str, value: f64) {
        let slot = self.scalar_slot(name);
        self.scalars[slot] = value;
    }

    pub fn scalar(&self, name: &str) -> Option<f64> {
        self.scalar_names.get(name).map(|&s| self.scalars[s])
    }

    /// Slot of scalar `name`, binding it to 0 if absent.
    pub fn scalar_index(&mut self, name: &str) -> usize {
        self.scalar_slot(name)
    }

    pub fn set_scalar_at(&mut self, slot: usize, value: f64) {
        self.scalars[slot] = value;
    }

    fn scalar_slot(&mut self, name: &str) -> usize {
        if let Some(&s) = self.scalar_names.get(name) {
            return s;
        }
        self.scalar_names.insert(name.to_string(), self.scalars.len());
        self.scalars.push(0.0);
        self.scalars.len() - 1
    }

    /// Exchanges the contents of two equally-shaped arrays.
    pub fn swap_arrays(&mut self, a: &str, b: &str) -> Result<(), EvalError> {
        let sa = *self.array_names.get(a).ok_or_else(|| EvalError::Unbound(a.into()))?;
        let sb = *self.array_names.get(b).ok_or_else(|| EvalError::Unbound(b.into()))?;
        self.swap_slots(sa, sb)
    }

    fn swap_slots(&mut self, sa: usize, sb: usize) -> Result<(), EvalError> {
        if self.arrays[sa].dims != self.arrays[sb].dims {
            return Err(EvalError::Shape(format!(
                "cannot swap `{}` and `{}` of different shapes",
                self.array_labels[sa], self.array_labels[sb]
            )));
        }
        if sa != sb {
            let (lo, hi) = (sa.min(sb), sa.max(sb));
            let (left, right) = self.arrays.split_at_mut(hi);
            std::mem::swap(&mut left[lo].data, &mut right[0].data);
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
enum CExpr {
    Const(f64),
    Scalar(usize),
    Elem(usize, Vec<CExpr>),
    Neg(Box<CExpr>),
    Bin(BinOp, Box<CExpr>, Box<CExpr>),
    Call(Func, Vec<CExpr>),
}

#[derive(Debug, Clone)]
enum Target {
    Scalar(usize),
    Elem(usize, Vec<CExpr>),
}

#[derive(Debug, Clone)]
struct CStmt {
    target: Target,
    value: CExpr,
}

#[derive(Debug, Clone)]
enum CNode {
    Loop {
        var: usize,
        start: CExpr,
        trips: CExpr,
        body: Vec<CNode>,
    },
    Stmt(CStmt),
    Swap(usize, usize),
}

/// Loop-nest description accepted by [`Program::compile`].
#[derive(Debug, Clone, PartialEq)]
pub enum ProgramNode {
    Loop {
        var: String,
        start: Expr,
        trips: Expr,
        body: Vec<ProgramNode>,
    },
    Stmt(Stmt),
    Swap(String, String),
}

/// A loop nest with every identifier resolved against an [`Env`].
#[derive(Debug, Clone)]
pub struct Program {
    nodes: Vec<CNode>,
}

struct Compiler<'e> {
    env: &'e mut Env,
    loop_vars: Vec<String>,
}

impl Compiler<'_> {
    fn expr(&mut self, e: &Expr) -> Result<CExpr, EvalError> {
        Ok(match e {
            Expr::Int(v) => CExpr::Const(*v as f64),
            Expr::Num(v) => CExpr::Const(*v),
            Expr::Var(name) => {
                if !self.loop_vars.contains(name) && !self.env.scalar_names.contains_key(name) {
                    return Err(EvalError::Unbound(name.clone()));
                }
                CExpr::Scalar(self.env.scalar_slot(name))
            }
            Expr::Index { array, indices } => {
                let slot = *self
                    .env
                    .array_names
                    .get(array)
                    .ok_or_else(|| EvalError::Unbound(array.clone()))?;
                let rank = self.env.arrays[slot].dims.len();
                if rank != indices.len() {
                    return Err(EvalError::Shape(format!(
                        "`{array}` has rank {rank} but is indexed with {} subscripts",
                        indices.len()
                    )));
                }
                CExpr::Elem(slot, indices.iter().map(|i| self.expr(i)).collect::<Result<_, _>>()?)
            }
            Expr::Input(_) => return Err(EvalError::Unbound("%in".into())),
            Expr::Rhs { .. } => return Err(EvalError::Unbound("%RHS".into())),
            Expr::Neg(x) => CExpr::Neg(Box::new(self.expr(x)?)),
            Expr::Bin(op, a, b) => CExpr::Bin(*op, Box::new(self.expr(a)?), Box::new(self.expr(b)?)),
            Expr::Call(f, args) => {
                CExpr::Call(*f, args.iter().map(|a| self.expr(a)).collect::<Result<_, _>>()?)
            }
        })
    }

    fn stmt(&mut self, s: &Stmt) -> Result<CStmt, EvalError> {
        let target = match self.expr(&s.target)? {
            CExpr::Scalar(slot) => Target::Scalar(slot),
            CExpr::Elem(slot, idx) => Target::Elem(slot, idx),
            _ => return Err(EvalError::Shape(format!("`{}` is not assignable", s.target))),
        };
        Ok(CStmt {
            target,
            value: self.expr(&s.value)?,
        })
    }

    fn nodes(&mut self, nodes: &[ProgramNode]) -> Result<Vec<CNode>, EvalError> {
        nodes
            .iter()
            .map(|n| match n {
                ProgramNode::Stmt(s) => Ok(CNode::Stmt(self.stmt(s)?)),
                ProgramNode::Loop { var, start, trips, body } => {
                    let start = self.expr(start)?;
                    let trips = self.expr(trips)?;
                    let slot = self.env.scalar_slot(var);
                    self.loop_vars.push(var.clone());
                    let body = self.nodes(body)?;
                    self.loop_vars.pop();
                    Ok(CNode::Loop {
                        var: slot,
                        start,
                        trips,
                        body,
                    })
                }
                ProgramNode::Swap(a, b) => {
                    let sa = *self.env.array_names.get(a).ok_or_else(|| EvalError::Unbound(a.clone()))?;
                    let sb = *self.env.array_names.get(b).ok_or_else(|| EvalError::Unbound(b.clone()))?;
                    Ok(CNode::Swap(sa, sb))
                }
            })
            .collect()
    }
}

fn as_index(v: f64, env: &Env, slot: usize) -> Result<i64, EvalError> {
    if v.fract() != 0.0 {
        return Err(EvalError::NonInteger {
            array: env.array_labels[slot].clone(),
            value: v,
        });
    }
    Ok(v as i64)
}

fn offset(env: &Env, slot: usize, idx: &[CExpr]) -> Result<usize, EvalError> {
    let dims = &env.arrays[slot].dims;
    let mut off = 0usize;
    for (k, (ie, &extent)) in idx.iter().zip(dims).enumerate() {
        let i = as_index(eval(ie, env)?, env, slot)?;
        if i < 0 || i as usize >= extent {
            return Err(EvalError::OutOfBounds {
                array: env.array_labels[slot].clone(),
                dim: k,
                index: i,
                extent,
            });
        }
        off = off * extent + i as usize;
    }
    Ok(off)
}

fn checked(v: f64, what: &'static str) -> Result<f64, EvalError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(EvalError::Domain(format!("{what} produced a non-finite value")))
    }
}

fn eval(e: &CExpr, env: &Env) -> Result<f64, EvalError> {
    match e {
        CExpr::Const(v) => Ok(*v),
        CExpr::Scalar(s) => Ok(env.scalars[*s]),
        CExpr::Elem(slot, idx) => {
            let off = offset(env, *slot, idx)?;
            Ok(env.arrays[*slot].data[off])
        }
        CExpr::Neg(x) => Ok(-eval(x, env)?),
        CExpr::Bin(op, a, b) => {
            let v = op.apply(eval(a, env)?, eval(b, env)?);
            checked(
                v,
                match op {
                    BinOp::Div => "division",
                    _ => "arithmetic",
                },
            )
        }
        CExpr::Call(f, args) => {
            let mut vals = [0.0; 2];
            for (k, a) in args.iter().enumerate() {
                vals[k] = eval(a, env)?;
            }
            checked(f.apply(&vals[..args.len()]), f.name())
        }
    }
}

fn exec_stmt(s: &CStmt, env: &mut Env) -> Result<(), EvalError> {
    let v = eval(&s.value, env)?;
    match &s.target {
        Target::Scalar(slot) => env.scalars[*slot] = v,
        Target::Elem(slot, idx) => {
            let off = offset(env, *slot, idx)?;
            env.arrays[*slot].data[off] = v;
        }
    }
    env.statements_executed += 1;
    Ok(())
}

fn exec_nodes(nodes: &[CNode], env: &mut Env) -> Result<(), EvalError> {
    for node in nodes {
        match node {
            CNode::Stmt(s) => exec_stmt(s, env)?,
            CNode::Loop { var, start, trips, body } => {
                let start = eval(start, env)?;
                let trips = eval(trips, env)?;
                let mut k = 0.0;
                while k < trips {
                    env.scalars[*var] = start + k;
                    exec_nodes(body, env)?;
                    k += 1.0;
                }
            }
            CNode::Swap(a, b) => env.swap_slots(*a, *b)?,
        }
    }
    Ok(())
}

impl Program {
    /// Resolves names against `env`. Arrays and free scalars must already be
    /// bound; loop variables are created on demand.
    pub fn compile(nodes: &[ProgramNode], env: &mut Env) -> Result<Program, EvalError> {
        let mut c = Compiler {
            env,
            loop_vars: Vec::new(),
        };
        Ok(Program { nodes: c.nodes(nodes)? })
    }

    pub fn run(&self, env: &mut Env) -> Result<(), EvalError> {
        exec_nodes(&self.nodes, env)
    }
}

/// A single compiled right-hand-side expression, for repeated evaluation.
#[derive(Debug, Clone)]
pub struct CompiledExpr(CExpr);

impl CompiledExpr {
    pub fn compile(e: &Expr, env: &mut Env) -> Result<CompiledExpr, EvalError> {
        let mut c = Compiler {
            env,
            loop_vars: Vec::new(),
        };
        Ok(CompiledExpr(c.expr(e)?))
    }

    pub fn eval(&self, env: &Env) -> Result<f64, EvalError> {
        eval(&self.0, env)
    }
}

/// Executes one assignment against `env`.
pub fn eval_statement(stmt: &Stmt, env: &mut Env) -> Result<(), EvalError> {
    let mut c = Compiler {
        env,
        loop_vars: Vec::new(),
    };
    let compiled = c.stmt(stmt)?;
    exec_stmt(&compiled, env)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::refexec::parse::parse_stmt;

    fn env_with(dy: f64, f00: f64) -> Env {
        let mut env = Env::new();
        env.set_array("dy", Array::from_vec(&[2], vec![dy, 0.0]));
        env.set_array("F", Array::from_vec(&[2, 2], vec![f00, 0.0, 0.0, 0.0]));
        env.set_array("a", Array::from_vec(&[3], vec![1.0, 2.0, 3.0]));
        env.set_scalar("j", 0.0);
        env.set_scalar("n", 3.0);
        env
    }

    #[test]
    fn aprx_statement_updates_one_cell() {
        let mut env = env_with(1.0, 2.0);
        eval_statement(&parse_stmt("dy[0] = dy[0] + 0.2205*F[0][0]").unwrap(), &mut env).unwrap();
        assert!((env.array("dy").unwrap().data[0] - 1.441).abs() < 1e-15);
        assert_eq!(env.array("dy").unwrap().data[1], 0.0);
        assert_eq!(env.array("F").unwrap().data, vec![2.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn identity_statement_leaves_env_unchanged() {
        let mut env = env_with(1.0, 2.0);
        let before = env.array("a").unwrap().clone();
        eval_statement(&parse_stmt("a[j] = a[j]").unwrap(), &mut env).unwrap();
        assert_eq!(env.array("a").unwrap(), &before);
    }

    #[test]
    fn out_of_bounds_is_reported() {
        let mut env = env_with(1.0, 2.0);
        let err = eval_statement(&parse_stmt("a[n] = 1.0").unwrap(), &mut env).unwrap_err();
        assert!(matches!(err, EvalError::OutOfBounds { index: 3, extent: 3, .. }));
    }

    #[test]
    fn unbound_and_domain_errors() {
        let mut env = env_with(1.0, 2.0);
        let err = eval_statement(&parse_stmt("a[0] = q").unwrap(), &mut env).unwrap_err();
        assert_eq!(err, EvalError::Unbound("q".into()));
        let err = eval_statement(&parse_stmt("a[0] = sqrt(0.0 - 1.0)").unwrap(), &mut env).unwrap_err();
        assert!(matches!(err, EvalError::Domain(_)));
        let err = eval_statement(&parse_stmt("a[0] = 1.0 / (a[1] - 2.0)").unwrap(), &mut env).unwrap_err();
        assert!(matches!(err, EvalError::Domain(_)));
    }

    #[test]
    fn loops_and_swaps() {
        use crate::refexec::parse::parse_expr;
        let mut env = Env::new();
        env.set_array("x", Array::zeros(&[4]));
        env.set_array("z", Array::from_vec(&[4], vec![9.0; 4]));
        let prog = vec![
            ProgramNode::Loop {
                var: "j".into(),
                start: parse_expr("1").unwrap(),
                trips: parse_expr("3").unwrap(),
                body: vec![ProgramNode::Stmt(parse_stmt("x[j] = j * 2").unwrap())],
            },
            ProgramNode::Swap("x".into(), "z".into()),
        ];
        let p = Program::compile(&prog, &mut env).unwrap();
        p.run(&mut env).unwrap();
        assert_eq!(env.array("z").unwrap().data, vec![0.0, 2.0, 4.0, 6.0]);
        assert_eq!(env.array("x").unwrap().data, vec![9.0; 4]);
        assert_eq!(env.statements_executed, 3);
    }
}
