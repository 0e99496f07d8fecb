//! Expression and statement trees for the restricted C-like kernel grammar.
//!
//! The same tree type carries Butcher coefficients, working-set formulas,
//! loop trip counts, IVP right-hand sides and kernel statements. Only the
//! placeholders differ: `%in[...]` appears in IVP component code and
//! `%RHS(input, time)` in kernel computations.

use std::collections::BTreeSet;
use std::fmt;

use super::EvalError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

impl BinOp {
    fn precedence(self) -> u8 {
        match self {
            BinOp::Add | BinOp::Sub => 1,
            BinOp::Mul | BinOp::Div => 2,
        }
    }

    fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
        }
    }

    pub fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            BinOp::Add => a + b,
            BinOp::Sub => a - b,
            BinOp::Mul => a * b,
            BinOp::Div => a / b,
        }
    }
}

/// Whitelisted math functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func {
    Exp,
    Pow,
    Sin,
    Cos,
    Sqrt,
    Fabs,
}

impl Func {
    pub fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "exp" => Func::Exp,
            "pow" => Func::Pow,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "sqrt" => Func::Sqrt,
            "fabs" => Func::Fabs,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Func::Exp => "exp",
            Func::Pow => "pow",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Sqrt => "sqrt",
            Func::Fabs => "fabs",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            Func::Pow => 2,
            _ => 1,
        }
    }

    pub fn apply(self, args: &[f64]) -> f64 {
        match self {
            Func::Exp => args[0].exp(),
            Func::Pow => args[0].powf(args[1]),
            Func::Sin => args[0].sin(),
            Func::Cos => args[0].cos(),
            Func::Sqrt => args[0].sqrt(),
            Func::Fabs => args[0].abs(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    /// Integer literal; produced for indices, unrolled loop variables, `s` and `n`.
    Int(i64),
    Num(f64),
    Var(String),
    Index { array: String, indices: Vec<Expr> },
    /// `%in[...]`
    Input(Vec<Expr>),
    /// `%RHS(input [, time])`
    Rhs { input: Box<Expr>, time: Option<Box<Expr>> },
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

/// An assignment `target = value`. `a += b` is stored as `a = a + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Stmt {
    pub target: Expr,
    pub value: Expr,
}

impl Expr {
    pub fn var(name: &str) -> Expr {
        Expr::Var(name.to_string())
    }

    pub fn bin(op: BinOp, a: Expr, b: Expr) -> Expr {
        Expr::Bin(op, Box::new(a), Box::new(b))
    }

    pub fn is_literal(&self) -> bool {
        matches!(self, Expr::Int(_) | Expr::Num(_))
    }

    pub fn literal_value(&self) -> Option<f64> {
        match self {
            Expr::Int(v) => Some(*v as f64),
            Expr::Num(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            Expr::Int(v) => Some(*v),
            Expr::Num(v) if v.fract() == 0.0 && v.abs() < 9.0e15 => Some(*v as i64),
            _ => None,
        }
    }

    fn children(&self) -> Vec<&Expr> {
        match self {
            Expr::Int(_) | Expr::Num(_) | Expr::Var(_) => vec![],
            Expr::Index { indices, .. } | Expr::Input(indices) => indices.iter().collect(),
            Expr::Rhs { input, time } => {
                let mut v = vec![input.as_ref()];
                if let Some(t) = time {
                    v.push(t.as_ref());
                }
                v
            }
            Expr::Neg(e) => vec![e.as_ref()],
            Expr::Bin(_, a, b) => vec![a.as_ref(), b.as_ref()],
            Expr::Call(_, args) => args.iter().collect(),
        }
    }

    /// Pre-order visit of every node.
    pub fn visit(&self, f: &mut dyn FnMut(&Expr)) {
        f(self);
        for c in self.children() {
            c.visit(f);
        }
    }

    /// Scalar identifiers (not array names).
    pub fn identifiers(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.visit(&mut |e| {
            if let Expr::Var(n) = e {
                out.insert(n.clone());
            }
        });
        out
    }

    pub fn arrays(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.visit(&mut |e| {
            if let Expr::Index { array, .. } = e {
                out.insert(array.clone());
            }
        });
        out
    }

    pub fn contains_rhs(&self) -> bool {
        let mut found = false;
        self.visit(&mut |e| found |= matches!(e, Expr::Rhs { .. }));
        found
    }

    pub fn contains_input(&self) -> bool {
        let mut found = false;
        self.visit(&mut |e| found |= matches!(e, Expr::Input(_)));
        found
    }

    /// Bottom-up rewrite. `f` sees each node after its children were rewritten.
    pub fn try_rewrite<E>(&self, f: &mut dyn FnMut(Expr) -> Result<Expr, E>) -> Result<Expr, E> {
        let rebuilt = match self {
            Expr::Int(_) | Expr::Num(_) | Expr::Var(_) => self.clone(),
            Expr::Index { array, indices } => Expr::Index {
                array: array.clone(),
                indices: indices.iter().map(|i| i.try_rewrite(f)).collect::<Result<_, _>>()?,
            },
            Expr::Input(indices) => {
                Expr::Input(indices.iter().map(|i| i.try_rewrite(f)).collect::<Result<_, _>>()?)
            }
            Expr::Rhs { input, time } => Expr::Rhs {
                input: Box::new(input.try_rewrite(f)?),
                time: match time {
                    Some(t) => Some(Box::new(t.try_rewrite(f)?)),
                    None => None,
                },
            },
            Expr::Neg(e) => Expr::Neg(Box::new(e.try_rewrite(f)?)),
            Expr::Bin(op, a, b) => Expr::bin(*op, a.try_rewrite(f)?, b.try_rewrite(f)?),
            Expr::Call(func, args) => {
                Expr::Call(*func, args.iter().map(|a| a.try_rewrite(f)).collect::<Result<_, _>>()?)
            }
        };
        f(rebuilt)
    }

    pub fn rewrite(&self, f: &mut dyn FnMut(Expr) -> Expr) -> Expr {
        self.try_rewrite::<std::convert::Infallible>(&mut |e| Ok(f(e)))
            .unwrap_or_else(|never| match never {})
    }

    /// Replace scalar identifiers using `lookup`; unmatched names are kept.
    pub fn substitute(&self, lookup: &dyn Fn(&str) -> Option<Expr>) -> Expr {
        self.rewrite(&mut |e| match &e {
            Expr::Var(name) => lookup(name).unwrap_or(e),
            _ => e,
        })
    }

    /// Evaluates an expression made of literals and scalar identifiers.
    pub fn eval_scalar(&self, lookup: &dyn Fn(&str) -> Option<f64>) -> Result<f64, EvalError> {
        let v = match self {
            Expr::Int(v) => *v as f64,
            Expr::Num(v) => *v,
            Expr::Var(name) => lookup(name).ok_or_else(|| EvalError::Unbound(name.clone()))?,
            Expr::Index { array, .. } => return Err(EvalError::Unbound(array.clone())),
            Expr::Input(_) => return Err(EvalError::Unbound("%in".into())),
            Expr::Rhs { .. } => return Err(EvalError::Unbound("%RHS".into())),
            Expr::Neg(e) => -e.eval_scalar(lookup)?,
            Expr::Bin(op, a, b) => op.apply(a.eval_scalar(lookup)?, b.eval_scalar(lookup)?),
            Expr::Call(func, args) => {
                let vals = args
                    .iter()
                    .map(|a| a.eval_scalar(lookup))
                    .collect::<Result<Vec<_>, _>>()?;
                func.apply(&vals)
            }
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(EvalError::Domain(format!("non-finite value of `{self}`")))
        }
    }

    /// Coefficients `(slope, offset)` if the expression is affine in `var`
    /// and contains no other identifiers or arrays.
    pub fn affine_in(&self, var: &str) -> Option<(f64, f64)> {
        match self {
            Expr::Int(v) => Some((0.0, *v as f64)),
            Expr::Num(v) => Some((0.0, *v)),
            Expr::Var(n) if n == var => Some((1.0, 0.0)),
            Expr::Neg(e) => e.affine_in(var).map(|(a, b)| (-a, -b)),
            Expr::Bin(op, l, r) => {
                let (a1, b1) = l.affine_in(var)?;
                let (a2, b2) = r.affine_in(var)?;
                match op {
                    BinOp::Add => Some((a1 + a2, b1 + b2)),
                    BinOp::Sub => Some((a1 - a2, b1 - b2)),
                    BinOp::Mul if a1 == 0.0 => Some((b1 * a2, b1 * b2)),
                    BinOp::Mul if a2 == 0.0 => Some((a1 * b2, b1 * b2)),
                    BinOp::Div if a2 == 0.0 && b2 != 0.0 => Some((a1 / b2, b1 / b2)),
                    _ => None,
                }
            }
            _ => None,
        }
    }

    /// Rate of change with respect to `var`, treating every other identifier
    /// and array access as a constant. `None` when `var` enters non-linearly.
    pub fn slope_in(&self, var: &str) -> Option<f64> {
        match self {
            Expr::Var(n) if n == var => Some(1.0),
            Expr::Int(_) | Expr::Num(_) | Expr::Var(_) => Some(0.0),
            Expr::Neg(e) => e.slope_in(var).map(|s| -s),
            Expr::Bin(op, l, r) => {
                let sl = l.slope_in(var)?;
                let sr = r.slope_in(var)?;
                match op {
                    BinOp::Add => Some(sl + sr),
                    BinOp::Sub => Some(sl - sr),
                    BinOp::Mul => match (sl == 0.0, sr == 0.0) {
                        (true, true) => Some(0.0),
                        (true, false) => l.literal_value().map(|c| c * sr),
                        (false, true) => r.literal_value().map(|c| c * sl),
                        (false, false) => None,
                    },
                    BinOp::Div => {
                        if sr != 0.0 {
                            None
                        } else if sl == 0.0 {
                            Some(0.0)
                        } else {
                            r.literal_value().map(|c| sl / c)
                        }
                    }
                }
            }
            other => {
                if other.identifiers().contains(var) {
                    None
                } else {
                    Some(0.0)
                }
            }
        }
    }

    /// Algebraic clean-up that never changes the value of a finite evaluation:
    /// literal folding, `x*0`, `x*1`, `x+0`, `x/1`, and sign normalisation.
    pub fn simplify(&self) -> Expr {
        self.rewrite(&mut simplify_node)
    }
}

fn simplify_node(e: Expr) -> Expr {
    match e {
        Expr::Neg(inner) => match *inner {
            Expr::Int(v) => Expr::Int(-v),
            Expr::Num(v) => Expr::Num(-v),
            Expr::Neg(x) => *x,
            other => Expr::Neg(Box::new(other)),
        },
        Expr::Bin(op, a, b) => simplify_bin(op, *a, *b),
        other => other,
    }
}

fn is_zero(e: &Expr) -> bool {
    e.literal_value() == Some(0.0)
}

fn is_one(e: &Expr) -> bool {
    e.literal_value() == Some(1.0)
}

fn simplify_bin(op: BinOp, a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Int(x), Expr::Int(y)) if op != BinOp::Div => {
            let r = match op {
                BinOp::Add => x.checked_add(*y),
                BinOp::Sub => x.checked_sub(*y),
                BinOp::Mul => x.checked_mul(*y),
                BinOp::Div => None,
            };
            if let Some(r) = r {
                return Expr::Int(r);
            }
        }
        (Expr::Int(x), Expr::Int(y)) if *y != 0 && x % y == 0 => return Expr::Int(x / y),
        _ => {}
    }
    if let (Some(x), Some(y)) = (a.literal_value(), b.literal_value()) {
        let r = op.apply(x, y);
        if r.is_finite() {
            return Expr::Num(r);
        }
    }
    match op {
        BinOp::Mul => {
            if is_zero(&a) || is_zero(&b) {
                return if matches!(a, Expr::Int(_)) || matches!(b, Expr::Int(_)) {
                    Expr::Int(0)
                } else {
                    Expr::Num(0.0)
                };
            }
            if is_one(&a) {
                return b;
            }
            if is_one(&b) {
                return a;
            }
            Expr::bin(op, a, b)
        }
        BinOp::Div => {
            if is_one(&b) {
                return a;
            }
            Expr::bin(op, a, b)
        }
        BinOp::Add => {
            if is_zero(&b) {
                return a;
            }
            if is_zero(&a) {
                return b;
            }
            match b {
                Expr::Neg(inner) => Expr::bin(BinOp::Sub, a, *inner),
                Expr::Int(v) if v < 0 => Expr::bin(BinOp::Sub, a, Expr::Int(-v)),
                Expr::Num(v) if v < 0.0 => Expr::bin(BinOp::Sub, a, Expr::Num(-v)),
                Expr::Bin(BinOp::Mul, l, r) if matches!(l.literal_value(), Some(c) if c < 0.0) => {
                    let flipped = match *l {
                        Expr::Int(v) => Expr::Int(-v),
                        Expr::Num(v) => Expr::Num(-v),
                        _ => unreachable!(),
                    };
                    Expr::bin(BinOp::Sub, a, Expr::bin(BinOp::Mul, flipped, *r))
                }
                b => Expr::bin(op, a, b),
            }
        }
        BinOp::Sub => {
            if is_zero(&b) {
                return a;
            }
            if is_zero(&a) {
                return Expr::Neg(Box::new(b));
            }
            match b {
                Expr::Neg(inner) => Expr::bin(BinOp::Add, a, *inner),
                b => Expr::bin(op, a, b),
            }
        }
    }
}

impl Stmt {
    pub fn new(target: Expr, value: Expr) -> Stmt {
        Stmt { target, value }
    }

    /// A statement whose right-hand side is exactly its target.
    pub fn is_identity(&self) -> bool {
        self.target == self.value
    }

    pub fn simplify(&self) -> Stmt {
        Stmt {
            target: self.target.rewrite(&mut |e| match e {
                Expr::Index { .. } | Expr::Var(_) => e,
                other => simplify_node(other),
            }),
            value: self.value.simplify(),
        }
    }

    pub fn map(&self, f: &mut dyn FnMut(&Expr) -> Expr) -> Stmt {
        Stmt {
            target: f(&self.target),
            value: f(&self.value),
        }
    }

    pub fn arrays(&self) -> BTreeSet<String> {
        let mut a = self.target.arrays();
        a.extend(self.value.arrays());
        a
    }

    pub fn identifiers(&self) -> BTreeSet<String> {
        let mut a = self.target.identifiers();
        a.extend(self.value.identifiers());
        a
    }
}

// ---------------------------------------------------------------------------
// Printing
// ---------------------------------------------------------------------------

const PREC_UNARY: u8 = 3;
const PREC_ATOM: u8 = 4;

fn precedence(e: &Expr) -> u8 {
    match e {
        Expr::Bin(op, ..) => op.precedence(),
        Expr::Neg(_) => PREC_UNARY,
        Expr::Int(v) if *v < 0 => PREC_UNARY,
        Expr::Num(v) if v.is_sign_negative() => PREC_UNARY,
        _ => PREC_ATOM,
    }
}

/// Formats a float so that C reads it back as the same double.
pub fn format_f64(v: f64) -> String {
    // Debug output is the shortest round-tripping form and always carries a
    // `.` or an exponent, so it never reads back as an integer literal.
    format!("{v:?}")
}

fn write_wrapped(f: &mut fmt::Formatter<'_>, e: &Expr, wrap: bool) -> fmt::Result {
    if wrap {
        write!(f, "({e})")
    } else {
        write!(f, "{e}")
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Int(v) => write!(f, "{v}"),
            Expr::Num(v) => write!(f, "{}", format_f64(*v)),
            Expr::Var(n) => write!(f, "{n}"),
            Expr::Index { array, indices } => {
                write!(f, "{array}")?;
                for i in indices {
                    write!(f, "[{i}]")?;
                }
                Ok(())
            }
            Expr::Input(indices) => {
                write!(f, "%in")?;
                for i in indices {
                    write!(f, "[{i}]")?;
                }
                Ok(())
            }
            Expr::Rhs { input, time } => match time {
                Some(t) => write!(f, "%RHS({input}, {t})"),
                None => write!(f, "%RHS({input})"),
            },
            Expr::Neg(e) => {
                write!(f, "-")?;
                write_wrapped(f, e, precedence(e) < PREC_ATOM)
            }
            Expr::Bin(op, a, b) => {
                let p = op.precedence();
                write_wrapped(f, a, precedence(a) < p)?;
                write!(f, " {} ", op.symbol())?;
                write_wrapped(f, b, precedence(b) <= p)
            }
            Expr::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (k, a) in args.iter().enumerate() {
                    if k > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{a}")?;
                }
                write!(f, ")")
            }
        }
    }
}

impl fmt::Display for Stmt {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // `x op= rest` reads back as `x = x op (rest)`, whatever `rest` is.
        if let Expr::Bin(op @ (BinOp::Add | BinOp::Sub), lhs, rest) = &self.value {
            if **lhs == self.target {
                return write!(f, "{} {}= {rest};", self.target, op.symbol());
            }
        }
        write!(f, "{} = {};", self.target, self.value)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::refexec::parse::{parse_expr, parse_stmt};

    #[test]
    fn printing_keeps_right_nested_structure() {
        let e = parse_expr("a - (b - c)").unwrap();
        assert_eq!(e.to_string(), "a - (b - c)");
        assert_eq!(parse_expr(&e.to_string()).unwrap(), e);
        let e = parse_expr("(a + b) * -c").unwrap();
        assert_eq!(e.to_string(), "(a + b) * -c");
    }

    #[test]
    fn compound_assignment_printing_roundtrips() {
        for src in ["dy[j] += b * F[i][j];", "x -= (a - b);", "x += (a + b);", "y = y - a * b;"] {
            let s = parse_stmt(src).unwrap();
            assert_eq!(parse_stmt(&s.to_string()).unwrap(), s, "{src}");
        }
    }

    #[test]
    fn zero_and_one_coefficients_fold_away() {
        let e = parse_expr("x + h * 0.0 * F[1][j]").unwrap().simplify();
        assert_eq!(e, Expr::var("x"));
        let e = parse_expr("1.0 * (a - b)").unwrap().simplify();
        assert_eq!(e.to_string(), "a - b");
        let e = parse_expr("x + -0.5 * y").unwrap().simplify();
        assert_eq!(e.to_string(), "x - 0.5 * y");
    }

    #[test]
    fn affine_and_slope() {
        let e = parse_expr("2*n - 1").unwrap();
        assert_eq!(e.affine_in("n"), Some((2.0, -1.0)));
        assert_eq!(parse_expr("n*n").unwrap().affine_in("n"), None);
        assert_eq!(parse_expr("j - 1").unwrap().slope_in("j"), Some(1.0));
        assert_eq!(parse_expr("l").unwrap().slope_in("j"), Some(0.0));
    }

    #[test]
    fn floats_print_as_c_doubles() {
        assert_eq!(format_f64(1.0), "1.0");
        assert_eq!(format_f64(0.2205), "0.2205");
        assert_eq!(format_f64(1e-7), "1e-7");
    }

    mod props {
        use proptest::prelude::*;

        use super::*;

        fn leaf() -> impl Strategy<Value = Expr> {
            prop_oneof![
                (0i64..1000).prop_map(Expr::Int),
                (1e-6f64..1e6).prop_map(Expr::Num),
                prop::sample::select(vec!["x", "y", "h", "t"]).prop_map(Expr::var),
            ]
        }

        fn scalar_expr() -> impl Strategy<Value = Expr> {
            leaf().prop_recursive(5, 48, 3, |inner| {
                prop_oneof![
                    inner.clone().prop_map(|e| Expr::Neg(Box::new(e))),
                    (prop::sample::select(vec![BinOp::Add, BinOp::Sub, BinOp::Mul, BinOp::Div]), inner.clone(), inner.clone())
                        .prop_map(|(op, a, b)| Expr::bin(op, a, b)),
                    inner.clone().prop_map(|e| Expr::Call(Func::Sin, vec![e])),
                    (inner.clone(), inner).prop_map(|(a, b)| Expr::Call(Func::Pow, vec![a, b])),
                ]
            })
        }

        fn indexed_expr() -> impl Strategy<Value = Expr> {
            scalar_expr().prop_recursive(2, 16, 2, |inner| {
                (inner.clone(), inner).prop_map(|(a, b)| Expr::bin(
                    BinOp::Add,
                    Expr::Index { array: "F".into(), indices: vec![a, Expr::var("j")] },
                    b,
                ))
            })
        }

        proptest! {
            #[test]
            fn print_then_parse_is_identity(e in indexed_expr()) {
                prop_assert_eq!(parse_expr(&e.to_string()).unwrap(), e);
            }

            #[test]
            fn scalar_evaluation_is_total(e in scalar_expr(), x in -10.0f64..10.0) {
                match e.eval_scalar(&|name| Some(if name == "x" { x } else { 0.5 })) {
                    Ok(v) => prop_assert!(v.is_finite()),
                    Err(err) => prop_assert!(matches!(err, EvalError::Domain(_)), "{}", err),
                }
            }

            #[test]
            fn simplify_preserves_value(e in scalar_expr(), x in -10.0f64..10.0) {
                let env = |name: &str| Some(if name == "x" { x } else { 0.5 });
                let Ok(a) = e.eval_scalar(&env) else { return Ok(()) };
                let b = e.simplify().eval_scalar(&env).unwrap();
                prop_assert!(a == b || ((a - b) / a).abs() <= 1e-12, "{} vs {}", a, b);
            }
        }
    }
}
