//! Reference interpreter for kernel statements, the PIRK oracle, and
//! sequential execution of generated variants.

pub mod expr;
pub mod interp;
pub mod parse;
pub mod pirk;
pub mod variant;

pub use expr::{BinOp, Expr, Func, Stmt};
pub use interp::{eval_statement, Array, Env};
pub use parse::{parse_expr, parse_stmt, ParseError};
pub use pirk::{pirk_reference_step, RhsEvaluator};
pub use variant::execute_variant;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("unbound identifier `{0}`")]
    Unbound(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("index {index} out of bounds for dimension {dim} of `{array}` (extent {extent})")]
    OutOfBounds {
        array: String,
        dim: usize,
        index: i64,
        extent: usize,
    },
    #[error("non-integer index {value} into `{array}`")]
    NonInteger { array: String, value: f64 },
    #[error("shape error: {0}")]
    Shape(String),
    #[error("{0}")]
    Setup(String),
}
