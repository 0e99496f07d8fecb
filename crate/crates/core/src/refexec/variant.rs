//! Sequential interpretation of an instantiated implementation variant.

use super::interp::{Array, Env, Program, ProgramNode};
use super::{EvalError, Expr};
use crate::codegen::{VNode, VariantInstance};
use crate::descfmt::OdeMethod;

fn program(nodes: &[VNode]) -> Vec<ProgramNode> {
    let mut out = Vec::new();
    for n in nodes {
        match n {
            VNode::Barrier => {}
            VNode::Loop { var, trips, body, .. } => out.push(ProgramNode::Loop {
                var: var.clone(),
                start: Expr::Int(0),
                trips: Expr::Int(*trips as i64),
                body: program(body),
            }),
            VNode::Kernel { specs, swap, .. } => {
                for g in specs {
                    out.extend(g.to_program());
                }
                if let Some((a, b)) = swap {
                    out.push(ProgramNode::Swap(a.clone(), b.clone()));
                }
            }
        }
    }
    out
}

/// Runs one timestep of `inst` from state `y` at time `t` with step `h`.
///
/// Stage vectors `Y` start as copies of `y`, `dy` starts at zero, and the
/// Butcher arrays `a`, `b`, `c` hold the coefficients of `method`. Barriers
/// are no-ops.
pub fn execute_variant(inst: &VariantInstance, method: &OdeMethod, y: &[f64], t: f64, h: f64) -> Result<Vec<f64>, EvalError> {
    if method.name != inst.method {
        return Err(EvalError::Setup(format!(
            "variant was specialized for {}, not {}",
            inst.method, method.name
        )));
    }
    if y.len() as u64 != inst.n {
        return Err(EvalError::Shape(format!("state has length {}, variant expects {}", y.len(), inst.n)));
    }
    let s = method.stages;
    let mut env = Env::new();
    for a in &inst.arrays {
        let dims = a
            .dims
            .iter()
            .map(|d| match d.as_int() {
                Some(v) if v >= 0 => Ok(v as usize),
                _ => Err(EvalError::Setup(format!("array `{}` has non-literal extent `{d}`", a.name))),
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut arr = Array::zeros(&dims);
        match (a.name.as_str(), dims.as_slice()) {
            ("a", [r, c]) if *r == s && *c == s => arr.data = method.a.concat(),
            ("b", [r]) if *r == s => arr.data = method.b.clone(),
            ("c", [r]) if *r == s => arr.data = method.c.clone(),
            ("y", [r]) if *r == y.len() => arr.data = y.to_vec(),
            ("Y", [r, c]) if *c == y.len() => arr.data = y.repeat(*r),
            ("a" | "b" | "c" | "y" | "Y", _) => {
                return Err(EvalError::Shape(format!("array `{}` has unexpected extents {dims:?}", a.name)))
            }
            _ => {}
        }
        env.set_array(&a.name, arr);
    }
    if env.array("y").is_none() {
        return Err(EvalError::Setup("variant does not reference the state vector `y`".into()));
    }
    for name in &inst.scalars {
        match name.as_str() {
            "h" => env.set_scalar("h", h),
            "t" => env.set_scalar("t", t),
            other => return Err(EvalError::Unbound(other.to_string())),
        }
    }
    let prog = Program::compile(&program(&inst.body), &mut env)?;
    prog.run(&mut env)?;
    Ok(env.array("y").expect("bound above").data.clone())
}
