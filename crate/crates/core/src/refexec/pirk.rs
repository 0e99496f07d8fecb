//! Direct PIRK timestep used as the semantic oracle for generated variants.

use std::ops::Range;

use super::interp::{Array, CompiledExpr, Env};
use super::{EvalError, Expr};
use crate::descfmt::{Ivp, OdeMethod};

const INPUT: &str = "%in";

/// Evaluates the IVP right-hand side f(t, x) component by component.
#[derive(Debug, Clone)]
pub struct RhsEvaluator {
    n: usize,
    env: Env,
    j: usize,
    t: usize,
    parts: Vec<(Range<usize>, CompiledExpr)>,
}

impl RhsEvaluator {
    pub fn new(ivp: &Ivp, n: u64) -> Result<RhsEvaluator, EvalError> {
        let ranges = ivp.ranges(n).map_err(|e| EvalError::Setup(e.to_string()))?;
        let mut env = Env::new();
        env.set_array(INPUT, Array::zeros(&[n as usize]));
        env.set_scalar("n", n as f64);
        let j = env.scalar_index("j");
        let t = env.scalar_index("t");
        let mut parts = Vec::new();
        for (c, range) in ivp.components.iter().zip(ranges) {
            let code = c.code.rewrite(&mut |e| match e {
                Expr::Input(idx) => Expr::Index {
                    array: INPUT.into(),
                    indices: idx,
                },
                Expr::Var(ref v) => ivp.constant(v).map(Expr::Num).unwrap_or(e),
                other => other,
            });
            parts.push((range, CompiledExpr::compile(&code, &mut env)?));
        }
        Ok(RhsEvaluator {
            n: n as usize,
            env,
            j,
            t,
            parts,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Writes f(t, input) into `out`.
    pub fn eval(&mut self, t: f64, input: &[f64], out: &mut [f64]) -> Result<(), EvalError> {
        if input.len() != self.n || out.len() != self.n {
            return Err(EvalError::Shape(format!(
                "RHS of size {} applied to vectors of length {} and {}",
                self.n,
                input.len(),
                out.len()
            )));
        }
        self.env
            .array_mut(INPUT)
            .expect("input bound")
            .data
            .copy_from_slice(input);
        self.env.set_scalar_at(self.t, t);
        for (range, code) in &self.parts {
            for j in range.clone() {
                self.env.set_scalar_at(self.j, j as f64);
                out[j] = code.eval(&self.env)?;
            }
        }
        Ok(())
    }
}

/// One PIRK timestep: predictor `Y_l = y`, `m` corrector sweeps
/// `Y_l = y + h * sum_i a_li f(t + c_i h, Y_i)`, and the final
/// `y + h * sum_i b_i f(t + c_i h, Y_i)`.
pub fn pirk_reference_step(method: &OdeMethod, ivp: &Ivp, y: &[f64], t: f64, h: f64) -> Result<Vec<f64>, EvalError> {
    let n = y.len();
    let s = method.stages;
    let mut rhs = RhsEvaluator::new(ivp, n as u64)?;
    let mut stages = vec![y.to_vec(); s];
    let mut f = vec![vec![0.0; n]; s];
    let eval_all = |rhs: &mut RhsEvaluator, stages: &[Vec<f64>], f: &mut [Vec<f64>]| {
        for i in 0..s {
            rhs.eval(t + method.c[i] * h, &stages[i], &mut f[i])?;
        }
        Ok::<_, EvalError>(())
    };
    for _ in 0..method.corrector_steps {
        eval_all(&mut rhs, &stages, &mut f)?;
        for (l, stage) in stages.iter_mut().enumerate() {
            for j in 0..n {
                let mut acc = 0.0;
                for i in 0..s {
                    acc += method.a[l][i] * f[i][j];
                }
                stage[j] = y[j] + h * acc;
            }
        }
    }
    eval_all(&mut rhs, &stages, &mut f)?;
    Ok((0..n)
        .map(|j| {
            let mut acc = 0.0;
            for i in 0..s {
                acc += method.b[i] * f[i][j];
            }
            y[j] + h * acc
        })
        .collect())
}
