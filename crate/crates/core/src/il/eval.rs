use std::collections::HashMap;

use thiserror::Error;

use super::{BoolOp, Circuit, CmpOp, CustomFn, Expr, IntOp, Word};

/// Variable bindings for evaluation.
pub type Env = HashMap<String, Word>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Value {
    Int(Word),
    Bool(bool),
}

impl Value {
    pub fn as_int(self) -> Option<Word> {
        match self {
            Value::Int(w) => Some(w),
            Value::Bool(_) => None,
        }
    }

    pub fn as_bool(self) -> Option<bool> {
        match self {
            Value::Bool(b) => Some(b),
            Value::Int(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("unbound variable `{0}`")]
    Unbound(String),
    #[error("ill-typed expression `{0}`")]
    IllTyped(String),
    #[error("circuit takes {expected} inputs, got {found}")]
    Arity { expected: usize, found: usize },
}

/// Evaluates an expression. Total on well-typed expressions whose
/// variables are bound in `env`.
pub fn eval_expr(expr: &Expr, env: &Env) -> Result<Value, EvalError> {
    let int = |e: &Expr| -> Result<Word, EvalError> {
        eval_expr(e, env)?.as_int().ok_or_else(|| EvalError::IllTyped(expr.to_string()))
    };
    let boolean = |e: &Expr| -> Result<bool, EvalError> {
        eval_expr(e, env)?.as_bool().ok_or_else(|| EvalError::IllTyped(expr.to_string()))
    };
    Ok(match expr {
        Expr::Var(name) => Value::Int(*env.get(name).ok_or_else(|| EvalError::Unbound(name.clone()))?),
        Expr::Int(w) => Value::Int(*w),
        Expr::Bool(b) => Value::Bool(*b),
        Expr::IntBin(op, l, r) => Value::Int(eval_int_op(*op, int(l)?, int(r)?)),
        Expr::BoolBin(op, l, r) => {
            let (a, b) = (boolean(l)?, boolean(r)?);
            Value::Bool(match op {
                BoolOp::Land => a && b,
                BoolOp::Lor => a || b,
                BoolOp::Lxor => a != b,
            })
        }
        Expr::Not(e) => Value::Bool(!boolean(e)?),
        Expr::Cmp(op, l, r) => {
            let (a, b) = (int(l)?, int(r)?);
            Value::Bool(match op {
                CmpOp::Eq => a == b,
                CmpOp::Neq => a != b,
                CmpOp::Lt => a < b,
                CmpOp::Leq => a <= b,
                CmpOp::Gt => a > b,
                CmpOp::Geq => a >= b,
            })
        }
        Expr::Ite(c, t, e) => {
            if boolean(c)? {
                Value::Int(int(t)?)
            } else {
                Value::Int(int(e)?)
            }
        }
        Expr::Call(func, args) => {
            let words = args.iter().map(int).collect::<Result<Vec<_>, _>>()?;
            if words.len() != func.arity() {
                return Err(EvalError::IllTyped(expr.to_string()));
            }
            Value::Int(eval_custom(*func, &words))
        }
    })
}

/// Unsigned word semantics of a binary integer operator.
pub fn eval_int_op(op: IntOp, a: Word, b: Word) -> Word {
    match op {
        IntOp::Add => a.wrapping_add(b),
        IntOp::Sub => a.wrapping_sub(b),
        IntOp::Mul => a.wrapping_mul(b),
        IntOp::Div => a.checked_div(b).unwrap_or(Word::MAX),
        IntOp::Rem => a.checked_rem(b).unwrap_or(a),
        IntOp::Pow => a.wrapping_pow(b),
        IntOp::And => a & b,
        IntOp::Or => a | b,
        IntOp::Xor => a ^ b,
    }
}

/// RV32IM semantics of the inline-assembly functions.
///
/// # Panics
/// If `args` does not hold exactly two words.
pub fn eval_custom(func: CustomFn, args: &[Word]) -> Word {
    let [a, b] = args else {
        panic!("{} takes 2 arguments, got {}", func.name(), args.len());
    };
    let (a, b) = (*a, *b);
    let (sa, sb) = (a as i32, b as i32);
    match func {
        CustomFn::Mulh => ((i64::from(sa) * i64::from(sb)) >> 32) as Word,
        CustomFn::Mulhsu => ((i128::from(sa) * i128::from(b)) >> 32) as Word,
        CustomFn::Mulhu => ((u64::from(a) * u64::from(b)) >> 32) as Word,
        CustomFn::Divs => {
            if b == 0 {
                Word::MAX
            } else {
                sa.wrapping_div(sb) as Word
            }
        }
        CustomFn::Rems => {
            if b == 0 {
                a
            } else {
                sa.wrapping_rem(sb) as Word
            }
        }
        CustomFn::Sll => a << (b & 31),
        CustomFn::Srl => a >> (b & 31),
        CustomFn::Sra => (sa >> (b & 31)) as Word,
        CustomFn::Slt => Word::from(sa < sb),
        CustomFn::Sltu => Word::from(a < b),
    }
}

/// Evaluates a circuit on positional inputs.
pub fn eval_circuit(circuit: &Circuit, inputs: &[Word]) -> Result<Word, EvalError> {
    if inputs.len() != circuit.arity() {
        return Err(EvalError::Arity { expected: circuit.arity(), found: inputs.len() });
    }
    let env: Env = circuit.input_names().map(str::to_owned).zip(inputs.iter().copied()).collect();
    eval_expr(&circuit.output, &env)?
        .as_int()
        .ok_or_else(|| EvalError::IllTyped(circuit.output.to_string()))
}
