//! Arithmetic and comparison semantics shared by the deductive engine
//! and the embedded SQL evaluator.

use crate::ast::{ArithOp, CmpOp};
use crate::value::Value;
use std::cmp::Ordering;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EvalError {
    #[error("arithmetic on non-numeric value '{0}'")]
    NonNumeric(String),
    #[error("unknown function '{0}'")]
    UnknownFunction(String),
    #[error("function '{0}' expects {1} argument(s)")]
    Arity(String, usize),
    #[error("cannot compare {0} with {1}")]
    Incomparable(String, String),
}

/// Division always yields a float; the other operators stay integral on
/// integer operands.
pub fn arith(op: ArithOp, a: &Value, b: &Value) -> Result<Value, EvalError> {
    let (x, y) = match (a.as_f64(), b.as_f64()) {
        (Some(x), Some(y)) => (x, y),
        _ => {
            let bad = if a.as_f64().is_none() { a } else { b };
            return Err(EvalError::NonNumeric(bad.to_string()));
        }
    };
    if let (Value::Int(i), Value::Int(j)) = (a, b) {
        match op {
            ArithOp::Add => return Ok(Value::Int(i + j)),
            ArithOp::Sub => return Ok(Value::Int(i - j)),
            ArithOp::Mul => return Ok(Value::Int(i * j)),
            ArithOp::Div => {}
        }
    }
    Ok(Value::Float(match op {
        ArithOp::Add => x + y,
        ArithOp::Sub => x - y,
        ArithOp::Mul => x * y,
        ArithOp::Div => x / y,
    }))
}

pub fn apply_func(name: &str, args: &[Value]) -> Result<Value, EvalError> {
    let unary = |args: &[Value]| -> Result<f64, EvalError> {
        if args.len() != 1 {
            return Err(EvalError::Arity(name.to_string(), 1));
        }
        args[0]
            .as_f64()
            .ok_or_else(|| EvalError::NonNumeric(args[0].to_string()))
    };
    match name.to_ascii_lowercase().as_str() {
        "sin" => Ok(Value::Float(unary(args)?.sin())),
        "cos" => Ok(Value::Float(unary(args)?.cos())),
        "abs" => {
            if args.len() != 1 {
                return Err(EvalError::Arity(name.to_string(), 1));
            }
            match &args[0] {
                Value::Int(i) => Ok(Value::Int(i.abs())),
                Value::Float(f) => Ok(Value::Float(f.abs())),
                v => Err(EvalError::NonNumeric(v.to_string())),
            }
        }
        other => Err(EvalError::UnknownFunction(other.to_string())),
    }
}

/// Comparison: numerics compare by value across int/float; strings
/// compare lexicographically; mixing strings and numbers is an error
/// except for (in)equality, which is false (true) across kinds.
pub fn compare(op: CmpOp, a: &Value, b: &Value) -> Result<bool, EvalError> {
    let ord: Option<Ordering> = match (a, b) {
        (Value::Str(x), Value::Str(y)) => Some(x.cmp(y)),
        _ => match (a.as_f64(), b.as_f64()) {
            (Some(x), Some(y)) => x.partial_cmp(&y),
            _ => None,
        },
    };
    match ord {
        Some(ord) => Ok(match op {
            CmpOp::Eq => ord == Ordering::Equal,
            CmpOp::Ne => ord != Ordering::Equal,
            CmpOp::Lt => ord == Ordering::Less,
            CmpOp::Le => ord != Ordering::Greater,
            CmpOp::Gt => ord == Ordering::Greater,
            CmpOp::Ge => ord != Ordering::Less,
        }),
        None => match op {
            CmpOp::Eq => Ok(false),
            CmpOp::Ne => Ok(true),
            _ => Err(EvalError::Incomparable(a.to_string(), b.to_string())),
        },
    }
}
