//! Executes a [`CompiledUnit`] under time and size limits.

use std::sync::Arc;
use std::time::{Duration, Instant};

use crate::ast::{BinOp, UnOp};
use crate::compile::{CExpr, CFunc, CStmt, CompiledUnit};
use crate::error::RunError;
use crate::value::Value;

#[derive(Debug, Clone, Copy)]
pub struct Limits {
    pub timeout: Duration,
    /// Largest string (bytes) or array (elements) a program may build.
    pub max_value_len: usize,
    pub max_call_depth: usize,
}

impl Default for Limits {
    fn default() -> Self {
        Limits { timeout: Duration::from_secs(30), max_value_len: 1 << 20, max_call_depth: 64 }
    }
}

const CLOCK_CHECK_INTERVAL: u64 = 1024;

enum Flow {
    Next,
    Return(Value),
}

struct Machine<'u> {
    unit: &'u CompiledUnit,
    limits: Limits,
    deadline: Instant,
    ticks: u64,
    depth: usize,
}

type RResult<T> = Result<T, RunError>;

impl CompiledUnit {
    /// Runs the entry function on `args`.
    pub fn run(&self, args: Vec<Value>, limits: Limits) -> RResult<Value> {
        let mut m = Machine {
            unit: self,
            limits,
            deadline: Instant::now() + limits.timeout,
            ticks: 0,
            depth: 0,
        };
        let entry = &self.funcs[self.entry];
        if args.len() != entry.n_params {
            return Err(RunError::Fault(format!(
                "entry expects {} arguments, got {}",
                entry.n_params,
                args.len()
            )));
        }
        m.call(self.entry, args)
    }
}

impl<'u> Machine<'u> {
    fn tick(&mut self) -> RResult<()> {
        self.ticks += 1;
        if self.ticks % CLOCK_CHECK_INTERVAL == 0 && Instant::now() >= self.deadline {
            return Err(RunError::Timeout);
        }
        Ok(())
    }

    fn call(&mut self, func: usize, args: Vec<Value>) -> RResult<Value> {
        self.depth += 1;
        if self.depth > self.limits.max_call_depth {
            return Err(RunError::Fault("call depth limit exceeded".into()));
        }
        self.tick()?;
        let f: &'u CFunc = &self.unit.funcs[func];
        let mut slots = args;
        slots.resize(f.n_slots, Value::Int(0));
        let flow = self.block(&f.body, &mut slots)?;
        self.depth -= 1;
        match flow {
            Flow::Return(v) => Ok(v),
            Flow::Next => Err(RunError::Fault("function ended without return".into())),
        }
    }

    fn block(&mut self, stmts: &'u [CStmt], slots: &mut Vec<Value>) -> RResult<Flow> {
        for s in stmts {
            if let Flow::Return(v) = self.stmt(s, slots)? {
                return Ok(Flow::Return(v));
            }
        }
        Ok(Flow::Next)
    }

    fn stmt(&mut self, stmt: &'u CStmt, slots: &mut Vec<Value>) -> RResult<Flow> {
        match stmt {
            CStmt::Set(slot, e) => {
                slots[*slot] = self.eval(e, slots)?;
            }
            CStmt::SetIndex(slot, index, value) => {
                let i = self.int(index, slots)?;
                let v = self.eval(value, slots)?;
                let Value::Array(items) = &mut slots[*slot] else {
                    return Err(RunError::Fault("indexed assignment on non-array".into()));
                };
                let len = items.len();
                let idx = checked_index(i, len)?;
                Arc::make_mut(items)[idx] = v;
            }
            CStmt::If(cond, then_block, else_block) => {
                let branch = if self.bool(cond, slots)? { then_block } else { else_block };
                return self.block(branch, slots);
            }
            CStmt::While(cond, body) => {
                while self.bool(cond, slots)? {
                    self.tick()?;
                    if let Flow::Return(v) = self.block(body, slots)? {
                        return Ok(Flow::Return(v));
                    }
                }
            }
            CStmt::Return(e) => return Ok(Flow::Return(self.eval(e, slots)?)),
            CStmt::Eval(e) => {
                self.eval(e, slots)?;
            }
        }
        Ok(Flow::Next)
    }

    fn int(&mut self, e: &'u CExpr, slots: &[Value]) -> RResult<i64> {
        match self.eval(e, slots)? {
            Value::Int(v) => Ok(v),
            other => Err(RunError::Fault(format!("expected int, found {other:?}"))),
        }
    }

    fn bool(&mut self, e: &'u CExpr, slots: &[Value]) -> RResult<bool> {
        match self.eval(e, slots)? {
            Value::Bool(v) => Ok(v),
            other => Err(RunError::Fault(format!("expected bool, found {other:?}"))),
        }
    }

    fn eval(&mut self, e: &'u CExpr, slots: &[Value]) -> RResult<Value> {
        Ok(match e {
            CExpr::Int(v) => Value::Int(*v),
            CExpr::Bool(b) => Value::Bool(*b),
            CExpr::Str(s) => Value::Str(s.clone()),
            CExpr::Array(items) => {
                let mut out = Vec::with_capacity(items.len());
                for item in items {
                    out.push(self.eval(item, slots)?);
                }
                Value::array(out)
            }
            CExpr::Local(slot) => slots[*slot].clone(),
            CExpr::Unary(UnOp::Neg, inner) => {
                let v = self.int(inner, slots)?;
                Value::Int(v.checked_neg().ok_or_else(overflow)?)
            }
            CExpr::Unary(UnOp::Not, inner) => Value::Bool(!self.bool(inner, slots)?),
            CExpr::Binary(BinOp::And, l, r) => {
                Value::Bool(self.bool(l, slots)? && self.bool(r, slots)?)
            }
            CExpr::Binary(BinOp::Or, l, r) => {
                Value::Bool(self.bool(l, slots)? || self.bool(r, slots)?)
            }
            CExpr::Binary(op, l, r) => {
                let lv = self.eval(l, slots)?;
                let rv = self.eval(r, slots)?;
                self.binary(*op, lv, rv)?
            }
            CExpr::Call(func, args) => {
                let mut vals = Vec::with_capacity(args.len());
                for a in args {
                    vals.push(self.eval(a, slots)?);
                }
                self.call(*func, vals)?
            }
            CExpr::Builtin(b, args) => {
                let mut vals = Vec::with_capacity(args.len());
                for a in args {
                    vals.push(self.eval(a, slots)?);
                }
                self.tick()?;
                b.call(vals, self.limits.max_value_len)?
            }
            CExpr::Index(target, index) => {
                let t = self.eval(target, slots)?;
                let i = self.int(index, slots)?;
                let Value::Array(items) = t else {
                    return Err(RunError::Fault("indexing a non-array".into()));
                };
                items[checked_index(i, items.len())?].clone()
            }
        })
    }

    fn binary(&mut self, op: BinOp, l: Value, r: Value) -> RResult<Value> {
        use Value::*;
        Ok(match (op, l, r) {
            (BinOp::Add, Int(a), Int(b)) => Int(a.checked_add(b).ok_or_else(overflow)?),
            (BinOp::Sub, Int(a), Int(b)) => Int(a.checked_sub(b).ok_or_else(overflow)?),
            (BinOp::Mul, Int(a), Int(b)) => Int(a.checked_mul(b).ok_or_else(overflow)?),
            (BinOp::Div, Int(_), Int(0)) | (BinOp::Rem, Int(_), Int(0)) => {
                return Err(RunError::Fault("division by zero".into()));
            }
            (BinOp::Div, Int(a), Int(b)) => Int(a.checked_div(b).ok_or_else(overflow)?),
            (BinOp::Rem, Int(a), Int(b)) => Int(a.checked_rem(b).ok_or_else(overflow)?),
            (BinOp::Add, Str(a), Str(b)) => {
                if a.len() + b.len() > self.limits.max_value_len {
                    return Err(RunError::Fault("string exceeds size limit".into()));
                }
                let mut s = String::with_capacity(a.len() + b.len());
                s.push_str(&a);
                s.push_str(&b);
                Value::str(s)
            }
            (BinOp::Lt, Int(a), Int(b)) => Bool(a < b),
            (BinOp::Le, Int(a), Int(b)) => Bool(a <= b),
            (BinOp::Gt, Int(a), Int(b)) => Bool(a > b),
            (BinOp::Ge, Int(a), Int(b)) => Bool(a >= b),
            (BinOp::Eq, a, b) => Bool(a == b),
            (BinOp::Ne, a, b) => Bool(a != b),
            (op, a, b) => {
                return Err(RunError::Fault(format!("bad operands for {}: {a:?}, {b:?}", op.symbol())));
            }
        })
    }
}

fn overflow() -> RunError {
    RunError::Fault("integer overflow".into())
}

fn checked_index(i: i64, len: usize) -> RResult<usize> {
    if i < 0 || i as u64 >= len as u64 {
        return Err(RunError::Fault(format!("index {i} out of bounds for length {len}")));
    }
    Ok(i as usize)
}
