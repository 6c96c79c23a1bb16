//! Type checking and lowering to a slot-resolved tree for execution.

use std::collections::HashMap;
use std::sync::Arc;

use crate::ast::*;
use crate::builtins::{Builtin, BUILTIN_NAMES};
use crate::error::{Diagnostic, Pos};
use crate::parser::parse_program;

#[derive(Debug, Clone)]
pub(crate) enum CExpr {
    Int(i64),
    Bool(bool),
    Str(Arc<str>),
    Array(Vec<CExpr>),
    Local(usize),
    Unary(UnOp, Box<CExpr>),
    Binary(BinOp, Box<CExpr>, Box<CExpr>),
    Call(usize, Vec<CExpr>),
    Builtin(Builtin, Vec<CExpr>),
    Index(Box<CExpr>, Box<CExpr>),
}

#[derive(Debug, Clone)]
pub(crate) enum CStmt {
    Set(usize, CExpr),
    SetIndex(usize, CExpr, CExpr),
    If(CExpr, Vec<CStmt>, Vec<CStmt>),
    While(CExpr, Vec<CStmt>),
    Return(CExpr),
    Eval(CExpr),
}

#[derive(Debug, Clone)]
pub(crate) struct CFunc {
    pub n_params: usize,
    pub n_slots: usize,
    pub body: Vec<CStmt>,
}

/// A type-checked program ready to run, with a designated entry function.
#[derive(Debug, Clone)]
pub struct CompiledUnit {
    pub(crate) funcs: Vec<CFunc>,
    pub(crate) entry: usize,
    signature: Signature,
}

impl CompiledUnit {
    pub fn signature(&self) -> &Signature {
        &self.signature
    }
}

/// Parses and type checks `src`, requiring a function matching `entry`.
pub fn compile(src: &str, entry: &Signature) -> Result<CompiledUnit, Diagnostic> {
    let program = parse_program(src)?;
    compile_program(&program, entry)
}

pub fn compile_program(program: &Program, entry: &Signature) -> Result<CompiledUnit, Diagnostic> {
    let checker = Checker::new(program)?;
    let entry_idx = match checker.index.get(entry.name.as_str()) {
        Some(&i) => i,
        None => {
            return Err(Diagnostic::bare(format!("missing entry function `{}`", entry.name)));
        }
    };
    let found = &program.functions[entry_idx];
    if !found.sig.matches(entry) {
        return Err(Diagnostic::new(
            found.pos,
            format!("entry function has signature `{}`, expected `{}`", found.sig, entry),
        ));
    }
    let mut funcs = Vec::with_capacity(program.functions.len());
    for f in &program.functions {
        funcs.push(checker.function(f)?);
    }
    Ok(CompiledUnit { funcs, entry: entry_idx, signature: found.sig.clone() })
}

struct Checker<'p> {
    program: &'p Program,
    index: HashMap<&'p str, usize>,
}

struct Scope {
    frames: Vec<HashMap<String, (usize, Type)>>,
    next_slot: usize,
}

impl Scope {
    fn lookup(&self, name: &str) -> Option<&(usize, Type)> {
        self.frames.iter().rev().find_map(|f| f.get(name))
    }

    fn declare(&mut self, name: &str, ty: Type, pos: Pos) -> Result<usize, Diagnostic> {
        let frame = self.frames.last_mut().expect("scope frame");
        if frame.contains_key(name) {
            return Err(Diagnostic::new(pos, format!("`{name}` is already defined in this scope")));
        }
        let slot = self.next_slot;
        self.next_slot += 1;
        frame.insert(name.to_string(), (slot, ty));
        Ok(slot)
    }
}

impl<'p> Checker<'p> {
    fn new(program: &'p Program) -> Result<Self, Diagnostic> {
        let mut index = HashMap::new();
        for (i, f) in program.functions.iter().enumerate() {
            let name = f.sig.name.as_str();
            if BUILTIN_NAMES.contains(&name) {
                return Err(Diagnostic::new(f.pos, format!("`{name}` is a builtin function")));
            }
            if index.insert(name, i).is_some() {
                return Err(Diagnostic::new(f.pos, format!("function `{name}` defined twice")));
            }
        }
        Ok(Checker { program, index })
    }

    fn function(&self, f: &Function) -> Result<CFunc, Diagnostic> {
        let mut scope = Scope { frames: vec![HashMap::new()], next_slot: 0 };
        for p in &f.sig.params {
            scope.declare(&p.name, p.ty.clone(), f.pos)?;
        }
        // Parameters and top-level locals share one frame, as in Java.
        let body = f
            .body
            .iter()
            .map(|s| self.stmt(s, &mut scope, &f.sig.ret))
            .collect::<Result<Vec<_>, _>>()?;
        if !block_returns(&f.body) {
            return Err(Diagnostic::new(
                f.pos,
                format!("function `{}` may finish without returning a value", f.sig.name),
            ));
        }
        Ok(CFunc { n_params: f.sig.params.len(), n_slots: scope.next_slot, body })
    }

    fn block(&self, block: &Block, scope: &mut Scope, ret: &Type) -> Result<Vec<CStmt>, Diagnostic> {
        scope.frames.push(HashMap::new());
        let out = block.iter().map(|s| self.stmt(s, scope, ret)).collect();
        scope.frames.pop();
        out
    }

    fn stmt(&self, stmt: &Stmt, scope: &mut Scope, ret: &Type) -> Result<CStmt, Diagnostic> {
        Ok(match &stmt.kind {
            StmtKind::Let { name, ty, init } => {
                let (value, found) = self.expr(init, scope, ty.as_ref())?;
                if let Some(ty) = ty {
                    expect_type(ty, &found, init.pos)?;
                }
                let slot = scope.declare(name, found, stmt.pos)?;
                CStmt::Set(slot, value)
            }
            StmtKind::Assign { target: LValue::Var(name), value } => {
                let Some((slot, ty)) = scope.lookup(name).cloned() else {
                    return Err(Diagnostic::new(stmt.pos, format!("unknown variable `{name}`")));
                };
                let (v, found) = self.expr(value, scope, Some(&ty))?;
                expect_type(&ty, &found, value.pos)?;
                CStmt::Set(slot, v)
            }
            StmtKind::Assign { target: LValue::Index(name, index), value } => {
                let Some((slot, ty)) = scope.lookup(name).cloned() else {
                    return Err(Diagnostic::new(stmt.pos, format!("unknown variable `{name}`")));
                };
                let Type::Array(elem) = ty else {
                    return Err(Diagnostic::new(stmt.pos, format!("`{name}` is not an array")));
                };
                let (i, ity) = self.expr(index, scope, None)?;
                expect_type(&Type::Int, &ity, index.pos)?;
                let (v, vty) = self.expr(value, scope, Some(&elem))?;
                expect_type(&elem, &vty, value.pos)?;
                CStmt::SetIndex(slot, i, v)
            }
            StmtKind::If { cond, then_block, else_block } => {
                let (c, cty) = self.expr(cond, scope, None)?;
                expect_type(&Type::Bool, &cty, cond.pos)?;
                let t = self.block(then_block, scope, ret)?;
                let e = match else_block {
                    Some(b) => self.block(b, scope, ret)?,
                    None => Vec::new(),
                };
                CStmt::If(c, t, e)
            }
            StmtKind::While { cond, body } => {
                let (c, cty) = self.expr(cond, scope, None)?;
                expect_type(&Type::Bool, &cty, cond.pos)?;
                CStmt::While(c, self.block(body, scope, ret)?)
            }
            StmtKind::Return(value) => {
                let (v, found) = self.expr(value, scope, Some(ret))?;
                expect_type(ret, &found, value.pos)?;
                CStmt::Return(v)
            }
            StmtKind::Expr(e) => {
                if !matches!(e.kind, ExprKind::Call(..)) {
                    return Err(Diagnostic::new(e.pos, "not a statement"));
                }
                CStmt::Eval(self.expr(e, scope, None)?.0)
            }
        })
    }

    fn expr(
        &self,
        e: &Expr,
        scope: &Scope,
        expected: Option<&Type>,
    ) -> Result<(CExpr, Type), Diagnostic> {
        Ok(match &e.kind {
            ExprKind::Int(v) => (CExpr::Int(*v), Type::Int),
            ExprKind::Bool(b) => (CExpr::Bool(*b), Type::Bool),
            ExprKind::Str(s) => (CExpr::Str(Arc::from(s.as_str())), Type::Str),
            ExprKind::Var(name) => match scope.lookup(name) {
                Some((slot, ty)) => (CExpr::Local(*slot), ty.clone()),
                None => return Err(Diagnostic::new(e.pos, format!("unknown variable `{name}`"))),
            },
            ExprKind::Array(items) => {
                let hint = match expected {
                    Some(Type::Array(inner)) => Some(inner.as_ref()),
                    _ => None,
                };
                if items.is_empty() {
                    return match hint {
                        Some(inner) => Ok((CExpr::Array(Vec::new()), Type::Array(Box::new(inner.clone())))),
                        None => Err(Diagnostic::new(e.pos, "cannot infer element type of empty array")),
                    };
                }
                let mut out = Vec::with_capacity(items.len());
                let mut elem_ty: Option<Type> = hint.cloned();
                for item in items {
                    let (c, ty) = self.expr(item, scope, elem_ty.as_ref())?;
                    match &elem_ty {
                        Some(want) => expect_type(want, &ty, item.pos)?,
                        None => elem_ty = Some(ty),
                    }
                    out.push(c);
                }
                (CExpr::Array(out), Type::Array(Box::new(elem_ty.expect("non-empty"))))
            }
            ExprKind::Unary(op, inner) => {
                let (c, ty) = self.expr(inner, scope, None)?;
                let want = match op {
                    UnOp::Neg => Type::Int,
                    UnOp::Not => Type::Bool,
                };
                expect_type(&want, &ty, inner.pos)?;
                (CExpr::Unary(*op, Box::new(c)), want)
            }
            ExprKind::Binary(op, lhs, rhs) => {
                let (l, lty) = self.expr(lhs, scope, None)?;
                let (r, rty) = self.expr(rhs, scope, Some(&lty))?;
                let ty = binary_type(*op, &lty, &rty).ok_or_else(|| {
                    Diagnostic::new(
                        e.pos,
                        format!("operator `{}` cannot be applied to {lty} and {rty}", op.symbol()),
                    )
                })?;
                (CExpr::Binary(*op, Box::new(l), Box::new(r)), ty)
            }
            ExprKind::Index(target, index) => {
                let (t, tty) = self.expr(target, scope, None)?;
                let (i, ity) = self.expr(index, scope, None)?;
                expect_type(&Type::Int, &ity, index.pos)?;
                let Type::Array(elem) = tty else {
                    return Err(Diagnostic::new(e.pos, format!("cannot index into {tty}")));
                };
                (CExpr::Index(Box::new(t), Box::new(i)), *elem)
            }
            ExprKind::Call(name, args) => {
                if let Some(&fi) = self.index.get(name.as_str()) {
                    let sig = &self.program.functions[fi].sig;
                    if sig.params.len() != args.len() {
                        return Err(Diagnostic::new(
                            e.pos,
                            format!("`{name}` takes {} arguments, got {}", sig.params.len(), args.len()),
                        ));
                    }
                    let mut out = Vec::with_capacity(args.len());
                    for (arg, param) in args.iter().zip(&sig.params) {
                        let (c, ty) = self.expr(arg, scope, Some(&param.ty))?;
                        expect_type(&param.ty, &ty, arg.pos)?;
                        out.push(c);
                    }
                    (CExpr::Call(fi, out), sig.ret.clone())
                } else if let Some(b) = Builtin::lookup(name) {
                    let mut out = Vec::with_capacity(args.len());
                    let mut tys = Vec::with_capacity(args.len());
                    for arg in args {
                        let hint = if b == Builtin::Push { tys.first() } else { None };
                        let hint = match hint {
                            Some(Type::Array(inner)) => Some(inner.as_ref().clone()),
                            _ => None,
                        };
                        let (c, ty) = self.expr(arg, scope, hint.as_ref())?;
                        out.push(c);
                        tys.push(ty);
                    }
                    let ty = b.result_type(&tys).map_err(|m| Diagnostic::new(e.pos, m))?;
                    (CExpr::Builtin(b, out), ty)
                } else {
                    return Err(Diagnostic::new(e.pos, format!("unknown function `{name}`")));
                }
            }
        })
    }
}

fn expect_type(want: &Type, found: &Type, pos: Pos) -> Result<(), Diagnostic> {
    if want == found {
        Ok(())
    } else {
        Err(Diagnostic::new(pos, format!("type mismatch: expected {want}, found {found}")))
    }
}

fn binary_type(op: BinOp, l: &Type, r: &Type) -> Option<Type> {
    use BinOp::*;
    match op {
        Add if l == r && matches!(l, Type::Int | Type::Str) => Some(l.clone()),
        Sub | Mul | Div | Rem if *l == Type::Int && *r == Type::Int => Some(Type::Int),
        Lt | Le | Gt | Ge if *l == Type::Int && *r == Type::Int => Some(Type::Bool),
        Eq | Ne if l == r => Some(Type::Bool),
        And | Or if *l == Type::Bool && *r == Type::Bool => Some(Type::Bool),
        _ => None,
    }
}

/// Conservative check that control cannot fall off the end of `block`.
pub fn block_returns(block: &Block) -> bool {
    block.iter().any(|s| match &s.kind {
        StmtKind::Return(_) => true,
        StmtKind::If { then_block, else_block: Some(else_block), .. } => {
            block_returns(then_block) && block_returns(else_block)
        }
        StmtKind::While { cond, .. } => matches!(cond.kind, ExprKind::Bool(true)),
        _ => false,
    })
}
