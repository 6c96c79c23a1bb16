//! Random MiniLang programs kept as a small typed tree, rendered to source,
//! and evaluated here by a direct tree walk that shares nothing with the
//! `minilang` crate.

use rand::seq::IndexedRandom;
use rand::Rng;
use serde_json::{json, Value as Json};

#[derive(Debug, Clone, Copy)]
pub enum IOp {
    Add,
    Sub,
    Mul,
    Div,
    Rem,
}

#[derive(Debug, Clone, Copy)]
pub enum COp {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
}

#[derive(Debug, Clone)]
pub enum IE {
    Lit(i64),
    Var(String),
    Neg(Box<IE>),
    Bin(IOp, Box<IE>, Box<IE>),
    Len(Box<SE>),
    Abs(Box<IE>),
    Min(Box<IE>, Box<IE>),
    Max(Box<IE>, Box<IE>),
    IndexOf(Box<SE>, Box<SE>),
}

#[derive(Debug, Clone)]
pub enum SE {
    Lit(String),
    Var(String),
    Cat(Box<SE>, Box<SE>),
    Sub(Box<SE>, Box<IE>, Box<IE>),
    CharAt(Box<SE>, Box<IE>),
    ToStr(Box<IE>),
}

#[derive(Debug, Clone)]
pub enum BE {
    Lit(bool),
    Cmp(COp, Box<IE>, Box<IE>),
    StrEq(Box<SE>, Box<SE>),
    Not(Box<BE>),
    And(Box<BE>, Box<BE>),
    Or(Box<BE>, Box<BE>),
    Contains(Box<SE>, Box<SE>),
    StartsWith(Box<SE>, Box<SE>),
}

#[derive(Debug, Clone)]
pub enum St {
    SetInt(String, IE),
    SetStr(String, SE),
    If(BE, Vec<St>, Vec<St>),
    /// `counter` runs from 0 while below `bound`.
    Loop { counter: String, bound: i64, body: Vec<St> },
    ReturnInt(IE),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Ret {
    Int,
    Str,
    Bool,
}

#[derive(Debug, Clone)]
pub struct Program {
    pub int_vars: Vec<(String, IE)>,
    pub str_vars: Vec<(String, SE)>,
    pub counters: Vec<String>,
    pub body: Vec<St>,
    pub ret: Ret,
    pub ret_int: IE,
    pub ret_str: SE,
    pub ret_bool: BE,
}

pub const SIGNATURE_INT: &str = "fn f(a: int, b: int, s: string) -> int";
pub const SIGNATURE_STR: &str = "fn f(a: int, b: int, s: string) -> string";
pub const SIGNATURE_BOOL: &str = "fn f(a: int, b: int, s: string) -> bool";

impl Program {
    pub fn signature(&self) -> &'static str {
        match self.ret {
            Ret::Int => SIGNATURE_INT,
            Ret::Str => SIGNATURE_STR,
            Ret::Bool => SIGNATURE_BOOL,
        }
    }
}

// ---- generation ----

struct Gen<'a, R: Rng> {
    rng: &'a mut R,
    ints: Vec<String>,
    strs: Vec<String>,
}

const WORDS: [&str; 6] = ["", "a", "ab", "ba", "abc", "xyz"];

impl<R: Rng> Gen<'_, R> {
    fn int(&mut self, depth: u32) -> IE {
        let leaf = depth == 0 || self.rng.random_bool(0.3);
        if leaf {
            return if self.rng.random_bool(0.6) {
                IE::Var(self.ints.choose(self.rng).expect("params").clone())
            } else {
                IE::Lit(self.rng.random_range(-3..=9))
            };
        }
        let d = depth - 1;
        match self.rng.random_range(0..10) {
            0..=3 => {
                let op = *[IOp::Add, IOp::Sub, IOp::Mul, IOp::Div, IOp::Rem].choose(self.rng).expect("ops");
                IE::Bin(op, Box::new(self.int(d)), Box::new(self.int(d)))
            }
            4 => IE::Neg(Box::new(self.int(d))),
            5 => IE::Len(Box::new(self.str(d))),
            6 => IE::Abs(Box::new(self.int(d))),
            7 => IE::Min(Box::new(self.int(d)), Box::new(self.int(d))),
            8 => IE::Max(Box::new(self.int(d)), Box::new(self.int(d))),
            _ => IE::IndexOf(Box::new(self.str(d)), Box::new(self.str(d))),
        }
    }

    fn str(&mut self, depth: u32) -> SE {
        if depth == 0 || self.rng.random_bool(0.35) {
            return if self.rng.random_bool(0.6) {
                SE::Var(self.strs.choose(self.rng).expect("params").clone())
            } else {
                SE::Lit(WORDS.choose(self.rng).expect("words").to_string())
            };
        }
        let d = depth - 1;
        match self.rng.random_range(0..4) {
            0 => SE::Cat(Box::new(self.str(d)), Box::new(self.str(d))),
            1 => SE::Sub(Box::new(self.str(d)), Box::new(self.int(d)), Box::new(self.int(d))),
            2 => SE::CharAt(Box::new(self.str(d)), Box::new(self.int(d))),
            _ => SE::ToStr(Box::new(self.int(d))),
        }
    }

    fn boolean(&mut self, depth: u32) -> BE {
        if depth == 0 {
            return BE::Lit(self.rng.random_bool(0.5));
        }
        let d = depth - 1;
        let cmp = *[COp::Lt, COp::Le, COp::Gt, COp::Ge, COp::Eq, COp::Ne].choose(self.rng).expect("ops");
        match self.rng.random_range(0..8) {
            0..=2 => BE::Cmp(cmp, Box::new(self.int(d)), Box::new(self.int(d))),
            3 => BE::StrEq(Box::new(self.str(d)), Box::new(self.str(d))),
            4 => BE::Not(Box::new(self.boolean(d))),
            5 => BE::And(Box::new(self.boolean(d)), Box::new(self.boolean(d))),
            6 => BE::Or(Box::new(self.boolean(d)), Box::new(self.boolean(d))),
            _ if self.rng.random_bool(0.5) => BE::Contains(Box::new(self.str(d)), Box::new(self.str(d))),
            _ => BE::StartsWith(Box::new(self.str(d)), Box::new(self.str(d))),
        }
    }

    fn stmts(&mut self, n: usize, depth: u32, counters: &mut Vec<String>) -> Vec<St> {
        (0..n).map(|_| self.stmt(depth, counters)).collect()
    }

    fn stmt(&mut self, depth: u32, counters: &mut Vec<String>) -> St {
        // assignable locals exclude the parameters a, b, s
        let int_locals: Vec<String> = self.ints.iter().filter(|v| v.starts_with('v')).cloned().collect();
        let str_locals: Vec<String> = self.strs.iter().filter(|v| v.starts_with('t')).cloned().collect();
        let roll = if depth == 0 { self.rng.random_range(0..4) } else { self.rng.random_range(0..8) };
        match roll {
            0 | 1 if !int_locals.is_empty() => {
                St::SetInt(int_locals.choose(self.rng).expect("locals").clone(), self.int(2))
            }
            2 if !str_locals.is_empty() => St::SetStr(str_locals.choose(self.rng).expect("locals").clone(), self.str(2)),
            3 => St::ReturnInt(self.int(2)),
            4 | 5 => {
                let c = self.boolean(2);
                let n = self.rng.random_range(1..=2);
                let t = self.stmts(n, depth - 1, counters);
                let e = if self.rng.random_bool(0.5) { self.stmts(1, depth - 1, counters) } else { vec![] };
                St::If(c, t, e)
            }
            6 | 7 => {
                let counter = format!("c{}", counters.len());
                counters.push(counter.clone());
                let bound = self.rng.random_range(0..5);
                self.ints.push(counter.clone());
                let n = self.rng.random_range(1..=2);
                let body = self.stmts(n, depth - 1, counters);
                self.ints.pop();
                St::Loop { counter, bound, body }
            }
            _ => St::SetInt(int_locals.first().cloned().unwrap_or_else(|| "v0".into()), self.int(1)),
        }
    }
}

/// A random program; return-int statements only appear when `ret` is int.
pub fn random_program(rng: &mut impl Rng) -> Program {
    let ret = *[Ret::Int, Ret::Str, Ret::Bool].choose(rng).expect("kinds");
    let mut g = Gen { rng, ints: vec!["a".into(), "b".into()], strs: vec!["s".into()] };
    let mut int_vars = Vec::new();
    for i in 0..g.rng.random_range(1..=3) {
        let init = g.int(2);
        let name = format!("v{i}");
        int_vars.push((name.clone(), init));
        g.ints.push(name);
    }
    let mut str_vars = Vec::new();
    for i in 0..g.rng.random_range(0..=2) {
        let init = g.str(2);
        let name = format!("t{i}");
        str_vars.push((name.clone(), init));
        g.strs.push(name);
    }
    let mut counters = Vec::new();
    let n = g.rng.random_range(1..=4);
    let mut body = g.stmts(n, 2, &mut counters);
    if ret != Ret::Int {
        strip_int_returns(&mut body);
    }
    let ret_int = g.int(3);
    let ret_str = g.str(3);
    let ret_bool = g.boolean(3);
    Program { int_vars, str_vars, counters, body, ret, ret_int, ret_str, ret_bool }
}

fn strip_int_returns(b: &mut Vec<St>) {
    b.retain(|s| !matches!(s, St::ReturnInt(_)));
    for s in b {
        match s {
            St::If(_, t, e) => {
                strip_int_returns(t);
                strip_int_returns(e);
            }
            St::Loop { body, .. } => strip_int_returns(body),
            _ => {}
        }
    }
}

// ---- rendering ----

fn quote(s: &str) -> String {
    format!("\"{s}\"")
}

pub fn render_int(e: &IE) -> String {
    match e {
        IE::Lit(v) if *v < 0 => format!("(0 - {})", -v),
        IE::Lit(v) => v.to_string(),
        IE::Var(n) => n.clone(),
        IE::Neg(x) => format!("(-{})", render_int(x)),
        IE::Bin(op, l, r) => {
            let sym = match op {
                IOp::Add => "+",
                IOp::Sub => "-",
                IOp::Mul => "*",
                IOp::Div => "/",
                IOp::Rem => "%",
            };
            format!("({} {sym} {})", render_int(l), render_int(r))
        }
        IE::Len(s) => format!("len({})", render_str(s)),
        IE::Abs(x) => format!("abs({})", render_int(x)),
        IE::Min(a, b) => format!("min({}, {})", render_int(a), render_int(b)),
        IE::Max(a, b) => format!("max({}, {})", render_int(a), render_int(b)),
        IE::IndexOf(a, b) => format!("index_of({}, {})", render_str(a), render_str(b)),
    }
}

pub fn render_str(e: &SE) -> String {
    match e {
        SE::Lit(s) => quote(s),
        SE::Var(n) => n.clone(),
        SE::Cat(a, b) => format!("({} + {})", render_str(a), render_str(b)),
        SE::Sub(s, b, e) => format!("substring({}, {}, {})", render_str(s), render_int(b), render_int(e)),
        SE::CharAt(s, i) => format!("char_at({}, {})", render_str(s), render_int(i)),
        SE::ToStr(i) => format!("to_string({})", render_int(i)),
    }
}

pub fn render_bool(e: &BE) -> String {
    match e {
        BE::Lit(b) => b.to_string(),
        BE::Cmp(op, l, r) => {
            let sym = match op {
                COp::Lt => "<",
                COp::Le => "<=",
                COp::Gt => ">",
                COp::Ge => ">=",
                COp::Eq => "==",
                COp::Ne => "!=",
            };
            format!("({} {sym} {})", render_int(l), render_int(r))
        }
        BE::StrEq(a, b) => format!("({} == {})", render_str(a), render_str(b)),
        BE::Not(x) => format!("(!{})", render_bool(x)),
        BE::And(a, b) => format!("({} && {})", render_bool(a), render_bool(b)),
        BE::Or(a, b) => format!("({} || {})", render_bool(a), render_bool(b)),
        BE::Contains(a, b) => format!("contains({}, {})", render_str(a), render_str(b)),
        BE::StartsWith(a, b) => format!("starts_with({}, {})", render_str(a), render_str(b)),
    }
}

fn render_block(b: &[St], indent: usize, out: &mut String) {
    let pad = "    ".repeat(indent);
    for s in b {
        match s {
            St::SetInt(n, e) => out.push_str(&format!("{pad}{n} = {};\n", render_int(e))),
            St::SetStr(n, e) => out.push_str(&format!("{pad}{n} = {};\n", render_str(e))),
            St::ReturnInt(e) => out.push_str(&format!("{pad}return {};\n", render_int(e))),
            St::If(c, t, e) => {
                out.push_str(&format!("{pad}if ({}) {{\n", render_bool(c)));
                render_block(t, indent + 1, out);
                if e.is_empty() {
                    out.push_str(&format!("{pad}}}\n"));
                } else {
                    out.push_str(&format!("{pad}}} else {{\n"));
                    render_block(e, indent + 1, out);
                    out.push_str(&format!("{pad}}}\n"));
                }
            }
            St::Loop { counter, bound, body } => {
                out.push_str(&format!("{pad}{counter} = 0;\n"));
                out.push_str(&format!("{pad}while ({counter} < {bound}) {{\n"));
                render_block(body, indent + 1, out);
                out.push_str(&format!("{pad}    {counter} = {counter} + 1;\n"));
                out.push_str(&format!("{pad}}}\n"));
            }
        }
    }
}

pub fn render(p: &Program) -> String {
    let mut out = format!("{} {{\n", p.signature());
    for (n, e) in &p.int_vars {
        out.push_str(&format!("    let {n} = {};\n", render_int(e)));
    }
    for (n, e) in &p.str_vars {
        out.push_str(&format!("    let {n} = {};\n", render_str(e)));
    }
    for c in &p.counters {
        out.push_str(&format!("    let {c} = 0;\n"));
    }
    render_block(&p.body, 1, &mut out);
    let tail = match p.ret {
        Ret::Int => render_int(&p.ret_int),
        Ret::Str => render_str(&p.ret_str),
        Ret::Bool => render_bool(&p.ret_bool),
    };
    out.push_str(&format!("    return {tail};\n}}\n"));
    out
}

// ---- evaluation ----

/// Anything that stops a run early; the oracle only needs to know that it happened.
#[derive(Debug, Clone, PartialEq)]
pub struct Fault;

type R<T> = Result<T, Fault>;

#[derive(Default)]
struct Env {
    ints: std::collections::HashMap<String, i64>,
    strs: std::collections::HashMap<String, String>,
}

fn ch(s: &str) -> Vec<char> {
    s.chars().collect()
}

fn eval_int(e: &IE, env: &Env) -> R<i64> {
    Ok(match e {
        IE::Lit(v) => *v,
        IE::Var(n) => env.ints[n],
        IE::Neg(x) => eval_int(x, env)?.checked_neg().ok_or(Fault)?,
        IE::Bin(op, l, r) => {
            let (a, b) = (eval_int(l, env)?, eval_int(r, env)?);
            match op {
                IOp::Add => a.checked_add(b),
                IOp::Sub => a.checked_sub(b),
                IOp::Mul => a.checked_mul(b),
                IOp::Div => a.checked_div(b),
                IOp::Rem => a.checked_rem(b),
            }
            .ok_or(Fault)?
        }
        IE::Len(s) => ch(&eval_str(s, env)?).len() as i64,
        IE::Abs(x) => eval_int(x, env)?.checked_abs().ok_or(Fault)?,
        IE::Min(a, b) => eval_int(a, env)?.min(eval_int(b, env)?),
        IE::Max(a, b) => eval_int(a, env)?.max(eval_int(b, env)?),
        IE::IndexOf(a, b) => {
            let (h, n) = (ch(&eval_str(a, env)?), ch(&eval_str(b, env)?));
            (0..=h.len().saturating_sub(n.len()))
                .find(|&i| i + n.len() <= h.len() && h[i..i + n.len()] == n[..])
                .map_or(-1, |i| i as i64)
        }
    })
}

fn eval_str(e: &SE, env: &Env) -> R<String> {
    Ok(match e {
        SE::Lit(s) => s.clone(),
        SE::Var(n) => env.strs[n].clone(),
        SE::Cat(a, b) => eval_str(a, env)? + &eval_str(b, env)?,
        SE::Sub(s, b, e) => {
            let s = ch(&eval_str(s, env)?);
            let (b, e) = (eval_int(b, env)?, eval_int(e, env)?);
            if b < 0 || e > s.len() as i64 || b > e {
                return Err(Fault);
            }
            s[b as usize..e as usize].iter().collect()
        }
        SE::CharAt(s, i) => {
            let s = ch(&eval_str(s, env)?);
            let i = eval_int(i, env)?;
            if i < 0 || i >= s.len() as i64 {
                return Err(Fault);
            }
            s[i as usize].to_string()
        }
        SE::ToStr(i) => eval_int(i, env)?.to_string(),
    })
}

fn eval_bool(e: &BE, env: &Env) -> R<bool> {
    Ok(match e {
        BE::Lit(b) => *b,
        BE::Cmp(op, l, r) => {
            let (a, b) = (eval_int(l, env)?, eval_int(r, env)?);
            match op {
                COp::Lt => a < b,
                COp::Le => a <= b,
                COp::Gt => a > b,
                COp::Ge => a >= b,
                COp::Eq => a == b,
                COp::Ne => a != b,
            }
        }
        BE::StrEq(a, b) => eval_str(a, env)? == eval_str(b, env)?,
        BE::Not(x) => !eval_bool(x, env)?,
        BE::And(a, b) => eval_bool(a, env)? && eval_bool(b, env)?,
        BE::Or(a, b) => eval_bool(a, env)? || eval_bool(b, env)?,
        BE::Contains(a, b) => eval_str(a, env)?.contains(&eval_str(b, env)?),
        BE::StartsWith(a, b) => eval_str(a, env)?.starts_with(&eval_str(b, env)?),
    })
}

enum Flow {
    Next,
    Ret(i64),
}

fn exec(b: &[St], env: &mut Env) -> R<Flow> {
    for s in b {
        match s {
            St::SetInt(n, e) => {
                let v = eval_int(e, env)?;
                env.ints.insert(n.clone(), v);
            }
            St::SetStr(n, e) => {
                let v = eval_str(e, env)?;
                env.strs.insert(n.clone(), v);
            }
            St::ReturnInt(e) => return Ok(Flow::Ret(eval_int(e, env)?)),
            St::If(c, t, e) => {
                let branch = if eval_bool(c, env)? { t } else { e };
                if let Flow::Ret(v) = exec(branch, env)? {
                    return Ok(Flow::Ret(v));
                }
            }
            St::Loop { counter, bound, body } => {
                env.ints.insert(counter.clone(), 0);
                while env.ints[counter] < *bound {
                    if let Flow::Ret(v) = exec(body, env)? {
                        return Ok(Flow::Ret(v));
                    }
                    let c = env.ints[counter].checked_add(1).ok_or(Fault)?;
                    env.ints.insert(counter.clone(), c);
                }
            }
        }
    }
    Ok(Flow::Next)
}

/// Result of `f(a, b, s)` as a JSON literal.
pub fn run(p: &Program, a: i64, b: i64, s: &str) -> R<Json> {
    let mut env = Env::default();
    env.ints.insert("a".into(), a);
    env.ints.insert("b".into(), b);
    env.strs.insert("s".into(), s.into());
    for (n, e) in &p.int_vars {
        let v = eval_int(e, &env)?;
        env.ints.insert(n.clone(), v);
    }
    for (n, e) in &p.str_vars {
        let v = eval_str(e, &env)?;
        env.strs.insert(n.clone(), v);
    }
    for c in &p.counters {
        env.ints.insert(c.clone(), 0);
    }
    if let Flow::Ret(v) = exec(&p.body, &mut env)? {
        return Ok(json!(v));
    }
    Ok(match p.ret {
        Ret::Int => json!(eval_int(&p.ret_int, &env)?),
        Ret::Str => json!(eval_str(&p.ret_str, &env)?),
        Ret::Bool => json!(eval_bool(&p.ret_bool, &env)?),
    })
}

/// Inputs mixing small values with ones near the integer limits.
pub fn random_input(rng: &mut impl Rng) -> (i64, i64, String) {
    let a = random_int(rng);
    let b = random_int(rng);
    let len = rng.random_range(0..=5);
    let s: String = (0..len).map(|_| *['a', 'b', 'c', 'x'].choose(rng).expect("alphabet")).collect();
    (a, b, s)
}

fn random_int(rng: &mut impl Rng) -> i64 {
    match rng.random_range(0..24) {
        0 => i64::MAX - rng.random_range(0..3),
        1 => i64::MIN + rng.random_range(0..3),
        _ => rng.random_range(-6..=12),
    }
}
