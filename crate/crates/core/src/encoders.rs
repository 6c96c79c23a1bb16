//! Representations feeding the models: problem-text embeddings, a frozen
//! AST-aware code encoder, and the recurrent knowledge state.

use minilang::ast::{Block, Expr, ExprKind, LValue, Stmt, StmtKind};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{Graph, Group, ParamId, ParamStore, Tensor, Var};
use crate::tokenizer::Tokenizer;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EncoderError {
    #[error("problem statement tokenizes to zero tokens")]
    EmptyStatement,
    #[error("dimension mismatch: {what} expects {expected}, got {found}")]
    Dimension { what: &'static str, expected: usize, found: usize },
}

/// Mean-pooled backbone token embeddings of a problem statement.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemEmbedding {
    pub vector: Vec<f32>,
    pub token_ids: Vec<u32>,
    pub token_embeddings: Tensor,
}

/// Token ids of a statement after trimming surrounding whitespace.
pub fn statement_tokens(statement: &str, tokenizer: &Tokenizer) -> Result<Vec<u32>, EncoderError> {
    let ids = tokenizer.encode(statement.trim());
    if ids.is_empty() {
        return Err(EncoderError::EmptyStatement);
    }
    Ok(ids)
}

pub fn embed_problem(statement: &str, tokenizer: &Tokenizer, tok_emb: &Tensor) -> Result<ProblemEmbedding, EncoderError> {
    let token_ids = statement_tokens(statement, tokenizer)?;
    let idx: Vec<usize> = token_ids.iter().map(|&t| t as usize).collect();
    let token_embeddings = tok_emb.select_rows(&idx);
    let vector = token_embeddings.mean_rows().data;
    Ok(ProblemEmbedding { vector, token_ids, token_embeddings })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeEmbedding {
    pub vector: Vec<f32>,
    /// False when the source did not parse and the token fallback was used.
    pub parsed: bool,
}

/// Deterministic statement-subtree encoder. Each statement is encoded
/// bottom-up as `tanh(E[kind] + W·Σ children)`; nested blocks contribute
/// their own statement vectors, and the code vector is the element-wise max
/// over all statement vectors.
#[derive(Debug, Clone)]
pub struct CodeEncoder {
    dim: usize,
    seed: u64,
    w: Tensor,
}

const LEAF_NAME_WEIGHT: f32 = 0.25;

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl CodeEncoder {
    pub fn new(dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_c0de);
        let w = Tensor::randn(dim, dim, 0.5 / (dim as f32).sqrt(), &mut rng);
        CodeEncoder { dim, seed, w }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Fixed pseudo-random vector for a symbol.
    fn symbol(&self, s: &str) -> Vec<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(s) ^ self.seed);
        Tensor::randn(1, self.dim, 1.0 / (self.dim as f32).sqrt(), &mut rng).data
    }

    fn node(&self, kind: &str, children: &[Vec<f32>]) -> Vec<f32> {
        let mut sum = vec![0.0f32; self.dim];
        for c in children {
            for (s, x) in sum.iter_mut().zip(c) {
                *s += x;
            }
        }
        let mut v = self.symbol(kind);
        for (r, out) in v.iter_mut().enumerate() {
            let row = self.w.row(r);
            *out += row.iter().zip(&sum).map(|(a, b)| a * b).sum::<f32>();
            *out = out.tanh();
        }
        v
    }

    fn leaf(&self, kind: &str, name: &str) -> Vec<f32> {
        let base = self.symbol(kind);
        let named = self.symbol(&format!("{kind}:{name}"));
        let v: Vec<f32> = base.iter().zip(&named).map(|(a, b)| a + LEAF_NAME_WEIGHT * b).collect();
        v.into_iter().map(f32::tanh).collect()
    }

    fn expr(&self, e: &Expr) -> Vec<f32> {
        match &e.kind {
            ExprKind::Int(v) => self.leaf("Int", &v.to_string()),
            ExprKind::Bool(b) => self.leaf("Bool", &b.to_string()),
            ExprKind::Str(s) => self.leaf("Str", s),
            ExprKind::Var(n) => self.leaf("Ident", n),
            ExprKind::Array(items) => {
                let ch: Vec<_> = items.iter().map(|x| self.expr(x)).collect();
                self.node("Array", &ch)
            }
            ExprKind::Unary(op, x) => self.node(&format!("Unary{op:?}"), &[self.expr(x)]),
            ExprKind::Binary(op, a, b) => self.node(&format!("Binary{}", op.symbol()), &[self.expr(a), self.expr(b)]),
            ExprKind::Call(f, args) => {
                let mut ch = vec![self.leaf("Callee", f)];
                ch.extend(args.iter().map(|x| self.expr(x)));
                self.node("Call", &ch)
            }
            ExprKind::Index(a, i) => self.node("Index", &[self.expr(a), self.expr(i)]),
        }
    }

    fn block(&self, b: &Block, out: &mut Vec<Vec<f32>>) {
        for s in b {
            self.stmt(s, out);
        }
    }

    fn stmt(&self, s: &Stmt, out: &mut Vec<Vec<f32>>) {
        let v = match &s.kind {
            StmtKind::Let { name, init, .. } => self.node("Let", &[self.leaf("Ident", name), self.expr(init)]),
            StmtKind::Assign { target, value } => {
                let t = match target {
                    LValue::Var(n) => self.leaf("Ident", n),
                    LValue::Index(n, i) => self.node("Index", &[self.leaf("Ident", n), self.expr(i)]),
                };
                self.node("Assign", &[t, self.expr(value)])
            }
            StmtKind::If { cond, then_block, else_block } => {
                self.block(then_block, out);
                let kind = if let Some(e) = else_block {
                    self.block(e, out);
                    "IfElse"
                } else {
                    "If"
                };
                self.node(kind, &[self.expr(cond)])
            }
            StmtKind::While { cond, body } => {
                self.block(body, out);
                self.node("While", &[self.expr(cond)])
            }
            StmtKind::Return(e) => self.node("Return", &[self.expr(e)]),
            StmtKind::Expr(e) => self.node("ExprStmt", &[self.expr(e)]),
        };
        out.push(v);
    }

    /// Embeds source text; never fails.
    pub fn embed(&self, code: &str) -> CodeEmbedding {
        match minilang::parse_program(code) {
            Ok(program) => {
                let mut stmts = Vec::new();
                let mut names = Vec::new();
                for f in &program.functions {
                    let params: Vec<_> = f.sig.params.iter().map(|p| self.leaf("Param", &p.ty.to_string())).collect();
                    stmts.push(self.node("Function", &params));
                    self.block(&f.body, &mut stmts);
                    declared_names(&f.body, &mut names);
                }
                let mut vector = max_pool(&stmts, self.dim);
                // lexical channel: which names the author chose for locals
                if !names.is_empty() {
                    for n in &names {
                        for (a, b) in vector.iter_mut().zip(self.symbol(&format!("Name:{n}"))) {
                            *a += b.tanh() / names.len() as f32;
                        }
                    }
                }
                CodeEmbedding { vector, parsed: true }
            }
            Err(_) => {
                let toks: Vec<Vec<f32>> = minilang::surface_tokens(code)
                    .iter()
                    .map(|t| self.symbol(&format!("tok:{t}")).into_iter().map(f32::tanh).collect())
                    .collect();
                let mut v = vec![0.0f32; self.dim];
                if !toks.is_empty() {
                    for t in &toks {
                        for (a, b) in v.iter_mut().zip(t) {
                            *a += b / toks.len() as f32;
                        }
                    }
                }
                CodeEmbedding { vector: v, parsed: false }
            }
        }
    }
}

fn declared_names(b: &Block, out: &mut Vec<String>) {
    for s in b {
        match &s.kind {
            StmtKind::Let { name, .. } => out.push(name.clone()),
            StmtKind::If { then_block, else_block, .. } => {
                declared_names(then_block, out);
                if let Some(e) = else_block {
                    declared_names(e, out);
                }
            }
            StmtKind::While { body, .. } => declared_names(body, out),
            _ => {}
        }
    }
}

fn max_pool(vs: &[Vec<f32>], dim: usize) -> Vec<f32> {
    if vs.is_empty() {
        return vec![0.0; dim];
    }
    (0..dim).map(|i| vs.iter().map(|v| v[i]).fold(f32::NEG_INFINITY, f32::max)).collect()
}

pub fn cosine(a: &[f32], b: &[f32]) -> f32 {
    let dot: f32 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f32 = a.iter().map(|x| x * x).sum::<f32>().sqrt();
    let nb: f32 = b.iter().map(|x| x * x).sum::<f32>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Hidden and cell vectors of the recurrent student model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeState {
    pub h: Vec<f32>,
    pub c: Vec<f32>,
}

impl KnowledgeState {
    pub fn zeros(dim: usize) -> Self {
        KnowledgeState { h: vec![0.0; dim], c: vec![0.0; dim] }
    }
}

/// LSTM cell over `[problem ; code ; score?]` inputs, hidden width `hidden`.
#[derive(Debug, Clone)]
pub struct LstmCell {
    pub input_dim: usize,
    pub hidden: usize,
    w_x: ParamId,
    w_h: ParamId,
    b: ParamId,
}

impl LstmCell {
    pub fn new(store: &mut ParamStore, prefix: &str, input_dim: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let w_x = store.add(
            format!("{prefix}.w_x"),
            Tensor::randn(input_dim, 4 * hidden, 1.0 / (input_dim as f32).sqrt(), rng),
            Group::Recurrent,
            true,
        );
        let w_h = store.add(
            format!("{prefix}.w_h"),
            Tensor::randn(hidden, 4 * hidden, 1.0 / (hidden as f32).sqrt(), rng),
            Group::Recurrent,
            true,
        );
        let mut bias = Tensor::zeros(1, 4 * hidden);
        // forget gate starts open
        bias.data[hidden..2 * hidden].iter_mut().for_each(|x| *x = 1.0);
        let b = store.add(format!("{prefix}.b"), bias, Group::Recurrent, false);
        LstmCell { input_dim, hidden, w_x, w_h, b }
    }

    pub fn from_store(store: &ParamStore, prefix: &str) -> Option<Self> {
        let w_x = store.id(&format!("{prefix}.w_x"))?;
        let w_h = store.id(&format!("{prefix}.w_h"))?;
        let b = store.id(&format!("{prefix}.b"))?;
        let (input_dim, four_h) = store.get(w_x).shape();
        Some(LstmCell { input_dim, hidden: four_h / 4, w_x, w_h, b })
    }

    /// One step for a batch of rows; returns `(h, c)`.
    pub fn step(&self, g: &mut Graph, store: &ParamStore, x: Var, h: Var, c: Var) -> (Var, Var) {
        let (wx, wh, b) = (g.param(store, self.w_x), g.param(store, self.w_h), g.param(store, self.b));
        let a = g.matmul(x, wx);
        let r = g.matmul(h, wh);
        let z = g.add(a, r);
        let z = g.add_row(z, b);
        let n = self.hidden;
        let i = g.slice_cols(z, 0, n);
        let f = g.slice_cols(z, n, n);
        let gg = g.slice_cols(z, 2 * n, n);
        let o = g.slice_cols(z, 3 * n, n);
        let (i, f, o) = (g.sigmoid(i), g.sigmoid(f), g.sigmoid(o));
        let gg = g.tanh(gg);
        let fc = g.mul(f, c);
        let ig = g.mul(i, gg);
        let c2 = g.add(fc, ig);
        let tc = g.tanh(c2);
        let h2 = g.mul(o, tc);
        (h2, c2)
    }
}

/// Builds the recurrent input row `[problem ; code ; score?]`.
pub fn state_input(problem: &[f32], code: &[f32], score: Option<f32>) -> Vec<f32> {
    let mut x = Vec::with_capacity(problem.len() + code.len() + 1);
    x.extend_from_slice(problem);
    x.extend_from_slice(code);
    if let Some(s) = score {
        x.push(s);
    }
    x
}

/// Single recurrent step outside of training.
pub fn update_knowledge_state(
    cell: &LstmCell,
    store: &ParamStore,
    prev: &KnowledgeState,
    problem: &ProblemEmbedding,
    code: &CodeEmbedding,
    score: Option<f32>,
) -> Result<KnowledgeState, EncoderError> {
    let x = state_input(&problem.vector, &code.vector, score);
    if x.len() != cell.input_dim {
        return Err(EncoderError::Dimension { what: "recurrent input", expected: cell.input_dim, found: x.len() });
    }
    if prev.h.len() != cell.hidden {
        return Err(EncoderError::Dimension { what: "knowledge state", expected: cell.hidden, found: prev.h.len() });
    }
    let mut g = Graph::new();
    let xv = g.constant(Tensor::row_vec(x));
    let hv = g.constant(Tensor::row_vec(prev.h.clone()));
    let cv = g.constant(Tensor::row_vec(prev.c.clone()));
    let (h, c) = cell.step(&mut g, store, xv, hv, cv);
    Ok(KnowledgeState { h: g.value(h).data.clone(), c: g.value(c).data.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;

    const A: &str = "fn f(a: int) -> int {\n  let total = 0;\n  if (a > 3) { total = a + 2; } else { total = a + 1; }\n  return total;\n}\n";
    const A_RENAMED: &str =
        "fn f(x: int) -> int {\n  let s = 0;\n  if (x > 3) { s = x + 2; } else { s = x + 1; }\n  return s;\n}\n";
    const UNRELATED: &str = "fn g(s: string) -> bool {\n  let i = 0;\n  while (i < len(s)) {\n    if (char_at(s, i) == \"x\") { return true; }\n    i = i + 1;\n  }\n  return false;\n}\n";

    #[test]
    fn alpha_renaming_stays_close() {
        let enc = CodeEncoder::new(128, 0);
        let (a, b, u) = (enc.embed(A), enc.embed(A_RENAMED), enc.embed(UNRELATED));
        assert!(a.parsed && b.parsed && u.parsed);
        let ab = cosine(&a.vector, &b.vector);
        assert!(ab > cosine(&a.vector, &u.vector), "{ab}");
        assert!(ab > cosine(&b.vector, &u.vector));
        assert_ne!(a.vector, b.vector);
    }

    #[test]
    fn fallback_for_unparseable() {
        let enc = CodeEncoder::new(16, 0);
        let e = enc.embed("fn f( {{ return");
        assert!(!e.parsed);
        assert!(e.vector.iter().all(|x| x.is_finite()));
        assert_eq!(enc.embed("fn f( {{ return"), e);
    }

    #[test]
    fn problem_embedding_is_token_mean() {
        let tok = Tokenizer::bytes_only();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let table = Tensor::randn(tok.vocab_size(), 4, 1.0, &mut rng);
        let one = embed_problem("a", &tok, &table).unwrap();
        assert_eq!(one.vector, table.row(b'a' as usize));
        let p = embed_problem("Sum two.", &tok, &table).unwrap();
        assert_eq!(p.token_embeddings.rows, 8);
        let q = embed_problem("Sum two.  \n", &tok, &table).unwrap();
        assert_eq!(p, q);
        assert_eq!(embed_problem("  \n", &tok, &table), Err(EncoderError::EmptyStatement));
    }

    fn toy_cell() -> (ParamStore, LstmCell) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cell = LstmCell::new(&mut store, "lstm", 5, 4, &mut rng);
        (store, cell)
    }

    fn emb(v: Vec<f32>) -> (ProblemEmbedding, CodeEmbedding) {
        (
            ProblemEmbedding { vector: v[..2].to_vec(), token_ids: vec![0], token_embeddings: Tensor::zeros(1, 2) },
            CodeEmbedding { vector: v[2..].to_vec(), parsed: true },
        )
    }

    #[test]
    fn order_matters_and_steps_are_deterministic() {
        let (store, cell) = toy_cell();
        let xs = [emb(vec![1., 0., 0.5, 0.2]), emb(vec![0., 1., -0.5, 0.9]), emb(vec![0.3, 0.3, 0.1, 0.1])];
        let run = |order: [usize; 3]| {
            let mut h = KnowledgeState::zeros(4);
            for i in order {
                h = update_knowledge_state(&cell, &store, &h, &xs[i].0, &xs[i].1, Some(1.0)).unwrap();
            }
            h
        };
        assert_eq!(run([0, 1, 2]), run([0, 1, 2]));
        assert_ne!(run([0, 1, 2]).h, run([1, 0, 2]).h);
        let bad = update_knowledge_state(&cell, &store, &KnowledgeState::zeros(4), &xs[0].0, &xs[0].1, None);
        assert!(matches!(bad, Err(EncoderError::Dimension { .. })));
    }
}
