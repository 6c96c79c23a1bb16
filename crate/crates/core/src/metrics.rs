//! Evaluation metrics: per-test AUC / F1 / accuracy, CodeBLEU and dist-n over
//! generated code, the Random and Majority baselines, and a paired t-test.

use std::collections::{BTreeMap, HashMap, HashSet};

use minilang::ast::{Block, Expr, ExprKind, LValue, Program, StmtKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::config::AucAverage;
use crate::models::PredictionRecord;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("metric undefined: {0}")]
    Undefined(&'static str),
    #[error("length mismatch: {0} scores vs {1} labels")]
    Length(usize, usize),
    #[error("invalid argument: {0}")]
    Invalid(String),
}

type Result<T> = std::result::Result<T, MetricError>;

// ---------------------------------------------------------------------------
// AUC

/// Mann–Whitney AUC from mid-ranks. Ties count one half.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(MetricError::Length(scores.len(), labels.len()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(MetricError::Invalid("NaN score".into()));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(MetricError::Undefined("AUC needs both classes"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += (i..=j).filter(|&k| labels[order[k]]).count() as f64 * mid;
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// AUC computed per group then averaged over the groups where it is defined.
pub fn macro_auc(groups: &[(Vec<f64>, Vec<bool>)]) -> Result<f64> {
    let vals: Vec<f64> = groups.iter().filter_map(|(s, l)| auc(s, l).ok()).collect();
    if vals.is_empty() {
        return Err(MetricError::Undefined("no group has both classes"));
    }
    Ok(vals.iter().sum::<f64>() / vals.len() as f64)
}

// ---------------------------------------------------------------------------
// Thresholded metrics

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
    /// Set when F1 was forced to 0 because nothing was predicted or labeled pass.
    pub degenerate: bool,
}

/// Pass is the positive class; a probability at or above `threshold` predicts pass.
pub fn classification_metrics(probs: &[f64], labels: &[bool], threshold: f64) -> Result<Classification> {
    if probs.len() != labels.len() {
        return Err(MetricError::Length(probs.len(), labels.len()));
    }
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(MetricError::Invalid(format!("threshold {threshold} outside (0, 1)")));
    }
    if labels.is_empty() {
        return Err(MetricError::Undefined("no predictions"));
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &y) in probs.iter().zip(labels) {
        match (p >= threshold, y) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    let accuracy = (tp + tn) as f64 / labels.len() as f64;
    let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
    let recall = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
    let degenerate = tp + fp == 0 && tp + fn_ == 0;
    if degenerate {
        log::warn!("no predicted and no actual passes; F1 reported as 0");
    }
    let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    Ok(Classification { precision, recall, f1, accuracy, degenerate })
}

// ---------------------------------------------------------------------------
// Baselines

/// Distance of the Majority baseline's constant score from 0 or 1.
pub const MAJORITY_EPS: f64 = 1e-6;

/// I.i.d. uniform scores from a seeded generator.
pub fn random_scores(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random::<f64>()).collect()
}

/// Constant score for the majority class of `train_labels`; ties go to pass.
pub fn majority_score(train_labels: &[bool]) -> f64 {
    let pass = train_labels.iter().filter(|&&l| l).count();
    if 2 * pass >= train_labels.len() {
        1.0 - MAJORITY_EPS
    } else {
        MAJORITY_EPS
    }
}

// ---------------------------------------------------------------------------
// dist-n

pub fn dist_n<S: AsRef<str>>(corpus: &[S], n: usize) -> Result<f64> {
    if n == 0 {
        return Err(MetricError::Invalid("n must be at least 1".into()));
    }
    let mut seen = HashSet::new();
    let mut total = 0usize;
    for text in corpus {
        let toks: Vec<&str> = text.as_ref().split_whitespace().collect();
        for w in toks.windows(n) {
            seen.insert(w.to_vec());
            total += 1;
        }
    }
    if total == 0 {
        return Err(MetricError::Undefined("no text has n tokens"));
    }
    Ok(seen.len() as f64 / total as f64)
}

/// dist-n over MiniLang surface tokens rather than whitespace words.
pub fn code_dist_n<S: AsRef<str>>(corpus: &[S], n: usize) -> Result<f64> {
    let joined: Vec<String> = corpus.iter().map(|c| minilang::surface_tokens(c.as_ref()).join(" ")).collect();
    dist_n(&joined, n)
}

// ---------------------------------------------------------------------------
// CodeBLEU

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CodeBleuWeights {
    pub ngram: f64,
    pub weighted_ngram: f64,
    pub ast: f64,
    pub dataflow: f64,
}

impl Default for CodeBleuWeights {
    fn default() -> Self {
        CodeBleuWeights { ngram: 0.25, weighted_ngram: 0.25, ast: 0.25, dataflow: 0.25 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeBleu {
    pub score: f64,
    pub ngram: f64,
    pub weighted_ngram: f64,
    pub ast: Option<f64>,
    pub dataflow: Option<f64>,
    /// Some component was unavailable and its weight was spread over the rest.
    pub redistributed: bool,
    pub empty_candidate: bool,
}

/// Weight of n-grams containing a reserved word in the keyword-weighted BLEU.
pub const KEYWORD_WEIGHT: f64 = 5.0;

fn ngram_counts(toks: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    for w in toks.windows(n) {
        *m.entry(w).or_insert(0) += 1;
    }
    m
}

/// BLEU-4 with brevity penalty. `weight` assigns each n-gram a weight;
/// zero-match orders are smoothed with 0.1 pseudo-matches.
fn bleu(cand: &[String], reference: &[String], weight: impl Fn(&[String]) -> f64) -> f64 {
    if cand.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=4 {
        let c = ngram_counts(cand, n);
        let r = ngram_counts(reference, n);
        let (mut matched, mut total) = (0.0, 0.0);
        for (g, &k) in &c {
            let w = weight(g);
            matched += w * k.min(r.get(g).copied().unwrap_or(0)) as f64;
            total += w * k as f64;
        }
        let p = if total == 0.0 {
            // candidate shorter than n: an order with nothing to match
            if reference.len() < n { 1.0 } else { 0.1 / (1.0 + reference.len() as f64) }
        } else if matched == 0.0 {
            0.1 / total
        } else {
            matched / total
        };
        log_sum += p.ln() / 4.0;
    }
    let (c, r) = (cand.len() as f64, reference.len() as f64);
    let bp = if c >= r { 1.0 } else { (1.0 - r / c).exp() };
    bp * log_sum.exp()
}

fn is_keyword(tok: &str) -> bool {
    minilang::KEYWORDS.contains(&tok)
}

pub fn ngram_bleu(candidate: &str, reference: &str) -> f64 {
    bleu(&minilang::surface_tokens(candidate), &minilang::surface_tokens(reference), |_| 1.0)
}

pub fn weighted_ngram_bleu(candidate: &str, reference: &str) -> f64 {
    bleu(&minilang::surface_tokens(candidate), &minilang::surface_tokens(reference), |g| {
        if g.iter().any(|t| is_keyword(t)) { KEYWORD_WEIGHT } else { 1.0 }
    })
}

/// Every subtree of the program rendered without identifier names or literal values.
fn subtrees(p: &Program) -> Vec<String> {
    fn expr(e: &Expr, out: &mut Vec<String>) -> String {
        let s = match &e.kind {
            ExprKind::Int(_) => "int".to_string(),
            ExprKind::Bool(_) => "bool".to_string(),
            ExprKind::Str(_) => "str".to_string(),
            ExprKind::Var(_) => "var".to_string(),
            ExprKind::Array(xs) => {
                let inner: Vec<String> = xs.iter().map(|x| expr(x, out)).collect();
                format!("(array {})", inner.join(" "))
            }
            ExprKind::Unary(op, x) => format!("({} {})", op.symbol(), expr(x, out)),
            ExprKind::Binary(op, a, b) => format!("({} {} {})", op.symbol(), expr(a, out), expr(b, out)),
            ExprKind::Call(name, args) => {
                let inner: Vec<String> = args.iter().map(|x| expr(x, out)).collect();
                // builtin names are part of the structure, user functions are not
                let callee = if minilang::builtins::Builtin::lookup(name).is_some() { name.as_str() } else { "fn" };
                format!("(call {callee} {})", inner.join(" "))
            }
            ExprKind::Index(a, i) => format!("(index {} {})", expr(a, out), expr(i, out)),
        };
        if s.starts_with('(') {
            out.push(s.clone());
        }
        s
    }
    fn block(b: &Block, out: &mut Vec<String>) -> String {
        let inner: Vec<String> = b.iter().map(|s| stmt(&s.kind, out)).collect();
        let s = format!("(block {})", inner.join(" "));
        out.push(s.clone());
        s
    }
    fn stmt(s: &StmtKind, out: &mut Vec<String>) -> String {
        let r = match s {
            StmtKind::Let { ty, init, .. } => {
                let t = ty.as_ref().map(|t| t.to_string()).unwrap_or_default();
                format!("(let {t} {})", expr(init, out))
            }
            StmtKind::Assign { target: LValue::Var(_), value } => format!("(assign var {})", expr(value, out)),
            StmtKind::Assign { target: LValue::Index(_, i), value } => {
                format!("(assign (index var {}) {})", expr(i, out), expr(value, out))
            }
            StmtKind::If { cond, then_block, else_block } => {
                let c = expr(cond, out);
                let t = block(then_block, out);
                let e = else_block.as_ref().map(|b| block(b, out)).unwrap_or_default();
                format!("(if {c} {t} {e})")
            }
            StmtKind::While { cond, body } => format!("(while {} {})", expr(cond, out), block(body, out)),
            StmtKind::Return(e) => format!("(return {})", expr(e, out)),
            StmtKind::Expr(e) => format!("(expr {})", expr(e, out)),
        };
        out.push(r.clone());
        r
    }
    let mut out = Vec::new();
    for f in &p.functions {
        let params: Vec<String> = f.sig.params.iter().map(|p| p.ty.to_string()).collect();
        let b = block(&f.body, &mut out);
        out.push(format!("(fn ({}) {} {b})", params.join(" "), f.sig.ret));
    }
    out
}

/// Fraction of reference subtrees (multiset) found in the candidate.
fn multiset_match(cand: &[String], reference: &[String]) -> Option<f64> {
    if reference.is_empty() {
        return None;
    }
    let mut have: HashMap<&String, usize> = HashMap::new();
    cand.iter().for_each(|s| *have.entry(s).or_insert(0) += 1);
    let mut hit = 0;
    for s in reference {
        if let Some(k) = have.get_mut(s).filter(|k| **k > 0) {
            *k -= 1;
            hit += 1;
        }
    }
    Some(hit as f64 / reference.len() as f64)
}

/// Def-use edges with variables renamed by first appearance.
fn dataflow(p: &Program) -> Vec<String> {
    struct Ctx {
        names: HashMap<String, usize>,
        out: Vec<String>,
    }
    impl Ctx {
        fn var(&mut self, n: &str) -> String {
            let k = self.names.len();
            format!("v{}", self.names.entry(n.to_string()).or_insert(k))
        }
        fn uses(&mut self, e: &Expr, acc: &mut Vec<String>) {
            match &e.kind {
                ExprKind::Var(n) => {
                    let v = self.var(n);
                    acc.push(v);
                }
                ExprKind::Array(xs) | ExprKind::Call(_, xs) => xs.iter().for_each(|x| self.uses(x, acc)),
                ExprKind::Unary(_, x) => self.uses(x, acc),
                ExprKind::Binary(_, a, b) | ExprKind::Index(a, b) => {
                    self.uses(a, acc);
                    self.uses(b, acc);
                }
                ExprKind::Int(_) | ExprKind::Bool(_) | ExprKind::Str(_) => {}
            }
        }
        fn flow(&mut self, sink: String, e: &Expr) {
            let mut acc = Vec::new();
            self.uses(e, &mut acc);
            for v in acc {
                self.out.push(format!("{sink}<-{v}"));
            }
        }
        fn block(&mut self, b: &Block) {
            for s in b {
                match &s.kind {
                    StmtKind::Let { name, init, .. } | StmtKind::Assign { target: LValue::Var(name), value: init } => {
                        // uses are numbered before the defined name
                        let mut acc = Vec::new();
                        self.uses(init, &mut acc);
                        let d = self.var(name);
                        acc.into_iter().for_each(|v| self.out.push(format!("{d}<-{v}")));
                    }
                    StmtKind::Assign { target: LValue::Index(name, i), value } => {
                        let mut acc = Vec::new();
                        self.uses(i, &mut acc);
                        self.uses(value, &mut acc);
                        let d = self.var(name);
                        acc.into_iter().for_each(|v| self.out.push(format!("{d}[]<-{v}")));
                    }
                    StmtKind::If { cond, then_block, else_block } => {
                        self.flow("if".into(), cond);
                        self.block(then_block);
                        if let Some(e) = else_block {
                            self.block(e);
                        }
                    }
                    StmtKind::While { cond, body } => {
                        self.flow("while".into(), cond);
                        self.block(body);
                    }
                    StmtKind::Return(e) => self.flow("ret".into(), e),
                    StmtKind::Expr(e) => self.flow("expr".into(), e),
                }
            }
        }
    }
    let mut out = Vec::new();
    for f in &p.functions {
        let mut ctx = Ctx { names: HashMap::new(), out: Vec::new() };
        f.sig.params.iter().for_each(|p| {
            ctx.var(&p.name);
        });
        ctx.block(&f.body);
        out.extend(ctx.out);
    }
    out
}

/// AST subtree match; `None` when either side does not parse.
pub fn ast_match(candidate: &str, reference: &str) -> Option<f64> {
    let c = minilang::parse_program(candidate).ok()?;
    let r = minilang::parse_program(reference).ok()?;
    multiset_match(&subtrees(&c), &subtrees(&r))
}

/// Def-use edge match; `None` when either side does not parse or the
/// reference has no data flow.
pub fn dataflow_match(candidate: &str, reference: &str) -> Option<f64> {
    let c = minilang::parse_program(candidate).ok()?;
    let r = minilang::parse_program(reference).ok()?;
    multiset_match(&dataflow(&c), &dataflow(&r))
}

pub fn codebleu(candidate: &str, reference: &str, w: CodeBleuWeights) -> Result<CodeBleu> {
    let total = w.ngram + w.weighted_ngram + w.ast + w.dataflow;
    if (total - 1.0).abs() > 1e-9 || [w.ngram, w.weighted_ngram, w.ast, w.dataflow].iter().any(|x| *x < 0.0) {
        return Err(MetricError::Invalid("CodeBLEU weights must be non-negative and sum to 1".into()));
    }
    if reference.trim().is_empty() {
        return Err(MetricError::Invalid("empty reference".into()));
    }
    if candidate.trim().is_empty() {
        return Ok(CodeBleu {
            score: 0.0,
            ngram: 0.0,
            weighted_ngram: 0.0,
            ast: None,
            dataflow: None,
            redistributed: false,
            empty_candidate: true,
        });
    }
    let ngram = ngram_bleu(candidate, reference);
    let weighted_ngram = weighted_ngram_bleu(candidate, reference);
    let ast = ast_match(candidate, reference);
    let df = dataflow_match(candidate, reference);
    let parts = [(Some(ngram), w.ngram), (Some(weighted_ngram), w.weighted_ngram), (ast, w.ast), (df, w.dataflow)];
    let avail: f64 = parts.iter().filter(|(v, _)| v.is_some()).map(|(_, w)| w).sum();
    let redistributed = parts.iter().any(|(v, w)| v.is_none() && *w > 0.0);
    let score = if avail == 0.0 {
        0.0
    } else {
        parts.iter().filter_map(|(v, w)| v.map(|v| v * w)).sum::<f64>() / avail
    };
    Ok(CodeBleu { score, ngram, weighted_ngram, ast, dataflow: df, redistributed, empty_candidate: false })
}

// ---------------------------------------------------------------------------
// Significance

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    pub p_value: f64,
    pub mean_diff: f64,
}

/// Two-sided paired t-test on `a − b`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(MetricError::Length(a.len(), b.len()));
    }
    if a.len() < 2 {
        return Err(MetricError::Undefined("paired t-test needs at least two pairs"));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let df = n - 1.0;
    if var == 0.0 {
        let (t, p) = if mean == 0.0 { (0.0, 1.0) } else { (mean.signum() * f64::INFINITY, 0.0) };
        return Ok(TTest { t, df, p_value: p, mean_diff: mean });
    }
    let t = mean / (var / n).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| MetricError::Invalid(e.to_string()))?;
    let p = (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0);
    Ok(TTest { t, df, p_value: p, mean_diff: mean })
}

pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

// ---------------------------------------------------------------------------
// Reports

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProblemBreakdown {
    pub interactions: usize,
    pub tests: usize,
    pub pass_rate: f64,
    pub auc: Option<f64>,
    pub accuracy: Option<f64>,
    pub codebleu: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Counts {
    pub interactions: usize,
    pub test_predictions: usize,
    pub generated: usize,
    pub truncated: usize,
    pub codebleu_redistributed: usize,
    pub empty_generations: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub auc: Option<f64>,
    pub f1: Option<f64>,
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub codebleu: Option<f64>,
    pub dist_n: BTreeMap<usize, f64>,
    pub per_problem: BTreeMap<String, ProblemBreakdown>,
    pub counts: Counts,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, Copy)]
pub struct ReportOptions {
    pub average: AucAverage,
    pub threshold: f64,
    pub weights: CodeBleuWeights,
}

impl Default for ReportOptions {
    fn default() -> Self {
        ReportOptions { average: AucAverage::Micro, threshold: 0.5, weights: CodeBleuWeights::default() }
    }
}

impl EvaluationReport {
    pub fn from_records(records: &[PredictionRecord], opts: &ReportOptions) -> Result<Self> {
        let mut rep = EvaluationReport::default();
        rep.counts.interactions = records.len();
        let mut scores = Vec::new();
        let mut labels = Vec::new();
        let mut groups: BTreeMap<&str, (Vec<f64>, Vec<bool>, Vec<f64>, usize)> = BTreeMap::new();
        let mut generated = Vec::new();
        for r in records {
            let g = groups.entry(&r.problem_id).or_default();
            g.3 += 1;
            if let Some(p) = &r.probs {
                if p.len() != r.outcomes.len() {
                    return Err(MetricError::Length(p.len(), r.outcomes.len()));
                }
                scores.extend_from_slice(p);
                labels.extend_from_slice(&r.outcomes);
                g.0.extend_from_slice(p);
                g.1.extend_from_slice(&r.outcomes);
            }
            if let Some(code) = &r.generated {
                rep.counts.generated += 1;
                rep.counts.truncated += usize::from(r.truncated);
                let cb = codebleu(code, &r.code, opts.weights)?;
                rep.counts.codebleu_redistributed += usize::from(cb.redistributed);
                rep.counts.empty_generations += usize::from(cb.empty_candidate);
                g.2.push(cb.score);
                generated.push(code.as_str());
            }
        }
        rep.counts.test_predictions = scores.len();
        if !scores.is_empty() {
            let per_group: Vec<(Vec<f64>, Vec<bool>)> =
                groups.values().filter(|g| !g.0.is_empty()).map(|g| (g.0.clone(), g.1.clone())).collect();
            let a = match opts.average {
                AucAverage::Micro => auc(&scores, &labels),
                AucAverage::Macro => macro_auc(&per_group),
            };
            match a {
                Ok(v) => rep.auc = Some(v),
                Err(e) => rep.notes.push(format!("auc: {e}")),
            }
            let c = classification_metrics(&scores, &labels, opts.threshold)?;
            if c.degenerate {
                rep.notes.push("f1: no predicted or actual passes, reported as 0".into());
            }
            rep.f1 = Some(c.f1);
            rep.accuracy = Some(c.accuracy);
            rep.precision = Some(c.precision);
            rep.recall = Some(c.recall);
        }
        let all_cb: Vec<f64> = groups.values().flat_map(|g| g.2.iter().copied()).collect();
        if !all_cb.is_empty() {
            rep.codebleu = Some(all_cb.iter().sum::<f64>() / all_cb.len() as f64);
            for n in [1, 2] {
                match code_dist_n(&generated, n) {
                    Ok(v) => {
                        rep.dist_n.insert(n, v);
                    }
                    Err(e) => rep.notes.push(format!("dist-{n}: {e}")),
                }
            }
        }
        if rep.counts.codebleu_redistributed > 0 {
            rep.notes.push(format!(
                "codebleu: {} generations had unavailable components, weights redistributed",
                rep.counts.codebleu_redistributed
            ));
        }
        for (pid, (s, l, cb, n)) in groups {
            let pass = l.iter().filter(|&&x| x).count();
            rep.per_problem.insert(
                pid.to_string(),
                ProblemBreakdown {
                    interactions: n,
                    tests: l.len(),
                    pass_rate: if l.is_empty() { 0.0 } else { pass as f64 / l.len() as f64 },
                    auc: auc(&s, &l).ok(),
                    accuracy: classification_metrics(&s, &l, opts.threshold).ok().map(|c| c.accuracy),
                    codebleu: (!cb.is_empty()).then(|| cb.iter().sum::<f64>() / cb.len() as f64),
                },
            );
        }
        Ok(rep)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_auc(s: &[f64], l: &[bool]) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..s.len() {
            for j in 0..s.len() {
                if l[i] && !l[j] {
                    den += 1.0;
                    num += if s[i] > s[j] { 1.0 } else if s[i] == s[j] { 0.5 } else { 0.0 };
                }
            }
        }
        num / den
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.9, 0.1], &[true, false]).unwrap(), 1.0);
        assert_eq!(auc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).unwrap(), 0.75);
        assert_eq!(auc(&[0.3; 6], &[true, false, true, false, true, true]).unwrap(), 0.5);
        assert!(matches!(auc(&[0.1, 0.2], &[true, true]), Err(MetricError::Undefined(_))));
    }

    #[test]
    fn auc_matches_pair_counting() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let n = rng.random_range(2..60);
            let s: Vec<f64> = (0..n).map(|_| (rng.random_range(0..10) as f64) / 10.0).collect();
            let mut l: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
            l[0] = true;
            l[1] = false;
            assert!((auc(&s, &l).unwrap() - brute_auc(&s, &l)).abs() < 1e-12);
        }
    }

    #[test]
    fn f1_example() {
        let c = classification_metrics(&[1.0, 1.0, 0.0], &[true, false, true], 0.5).unwrap();
        assert_eq!((c.precision, c.recall, c.f1), (0.5, 0.5, 0.5));
        assert!((c.accuracy - 1.0 / 3.0).abs() < 1e-15);
        let c = classification_metrics(&[0.1, 0.2], &[false, false], 0.5).unwrap();
        assert!(c.degenerate && c.f1 == 0.0 && c.accuracy == 1.0);
    }

    #[test]
    fn majority_identity() {
        let labels: Vec<bool> = (0..100).map(|i| i < 62).collect();
        let s = majority_score(&labels);
        let c = classification_metrics(&vec![s; 100], &labels, 0.5).unwrap();
        assert!((c.accuracy - 0.62).abs() < 1e-12);
        assert!((c.f1 - 2.0 * 0.62 / 1.62).abs() < 1e-12);
        assert!((c.f1 - 0.765).abs() < 1e-3);
    }

    #[test]
    fn dist_examples() {
        assert_eq!(dist_n(&["a b b", "a c"], 1).unwrap(), 0.6);
        assert_eq!(dist_n(&["x y z w"], 1).unwrap(), 1.0);
        let single = dist_n(&["a b", "c d"], 1).unwrap();
        let doubled = dist_n(&["a b", "c d", "a b", "c d"], 1).unwrap();
        assert_eq!(doubled, single / 2.0);
        assert!(dist_n(&["a", "b"], 2).is_err());
    }

    const PROBE: &str = "fn sum(xs: [int]) -> int {\n    let total = 0;\n    let i = 0;\n    while (i < len(xs)) {\n        total = total + xs[i];\n        i = i + 1;\n    }\n    return total;\n}\n";

    #[test]
    fn codebleu_identity_and_rename() {
        let cb = codebleu(PROBE, PROBE, CodeBleuWeights::default()).unwrap();
        assert!((cb.score - 1.0).abs() < 1e-12, "{cb:?}");
        assert!(!cb.redistributed);
        let renamed = PROBE.replace("total", "acc");
        let cb = codebleu(&renamed, PROBE, CodeBleuWeights::default()).unwrap();
        assert!(cb.ngram < 1.0);
        assert_eq!(cb.ast, Some(1.0));
        assert_eq!(cb.dataflow, Some(1.0));
    }

    #[test]
    fn codebleu_unrelated_and_unparseable() {
        let other = "~~ @@ ## $$";
        let cb = codebleu(other, PROBE, CodeBleuWeights::default()).unwrap();
        assert!(cb.redistributed && cb.ast.is_none());
        assert!(cb.score < 0.05, "{cb:?}");
        let cb = codebleu("", PROBE, CodeBleuWeights::default()).unwrap();
        assert!(cb.empty_candidate && cb.score == 0.0);
    }

    #[test]
    fn t_test_examples() {
        let a = [0.7, 0.72, 0.69, 0.75, 0.71];
        assert_eq!(paired_t_test(&a, &a).unwrap().p_value, 1.0);
        let b: Vec<f64> = a.iter().map(|x| x - 0.05).collect();
        let t = paired_t_test(&a, &b).unwrap();
        assert!(t.p_value < 0.05);
        let noisy = [0.64, 0.68, 0.63, 0.71, 0.65];
        let t = paired_t_test(&a, &noisy).unwrap();
        // reference values from scipy.stats.ttest_rel
        assert!((t.t - 10.614455552060448).abs() < 1e-9, "{}", t.t);
        assert!((t.p_value - 0.000445953664740794).abs() < 1e-9, "{}", t.p_value);
        assert!(paired_t_test(&[1.0], &[0.0]).is_err());
    }
}
