//! The model family: TIKTOC (joint code generation and per-test outcome
//! prediction), OKT / OKT-TC (generation only), Code-DKT-TC (recurrent state
//! plus per-problem head, no backbone pass), and the no-knowledge ablation.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{argmax, Backbone, BackboneError};
use crate::config::{ExperimentConfig, HeadVariant, ModelKind};
use crate::data::{Dataset, Problem, Trajectory};
use crate::encoders::{self, CodeEncoder, EncoderError, LstmCell};
use crate::nn::{self, Graph, Group, ParamId, ParamStore, Segment, Tensor, Var};
use crate::tokenizer::{Tokenizer, BOS, EOS};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("target code tokenizes to zero tokens")]
    EmptyTarget,
    #[error("prompt mask selects no positions")]
    EmptyMask,
    #[error("lambda must lie in [0, 1], got {0}")]
    BadLambda(f64),
    #[error("no test-case head for problem `{0}`")]
    MissingHead(String),
    #[error("head for problem `{problem}` has {head} columns but the suite has {suite} tests")]
    HeadMismatch { problem: String, head: usize, suite: usize },
    #[error("dimension mismatch: expected {expected}, got {found}")]
    Dimension { expected: usize, found: usize },
    #[error("unknown problem `{0}`")]
    UnknownProblem(String),
    #[error("interaction of student `{0}` is not graded")]
    Unlabeled(String),
    #[error("model `{0}` has no trainable objective")]
    NotTrainable(ModelKind),
    #[error(transparent)]
    Backbone(#[from] BackboneError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
}

// ---------------------------------------------------------------------------
// Closed-form pieces (f64) used by the loss-algebra and gradient checks.

pub fn sigmoid64(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ŷ_i = σ(r · w_i)` for each column `w_i` of the D×S matrix `w` (row-major).
pub fn predict_test_outcomes(r: &[f64], w: &[f64], tests: usize) -> Result<Vec<f64>, ModelError> {
    if w.len() != r.len() * tests {
        return Err(ModelError::Dimension { expected: r.len() * tests, found: w.len() });
    }
    Ok((0..tests).map(|i| sigmoid64(r.iter().enumerate().map(|(d, x)| x * w[d * tests + i]).sum())).collect())
}

pub const BCE_EPS: f64 = 1e-7;

/// Mean binary cross-entropy over tests, probabilities clamped to `[ε, 1−ε]`.
pub fn test_case_pred_loss(yhat: &[f64], y: &[f64]) -> Result<f64, ModelError> {
    if yhat.len() != y.len() {
        return Err(ModelError::Dimension { expected: y.len(), found: yhat.len() });
    }
    if y.is_empty() {
        return Err(ModelError::EmptyTarget);
    }
    let s: f64 = yhat
        .iter()
        .zip(y)
        .map(|(&p, &t)| {
            let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum();
    Ok(s / y.len() as f64)
}

/// `λ·l_codegen + (1−λ)·l_testcase`.
pub fn tiktoc_loss(l_codegen: f64, l_testcase: f64, lambda: f64) -> Result<f64, ModelError> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(ModelError::BadLambda(lambda));
    }
    Ok(lambda * l_codegen + (1.0 - lambda) * l_testcase)
}

/// Head loss and its analytic gradients with respect to `w` (D×S) and `r`.
pub fn head_loss_gradients(r: &[f64], w: &[f64], y: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>), ModelError> {
    let s = y.len();
    let yhat = predict_test_outcomes(r, w, s)?;
    let loss = test_case_pred_loss(&yhat, y)?;
    let dz: Vec<f64> = yhat.iter().zip(y).map(|(p, t)| (p - t) / s as f64).collect();
    let mut dw = vec![0.0; w.len()];
    let mut dr = vec![0.0; r.len()];
    for d in 0..r.len() {
        for i in 0..s {
            dw[d * s + i] = r[d] * dz[i];
            dr[d] += w[d * s + i] * dz[i];
        }
    }
    Ok((loss, dw, dr))
}

/// Mean of the hidden rows selected by `mask`.
pub fn pool_prompt_representation(hidden: &Tensor, mask: &[bool]) -> Result<Vec<f32>, ModelError> {
    if mask.len() != hidden.rows {
        return Err(ModelError::Dimension { expected: hidden.rows, found: mask.len() });
    }
    let rows: Vec<usize> = (0..hidden.rows).filter(|&i| mask[i]).collect();
    if rows.is_empty() {
        return Err(ModelError::EmptyMask);
    }
    Ok(hidden.select_rows(&rows).mean_rows().data)
}

/// `p_m = [p̄_m ; h] W + b` for every problem token row.
pub fn knowledge_guided_embeddings(tokens: &Tensor, h: &[f32], w: &Tensor, b: &Tensor) -> Result<Tensor, ModelError> {
    let d = tokens.cols;
    if h.len() != d || w.rows != 2 * d {
        return Err(ModelError::Dimension { expected: d, found: h.len() });
    }
    let mut x = Tensor::zeros(tokens.rows, 2 * d);
    for r in 0..tokens.rows {
        x.row_mut(r)[..d].copy_from_slice(tokens.row(r));
        x.row_mut(r)[d..].copy_from_slice(h);
    }
    let mut y = nn::matmul(&x, w);
    for r in 0..y.rows {
        y.row_mut(r).iter_mut().zip(&b.data).for_each(|(a, c)| *a += c);
    }
    Ok(y)
}

// ---------------------------------------------------------------------------

/// One interaction prepared for the model.
#[derive(Debug, Clone)]
pub struct EncodedStep {
    pub problem_id: String,
    pub problem: usize,
    pub code: String,
    pub code_ids: Vec<u32>,
    pub code_emb: Vec<f32>,
    pub score: f32,
    pub outcomes: Vec<f32>,
}

#[derive(Debug, Clone)]
pub struct EncodedStudent {
    pub student_id: String,
    pub steps: Vec<EncodedStep>,
}

#[derive(Debug, Clone)]
struct ProblemInfo {
    id: String,
    tokens: Vec<u32>,
    tests: usize,
}

/// Per-test probabilities and generated code for one interaction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub student_id: String,
    pub problem_id: String,
    pub step: usize,
    pub probs: Option<Vec<f64>>,
    pub generated: Option<String>,
    pub truncated: bool,
    pub outcomes: Vec<bool>,
    pub code: String,
}

/// Loss terms of one batch; `total` is the optimized scalar.
pub struct BatchLoss {
    pub total: Var,
    pub codegen: Option<Var>,
    pub testcase: Option<Var>,
    pub targets: usize,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub cfg: ExperimentConfig,
    pub tokenizer: Tokenizer,
    pub store: ParamStore,
    pub backbone: Option<Backbone>,
    pub cell: Option<LstmCell>,
    align: Option<(ParamId, ParamId)>,
    code_proj: Option<(ParamId, ParamId)>,
    heads: BTreeMap<String, ParamId>,
    code_encoder: CodeEncoder,
    problems: Vec<ProblemInfo>,
    problem_index: BTreeMap<String, usize>,
}

/// Initial D×S head matrix for `problem`.
pub fn build_head(
    problem: &Problem,
    variant: HeadVariant,
    tokenizer: &Tokenizer,
    tok_emb: &Tensor,
    rng: &mut ChaCha8Rng,
) -> Result<Tensor, ModelError> {
    let d = tok_emb.cols;
    let s = problem.tests.len();
    if variant == HeadVariant::OneHot {
        return Ok(Tensor::randn(d, s, 0.02, rng));
    }
    let mut w = Tensor::zeros(d, s);
    for (i, t) in problem.tests.iter().enumerate() {
        let text = match variant {
            HeadVariant::EmbedTestWithProblem => format!("{} {}", problem.statement.trim(), t.describe()),
            _ => t.describe(),
        };
        let e = encoders::embed_problem(&text, tokenizer, tok_emb)?;
        for (k, v) in e.vector.iter().enumerate() {
            w.data[k * s + i] = *v;
        }
    }
    Ok(w)
}

impl Model {
    /// Fresh model for every problem of `problems`, initialized from `cfg.seed`.
    pub fn new(cfg: &ExperimentConfig, problems: &BTreeMap<String, Problem>, tokenizer: Tokenizer) -> Result<Self, ModelError> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut store = ParamStore::new();
        let mut model = Model {
            cfg: cfg.clone(),
            store: ParamStore::new(),
            backbone: None,
            cell: None,
            align: None,
            code_proj: None,
            heads: BTreeMap::new(),
            code_encoder: CodeEncoder::new(cfg.d_code, cfg.seed),
            problems: Vec::new(),
            problem_index: BTreeMap::new(),
            tokenizer,
        };
        model.index_problems(problems)?;
        if cfg.model.is_baseline() {
            return Ok(model);
        }
        let mut bcfg = cfg.backbone_config();
        bcfg.vocab = model.tokenizer.vocab_size();
        let backbone = Backbone::new(&mut store, bcfg, &mut rng)?;
        let d = backbone.width();
        if cfg.model == ModelKind::CodedktTc {
            // shares the token table for problem embeddings, kept frozen
            let ids: Vec<ParamId> = store.iter().map(|(id, _)| id).collect();
            for id in ids {
                store.set_trainable(id, false);
            }
        }
        let uses_state = cfg.model == ModelKind::CodedktTc || !cfg.no_knowledge;
        if uses_state {
            if cfg.train_code_encoder {
                let mut eye = Tensor::zeros(cfg.d_code, cfg.d_code);
                (0..cfg.d_code).for_each(|i| eye.data[i * cfg.d_code + i] = 1.0);
                let w = store.add("code_proj.w", eye, Group::Recurrent, true);
                let b = store.add("code_proj.b", Tensor::zeros(1, cfg.d_code), Group::Recurrent, false);
                model.code_proj = Some((w, b));
            }
            let input = d + cfg.d_code + usize::from(cfg.state_uses_score);
            model.cell = Some(LstmCell::new(&mut store, "lstm", input, d, &mut rng));
        }
        if matches!(cfg.model, ModelKind::Tiktoc | ModelKind::Okt | ModelKind::OktTc) {
            // [I ; N(0, 0.02)]: starts close to the plain token embeddings
            let mut w = Tensor::randn(2 * d, d, 0.02, &mut rng);
            for r in 0..d {
                w.row_mut(r).iter_mut().for_each(|x| *x = 0.0);
                w.data[r * d + r] = 1.0;
            }
            let wf = store.add("align.w", w, Group::Head, true);
            let bf = store.add("align.b", Tensor::zeros(1, d), Group::Head, false);
            model.align = Some((wf, bf));
        }
        let has_heads = matches!(cfg.model, ModelKind::Tiktoc | ModelKind::CodedktTc);
        if has_heads {
            let tok = store.get(backbone.tok_emb).clone();
            for (pid, p) in problems {
                let w = if cfg.model == ModelKind::CodedktTc {
                    Tensor::randn(2 * d, p.tests.len(), 0.02, &mut rng)
                } else {
                    build_head(p, cfg.head_variant, &model.tokenizer, &tok, &mut rng)?
                };
                let id = store.add(format!("head.{pid}"), w, Group::Head, true);
                model.heads.insert(pid.clone(), id);
            }
        }
        model.backbone = Some(backbone);
        model.store = store;
        Ok(model)
    }

    /// Re-binds a model around parameters restored from a checkpoint.
    pub fn from_parts(
        cfg: &ExperimentConfig,
        problems: &BTreeMap<String, Problem>,
        tokenizer: Tokenizer,
        store: ParamStore,
    ) -> Result<Self, ModelError> {
        let mut model = Model {
            cfg: cfg.clone(),
            backbone: None,
            cell: LstmCell::from_store(&store, "lstm"),
            align: store.id("align.w").zip(store.id("align.b")),
            code_proj: store.id("code_proj.w").zip(store.id("code_proj.b")),
            heads: problems.keys().filter_map(|p| store.id(&format!("head.{p}")).map(|id| (p.clone(), id))).collect(),
            code_encoder: CodeEncoder::new(cfg.d_code, cfg.seed),
            problems: Vec::new(),
            problem_index: BTreeMap::new(),
            tokenizer,
            store,
        };
        model.index_problems(problems)?;
        if !cfg.model.is_baseline() {
            let mut bcfg = cfg.backbone_config();
            bcfg.vocab = model.tokenizer.vocab_size();
            model.backbone = Some(Backbone::from_store(&model.store, bcfg)?);
        }
        Ok(model)
    }

    fn index_problems(&mut self, problems: &BTreeMap<String, Problem>) -> Result<(), ModelError> {
        for (pid, p) in problems {
            let tokens = encoders::statement_tokens(&p.statement, &self.tokenizer)?;
            self.problem_index.insert(pid.clone(), self.problems.len());
            self.problems.push(ProblemInfo { id: pid.clone(), tokens, tests: p.tests.len() });
        }
        Ok(())
    }

    pub fn kind(&self) -> ModelKind {
        self.cfg.model
    }

    pub fn head(&self, problem_id: &str) -> Option<ParamId> {
        self.heads.get(problem_id).copied()
    }

    pub fn has_problem(&self, problem_id: &str) -> bool {
        self.problem_index.contains_key(problem_id)
    }

    pub fn code_embedding(&self, code: &str) -> encoders::CodeEmbedding {
        self.code_encoder.embed(code)
    }

    fn uses_state(&self) -> bool {
        self.cell.is_some()
    }

    pub fn encode_trajectory(&self, t: &Trajectory) -> Result<EncodedStudent, ModelError> {
        let mut steps = Vec::with_capacity(t.interactions.len());
        for it in &t.interactions {
            let problem =
                *self.problem_index.get(&it.problem_id).ok_or_else(|| ModelError::UnknownProblem(it.problem_id.clone()))?;
            let outcomes = it.outcomes.as_ref().ok_or_else(|| ModelError::Unlabeled(t.student_id.clone()))?;
            if outcomes.len() != self.problems[problem].tests {
                return Err(ModelError::HeadMismatch {
                    problem: it.problem_id.clone(),
                    head: self.problems[problem].tests,
                    suite: outcomes.len(),
                });
            }
            steps.push(EncodedStep {
                problem_id: it.problem_id.clone(),
                problem,
                code: it.code.clone(),
                code_ids: self.tokenizer.encode(&it.code),
                code_emb: self.code_encoder.embed(&it.code).vector,
                score: if outcomes.all_pass() { 1.0 } else { 0.0 },
                outcomes: outcomes.0.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
            });
        }
        Ok(EncodedStudent { student_id: t.student_id.clone(), steps })
    }

    pub fn encode_dataset(&self, d: &Dataset) -> Result<Vec<EncodedStudent>, ModelError> {
        d.trajectories.iter().map(|t| self.encode_trajectory(t)).collect()
    }

    /// Rows of mean token embeddings, one per problem.
    fn problem_rows(&self, g: &mut Graph) -> Var {
        let bb = self.backbone.as_ref().expect("backbone");
        let mut ids = Vec::new();
        let mut groups = Vec::new();
        for p in &self.problems {
            groups.push((ids.len()..ids.len() + p.tokens.len()).collect());
            ids.extend_from_slice(&p.tokens);
        }
        let rows = bb.embed_tokens(g, &self.store, &ids);
        g.mean_groups(rows, groups)
    }

    /// Knowledge states for a batch. Returns a matrix whose row
    /// `index[s][t]` is the state before step `t` of student `s`; row 0 is h₀.
    fn states(&self, g: &mut Graph, students: &[&EncodedStudent], prob_rows: Var) -> (Var, Vec<Vec<usize>>) {
        let d = self.backbone.as_ref().expect("backbone").width();
        let zeros = g.constant(Tensor::zeros(1, d));
        let mut index: Vec<Vec<usize>> = students.iter().map(|s| vec![0; s.steps.len()]).collect();
        let Some(cell) = self.cell.as_ref().filter(|_| self.uses_state()) else {
            return (zeros, index);
        };
        let mut parts = vec![zeros];
        let mut offset = 1;
        let mut prev: Option<(Var, Var, Vec<usize>)> = None;
        let max_len = students.iter().map(|s| s.steps.len()).max().unwrap_or(0);
        for t in 0..max_len.saturating_sub(1) {
            let active: Vec<usize> = (0..students.len()).filter(|&s| students[s].steps.len() > t + 1).collect();
            if active.is_empty() {
                break;
            }
            let pidx: Vec<usize> = active.iter().map(|&s| students[s].steps[t].problem).collect();
            let xp = g.gather(prob_rows, &pidx);
            let dc = self.cfg.d_code;
            let mut code = Tensor::zeros(active.len(), dc);
            for (r, &s) in active.iter().enumerate() {
                code.row_mut(r).copy_from_slice(&students[s].steps[t].code_emb);
            }
            let mut xc = g.constant(code);
            if let Some((w, b)) = self.code_proj {
                let (w, b) = (g.param(&self.store, w), g.param(&self.store, b));
                let m = g.matmul(xc, w);
                xc = g.add_row(m, b);
            }
            let mut cols = vec![xp, xc];
            if self.cfg.state_uses_score {
                let sc = Tensor::from_vec(active.len(), 1, active.iter().map(|&s| students[s].steps[t].score).collect());
                cols.push(g.constant(sc));
            }
            let x = g.concat_cols(&cols);
            let (h0, c0) = match &prev {
                None => {
                    let z = g.constant(Tensor::zeros(active.len(), d));
                    (z, z)
                }
                Some((h, c, rows)) => {
                    let pos: Vec<usize> =
                        active.iter().map(|s| rows.iter().position(|r| r == s).expect("active set shrinks")).collect();
                    (g.gather(*h, &pos), g.gather(*c, &pos))
                }
            };
            let (h, c) = cell.step(g, &self.store, x, h0, c0);
            for (r, &s) in active.iter().enumerate() {
                index[s][t + 1] = offset + r;
            }
            offset += active.len();
            parts.push(h);
            prev = Some((h, c, active));
        }
        (g.concat_rows(&parts), index)
    }

    /// Guided prompt rows for targets given as `(problem, state row)`.
    fn prompts(&self, g: &mut Graph, states: Var, targets: &[(usize, usize)]) -> Var {
        let bb = self.backbone.as_ref().expect("backbone");
        let (wf, bf) = self.align.expect("alignment");
        let mut tok = Vec::new();
        let mut st = Vec::new();
        for &(p, s) in targets {
            tok.extend_from_slice(&self.problems[p].tokens);
            st.extend(std::iter::repeat_n(s, self.problems[p].tokens.len()));
        }
        let te = bb.embed_tokens(g, &self.store, &tok);
        let hs = g.gather(states, &st);
        let x = g.concat_cols(&[te, hs]);
        let (wf, bf) = (g.param(&self.store, wf), g.param(&self.store, bf));
        let y = g.matmul(x, wf);
        g.add_row(y, bf)
    }

    /// Builds the batch objective on `g`.
    pub fn batch_loss(&self, g: &mut Graph, students: &[&EncodedStudent]) -> Result<BatchLoss, ModelError> {
        let kind = self.cfg.model;
        if kind.is_baseline() {
            return Err(ModelError::NotTrainable(kind));
        }
        let lambda = self.cfg.effective_lambda();
        if !(0.0..=1.0).contains(&lambda) {
            return Err(ModelError::BadLambda(lambda));
        }
        let prob_rows = self.problem_rows(g);
        let (states, index) = self.states(g, students, prob_rows);
        let mut targets: Vec<(usize, usize, usize)> = Vec::new(); // (student, step, state row)
        for (s, st) in students.iter().enumerate() {
            for t in 0..st.steps.len() {
                targets.push((s, t, index[s][t]));
            }
        }
        let n_targets = targets.len();
        if n_targets == 0 {
            return Err(ModelError::EmptyTarget);
        }
        let inv_targets = 1.0 / n_targets as f32;

        if kind == ModelKind::CodedktTc {
            let tc = self.codedkt_loss(g, students, &targets, prob_rows, states, inv_targets)?;
            let total = g.lincomb(&[(tc, 1.0)]);
            return Ok(BatchLoss { total, codegen: None, testcase: Some(tc), targets: n_targets });
        }

        let bb = self.backbone.as_ref().expect("backbone");
        let prompt_targets: Vec<(usize, usize)> =
            targets.iter().map(|&(s, t, r)| (students[s].steps[t].problem, r)).collect();
        let prompt = self.prompts(g, states, &prompt_targets);

        // Interleave [prompt_i ; BOS c_1..c_N] per target.
        let max_pos = bb.cfg.max_positions;
        let mut code_ids = Vec::new();
        let mut perm = Vec::new();
        let mut segs = Vec::new();
        let mut prompt_groups = Vec::new();
        let mut logit_rows = Vec::new();
        let mut logit_targets = Vec::new();
        let mut logit_weights = Vec::new();
        let total_prompt: usize = prompt_targets.iter().map(|&(p, _)| self.problems[p].tokens.len()).sum();
        let mut prompt_off = 0;
        let mut row = 0;
        for &(s, t, _) in &targets {
            let step = &students[s].steps[t];
            let m = self.problems[step.problem].tokens.len();
            if step.code_ids.is_empty() {
                return Err(ModelError::EmptyTarget);
            }
            let room = max_pos.saturating_sub(m + 1);
            if room == 0 {
                return Err(BackboneError::TooLong(m + 1, max_pos).into());
            }
            let n = step.code_ids.len().min(room);
            let truncated = n < step.code_ids.len();
            perm.extend(prompt_off..prompt_off + m);
            prompt_groups.push((row..row + m).collect::<Vec<_>>());
            let code_start = total_prompt + code_ids.len();
            code_ids.push(BOS);
            code_ids.extend_from_slice(&step.code_ids[..n]);
            perm.extend(code_start..code_start + n + 1);
            let mut tg: Vec<u32> = step.code_ids[..n].to_vec();
            if !truncated {
                tg.push(EOS);
            }
            let w = inv_targets / tg.len() as f32;
            for (j, &tok) in tg.iter().enumerate() {
                logit_rows.push(row + m + j);
                logit_targets.push(tok);
                logit_weights.push(w);
            }
            segs.push(Segment { start: row, len: m + 1 + n });
            row += m + 1 + n;
            prompt_off += m;
        }
        let code_emb = bb.embed_tokens(g, &self.store, &code_ids);
        let stacked = g.concat_rows(&[prompt, code_emb]);
        let x = g.gather(stacked, &perm);
        let hidden = bb.forward(g, &self.store, x, &segs)?;
        let sel = g.gather(hidden, &logit_rows);
        let logits = bb.logits(g, &self.store, sel);
        let cg = g.cross_entropy(logits, &logit_targets, &logit_weights);

        if kind != ModelKind::Tiktoc {
            let total = g.lincomb(&[(cg, 1.0)]);
            return Ok(BatchLoss { total, codegen: Some(cg), testcase: None, targets: n_targets });
        }
        let r = g.mean_groups(hidden, prompt_groups);
        let tc = self.head_loss(g, students, &targets, r, inv_targets)?;
        let total = g.lincomb(&[(cg, lambda as f32), (tc, (1.0 - lambda) as f32)]);
        Ok(BatchLoss { total, codegen: Some(cg), testcase: Some(tc), targets: n_targets })
    }

    /// Sum over problems of the weighted head BCE; `feats` has one row per target.
    fn head_loss(
        &self,
        g: &mut Graph,
        students: &[&EncodedStudent],
        targets: &[(usize, usize, usize)],
        feats: Var,
        inv_targets: f32,
    ) -> Result<Var, ModelError> {
        let mut by_problem: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, &(s, t, _)) in targets.iter().enumerate() {
            by_problem.entry(students[s].steps[t].problem).or_default().push(i);
        }
        let mut terms = Vec::new();
        for (p, rows) in by_problem {
            let info = &self.problems[p];
            let wid = self.heads.get(&info.id).copied().ok_or_else(|| ModelError::MissingHead(info.id.clone()))?;
            let w = g.param(&self.store, wid);
            if g.value(w).cols != info.tests {
                return Err(ModelError::HeadMismatch { problem: info.id.clone(), head: g.value(w).cols, suite: info.tests });
            }
            let f = g.gather(feats, &rows);
            let z = g.matmul(f, w);
            let mut y = Vec::new();
            for &i in &rows {
                let (s, t, _) = targets[i];
                y.extend_from_slice(&students[s].steps[t].outcomes);
            }
            let wts = vec![inv_targets / info.tests as f32; y.len()];
            terms.push((g.bce_logits(z, &y, &wts), 1.0));
        }
        Ok(g.lincomb(&terms))
    }

    fn codedkt_loss(
        &self,
        g: &mut Graph,
        students: &[&EncodedStudent],
        targets: &[(usize, usize, usize)],
        prob_rows: Var,
        states: Var,
        inv_targets: f32,
    ) -> Result<Var, ModelError> {
        let pidx: Vec<usize> = targets.iter().map(|&(s, t, _)| students[s].steps[t].problem).collect();
        let sidx: Vec<usize> = targets.iter().map(|&(_, _, r)| r).collect();
        let p = g.gather(prob_rows, &pidx);
        let h = g.gather(states, &sidx);
        let feats = g.concat_cols(&[p, h]);
        self.head_loss(g, students, targets, feats, inv_targets)
    }

    /// Teacher-forced rollout over one student: a record per interaction,
    /// each using only the interactions before it.
    pub fn predict_student(&self, student: &EncodedStudent, generate: bool) -> Result<Vec<PredictionRecord>, ModelError> {
        let mut g = Graph::new();
        let prob_rows = self.problem_rows(&mut g);
        let (states, index) = self.states(&mut g, &[student], prob_rows);
        let mut out = Vec::with_capacity(student.steps.len());
        for (t, step) in student.steps.iter().enumerate() {
            let srow = index[0][t];
            let mut rec = PredictionRecord {
                student_id: student.student_id.clone(),
                problem_id: step.problem_id.clone(),
                step: t,
                probs: None,
                generated: None,
                truncated: false,
                outcomes: step.outcomes.iter().map(|&y| y > 0.5).collect(),
                code: step.code.clone(),
            };
            match self.cfg.model {
                ModelKind::CodedktTc => {
                    let p = g.gather(prob_rows, &[step.problem]);
                    let h = g.gather(states, &[srow]);
                    let f = g.concat_cols(&[p, h]);
                    rec.probs = Some(self.head_probs(&g, f, &step.problem_id)?);
                }
                ModelKind::Tiktoc | ModelKind::Okt | ModelKind::OktTc => {
                    let prompt = self.prompts(&mut g, states, &[(step.problem, srow)]);
                    let prompt_rows = g.value(prompt).clone();
                    let (r, gen) = self.decode(&prompt_rows, generate)?;
                    if self.cfg.model == ModelKind::Tiktoc {
                        let rv = g.constant(Tensor::row_vec(r));
                        rec.probs = Some(self.head_probs(&g, rv, &step.problem_id)?);
                    }
                    if let Some((text, truncated)) = gen {
                        rec.generated = Some(text);
                        rec.truncated = truncated;
                    }
                }
                ModelKind::Random | ModelKind::Majority => return Err(ModelError::NotTrainable(self.cfg.model)),
            }
            out.push(rec);
        }
        Ok(out)
    }

    fn head_probs(&self, g: &Graph, feat: Var, problem_id: &str) -> Result<Vec<f64>, ModelError> {
        let wid = self.heads.get(problem_id).copied().ok_or_else(|| ModelError::MissingHead(problem_id.into()))?;
        let w = self.store.get(wid);
        let f = g.value(feat);
        if f.cols != w.rows {
            return Err(ModelError::Dimension { expected: w.rows, found: f.cols });
        }
        let z = nn::matmul(f, w);
        Ok(z.data.iter().map(|&x| sigmoid64(x as f64)).collect())
    }

    /// Prefills the guided prompt; returns the pooled prompt representation
    /// and, when asked, the greedy continuation.
    fn decode(&self, prompt: &Tensor, generate: bool) -> Result<(Vec<f32>, Option<(String, bool)>), ModelError> {
        let bb = self.backbone.as_ref().expect("backbone");
        let mut cache = bb.new_cache();
        let mut x = prompt.clone();
        x.rows += 1;
        x.data.extend(bb.token_row(&self.store, BOS));
        let hidden = bb.extend(&self.store, &mut cache, &x)?;
        let mut mask = vec![true; hidden.rows];
        mask[hidden.rows - 1] = false;
        let r = pool_prompt_representation(&hidden, &mask)?;
        if !generate {
            return Ok((r, None));
        }
        let limit = self.cfg.max_gen_len.min(bb.cfg.max_positions.saturating_sub(cache.len));
        let mut last = hidden.row(hidden.rows - 1).to_vec();
        let mut ids = Vec::new();
        let mut finished = false;
        while ids.len() < limit {
            let next = argmax(&bb.logits_row(&self.store, &last)) as u32;
            if next == EOS {
                finished = true;
                break;
            }
            ids.push(next);
            if ids.len() == limit {
                break;
            }
            let row = Tensor::row_vec(bb.token_row(&self.store, next));
            last = bb.extend(&self.store, &mut cache, &row)?.data;
        }
        Ok((r, Some((self.tokenizer.decode(&ids), !finished))))
    }

    /// Greedy decode of the code for `problem_id` given knowledge state `h`.
    pub fn generate_student_code(&self, h: &[f32], problem_id: &str) -> Result<(String, bool), ModelError> {
        let p = *self.problem_index.get(problem_id).ok_or_else(|| ModelError::UnknownProblem(problem_id.into()))?;
        let mut g = Graph::new();
        let hv = g.constant(Tensor::row_vec(h.to_vec()));
        let prompt = self.prompts(&mut g, hv, &[(p, 0)]);
        let prompt_rows = g.value(prompt).clone();
        let (_, gen) = self.decode(&prompt_rows, true)?;
        Ok(gen.expect("generation requested"))
    }

    pub fn num_parameters(&self) -> usize {
        self.store.num_scalars()
    }
}
