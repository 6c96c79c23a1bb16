//! Experiment harness: training with early stopping, evaluation by causal
//! rollout, k-fold orchestration and significance testing.

use std::collections::{BTreeMap, HashSet};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{ConfigError, ExperimentConfig, ModelKind, RepeatOver};
use crate::data::{filter_first_submissions, make_folds, DataError, Dataset, Fold, Problem};
use crate::executor::{evaluate_submission, ExecError, ExecutionBackend};
use crate::metrics::{self, EvaluationReport, MetricError, ReportOptions};
use crate::models::{EncodedStudent, Model, ModelError, PredictionRecord};
use crate::nn::{AdamW, Graph, Group, LinearWarmup, Plateau};
use crate::tokenizer::{Tokenizer, TokenizerError};

mod checkpoint;
mod heatmap;
mod report;

pub use checkpoint::{checkpoint_bytes, load_checkpoint, parse_checkpoint, save_checkpoint, CHECKPOINT_MAGIC};
pub use heatmap::{emit_heatmap, heatmap_csv, render_heatmap, HeatmapFiles, CELL_PX};
pub use report::{format_table, write_outputs, ExperimentReport, FoldResult, ModelSummary, METRICS};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("dataset has {0} ungraded interactions; run `grade` first")]
    Unlabeled(usize),
    #[error("training diverged at epoch {epoch}, step {step}: loss {loss}")]
    Diverged { epoch: usize, step: usize, loss: f64, log: Box<TrainingLog> },
    #[error("unknown student `{0}`")]
    UnknownStudent(String),
    #[error("no predictions with probabilities for student `{0}`")]
    NoProbabilities(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("no training data in fold")]
    EmptyTrain,
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Exec(#[from] ExecError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error("{path}: {source}")]
    Io { path: std::path::PathBuf, source: std::io::Error },
}

pub type Result<T> = std::result::Result<T, PipelineError>;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub steps: usize,
    pub train_loss: f64,
    pub train_codegen: Option<f64>,
    pub train_testcase: Option<f64>,
    pub val_loss: f64,
    pub val_codegen: Option<f64>,
    pub val_testcase: Option<f64>,
    pub lr_scale: f64,
    pub wall_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub seed: u64,
    pub epochs: Vec<EpochLog>,
    /// 1-based epoch with the lowest validation loss; 0 when nothing was trained.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainingLog {
    /// Loss columns only, for determinism checks.
    pub fn losses(&self) -> Vec<(f64, f64)> {
        self.epochs.iter().map(|e| (e.train_loss, e.val_loss)).collect()
    }
}

/// Early-stopping bookkeeping over 1-based epochs.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    pub patience: usize,
    best: f64,
    best_epoch: usize,
    bad: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StopDecision {
    pub improved: bool,
    pub stop: bool,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping { patience, best: f64::INFINITY, best_epoch: 0, bad: 0 }
    }

    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> StopDecision {
        if val_loss < self.best {
            self.best = val_loss;
            self.best_epoch = epoch;
            self.bad = 0;
            return StopDecision { improved: true, stop: false };
        }
        self.bad += 1;
        StopDecision { improved: false, stop: self.bad > self.patience }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

/// A trained model (or baseline) plus everything needed to evaluate it.
#[derive(Debug, Clone)]
pub struct Trained {
    pub cfg: ExperimentConfig,
    pub problems: BTreeMap<String, Problem>,
    pub model: Option<Model>,
    /// Constant score of the Majority baseline, from the training labels.
    pub majority: f64,
    pub log: TrainingLog,
}

fn prepare(cfg: &ExperimentConfig, dataset: &Dataset) -> Result<Dataset> {
    let unlabeled = dataset.interactions().filter(|i| i.needs_grading()).count();
    if unlabeled > 0 {
        return Err(PipelineError::Unlabeled(unlabeled));
    }
    Ok(if cfg.first_submission_only { filter_first_submissions(dataset) } else { dataset.clone() })
}

/// Tokenizer fitted on training code, problem statements and test descriptions.
pub fn fit_tokenizer(cfg: &ExperimentConfig, train: &Dataset) -> Result<Tokenizer> {
    let mut texts: Vec<String> = Vec::new();
    for p in train.problems.values() {
        texts.push(p.statement.clone());
        texts.extend(p.tests.iter().map(|t| t.describe()));
    }
    texts.extend(train.interactions().map(|i| i.code.clone()));
    Ok(Tokenizer::train(texts.iter().map(String::as_str), cfg.vocab_size)?)
}

struct LossTotals {
    total: f64,
    codegen: f64,
    testcase: f64,
    weight: f64,
    has_cg: bool,
    has_tc: bool,
}

impl LossTotals {
    fn new() -> Self {
        LossTotals { total: 0.0, codegen: 0.0, testcase: 0.0, weight: 0.0, has_cg: false, has_tc: false }
    }

    fn mean(&self) -> (f64, Option<f64>, Option<f64>) {
        let w = self.weight.max(f64::MIN_POSITIVE);
        (self.total / w, self.has_cg.then(|| self.codegen / w), self.has_tc.then(|| self.testcase / w))
    }
}

fn batch_values(g: &Graph, loss: &crate::models::BatchLoss) -> (f64, Option<f64>, Option<f64>) {
    let v = |x| g.value(x).item() as f64;
    (v(loss.total), loss.codegen.map(v), loss.testcase.map(v))
}

fn mean_loss(model: &Model, students: &[EncodedStudent], batch: usize) -> Result<LossTotals> {
    let mut acc = LossTotals::new();
    for chunk in students.chunks(batch.max(1)) {
        let refs: Vec<&EncodedStudent> = chunk.iter().collect();
        let mut g = Graph::new();
        let loss = model.batch_loss(&mut g, &refs)?;
        let (t, cg, tc) = batch_values(&g, &loss);
        let w = loss.targets as f64;
        acc.total += t * w;
        acc.weight += w;
        if let Some(cg) = cg {
            acc.codegen += cg * w;
            acc.has_cg = true;
        }
        if let Some(tc) = tc {
            acc.testcase += tc * w;
            acc.has_tc = true;
        }
    }
    Ok(acc)
}

/// Trains on `train` students, early-stopping on `validation` students
/// (falling back to the training loss when there are none).
pub fn train(cfg: &ExperimentConfig, dataset: &Dataset, train_ids: &[String], validation_ids: &[String]) -> Result<Trained> {
    cfg.validate()?;
    let data = prepare(cfg, dataset)?;
    let train_set = data.subset(train_ids);
    let val_set = data.subset(validation_ids);
    if train_set.num_interactions() == 0 {
        return Err(PipelineError::EmptyTrain);
    }
    let labels: Vec<bool> =
        train_set.interactions().flat_map(|i| i.outcomes.as_ref().expect("labeled").0.iter().copied()).collect();
    let majority = metrics::majority_score(&labels);
    let mut log = TrainingLog { seed: cfg.seed, ..Default::default() };
    if cfg.model.is_baseline() {
        return Ok(Trained { cfg: cfg.clone(), problems: data.problems.clone(), model: None, majority, log });
    }

    let tokenizer = fit_tokenizer(cfg, &train_set)?;
    let mut model = Model::new(cfg, &data.problems, tokenizer)?;
    let train_enc = model.encode_dataset(&train_set)?;
    let val_enc = model.encode_dataset(&val_set)?;
    let batch = cfg.batch_size;
    let steps_per_epoch = train_enc.len().div_ceil(batch);
    let mut total_steps = steps_per_epoch * cfg.epochs;
    if cfg.max_steps > 0 {
        total_steps = total_steps.min(cfg.max_steps);
    }
    let codedkt = cfg.model == ModelKind::CodedktTc;
    let warmup = LinearWarmup::new(total_steps, cfg.warmup_frac);
    let mut plateau = Plateau::new(cfg.plateau_factor as f32, cfg.plateau_patience);
    let mut opt = AdamW::default();
    opt.weight_decay = cfg.weight_decay as f32;
    let (lr_b, lr_r, lr_h) = cfg.rates();
    let mut stopper = EarlyStopping::new(cfg.patience);
    let mut best = model.store.clone();
    let mut order: Vec<usize> = (0..train_enc.len()).collect();
    let mut step = 0usize;

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(0x9E37_79B9).wrapping_add(epoch as u64));
        order.shuffle(&mut rng);
        let mut acc = LossTotals::new();
        let mut epoch_steps = 0;
        for chunk in order.chunks(batch) {
            if step >= total_steps {
                break;
            }
            let refs: Vec<&EncodedStudent> = chunk.iter().map(|&i| &train_enc[i]).collect();
            let mut g = Graph::new();
            let loss = model.batch_loss(&mut g, &refs)?;
            let (t, cg, tc) = batch_values(&g, &loss);
            if !t.is_finite() {
                log::error!("non-finite loss {t} at epoch {epoch}, step {step}");
                return Err(PipelineError::Diverged { epoch, step, loss: t, log: Box::new(log) });
            }
            let w = loss.targets as f64;
            acc.total += t * w;
            acc.weight += w;
            if let Some(cg) = cg {
                acc.codegen += cg * w;
                acc.has_cg = true;
            }
            if let Some(tc) = tc {
                acc.testcase += tc * w;
                acc.has_tc = true;
            }
            model.store.zero_grads();
            g.backward(loss.total, &mut model.store);
            drop(g);
            let scale = if codedkt {
                plateau.scale()
            } else {
                if cfg.grad_clip > 0.0 {
                    model.store.clip_grad_norm(cfg.grad_clip);
                }
                warmup.factor(step)
            };
            opt.step(&mut model.store, |grp| {
                let base = match grp {
                    Group::Backbone => lr_b,
                    Group::Recurrent => lr_r,
                    Group::Head => lr_h,
                };
                (base as f32) * scale
            });
            step += 1;
            epoch_steps += 1;
        }
        let (train_loss, train_cg, train_tc) = acc.mean();
        let (val_loss, val_cg, val_tc) = if val_enc.is_empty() {
            // nothing held out: judge the epoch by a fresh pass over the training set
            mean_loss(&model, &train_enc, batch)?.mean()
        } else {
            mean_loss(&model, &val_enc, batch)?.mean()
        };
        if !val_loss.is_finite() {
            return Err(PipelineError::Diverged { epoch, step, loss: val_loss, log: Box::new(log) });
        }
        let lr_scale = if codedkt { plateau.scale() as f64 } else { warmup.factor(step.saturating_sub(1)) as f64 };
        if codedkt {
            plateau.observe(val_loss);
        }
        log.epochs.push(EpochLog {
            epoch,
            steps: epoch_steps,
            train_loss,
            train_codegen: train_cg,
            train_testcase: train_tc,
            val_loss,
            val_codegen: val_cg,
            val_testcase: val_tc,
            lr_scale,
            wall_s: started.elapsed().as_secs_f64(),
        });
        log::info!("epoch {epoch}: train {train_loss:.4} val {val_loss:.4}");
        let d = stopper.observe(epoch, val_loss);
        if d.improved {
            best = model.store.clone();
        }
        if d.stop {
            log.stopped_early = true;
            break;
        }
        if step >= total_steps {
            break;
        }
    }
    log.best_epoch = stopper.best_epoch();
    model.store = best;
    Ok(Trained { cfg: cfg.clone(), problems: data.problems.clone(), model: Some(model), majority, log })
}

/// Trains on one fold's train and validation students.
pub fn train_fold(cfg: &ExperimentConfig, dataset: &Dataset, fold: &Fold) -> Result<Trained> {
    train(cfg, dataset, &fold.train, &fold.validation)
}

fn stable_hash(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
}

/// Prediction records for `students` by teacher-forced causal rollout.
pub fn predict(
    trained: &Trained,
    dataset: &Dataset,
    students: &[String],
    backend: Option<&dyn ExecutionBackend>,
) -> Result<Vec<PredictionRecord>> {
    let cfg = &trained.cfg;
    let data = prepare(cfg, dataset)?.subset(students);
    for it in data.interactions() {
        if !trained.problems.contains_key(&it.problem_id) {
            return Err(ModelError::MissingHead(it.problem_id.clone()).into());
        }
    }
    let mut out = Vec::new();
    match (&trained.model, cfg.model) {
        (None, kind @ (ModelKind::Random | ModelKind::Majority)) => {
            for traj in &data.trajectories {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ stable_hash(&traj.student_id));
                for (t, it) in traj.interactions.iter().enumerate() {
                    let outcomes = it.outcomes.as_ref().expect("labeled").0.clone();
                    let probs = match kind {
                        ModelKind::Random => {
                            use rand::Rng;
                            outcomes.iter().map(|_| rng.random::<f64>()).collect()
                        }
                        _ => vec![trained.majority; outcomes.len()],
                    };
                    out.push(PredictionRecord {
                        student_id: traj.student_id.clone(),
                        problem_id: it.problem_id.clone(),
                        step: t,
                        probs: Some(probs),
                        generated: None,
                        truncated: false,
                        outcomes,
                        code: it.code.clone(),
                    });
                }
            }
        }
        (Some(model), kind) => {
            let generate = kind.generates() && (cfg.generate_eval || kind == ModelKind::OktTc);
            for traj in &data.trajectories {
                let enc = model.encode_trajectory(traj)?;
                let mut recs = model.predict_student(&enc, generate)?;
                if kind == ModelKind::OktTc {
                    let backend = backend.ok_or_else(|| ExecError::Unavailable {
                        backend: cfg.backend.clone(),
                        message: "okt_tc evaluation needs an execution backend".into(),
                    })?;
                    for r in &mut recs {
                        let code = r.generated.clone().unwrap_or_default();
                        let v = evaluate_submission(&code, &trained.problems[&r.problem_id], backend, cfg.timeout_s)?;
                        r.probs = Some(v.outcomes().0.iter().map(|&p| if p { 1.0 } else { 0.0 }).collect());
                    }
                }
                out.extend(recs);
            }
        }
        (None, kind) => return Err(ModelError::NotTrainable(kind).into()),
    }
    Ok(out)
}

pub fn report_options(cfg: &ExperimentConfig) -> ReportOptions {
    ReportOptions { average: cfg.auc_average, threshold: cfg.threshold, ..ReportOptions::default() }
}

/// Predicts and scores `students`.
pub fn evaluate(
    trained: &Trained,
    dataset: &Dataset,
    students: &[String],
    backend: Option<&dyn ExecutionBackend>,
) -> Result<(EvaluationReport, Vec<PredictionRecord>)> {
    let records = predict(trained, dataset, students, backend)?;
    let report = EvaluationReport::from_records(&records, &report_options(&trained.cfg))?;
    Ok((report, records))
}

/// The (fold, seed) pairs an experiment runs over.
pub fn splits(cfg: &ExperimentConfig, dataset: &Dataset) -> Result<Vec<(Fold, u64)>> {
    let data = prepare(cfg, dataset)?;
    Ok(match cfg.repeat_over {
        RepeatOver::Folds => make_folds(&data, cfg.folds, cfg.seed)?.into_iter().map(|f| (f, cfg.seed)).collect(),
        RepeatOver::Seeds => (0..cfg.folds as u64)
            .map(|i| {
                let s = cfg.seed + i;
                make_folds(&data, cfg.folds, s).map(|mut f| (f.swap_remove(0), s))
            })
            .collect::<std::result::Result<_, _>>()?,
    })
}

fn run_model(
    cfg: &ExperimentConfig,
    dataset: &Dataset,
    splits: &[(Fold, u64)],
    backend: Option<&dyn ExecutionBackend>,
) -> Result<Vec<FoldResult>> {
    let mut out = Vec::new();
    for (i, (fold, seed)) in splits.iter().enumerate() {
        let mut c = cfg.clone();
        c.seed = *seed;
        let trained = train_fold(&c, dataset, fold)?;
        let (report, _) = evaluate(&trained, dataset, &fold.test, backend)?;
        log::info!("{} fold {}: auc {:?} codebleu {:?}", cfg.model, i + 1, report.auc, report.codebleu);
        out.push(FoldResult { fold: i + 1, seed: *seed, report, log: trained.log });
    }
    Ok(out)
}

/// Paired t-test on per-fold values; `None` (with a warning) when fewer than two pairs.
pub fn significance(a: &[f64], b: &[f64], warnings: &mut Vec<String>, what: &str) -> Option<metrics::TTest> {
    if a.len() < 2 || a.len() != b.len() {
        let msg = format!("significance for {what} skipped: need at least two paired folds, have {}", a.len().min(b.len()));
        log::warn!("{msg}");
        warnings.push(msg);
        return None;
    }
    metrics::paired_t_test(a, b).ok()
}

/// Trains and evaluates `cfg.model` (and `cfg.compare`, when set) on every split.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    dataset: &Dataset,
    backend: Option<&dyn ExecutionBackend>,
) -> Result<ExperimentReport> {
    cfg.validate()?;
    let splits = splits(cfg, dataset)?;
    let mut models = vec![ModelSummary::from_folds(cfg.model, cfg.no_knowledge, run_model(cfg, dataset, &splits, backend)?)];
    let mut warnings = Vec::new();
    let mut comparison = BTreeMap::new();
    if !cfg.compare.is_empty() {
        let other_kind: ModelKind = cfg.compare.parse().map_err(|m| ConfigError::Invalid(m))?;
        let mut other = cfg.clone();
        other.model = other_kind;
        let folds = run_model(&other, dataset, &splits, backend)?;
        models.push(ModelSummary::from_folds(other_kind, cfg.no_knowledge, folds));
        for metric in ["auc", "f1", "accuracy", "codebleu"] {
            let a = models[0].per_fold(metric);
            let b = models[1].per_fold(metric);
            if a.is_empty() || b.is_empty() {
                continue;
            }
            if let Some(t) = significance(&a, &b, &mut warnings, metric) {
                comparison.insert(metric.to_string(), t);
            }
        }
    }
    let tested: HashSet<&String> = splits.iter().flat_map(|(f, _)| f.test.iter()).collect();
    Ok(ExperimentReport {
        config: cfg.to_kv_string(),
        students: tested.len(),
        models,
        comparison,
        warnings,
    })
}
