#![allow(dead_code)]

pub mod oracle;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value as Json};

use tiktoc::config::{ExperimentConfig, ModelKind, Profile};
use tiktoc::data::{load_dataset, Dataset, Outcomes, Problem, TestCase, Visibility};
use tiktoc::executor::{evaluate_submission, FailReason, MiniLangBackend};
use tiktoc::metrics::{auc, classification_metrics, codebleu, dist_n, CodeBleuWeights};
use tiktoc::models::{head_loss_gradients, predict_test_outcomes, test_case_pred_loss, tiktoc_loss, Model};
use tiktoc::nn::Graph;
use tiktoc::pipeline::{self, checkpoint_bytes};
use tiktoc::synth::{self, SynthConfig};

/// Outcome of one acceptance check.
#[derive(Debug, Clone)]
pub struct Check {
    pub pass: bool,
    pub detail: String,
}

impl Check {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Check { pass, detail: detail.into() }
    }

    fn fail(detail: impl Into<String>) -> Self {
        Check::new(false, detail)
    }
}

pub fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn bundled_desk() -> Dataset {
    let dir = workspace_root().join("data/desk");
    load_dataset(&dir.join("submissions.csv"), &dir.join("problems.json")).expect("bundled desk corpus loads")
}

fn problem(id: &str, signature: &str, tests: Vec<TestCase>) -> Problem {
    Problem {
        problem_id: id.into(),
        statement: format!("Problem {id}."),
        entry_signature: signature.into(),
        tests,
        reference_solution: None,
    }
}

fn case(input: Vec<Json>, expected: Json) -> TestCase {
    TestCase { input, expected_output: expected, visibility: Visibility::Public }
}

fn distractor(v: &Json) -> Json {
    match v {
        Json::Number(n) => json!(n.as_i64().unwrap_or(0).wrapping_add(1)),
        Json::String(s) => json!(format!("{s}q")),
        Json::Bool(b) => json!(!b),
        other => other.clone(),
    }
}

/// Backend verdicts against the oracle on `programs` random programs, plus a
/// compile-broken twin of each.
pub fn executor_oracle(programs: usize, seed: u64) -> Check {
    let start = Instant::now();
    let backend = MiniLangBackend::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut tests, mut agree, mut passes, mut mixed) = (0usize, 0usize, 0usize, 0usize);
    let (mut broken, mut fail_all) = (0usize, 0usize);
    let mut first_mismatch = None;
    for i in 0..programs {
        let prog = oracle::random_program(&mut rng);
        let src = oracle::render(&prog);
        let mut suite = Vec::new();
        let mut predicted = Vec::new();
        for _ in 0..6 {
            let (a, b, s) = oracle::random_input(&mut rng);
            let truth = oracle::run(&prog, a, b, &s);
            let expected = match &truth {
                Ok(v) if rng.random_bool(0.75) => v.clone(),
                Ok(v) => distractor(v),
                Err(_) => json!(0),
            };
            predicted.push(matches!(&truth, Ok(v) if *v == expected));
            suite.push(case(vec![json!(a), json!(b), json!(s)], expected));
        }
        let p = problem(&format!("p{i}"), prog.signature(), suite);
        let got = match evaluate_submission(&src, &p, &backend, 5.0) {
            Ok(v) => v.outcomes().0,
            Err(e) => return Check::fail(format!("program {i}: executor error {e}")),
        };
        for (t, (g, e)) in got.iter().zip(&predicted).enumerate() {
            tests += 1;
            if g == e {
                agree += 1;
            } else if first_mismatch.is_none() {
                first_mismatch = Some(format!("program {i} test {t}: backend {g}, oracle {e}\n{src}"));
            }
        }
        passes += predicted.iter().filter(|&&x| x).count();
        mixed += usize::from(predicted.iter().any(|&x| x) && predicted.iter().any(|&x| !x));

        // drop the closing brace of the function
        let cut = src.trim_end().strip_suffix('}').expect("rendered function ends with a brace");
        let v = evaluate_submission(cut, &p, &backend, 5.0).expect("executor runs");
        broken += 1;
        if v.results.iter().all(|r| !r.passed && r.reason == Some(FailReason::CompileError)) {
            fail_all += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = agree == tests && fail_all == broken && secs <= 120.0;
    let mut detail = format!(
        "{programs} programs, {agree}/{tests} tests agree ({passes} passing, {mixed} mixed suites), \
         {fail_all}/{broken} broken twins fail-all, {secs:.1}s"
    );
    if let Some(m) = first_mismatch {
        detail.push_str(&format!("; first mismatch: {m}"));
    }
    Check::new(pass, detail)
}

/// Non-compiling and non-terminating submissions fail every test with the right reason.
pub fn labeling_rules() -> Check {
    let backend = MiniLangBackend::default();
    let p = problem(
        "inc",
        "fn inc(a: int) -> int",
        (0..4).map(|i| case(vec![json!(i)], json!(i + 1))).collect(),
    );
    let mut notes = Vec::new();
    let mut ok = true;
    for (label, src) in [
        ("unbalanced", "fn inc(a: int) -> int { return a + 1;"),
        ("type error", "fn inc(a: int) -> int { return true; }"),
        ("wrong name", "fn dec(a: int) -> int { return a - 1; }"),
        ("empty", ""),
    ] {
        let v = evaluate_submission(src, &p, &backend, 1.0).expect("executor runs");
        let good = v.len() == 4 && v.results.iter().all(|r| !r.passed && r.reason == Some(FailReason::CompileError));
        ok &= good;
        notes.push(format!("{label}: {}", if good { "compile_error x4" } else { "WRONG" }));
    }
    let timeout = 0.5;
    let start = Instant::now();
    let v = evaluate_submission("fn inc(a: int) -> int { while (true) { a = a + 0; } return a; }", &p, &backend, timeout)
        .expect("executor runs");
    let secs = start.elapsed().as_secs_f64();
    let bound = timeout * (1.0 + p.tests.len() as f64) + 1.0;
    let good = v.results.iter().all(|r| !r.passed && r.reason == Some(FailReason::Timeout)) && secs <= bound;
    ok &= good;
    notes.push(format!("infinite loop: {} in {secs:.2}s (bound {bound:.1}s)", if good { "timeout x4" } else { "WRONG" }));
    let v = evaluate_submission("fn inc(a: int) -> int { return a + 1; }", &p, &backend, timeout).expect("runs");
    ok &= v.results.iter().all(|r| r.passed);
    Check::new(ok, notes.join(", "))
}

fn tiny_config(model: ModelKind) -> ExperimentConfig {
    let mut c = ExperimentConfig::profile(Profile::Desk);
    c.model = model;
    c.width = 16;
    c.layers = 1;
    c.heads = 2;
    c.d_code = 16;
    c.vocab_size = 300;
    c.epochs = 1;
    c.max_steps = 3;
    c.max_gen_len = 48;
    c.folds = 3;
    c
}

pub fn tiny_corpus(seed: u64) -> Dataset {
    synth::generate(&SynthConfig {
        problems: 4,
        students: 9,
        submissions: None,
        problems_per_student: (4, 4),
        seed,
        syntax_error_rate: 0.1,
    })
    .expect("corpus generates")
}

/// λ reductions on scalars and on a real model graph, plus BCE hand values.
pub fn loss_algebra() -> Check {
    let mut notes = Vec::new();
    let scalar = tiktoc_loss(2.5, 0.75, 1.0).ok() == Some(2.5)
        && tiktoc_loss(2.5, 0.75, 0.0).ok() == Some(0.75)
        && tiktoc_loss(2.5, 0.75, 0.5).ok() == Some(1.625);
    notes.push(format!("scalar reductions {}", if scalar { "exact" } else { "WRONG" }));

    let data = tiny_corpus(3);
    let mut model_ok = true;
    for lambda in [1.0, 0.0] {
        let mut cfg = tiny_config(ModelKind::Tiktoc);
        cfg.lambda = lambda;
        let tok = pipeline::fit_tokenizer(&cfg, &data).expect("tokenizer");
        let model = Model::new(&cfg, &data.problems, tok).expect("model");
        let enc = model.encode_dataset(&data).expect("encode");
        let refs: Vec<_> = enc.iter().take(3).collect();
        let mut g = Graph::new();
        let loss = model.batch_loss(&mut g, &refs).expect("loss");
        let total = g.value(loss.total).data[0].to_bits();
        let part = if lambda == 1.0 { loss.codegen } else { loss.testcase }.expect("both terms present");
        model_ok &= total == g.value(part).data[0].to_bits();
    }
    notes.push(format!("model graph λ=1 → code-gen, λ=0 → test-case {}", if model_ok { "bit-identical" } else { "DIFFER" }));

    let l1 = test_case_pred_loss(&[0.5], &[1.0]).expect("loss");
    let l2 = test_case_pred_loss(&[0.25], &[1.0]).expect("loss");
    let bce = (l1 - std::f64::consts::LN_2).abs() < 1e-9 && (l2 - 4f64.ln()).abs() < 1e-9;
    notes.push(format!("BCE ln2 {l1:.12}, ln4 {l2:.12}"));
    Check::new(scalar && model_ok && bce, notes.join(", "))
}

/// Analytic head gradients against central differences.
pub fn gradient_check(trials: usize, seed: u64) -> Check {
    const D: usize = 8;
    const S: usize = 3;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let loss = |r: &[f64], w: &[f64], y: &[f64]| test_case_pred_loss(&predict_test_outcomes(r, w, S).unwrap(), y).unwrap();
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let r: Vec<f64> = (0..D).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..D * S).map(|_| rng.random_range(-0.5..0.5)).collect();
        let y: Vec<f64> = (0..S).map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 }).collect();
        let (_, dw, dr) = head_loss_gradients(&r, &w, &y).expect("gradients");
        let h = 1e-6;
        let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
        for i in 0..w.len() {
            let (mut wp, mut wm) = (w.clone(), w.clone());
            wp[i] += h;
            wm[i] -= h;
            let n = (loss(&r, &wp, &y) - loss(&r, &wm, &y)) / (2.0 * h);
            worst = worst.max(rel(dw[i], n));
        }
        for i in 0..r.len() {
            let (mut rp, mut rm) = (r.clone(), r.clone());
            rp[i] += h;
            rm[i] -= h;
            let n = (loss(&rp, &w, &y) - loss(&rm, &w, &y)) / (2.0 * h);
            worst = worst.max(rel(dr[i], n));
        }
    }
    Check::new(worst < 1e-4, format!("{trials} trials D={D} S={S}, worst relative error {worst:.2e}"))
}

fn pair_count_auc(s: &[f64], l: &[bool]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, &a) in s.iter().enumerate() {
        for (j, &b) in s.iter().enumerate() {
            if l[i] && !l[j] {
                den += 1.0;
                num += if a > b {
                    1.0
                } else if a == b {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    num / den
}

/// Probe programs for the CodeBLEU identity check.
pub fn codebleu_probes() -> Vec<String> {
    let all = synth::problems(synth::num_problems()).expect("problems");
    let mut out: Vec<String> = all.keys().filter_map(|id| synth::reference_code(id)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    out.extend((0..40).map(|_| oracle::render(&oracle::random_program(&mut rng))));
    out
}

pub fn metric_oracles() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(2..=200);
        let s: Vec<f64> = (0..n).map(|_| (rng.random_range(0..20) as f64) / 20.0).collect();
        let mut l: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        l[0] = true;
        l[1] = false;
        worst = worst.max((auc(&s, &l).expect("defined") - pair_count_auc(&s, &l)).abs());
    }
    let a = auc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).expect("defined");
    let c = classification_metrics(&[1.0, 1.0, 0.0], &[true, false, true], 0.5).expect("defined");
    let d = dist_n(&["a b b", "a c"], 1).expect("defined");
    let probes = codebleu_probes();
    let ident = probes
        .iter()
        .filter(|p| {
            let cb = codebleu(p, p, CodeBleuWeights::default()).expect("scores");
            (cb.score - 1.0).abs() < 1e-12 && !cb.redistributed
        })
        .count();
    let pass = worst < 1e-12 && a == 0.75 && c.f1 == 0.5 && c.precision == 0.5 && d == 0.6 && ident == probes.len();
    Check::new(
        pass,
        format!(
            "rank vs pairs max diff {worst:.1e} over 100 instances, AUC {a}, F1 {}, dist-1 {d}, codebleu(x,x)=1 on {ident}/{}",
            c.f1,
            probes.len()
        ),
    )
}

/// Overfits one student's 8 submissions and decodes them back.
pub fn memorization() -> Check {
    let start = Instant::now();
    let data = synth::generate(&SynthConfig::tiny(0)).expect("corpus");
    let mut cfg = ExperimentConfig::profile(Profile::Desk);
    cfg.epochs = 200;
    cfg.max_steps = 200;
    cfg.batch_size = 1;
    cfg.patience = 1000;
    cfg.lr_backbone = 3e-3;
    cfg.lr_recurrent = 3e-3;
    cfg.lr_head = 1e-2;
    let ids = data.student_ids();
    let trained = match pipeline::train(&cfg, &data, &ids, &[]) {
        Ok(t) => t,
        Err(e) => return Check::fail(format!("training failed: {e}")),
    };
    let steps: usize = trained.log.epochs.iter().map(|e| e.steps).sum();
    let best = trained.log.epochs.iter().find(|e| e.epoch == trained.log.best_epoch).expect("best epoch logged");
    let (_, records) = pipeline::evaluate(&trained, &data, &ids, None).expect("evaluates");
    let exact = records.iter().filter(|r| r.generated.as_deref() == Some(r.code.as_str())).count();
    let secs = start.elapsed().as_secs_f64();
    Check::new(
        best.val_loss < 0.05 && steps <= 200 && exact == records.len() && secs <= 300.0,
        format!("combined loss {:.4} after {steps} steps, {exact}/{} verbatim, {secs:.0}s", best.val_loss, records.len()),
    )
}

pub struct DeskRun {
    pub seed: u64,
    pub tiktoc_auc: f64,
    pub majority_auc: f64,
    pub random_auc: f64,
    pub tiktoc_codebleu: f64,
    pub blind_codebleu: f64,
}

impl DeskRun {
    pub fn auc_ok(&self) -> bool {
        self.tiktoc_auc >= self.majority_auc.max(self.random_auc) + 0.10
    }

    pub fn codebleu_ok(&self) -> bool {
        self.tiktoc_codebleu > self.blind_codebleu
    }
}

/// One fold of the bundled desk corpus for each model of the comparison.
pub fn desk_run(data: &Dataset, seed: u64) -> DeskRun {
    let base = ExperimentConfig { seed, ..ExperimentConfig::profile(Profile::Desk) };
    let (fold, _) = pipeline::splits(&base, data).expect("splits").swap_remove(0);
    let score = |model: ModelKind, no_knowledge: bool| {
        let cfg = ExperimentConfig { model, no_knowledge, ..base.clone() };
        let trained = pipeline::train_fold(&cfg, data, &fold).expect("trains");
        pipeline::evaluate(&trained, data, &fold.test, None).expect("evaluates").0
    };
    let tk = score(ModelKind::Tiktoc, false);
    let blind = score(ModelKind::Tiktoc, true);
    let maj = score(ModelKind::Majority, false);
    let rnd = score(ModelKind::Random, false);
    DeskRun {
        seed,
        tiktoc_auc: tk.auc.unwrap_or(f64::NAN),
        majority_auc: maj.auc.unwrap_or(f64::NAN),
        random_auc: rnd.auc.unwrap_or(f64::NAN),
        tiktoc_codebleu: tk.codebleu.unwrap_or(f64::NAN),
        blind_codebleu: blind.codebleu.unwrap_or(f64::NAN),
    }
}

pub fn desk_ordering(seeds: &[u64]) -> Check {
    if seeds.is_empty() {
        return Check::fail("no seeds requested");
    }
    let start = Instant::now();
    let data = bundled_desk();
    let runs: Vec<DeskRun> = seeds.iter().map(|&s| desk_run(&data, s)).collect();
    let auc_hits = runs.iter().filter(|r| r.auc_ok()).count();
    let cb_hits = runs.iter().filter(|r| r.codebleu_ok()).count();
    let need = (seeds.len() * 4).div_ceil(5);
    let per: Vec<String> = runs
        .iter()
        .map(|r| {
            format!(
                "seed {}: AUC {:.3} vs majority {:.3} random {:.3}, CodeBLEU {:.4} vs blind {:.4}",
                r.seed, r.tiktoc_auc, r.majority_auc, r.random_auc, r.tiktoc_codebleu, r.blind_codebleu
            )
        })
        .collect();
    Check::new(
        auc_hits >= need && cb_hits >= need,
        format!(
            "AUC margin held on {auc_hits}/{n}, CodeBLEU over history-blind on {cb_hits}/{n} (need {need}), {:.0}s; {}",
            start.elapsed().as_secs_f64(),
            per.join("; "),
            n = seeds.len()
        ),
    )
}

fn record_bits(r: &tiktoc::models::PredictionRecord) -> (Vec<u64>, Option<String>) {
    (r.probs.iter().flatten().map(|p| p.to_bits()).collect(), r.generated.clone())
}

/// Future edits leave earlier predictions unchanged, and training never
/// reads the held-out students.
pub fn causality_and_leakage() -> Check {
    let data = tiny_corpus(7);
    let cfg = tiny_config(ModelKind::Tiktoc);
    let fold = tiktoc::data::make_folds(&data, 3, 0).expect("folds").swap_remove(0);
    let trained = pipeline::train_fold(&cfg, &data, &fold).expect("trains");

    let student = fold.test[0].clone();
    let before = pipeline::predict(&trained, &data, std::slice::from_ref(&student), None).expect("predicts");
    let mut mask_ok = true;
    let n = before.len();
    for cut in 1..n {
        let mut edited = data.clone();
        let traj = edited.trajectories.iter_mut().find(|t| t.student_id == student).expect("student");
        for it in traj.interactions.iter_mut().skip(cut) {
            it.code = format!("{}\n// edited", it.code.replace("return", "return 0 +"));
            it.outcomes = it.outcomes.as_ref().map(|o| Outcomes(o.0.iter().map(|x| !x).collect()));
        }
        let after = pipeline::predict(&trained, &edited, std::slice::from_ref(&student), None).expect("predicts");
        for t in 0..=cut.min(n - 1) {
            mask_ok &= record_bits(&before[t]) == record_bits(&after[t]);
        }
    }

    let visible: Vec<String> = fold.train.iter().chain(&fold.validation).cloned().collect();
    let reduced = data.subset(&visible);
    let full = checkpoint_bytes(&trained);
    let without_test = checkpoint_bytes(&pipeline::train_fold(&cfg, &reduced, &fold).expect("trains"));
    let leak_ok = full == without_test;

    let base = ExperimentConfig { model: ModelKind::Majority, ..cfg };
    let m1 = pipeline::train_fold(&base, &data, &fold).expect("trains").majority;
    let m2 = pipeline::train_fold(&base, &reduced, &fold).expect("trains").majority;
    let maj_ok = m1.to_bits() == m2.to_bits();
    Check::new(
        mask_ok && leak_ok && maj_ok,
        format!(
            "future-edit prefixes {} over {} cut points, checkpoint without test fold {} ({} bytes), majority score {}",
            if mask_ok { "bit-identical" } else { "DIFFER" },
            n.saturating_sub(1),
            if leak_ok { "bit-identical" } else { "DIFFERS" },
            full.len(),
            if maj_ok { "identical" } else { "DIFFERS" }
        ),
    )
}

/// CSV labels against the dataset, plus the PNG for a four-problem student.
pub fn heatmap_reconciliation(dir: &Path) -> Check {
    let data = tiny_corpus(9);
    let cfg = tiny_config(ModelKind::Tiktoc);
    let fold = tiktoc::data::make_folds(&data, 3, 0).expect("folds").swap_remove(0);
    let trained = pipeline::train_fold(&cfg, &data, &fold).expect("trains");
    let student = fold.test[0].clone();
    let records = pipeline::predict(&trained, &data, std::slice::from_ref(&student), None).expect("predicts");
    let files = match pipeline::emit_heatmap(&records, &student, dir) {
        Ok(f) => f,
        Err(e) => return Check::fail(format!("emit failed: {e}")),
    };
    let traj = data.trajectory(&student).expect("student");
    let text = std::fs::read_to_string(&files.csv).expect("csv written");
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let header = rdr.headers().expect("header").clone();
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.expect("row")).collect();
    let mut columns: BTreeMap<usize, Vec<bool>> = BTreeMap::new();
    for row in &rows {
        for (c, cell) in row.iter().enumerate().skip(1) {
            if let Some((_, label)) = cell.split_once('|') {
                columns.entry(c - 1).or_default().push(label == "1");
            }
        }
    }
    let mut ok = header.len() == traj.interactions.len() + 1;
    for (c, it) in traj.interactions.iter().enumerate() {
        let truth = &it.outcomes.as_ref().expect("labeled").0;
        ok &= columns.get(&c) == Some(truth);
        ok &= header.get(c + 1) == Some(format!("{}:{}", c + 1, it.problem_id).as_str());
    }
    let img = match image::open(&files.png) {
        Ok(i) => i.to_luma8(),
        Err(e) => return Check::fail(format!("png unreadable: {e}")),
    };
    let tallest = traj.interactions.iter().map(|i| i.outcomes.as_ref().map_or(0, |o| o.len())).max().unwrap_or(0);
    let dims = (traj.interactions.len() as u32 * pipeline::CELL_PX, tallest as u32 * pipeline::CELL_PX);
    ok &= img.dimensions() == dims;
    Check::new(
        ok,
        format!(
            "student {student}: {} problems, {} label columns reconcile {}, png {}x{}",
            traj.interactions.len(),
            columns.len(),
            if ok { "bit-for-bit" } else { "NOT" },
            img.width(),
            img.height()
        ),
    )
}
