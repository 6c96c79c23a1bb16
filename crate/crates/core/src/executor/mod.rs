//! Labeling pipeline: compile a submission, run it on every test of the
//! problem's suite under a timeout, and emit per-test pass/fail labels.
//!
//! A submission that fails to compile (or whose compilation times out) fails
//! every test of the suite. Runtime faults and per-test timeouts fail only the
//! affected test.

mod external;
mod minilang_backend;

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::Value as Json;

pub use external::{ExternalBackend, ExternalConfig};
pub use minilang_backend::MiniLangBackend;

use crate::data::{Dataset, Interaction, Outcomes, Problem};

/// Default per-step timeout in seconds.
pub const DEFAULT_TIMEOUT_S: f64 = 30.0;
/// Default cap on captured program output.
pub const DEFAULT_OUTPUT_CAP: usize = 64 * 1024;

/// Failures of the execution environment itself, as opposed to failures of
/// the submission under test.
#[derive(Debug, thiserror::Error)]
pub enum ExecError {
    #[error("backend `{backend}` unavailable: {message}")]
    Unavailable { backend: String, message: String },
    #[error("problem `{problem_id}`: {message}")]
    BadProblem { problem_id: String, message: String },
    #[error("I/O error in execution backend: {0}")]
    Io(#[from] std::io::Error),
    #[error("timeout must be positive, got {0}")]
    BadTimeout(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailReason {
    WrongOutput,
    CompileError,
    Timeout,
    RuntimeFault,
}

/// Compilation failure. `timed_out` distinguishes a compile timeout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompileDiagnostic {
    pub message: String,
    pub line: Option<u32>,
    pub column: Option<u32>,
    pub timed_out: bool,
}

impl CompileDiagnostic {
    pub fn new(message: impl Into<String>) -> Self {
        CompileDiagnostic { message: message.into(), line: None, column: None, timed_out: false }
    }

    pub fn timeout() -> Self {
        CompileDiagnostic { timed_out: true, ..Self::new("compilation timed out") }
    }
}

/// Result of executing a compiled program on one input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RunOutcome {
    Output(String),
    Timeout,
    Fault(String),
}

pub trait CompiledProgram: Send + Sync {
    fn run(&self, input: &[Json], timeout: Duration, output_cap: usize) -> Result<RunOutcome, ExecError>;
}

pub trait ExecutionBackend: Send + Sync {
    fn name(&self) -> &str;

    fn compile(
        &self,
        code: &str,
        problem: &Problem,
        timeout: Duration,
    ) -> Result<Result<Box<dyn CompiledProgram>, CompileDiagnostic>, ExecError>;

    fn output_cap(&self) -> usize {
        DEFAULT_OUTPUT_CAP
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestResult {
    pub passed: bool,
    pub reason: Option<FailReason>,
    pub observed: Option<String>,
}

impl TestResult {
    fn fail(reason: FailReason, observed: Option<String>) -> Self {
        TestResult { passed: false, reason: Some(reason), observed }
    }
}

/// Per-test results aligned with the suite.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestOutcomeVector {
    pub results: Vec<TestResult>,
    pub diagnostic: Option<String>,
}

impl TestOutcomeVector {
    pub fn outcomes(&self) -> Outcomes {
        Outcomes(self.results.iter().map(|r| r.passed).collect())
    }

    pub fn len(&self) -> usize {
        self.results.len()
    }

    pub fn is_empty(&self) -> bool {
        self.results.is_empty()
    }

    fn fail_all(n: usize, reason: FailReason, diagnostic: String) -> Self {
        TestOutcomeVector {
            results: (0..n).map(|_| TestResult::fail(reason, None)).collect(),
            diagnostic: Some(diagnostic),
        }
    }
}

/// Trims trailing whitespace, including a trailing line terminator.
pub fn normalize_output(s: &str) -> &str {
    s.trim_end()
}

pub fn outputs_match(observed: &str, expected: &Json) -> bool {
    normalize_output(observed) == normalize_output(&minilang::render_json(expected))
}

fn check_timeout(timeout_s: f64) -> Result<Duration, ExecError> {
    if !(timeout_s > 0.0) || !timeout_s.is_finite() {
        return Err(ExecError::BadTimeout(timeout_s));
    }
    Ok(Duration::from_secs_f64(timeout_s))
}

pub fn compile(
    code: &str,
    problem: &Problem,
    backend: &dyn ExecutionBackend,
    timeout_s: f64,
) -> Result<Result<Box<dyn CompiledProgram>, CompileDiagnostic>, ExecError> {
    let timeout = check_timeout(timeout_s)?;
    if code.trim().is_empty() {
        return Ok(Err(CompileDiagnostic::new("empty source")));
    }
    let start = Instant::now();
    let compiled = backend.compile(code, problem, timeout)?;
    if compiled.is_ok() && start.elapsed() > timeout {
        return Ok(Err(CompileDiagnostic::timeout()));
    }
    Ok(compiled)
}

pub fn run_test(
    compiled: &dyn CompiledProgram,
    test: &crate::data::TestCase,
    timeout_s: f64,
    output_cap: usize,
) -> Result<TestResult, ExecError> {
    let timeout = check_timeout(timeout_s)?;
    Ok(match compiled.run(&test.input, timeout, output_cap)? {
        RunOutcome::Output(out) if out.len() > output_cap => {
            TestResult::fail(FailReason::RuntimeFault, Some("<output cap exceeded>".into()))
        }
        RunOutcome::Output(out) => {
            if outputs_match(&out, &test.expected_output) {
                TestResult { passed: true, reason: None, observed: Some(out) }
            } else {
                TestResult::fail(FailReason::WrongOutput, Some(out))
            }
        }
        RunOutcome::Timeout => TestResult::fail(FailReason::Timeout, None),
        RunOutcome::Fault(msg) => TestResult::fail(FailReason::RuntimeFault, Some(msg)),
    })
}

/// Grades `code` against every test of `problem`.
pub fn evaluate_submission(
    code: &str,
    problem: &Problem,
    backend: &dyn ExecutionBackend,
    timeout_s: f64,
) -> Result<TestOutcomeVector, ExecError> {
    let n = problem.tests.len();
    if n == 0 {
        return Err(ExecError::BadProblem {
            problem_id: problem.problem_id.clone(),
            message: "empty suite".into(),
        });
    }
    let compiled = match compile(code, problem, backend, timeout_s)? {
        Ok(c) => c,
        Err(diag) => {
            let reason = if diag.timed_out { FailReason::Timeout } else { FailReason::CompileError };
            return Ok(TestOutcomeVector::fail_all(n, reason, diag.message));
        }
    };
    let results = problem
        .tests
        .iter()
        .map(|t| run_test(compiled.as_ref(), t, timeout_s, backend.output_cap()))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(TestOutcomeVector { results, diagnostic: None })
}

/// 1 iff every test passes; `None` for an empty vector.
pub fn derive_overall_score(outcomes: &[bool]) -> Option<bool> {
    if outcomes.is_empty() {
        None
    } else {
        Some(outcomes.iter().all(|&p| p))
    }
}

/// Labels every ungraded interaction (or every interaction when `regrade`).
pub fn grade_dataset(
    dataset: &Dataset,
    backend: &dyn ExecutionBackend,
    timeout_s: f64,
    regrade: bool,
) -> Result<Dataset, ExecError> {
    let mut out = dataset.clone();
    for traj in &mut out.trajectories {
        for it in &mut traj.interactions {
            if it.needs_grading() || regrade {
                let problem = &dataset.problems[&it.problem_id];
                it.outcomes = Some(evaluate_submission(&it.code, problem, backend, timeout_s)?.outcomes());
            }
        }
    }
    Ok(out)
}

/// Grades one interaction in place of its stored labels.
pub fn grade_interaction(
    interaction: &Interaction,
    problem: &Problem,
    backend: &dyn ExecutionBackend,
    timeout_s: f64,
) -> Result<Interaction, ExecError> {
    let outcomes = evaluate_submission(&interaction.code, problem, backend, timeout_s)?.outcomes();
    Ok(Interaction { outcomes: Some(outcomes), ..interaction.clone() })
}

/// Runs each problem's reference solution (when present) and reports tests
/// whose expected output disagrees with it.
pub fn verify_reference_solutions(
    dataset: &Dataset,
    backend: &dyn ExecutionBackend,
    timeout_s: f64,
) -> Result<Vec<(String, usize)>, ExecError> {
    let mut bad = Vec::new();
    for p in dataset.problems.values() {
        if let Some(src) = &p.reference_solution {
            let v = evaluate_submission(src, p, backend, timeout_s)?;
            bad.extend(
                v.results
                    .iter()
                    .enumerate()
                    .filter(|(_, r)| !r.passed)
                    .map(|(i, _)| (p.problem_id.clone(), i)),
            );
        }
    }
    Ok(bad)
}

/// Backend by configured name.
pub fn backend_by_name(name: &str, external: Option<ExternalConfig>) -> Result<Box<dyn ExecutionBackend>, ExecError> {
    match name {
        "minilang" => Ok(Box::new(MiniLangBackend::default())),
        "external" => {
            let cfg = external.ok_or_else(|| ExecError::Unavailable {
                backend: "external".into(),
                message: "compile_cmd/run_cmd not configured".into(),
            })?;
            Ok(Box::new(ExternalBackend::new(cfg)?))
        }
        other => Err(ExecError::Unavailable {
            backend: other.into(),
            message: "unknown backend (expected minilang or external)".into(),
        }),
    }
}
