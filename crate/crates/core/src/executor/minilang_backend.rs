use std::time::Duration;

use minilang::{ast::Type, CompiledUnit, Limits, RunError, Value};
use serde_json::Value as Json;

use super::{CompileDiagnostic, CompiledProgram, ExecError, ExecutionBackend, RunOutcome, DEFAULT_OUTPUT_CAP};
use crate::data::Problem;

/// Hermetic in-process backend for MiniLang submissions.
#[derive(Debug, Clone)]
pub struct MiniLangBackend {
    pub max_value_len: usize,
    pub max_call_depth: usize,
    pub output_cap: usize,
}

impl Default for MiniLangBackend {
    fn default() -> Self {
        let limits = Limits::default();
        MiniLangBackend {
            max_value_len: limits.max_value_len,
            max_call_depth: limits.max_call_depth,
            output_cap: DEFAULT_OUTPUT_CAP,
        }
    }
}

struct MiniLangProgram {
    unit: CompiledUnit,
    param_types: Vec<Type>,
    max_value_len: usize,
    max_call_depth: usize,
}

impl ExecutionBackend for MiniLangBackend {
    fn name(&self) -> &str {
        "minilang"
    }

    fn compile(
        &self,
        code: &str,
        problem: &Problem,
        _timeout: Duration,
    ) -> Result<Result<Box<dyn CompiledProgram>, CompileDiagnostic>, ExecError> {
        let sig = minilang::parse_signature(&problem.entry_signature).map_err(|d| ExecError::BadProblem {
            problem_id: problem.problem_id.clone(),
            message: format!("entry signature does not parse: {d}"),
        })?;
        Ok(match minilang::compile(code, &sig) {
            Ok(unit) => Ok(Box::new(MiniLangProgram {
                param_types: sig.params.iter().map(|p| p.ty.clone()).collect(),
                unit,
                max_value_len: self.max_value_len,
                max_call_depth: self.max_call_depth,
            })),
            Err(d) => Err(CompileDiagnostic {
                message: d.to_string(),
                line: d.pos.map(|p| p.line),
                column: d.pos.map(|p| p.col),
                timed_out: false,
            }),
        })
    }

    fn output_cap(&self) -> usize {
        self.output_cap
    }
}

impl CompiledProgram for MiniLangProgram {
    fn run(&self, input: &[Json], timeout: Duration, output_cap: usize) -> Result<RunOutcome, ExecError> {
        if input.len() != self.param_types.len() {
            return Ok(RunOutcome::Fault(format!(
                "test supplies {} arguments, entry takes {}",
                input.len(),
                self.param_types.len()
            )));
        }
        let mut args = Vec::with_capacity(input.len());
        for (json, ty) in input.iter().zip(&self.param_types) {
            match Value::from_json(json, ty) {
                Ok(v) => args.push(v),
                Err(m) => return Ok(RunOutcome::Fault(format!("bad test input: {m}"))),
            }
        }
        let limits = Limits {
            timeout,
            max_value_len: self.max_value_len.min(output_cap.max(1) * 16),
            max_call_depth: self.max_call_depth,
        };
        Ok(match self.unit.run(args, limits) {
            Ok(v) => RunOutcome::Output(minilang::render_value(&v)),
            Err(RunError::Timeout) => RunOutcome::Timeout,
            Err(RunError::Fault(m)) => RunOutcome::Fault(m),
        })
    }
}
