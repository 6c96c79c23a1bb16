use std::ffi::OsString;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::thread;
use std::time::Duration;

use serde_json::Value as Json;
use wait_timeout::ChildExt;

use super::{CompileDiagnostic, CompiledProgram, ExecError, ExecutionBackend, RunOutcome, DEFAULT_OUTPUT_CAP};
use crate::data::Problem;

/// Command templates for a toolchain driven through `sh`.
///
/// Placeholders: `{src}` source file path, `{dir}` scratch directory,
/// `{main}` entry function name, `{input}` test input as a JSON array.
/// The test input is also written to the program's stdin.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExternalConfig {
    /// Empty means the language needs no compile step.
    pub compile_cmd: String,
    pub run_cmd: String,
    pub source_name: String,
    pub output_cap: usize,
}

impl ExternalConfig {
    pub fn new(compile_cmd: &str, run_cmd: &str, source_name: &str) -> Self {
        ExternalConfig {
            compile_cmd: compile_cmd.into(),
            run_cmd: run_cmd.into(),
            source_name: source_name.into(),
            output_cap: DEFAULT_OUTPUT_CAP,
        }
    }

    /// javac/java with a `Main` wrapper supplied by the caller's template.
    pub fn java() -> Self {
        Self::new("javac {src}", "java -cp {dir} Main {main} {input}", "Main.java")
    }
}

#[derive(Debug)]
pub struct ExternalBackend {
    cfg: ExternalConfig,
    path: OsString,
}

impl ExternalBackend {
    /// Fails if the programs named by the templates are not on PATH.
    /// `TIKTOC_JAVA_HOME/bin` is searched first when set.
    pub fn new(cfg: ExternalConfig) -> Result<Self, ExecError> {
        let mut dirs: Vec<PathBuf> = Vec::new();
        if let Some(home) = std::env::var_os("TIKTOC_JAVA_HOME") {
            dirs.push(Path::new(&home).join("bin"));
        }
        if let Some(p) = std::env::var_os("PATH") {
            dirs.extend(std::env::split_paths(&p));
        }
        let path = std::env::join_paths(&dirs).map_err(|e| unavailable(e.to_string()))?;
        if cfg.run_cmd.trim().is_empty() {
            return Err(unavailable("run_cmd is empty".into()));
        }
        for tmpl in [&cfg.compile_cmd, &cfg.run_cmd] {
            if let Some(prog) = tmpl.split_whitespace().next() {
                if !program_exists(prog, &dirs) {
                    return Err(unavailable(format!("`{prog}` not found on PATH")));
                }
            }
        }
        Ok(ExternalBackend { cfg, path })
    }
}

fn unavailable(message: String) -> ExecError {
    ExecError::Unavailable { backend: "external".into(), message }
}

fn program_exists(prog: &str, dirs: &[PathBuf]) -> bool {
    if prog.contains('/') {
        return Path::new(prog).is_file();
    }
    // shell builtins and keywords that may lead a template
    if matches!(prog, "cd" | "exec" | "env" | "true" | ":" | "[") {
        return true;
    }
    dirs.iter().any(|d| d.join(prog).is_file())
}

/// Single-quotes `s` for `sh`.
pub fn shell_quote(s: &str) -> String {
    format!("'{}'", s.replace('\'', r"'\''"))
}

fn expand(tmpl: &str, src: &Path, dir: &Path, main: &str, input: &str) -> String {
    tmpl.replace("{src}", &shell_quote(&src.to_string_lossy()))
        .replace("{dir}", &shell_quote(&dir.to_string_lossy()))
        .replace("{main}", &shell_quote(main))
        .replace("{input}", &shell_quote(input))
}

struct Captured {
    status: Option<std::process::ExitStatus>,
    stdout: Vec<u8>,
    stdout_truncated: bool,
    stderr: Vec<u8>,
}

fn drain(mut r: impl Read + Send + 'static, cap: usize) -> thread::JoinHandle<(Vec<u8>, bool)> {
    thread::spawn(move || {
        let mut kept = Vec::new();
        let mut truncated = false;
        let mut buf = [0u8; 8192];
        loop {
            match r.read(&mut buf) {
                Ok(0) | Err(_) => break,
                Ok(n) => {
                    let room = cap.saturating_sub(kept.len());
                    if n > room {
                        truncated = true;
                    }
                    kept.extend_from_slice(&buf[..n.min(room)]);
                }
            }
        }
        (kept, truncated)
    })
}

fn run_shell(cmd: &str, dir: &Path, path: &OsString, stdin: &[u8], timeout: Duration, cap: usize) -> Result<Captured, ExecError> {
    let mut child: Child = Command::new("sh")
        .arg("-c")
        .arg(format!("exec {cmd}"))
        .current_dir(dir)
        .env("PATH", path)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| unavailable(format!("cannot spawn sh: {e}")))?;
    let out = drain(child.stdout.take().expect("piped"), cap);
    let err = drain(child.stderr.take().expect("piped"), 16 * 1024);
    if let Some(mut w) = child.stdin.take() {
        // the program may exit without reading its input
        let _ = w.write_all(stdin);
    }
    let status = match child.wait_timeout(timeout)? {
        Some(s) => Some(s),
        None => {
            let _ = child.kill();
            let _ = child.wait();
            None
        }
    };
    let (stdout, stdout_truncated) = out.join().unwrap_or_default();
    let (stderr, _) = err.join().unwrap_or_default();
    Ok(Captured { status, stdout, stdout_truncated, stderr })
}

/// Extracts `name:LINE:` or `name:LINE:COL:` from the first matching stderr line.
fn diagnostic_position(stderr: &str, source_name: &str) -> (Option<u32>, Option<u32>) {
    for line in stderr.lines() {
        if let Some(idx) = line.find(source_name) {
            let mut parts = line[idx + source_name.len()..].split(':').skip(1);
            let l = parts.next().and_then(|s| s.trim().parse().ok());
            let c = parts.next().and_then(|s| s.trim().parse().ok());
            if l.is_some() {
                return (l, c);
            }
        }
    }
    (None, None)
}

struct ExternalProgram {
    dir: tempfile::TempDir,
    src: PathBuf,
    run_cmd: String,
    entry: String,
    path: OsString,
}

impl ExecutionBackend for ExternalBackend {
    fn name(&self) -> &str {
        "external"
    }

    fn compile(
        &self,
        code: &str,
        problem: &Problem,
        timeout: Duration,
    ) -> Result<Result<Box<dyn CompiledProgram>, CompileDiagnostic>, ExecError> {
        let dir = tempfile::Builder::new().prefix("tiktoc-").tempdir()?;
        let src = dir.path().join(&self.cfg.source_name);
        std::fs::write(&src, code)?;
        let entry = problem.entry_name().to_string();
        if !self.cfg.compile_cmd.trim().is_empty() {
            let cmd = expand(&self.cfg.compile_cmd, &src, dir.path(), &entry, "[]");
            let cap = run_shell(&cmd, dir.path(), &self.path, b"", timeout, 16 * 1024)?;
            match cap.status {
                None => return Ok(Err(CompileDiagnostic::timeout())),
                Some(s) if s.code() == Some(127) => {
                    return Err(unavailable(String::from_utf8_lossy(&cap.stderr).trim().to_string()))
                }
                Some(s) if !s.success() => {
                    let stderr = String::from_utf8_lossy(&cap.stderr).into_owned();
                    let (line, column) = diagnostic_position(&stderr, &self.cfg.source_name);
                    let message = stderr.lines().find(|l| !l.trim().is_empty()).unwrap_or("compilation failed");
                    return Ok(Err(CompileDiagnostic { message: message.to_string(), line, column, timed_out: false }));
                }
                Some(_) => {}
            }
        }
        Ok(Ok(Box::new(ExternalProgram {
            dir,
            src,
            run_cmd: self.cfg.run_cmd.clone(),
            entry,
            path: self.path.clone(),
        })))
    }

    fn output_cap(&self) -> usize {
        self.cfg.output_cap
    }
}

impl CompiledProgram for ExternalProgram {
    fn run(&self, input: &[Json], timeout: Duration, output_cap: usize) -> Result<RunOutcome, ExecError> {
        let input_json = Json::Array(input.to_vec()).to_string();
        let cmd = expand(&self.run_cmd, &self.src, self.dir.path(), &self.entry, &input_json);
        let mut stdin = input_json.into_bytes();
        stdin.push(b'\n');
        let cap = run_shell(&cmd, self.dir.path(), &self.path, &stdin, timeout, output_cap)?;
        Ok(match cap.status {
            None => RunOutcome::Timeout,
            Some(_) if cap.stdout_truncated => RunOutcome::Fault("output cap exceeded".into()),
            Some(s) if !s.success() => {
                let stderr = String::from_utf8_lossy(&cap.stderr);
                RunOutcome::Fault(format!("exit {}: {}", s.code().unwrap_or(-1), stderr.trim()))
            }
            Some(_) => RunOutcome::Output(String::from_utf8_lossy(&cap.stdout).into_owned()),
        })
    }
}
