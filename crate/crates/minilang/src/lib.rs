//! MiniLang: a small statically-typed language (ints, booleans, strings,
//! arrays, `if`/`else`, `while`, `return`, helper functions) used to grade
//! submissions without an external toolchain.
//!
//! ```
//! use minilang::{compile, parse_signature, Limits, Value};
//!
//! let sig = parse_signature("fn inc(a: int) -> int").unwrap();
//! let unit = compile("fn inc(a: int) -> int { return a + 1; }", &sig).unwrap();
//! assert_eq!(unit.run(vec![Value::Int(2)], Limits::default()).unwrap(), Value::Int(3));
//! ```

pub mod ast;
pub mod builtins;
mod compile;
mod error;
pub mod lexer;
mod parser;
mod value;
mod vm;

pub use compile::{block_returns, compile, compile_program, CompiledUnit};
pub use error::{Diagnostic, Pos, RunError};
pub use lexer::{surface_tokens, KEYWORDS};
pub use parser::{parse_program, parse_signature, MAX_NESTING};
pub use value::{render_json, render_value, Value};
pub use vm::Limits;
