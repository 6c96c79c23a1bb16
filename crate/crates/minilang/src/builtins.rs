//! Library functions available to every program.
//!
//! String functions follow Java `String` semantics on character indices.

use std::sync::Arc;

use crate::ast::Type;
use crate::error::RunError;
use crate::value::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Builtin {
    Len,
    Substring,
    IndexOf,
    IndexOfFrom,
    LastIndexOf,
    Contains,
    StartsWith,
    EndsWith,
    CharAt,
    Abs,
    Min,
    Max,
    ToString,
    Push,
}

pub const BUILTIN_NAMES: &[&str] = &[
    "len",
    "substring",
    "index_of",
    "index_of_from",
    "last_index_of",
    "contains",
    "starts_with",
    "ends_with",
    "char_at",
    "abs",
    "min",
    "max",
    "to_string",
    "push",
];

impl Builtin {
    pub fn lookup(name: &str) -> Option<Builtin> {
        Some(match name {
            "len" => Builtin::Len,
            "substring" => Builtin::Substring,
            "index_of" => Builtin::IndexOf,
            "index_of_from" => Builtin::IndexOfFrom,
            "last_index_of" => Builtin::LastIndexOf,
            "contains" => Builtin::Contains,
            "starts_with" => Builtin::StartsWith,
            "ends_with" => Builtin::EndsWith,
            "char_at" => Builtin::CharAt,
            "abs" => Builtin::Abs,
            "min" => Builtin::Min,
            "max" => Builtin::Max,
            "to_string" => Builtin::ToString,
            "push" => Builtin::Push,
            _ => return None,
        })
    }

    /// Result type for the given argument types, or a message describing the mismatch.
    pub fn result_type(self, args: &[Type]) -> Result<Type, String> {
        use Type::*;
        let name = BUILTIN_NAMES[self as usize];
        let ok = match (self, args) {
            (Builtin::Len, [Str]) | (Builtin::Len, [Array(_)]) => Some(Int),
            (Builtin::Substring, [Str, Int, Int]) => Some(Str),
            (Builtin::IndexOf | Builtin::LastIndexOf, [Str, Str]) => Some(Int),
            (Builtin::IndexOfFrom, [Str, Str, Int]) => Some(Int),
            (Builtin::Contains | Builtin::StartsWith | Builtin::EndsWith, [Str, Str]) => Some(Bool),
            (Builtin::CharAt, [Str, Int]) => Some(Str),
            (Builtin::Abs, [Int]) => Some(Int),
            (Builtin::Min | Builtin::Max, [Int, Int]) => Some(Int),
            (Builtin::ToString, [Int]) | (Builtin::ToString, [Bool]) => Some(Str),
            (Builtin::Push, [Array(elem), item]) if **elem == *item => Some(Array(elem.clone())),
            _ => None,
        };
        ok.ok_or_else(|| {
            let got: Vec<String> = args.iter().map(|t| t.to_string()).collect();
            format!("no overload of `{name}` accepts ({})", got.join(", "))
        })
    }

    pub fn call(self, args: Vec<Value>, max_len: usize) -> Result<Value, RunError> {
        use Value::*;
        let fault = |msg: String| Err(RunError::Fault(msg));
        match (self, args.as_slice()) {
            (Builtin::Len, [Str(s)]) => Ok(Int(char_len(s) as i64)),
            (Builtin::Len, [Array(a)]) => Ok(Int(a.len() as i64)),
            (Builtin::Substring, [Str(s), Int(b), Int(e)]) => {
                let n = char_len(s) as i64;
                if *b < 0 || *e > n || b > e {
                    return fault(format!("substring({b}, {e}) out of range for length {n}"));
                }
                Ok(Value::str(char_slice(s, *b as usize, *e as usize)))
            }
            (Builtin::IndexOf, [Str(s), Str(t)]) => Ok(Int(index_of(s, t, 0))),
            (Builtin::IndexOfFrom, [Str(s), Str(t), Int(from)]) => Ok(Int(index_of(s, t, *from))),
            (Builtin::LastIndexOf, [Str(s), Str(t)]) => Ok(Int(last_index_of(s, t))),
            (Builtin::Contains, [Str(s), Str(t)]) => Ok(Bool(s.contains(&**t))),
            (Builtin::StartsWith, [Str(s), Str(t)]) => Ok(Bool(s.starts_with(&**t))),
            (Builtin::EndsWith, [Str(s), Str(t)]) => Ok(Bool(s.ends_with(&**t))),
            (Builtin::CharAt, [Str(s), Int(i)]) => {
                let n = char_len(s) as i64;
                if *i < 0 || *i >= n {
                    return fault(format!("char_at({i}) out of range for length {n}"));
                }
                Ok(Value::str(char_slice(s, *i as usize, *i as usize + 1)))
            }
            (Builtin::Abs, [Int(v)]) => v
                .checked_abs()
                .map(Int)
                .ok_or_else(|| RunError::Fault("integer overflow in abs".into())),
            (Builtin::Min, [Int(a), Int(b)]) => Ok(Int(*a.min(b))),
            (Builtin::Max, [Int(a), Int(b)]) => Ok(Int(*a.max(b))),
            (Builtin::ToString, [Int(v)]) => Ok(Value::str(v.to_string())),
            (Builtin::ToString, [Bool(v)]) => Ok(Value::str(v.to_string())),
            (Builtin::Push, [Array(_), _]) => {
                let mut args = args;
                let item = args.pop().expect("two args");
                let Some(Array(mut items)) = args.pop() else { unreachable!() };
                if items.len() + 1 > max_len {
                    return fault("array exceeds size limit".into());
                }
                Arc::make_mut(&mut items).push(item);
                Ok(Array(items))
            }
            _ => fault(format!("bad arguments to builtin {self:?}")),
        }
    }
}

fn char_len(s: &str) -> usize {
    if s.is_ascii() {
        s.len()
    } else {
        s.chars().count()
    }
}

fn byte_offset(s: &str, char_idx: usize) -> usize {
    if s.is_ascii() {
        return char_idx.min(s.len());
    }
    s.char_indices().nth(char_idx).map(|(b, _)| b).unwrap_or(s.len())
}

fn char_slice(s: &str, begin: usize, end: usize) -> &str {
    &s[byte_offset(s, begin)..byte_offset(s, end)]
}

fn to_char_index(s: &str, byte: usize) -> i64 {
    if s.is_ascii() {
        byte as i64
    } else {
        s[..byte].chars().count() as i64
    }
}

fn index_of(s: &str, needle: &str, from: i64) -> i64 {
    let n = char_len(s) as i64;
    let from = from.max(0);
    if from > n {
        return if needle.is_empty() { n } else { -1 };
    }
    let start = byte_offset(s, from as usize);
    match s[start..].find(needle) {
        Some(b) => to_char_index(s, start + b),
        None => -1,
    }
}

fn last_index_of(s: &str, needle: &str) -> i64 {
    match s.rfind(needle) {
        Some(b) => to_char_index(s, b),
        None => -1,
    }
}
