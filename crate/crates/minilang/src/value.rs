use std::sync::Arc;

use serde_json::Value as Json;

use crate::ast::Type;

/// Runtime value. Arrays have value semantics (copy on write).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Value {
    Int(i64),
    Bool(bool),
    Str(Arc<str>),
    Array(Arc<Vec<Value>>),
}

impl Value {
    pub fn str(s: impl AsRef<str>) -> Self {
        Value::Str(Arc::from(s.as_ref()))
    }

    pub fn array(items: Vec<Value>) -> Self {
        Value::Array(Arc::new(items))
    }

    pub fn to_json(&self) -> Json {
        match self {
            Value::Int(v) => Json::from(*v),
            Value::Bool(b) => Json::Bool(*b),
            Value::Str(s) => Json::String(s.to_string()),
            Value::Array(items) => Json::Array(items.iter().map(Value::to_json).collect()),
        }
    }

    /// Converts a JSON literal into a value of the given type.
    pub fn from_json(json: &Json, ty: &Type) -> Result<Value, String> {
        match (ty, json) {
            (Type::Int, Json::Number(n)) => n
                .as_i64()
                .map(Value::Int)
                .ok_or_else(|| format!("`{n}` is not a 64-bit integer")),
            (Type::Bool, Json::Bool(b)) => Ok(Value::Bool(*b)),
            (Type::Str, Json::String(s)) => Ok(Value::str(s)),
            (Type::Array(inner), Json::Array(items)) => items
                .iter()
                .map(|item| Value::from_json(item, inner))
                .collect::<Result<Vec<_>, _>>()
                .map(Value::array),
            (ty, other) => Err(format!("expected {ty}, found `{other}`")),
        }
    }
}

/// Canonical textual rendering of an output literal: strings render raw,
/// everything else as compact JSON.
pub fn render_json(json: &Json) -> String {
    match json {
        Json::String(s) => s.clone(),
        other => other.to_string(),
    }
}

pub fn render_value(value: &Value) -> String {
    match value {
        Value::Str(s) => s.to_string(),
        other => other.to_json().to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn renders_strings_raw_and_arrays_as_json() {
        assert_eq!(render_value(&Value::str("jam")), "jam");
        assert_eq!(render_value(&Value::array(vec![Value::Int(1), Value::Int(2)])), "[1,2]");
        assert_eq!(render_json(&json!([1, 2])), "[1,2]");
        assert_eq!(render_json(&json!("")), "");
        assert_eq!(render_json(&json!(true)), "true");
    }

    #[test]
    fn from_json_checks_types() {
        let ty = Type::Array(Box::new(Type::Int));
        assert_eq!(
            Value::from_json(&json!([3, 4]), &ty).unwrap(),
            Value::array(vec![Value::Int(3), Value::Int(4)])
        );
        assert!(Value::from_json(&json!([3, "x"]), &ty).is_err());
        assert!(Value::from_json(&json!(1.5), &Type::Int).is_err());
    }
}
