//! Canonical numeric formatting shared by every writer.
//!
//! Floats are rounded to nine significant digits before they are emitted,
//! which keeps outputs diffable across platforms and makes write-then-read
//! round trips stable: rounding an already rounded value is a no-op.

use serde::Serialize;
use serde_json::Value;

use crate::error::PipelineError;

pub const SIGNIFICANT_DIGITS: usize = 9;

/// Rounds to nine significant digits. Non-finite values pass through.
pub fn round_sig(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return if x == 0.0 { 0.0 } else { x };
    }
    format!("{:.*e}", SIGNIFICANT_DIGITS - 1, x)
        .parse()
        .expect("formatted float parses")
}

/// Formats a float for text outputs such as CSV.
pub fn fmt_num(x: f64) -> String {
    if x.is_finite() {
        format!("{}", round_sig(x))
    } else if x.is_nan() {
        "nan".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

fn canonicalize(v: Value) -> Value {
    match v {
        Value::Number(n) if n.is_f64() => {
            let x = round_sig(n.as_f64().expect("f64 number"));
            serde_json::Number::from_f64(x).map_or(Value::Null, Value::Number)
        }
        Value::Array(a) => Value::Array(a.into_iter().map(canonicalize).collect()),
        Value::Object(m) => Value::Object(m.into_iter().map(|(k, v)| (k, canonicalize(v))).collect()),
        other => other,
    }
}

/// The canonical JSON value of `v` (floats rounded, keys in struct order).
pub fn to_canonical_value<T: Serialize>(v: &T) -> Result<Value, PipelineError> {
    Ok(canonicalize(serde_json::to_value(v)?))
}

/// Pretty-printed canonical JSON followed by a newline.
pub fn to_canonical_json<T: Serialize>(v: &T) -> Result<String, PipelineError> {
    let mut s = serde_json::to_string_pretty(&to_canonical_value(v)?)?;
    s.push('\n');
    Ok(s)
}

/// Single-line canonical JSON (for JSONL records).
pub fn to_canonical_line<T: Serialize>(v: &T) -> Result<String, PipelineError> {
    Ok(serde_json::to_string(&to_canonical_value(v)?)?)
}
