//! Machine-readable output. Every number is written as a string with exactly
//! four fractional digits so that outputs from different entry points can be
//! compared byte for byte.

use serde::{Serialize, Serializer};

pub fn format_f64(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let s = format!("{v:.4}");
    if s == "-0.0000" {
        "0.0000".into()
    } else {
        s
    }
}

pub fn f64_fixed4<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&format_f64(*v))
}

pub fn opt_f64_fixed4<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
    match v {
        Some(v) => s.serialize_str(&format_f64(*v)),
        None => s.serialize_none(),
    }
}

pub fn decimal_fixed4<S: Serializer>(d: &rust_decimal::Decimal, s: S) -> Result<S::Ok, S::Error> {
    crate::exact::Exact::from_decimal(*d).serialize(s)
}

/// Pretty JSON with a trailing newline.
pub fn to_machine<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("wire types serialize");
    s.push('\n');
    s
}
