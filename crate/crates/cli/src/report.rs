//! Flat JSON reports with numbers rounded to 10 significant digits.

use serde_json::Value;

/// `x` rounded to 10 significant digits.
pub fn sig10(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.9e}").parse().expect("formatted float parses")
}

/// Ordered key-value record.
#[derive(Default)]
pub struct Report {
    fields: Vec<(String, Value)>,
}

impl Report {
    pub fn text(mut self, key: &str, value: impl Into<String>) -> Self {
        self.fields
            .push((key.to_string(), Value::String(value.into())));
        self
    }

    pub fn number(mut self, key: &str, value: f64) -> Self {
        let v = serde_json::Number::from_f64(sig10(value)).map_or(Value::Null, Value::Number);
        self.fields.push((key.to_string(), v));
        self
    }

    pub fn integer(mut self, key: &str, value: u64) -> Self {
        self.fields.push((key.to_string(), Value::from(value)));
        self
    }

    pub fn to_json(&self) -> String {
        let mut out = String::from("{\n");
        for (i, (k, v)) in self.fields.iter().enumerate() {
            let sep = if i + 1 < self.fields.len() { "," } else { "" };
            out.push_str(&format!("  {}: {v}{sep}\n", Value::String(k.clone())));
        }
        out.push_str("}\n");
        out
    }
}
