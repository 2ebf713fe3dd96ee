//! Output emitters: metadata-prefixed CSV and a fixed-precision JSON writer.
//!
//! JSON floats carry 17 significant digits so runs reproduce bit-for-bit
//! from the emitted values; keys stay in insertion order.

use std::fmt::Write as _;

pub const SCHEMA_VERSION: u32 = 1;

/// Minimal ordered JSON value for flat run reports.
pub enum Json {
    UInt(u64),
    Float(f64),
    Str(String),
    Bool(bool),
    List(Vec<Json>),
    Object(Vec<(String, Json)>),
}

pub fn float17(x: f64) -> String {
    if x == x.trunc() && x.abs() < 1e15 {
        // keep small integers readable
        format!("{:.1}", x)
    } else {
        format!("{:.16e}", x)
    }
}

pub fn render_json(v: &Json, out: &mut String) {
    match v {
        Json::UInt(u) => {
            let _ = write!(out, "{}", u);
        }
        Json::Float(x) => {
            let _ = write!(out, "{}", float17(*x));
        }
        Json::Bool(b) => {
            let _ = write!(out, "{}", b);
        }
        Json::Str(s) => {
            let _ = write!(out, "\"{}\"", s.replace('\\', "\\\\").replace('"', "\\\""));
        }
        Json::List(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                render_json(item, out);
            }
            out.push(']');
        }
        Json::Object(fields) => {
            out.push('{');
            for (i, (k, val)) in fields.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                let _ = write!(out, "\"{}\":", k);
                render_json(val, out);
            }
            out.push('}');
        }
    }
}

/// Wraps a report object with the schema version and run metadata.
pub fn run_object(command: &str, meta: Vec<(String, Json)>, body: Vec<(String, Json)>) -> String {
    let mut fields = vec![
        ("schema_version".to_string(), Json::UInt(SCHEMA_VERSION as u64)),
        ("version".to_string(), Json::Str(env!("CARGO_PKG_VERSION").to_string())),
        ("command".to_string(), Json::Str(command.to_string())),
    ];
    fields.extend(meta);
    fields.extend(body);
    let mut s = String::new();
    render_json(&Json::Object(fields), &mut s);
    s.push('\n');
    s
}

/// CSV with '#'-prefixed metadata lines, a header row, LF line endings.
pub struct Csv {
    buf: String,
}

impl Csv {
    pub fn new(command: &str, meta: &[(&str, String)]) -> Self {
        let mut buf = String::new();
        let _ = writeln!(buf, "# schema_version={}", SCHEMA_VERSION);
        let _ = writeln!(buf, "# version={}", env!("CARGO_PKG_VERSION"));
        let _ = writeln!(buf, "# command={}", command);
        for (k, v) in meta {
            let _ = writeln!(buf, "# {}={}", k, v);
        }
        Csv { buf }
    }

    pub fn comment(&mut self, k: &str, v: String) {
        let _ = writeln!(self.buf, "# {}={}", k, v);
    }

    pub fn header(&mut self, cols: &[&str]) {
        let _ = writeln!(self.buf, "{}", cols.join(","));
    }

    pub fn row(&mut self, cells: &[String]) {
        let _ = writeln!(self.buf, "{}", cells.join(","));
    }

    pub fn finish(self) -> String {
        self.buf
    }
}
