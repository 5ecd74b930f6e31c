//! JSON report assembly and a deterministic writer that prints every float
//! with 17 significant digits.

use mflq::oracle::TreeProcess;
use mflq::problem::ProblemData;
use nalgebra::{DMatrix, DVector};
use serde_json::{json, Map, Value};
use std::fmt::Write;

pub fn num(x: f64) -> Value {
    serde_json::Number::from_f64(x).map_or(Value::Null, Value::Number)
}

pub fn matrix(m: &DMatrix<f64>) -> Value {
    Value::Array(
        (0..m.nrows())
            .map(|i| Value::Array((0..m.ncols()).map(|j| num(m[(i, j)])).collect()))
            .collect(),
    )
}

pub fn vector(v: &DVector<f64>) -> Value {
    Value::Array(v.iter().map(|x| num(*x)).collect())
}

pub fn matrices(ms: &[DMatrix<f64>]) -> Value {
    Value::Array(ms.iter().map(matrix).collect())
}

pub fn vectors(vs: &[DVector<f64>]) -> Value {
    Value::Array(vs.iter().map(vector).collect())
}

pub fn digest(p: &ProblemData) -> Value {
    json!({
        "n": p.dims.n,
        "m": p.dims.m,
        "l": p.dims.l,
        "N": p.dims.horizon,
        "homogeneous": p.is_homogeneous(),
        "info": p.info.to_string(),
        "atoms": p.initial.atoms.len(),
    })
}

/// One row per epoch and tree node.
pub fn tree_table(u: &TreeProcess) -> Value {
    let mut rows = Vec::new();
    for t in 0..u.len() {
        let depth = u.depth(t);
        let nodes: Vec<Value> = u
            .at(t)
            .iter()
            .enumerate()
            .map(|(i, v)| json!({ "node": i, "prob": num(u.tree.prob(depth, i)), "u": vector(v) }))
            .collect();
        rows.push(json!({
            "k": u.start + t,
            "depth": depth,
            "mean": vector(&u.mean(t)),
            "nodes": nodes,
        }));
    }
    Value::Array(rows)
}

pub fn object(pairs: Vec<(&str, Value)>) -> Value {
    let mut m = Map::new();
    for (k, v) in pairs {
        m.insert(k.to_string(), v);
    }
    Value::Object(m)
}

/// Pretty-prints with two-space indentation; floats use `{:.16e}`.
pub fn render(v: &Value) -> String {
    let mut out = String::new();
    write_value(&mut out, v, 0);
    out.push('\n');
    out
}

fn write_value(out: &mut String, v: &Value, indent: usize) {
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if n.is_f64() {
                let _ = write!(out, "{:.16e}", n.as_f64().unwrap_or(f64::NAN));
            } else {
                let _ = write!(out, "{n}");
            }
        }
        Value::String(s) => out.push_str(&Value::String(s.clone()).to_string()),
        Value::Array(items) if items.iter().all(|i| !i.is_array() && !i.is_object()) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                write_value(out, item, indent);
            }
            out.push(']');
        }
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                out.push_str(if i > 0 { ",\n" } else { "\n" });
                pad(out, indent + 1);
                write_value(out, item, indent + 1);
            }
            out.push('\n');
            pad(out, indent);
            out.push(']');
        }
        Value::Object(map) if map.is_empty() => out.push_str("{}"),
        Value::Object(map) => {
            out.push('{');
            for (i, (k, item)) in map.iter().enumerate() {
                out.push_str(if i > 0 { ",\n" } else { "\n" });
                pad(out, indent + 1);
                out.push_str(&Value::String(k.clone()).to_string());
                out.push_str(": ");
                write_value(out, item, indent + 1);
            }
            out.push('\n');
            pad(out, indent);
            out.push('}');
        }
    }
}

fn pad(out: &mut String, indent: usize) {
    for _ in 0..indent {
        out.push_str("  ");
    }
}
