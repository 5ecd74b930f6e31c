//! Browser bindings: Riccati tables, ε-scans and oracle comparisons for a
//! problem given as JSON text. Every export returns a JSON string.

use mflq::fixtures;
use mflq::oracle::{self, ExactOutcome};
use mflq::problem::{parse_problem, ProblemData};
use mflq::riccati::{classify, geometric_schedule, solve_gre, Regularity};
use mflq::strategy::{finiteness_scan, synthesize_closed_loop, ClosedLoopVerdict};
use nalgebra::DMatrix;
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

/// Stacked dimension above which the browser refuses to build the oracle.
pub const WEB_ORACLE_LIMIT: usize = 600;

fn load(text: &str) -> Result<ProblemData, String> {
    parse_problem(text).map_err(|e| e.to_string())
}

fn rows(m: &DMatrix<f64>) -> Value {
    json!((0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect::<Vec<_>>())
        .collect::<Vec<_>>())
}

fn regularity_label(r: &Regularity) -> &'static str {
    match r {
        Regularity::StronglyRegular { .. } => "strongly regular",
        Regularity::Regular => "regular",
        Regularity::Irregular => "irregular",
    }
}

pub fn riccati_report(text: &str) -> Result<Value, String> {
    let p = load(text)?;
    let sol = solve_gre(&p).map_err(|e| e.to_string())?;
    let verdict = classify(&sol);
    let steps: Vec<Value> = (0..=p.steps())
        .map(|i| {
            let mut row = json!({ "k": p.dims.l + i, "P": rows(&sol.p[i]), "Pi": rows(&sol.pi[i]) });
            if i < p.steps() {
                row["Theta"] = rows(&sol.theta[i]);
                row["Theta_bar"] = rows(&sol.theta_bar[i]);
                row["min_eig_upsilon"] = json!(verdict.steps[i].min_eig_upsilon);
                row["min_eig_upsilon_bar"] = json!(verdict.steps[i].min_eig_upsilon_bar);
            }
            row
        })
        .collect();
    let closed_loop = match synthesize_closed_loop(&p).map_err(|e| e.to_string())? {
        ClosedLoopVerdict::Solvable(s) => json!({ "solvable": true, "value": s.value.value }),
        ClosedLoopVerdict::Unsolvable(reason) => json!({ "solvable": false, "reason": reason.to_string() }),
    };
    Ok(json!({
        "regularity": regularity_label(&verdict.kind),
        "alpha": verdict.alpha,
        "failures": verdict.failures.len(),
        "steps": steps,
        "closed_loop": closed_loop,
    }))
}

pub fn scan_report(text: &str, eps0: f64, steps: usize) -> Result<Value, String> {
    if !(eps0 > 0.0 && eps0.is_finite()) || steps == 0 || steps > 60 {
        return Err("eps0 must be positive and steps in 1..=60".into());
    }
    let p = load(text)?;
    let report = finiteness_scan(&p, &geometric_schedule(eps0, steps));
    let trace: Vec<Value> = report
        .trace
        .iter()
        .map(
            |s| json!({ "eps": s.eps, "min_eig_p": s.min_eig_p, "min_eig_pi": s.min_eig_pi, "margin_ok": s.margin_ok }),
        )
        .collect();
    Ok(json!({
        "verdict": format!("{:?}", report.verdict).to_lowercase(),
        "trace": trace,
    }))
}

pub fn comparison_report(text: &str) -> Result<Value, String> {
    let p = load(text)?;
    let dim = oracle::stacked_dim(&p);
    if dim > WEB_ORACLE_LIMIT {
        return Err(format!(
            "stacked dimension {dim} exceeds the browser limit {WEB_ORACLE_LIMIT}"
        ));
    }
    let model = oracle::assemble_quadratic(&p).map_err(|e| e.to_string())?;
    let outcome = oracle::solve_model(&model);
    let oracle_value = match &outcome {
        ExactOutcome::Unique { value, .. } | ExactOutcome::Attained { value, .. } => Some(*value),
        ExactOutcome::Unbounded { .. } => None,
    };
    let riccati_value = match synthesize_closed_loop(&p).map_err(|e| e.to_string())? {
        ClosedLoopVerdict::Solvable(s) => Some(s.value.value),
        ClosedLoopVerdict::Unsolvable(_) => None,
    };
    let gap = match (riccati_value, oracle_value) {
        (Some(a), Some(b)) => Some((a - b).abs()),
        _ => None,
    };
    Ok(json!({
        "stacked_dim": dim,
        "min_eig": outcome.min_eig(),
        "oracle": match outcome {
            ExactOutcome::Unique { .. } => "unique minimizer",
            ExactOutcome::Attained { .. } => "minimum attained (not unique)",
            ExactOutcome::Unbounded { .. } => "unbounded below",
        },
        "oracle_value": oracle_value,
        "riccati_value": riccati_value,
        "gap": gap,
    }))
}

fn export(r: Result<Value, String>) -> Result<String, JsError> {
    r.map(|v| v.to_string()).map_err(|e| JsError::new(&e))
}

/// Riccati sequences, gains and regularity verdict.
#[wasm_bindgen(js_name = riccatiTable)]
pub fn riccati_table(problem: &str) -> Result<String, JsError> {
    export(riccati_report(problem))
}

/// ε-scan trace and finiteness verdict.
#[wasm_bindgen(js_name = epsilonScan)]
pub fn epsilon_scan(problem: &str, eps0: f64, steps: usize) -> Result<String, JsError> {
    export(scan_report(problem, eps0, steps))
}

/// Riccati value against the exact oracle optimum.
#[wasm_bindgen(js_name = valueComparison)]
pub fn value_comparison(problem: &str) -> Result<String, JsError> {
    export(comparison_report(problem))
}

/// Built-in example problems by name.
#[wasm_bindgen(js_name = preset)]
pub fn preset(name: &str) -> Result<String, JsError> {
    match name {
        "ex71" => Ok(fixtures::INDEFINITE_SCALAR_JSON.into()),
        "ex72" => Ok(fixtures::TWO_CONTROL_JSON.into()),
        "ex51" => Ok(fixtures::NOISE_FEEDBACK_JSON.into()),
        "divergent" => Ok(fixtures::DIVERGENT_JSON.into()),
        "irregular" => Ok(fixtures::IRREGULAR_JSON.into()),
        "zero" => Ok(fixtures::ZERO_JSON.into()),
        other => Err(JsError::new(&format!("unknown preset {other:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indefinite_scalar_table() {
        let r = riccati_report(fixtures::INDEFINITE_SCALAR_JSON).unwrap();
        assert_eq!(r["regularity"], "strongly regular");
        assert_eq!(r["steps"][2]["P"][0][0], 4.0);
        let v = r["closed_loop"]["value"].as_f64().unwrap();
        assert!((v + 308.0 / 495.0).abs() < 1e-12);
    }

    #[test]
    fn scan_of_divergent_problem() {
        let r = scan_report(fixtures::DIVERGENT_JSON, 1.0, 20).unwrap();
        assert_eq!(r["verdict"], "infinite");
        assert!(scan_report(fixtures::DIVERGENT_JSON, -1.0, 20).is_err());
    }

    #[test]
    fn comparison_agrees_on_two_control() {
        let r = comparison_report(fixtures::TWO_CONTROL_JSON).unwrap();
        assert!(r["gap"].as_f64().unwrap() < 1e-8);
        assert_eq!(r["oracle"], "minimum attained (not unique)");
    }

    #[test]
    fn bad_json_is_reported() {
        assert!(riccati_report("{").unwrap_err().contains("parse"));
    }
}
