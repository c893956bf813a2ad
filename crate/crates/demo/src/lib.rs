//! Browser bindings: threshold curves, term queries and lifted plans over a
//! small dataset pasted as TSV.

use serde_json::json;
use wasm_bindgen::prelude::*;

use probcbma::cbma::{omega, parse_term_query, CbmaDataset, ThresholdConfig};
use probcbma::engine::{explain_term_query, term_query, Engine};

fn rows(text: &str, width: usize, name: &str) -> Result<Vec<Vec<String>>, String> {
    text.lines()
        .enumerate()
        .skip(1)
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let fields: Vec<String> = l.split('\t').map(|f| f.trim().to_string()).collect();
            if fields.len() == width {
                Ok(fields)
            } else {
                Err(format!("{name} line {}: expected {width} tab-separated fields", i + 1))
            }
        })
        .collect()
}

/// Builds a dataset from the contents of `features.tsv` and
/// `activations.tsv` (each with a header line).
pub fn dataset(features: &str, activations: &str) -> Result<CbmaDataset, String> {
    let mut f = Vec::new();
    for r in rows(features, 3, "features")? {
        let x: f64 = r[2].parse().map_err(|_| format!("invalid TF-IDF value `{}`", r[2]))?;
        f.push((r[0].clone(), r[1].clone(), x));
    }
    let a: Vec<(String, String)> = rows(activations, 2, "activations")?
        .into_iter()
        .map(|r| (r[0].clone(), r[1].clone()))
        .collect();
    CbmaDataset::from_records(&f, &a).map_err(|e| e.to_string())
}

fn threshold(mode: &str, alpha: f64, tau: f64) -> Result<ThresholdConfig, String> {
    match mode {
        "hard" => ThresholdConfig::hard(tau),
        "soft" => ThresholdConfig::soft(alpha, tau),
        other => return Err(format!("unknown mode `{other}`")),
    }
    .map_err(|e| e.to_string())
}

/// Soft and hard term-in-study probabilities on `points` TF-IDF values in
/// `[0, 2 tau]`, as JSON `{x, soft, hard}`.
pub fn curve(alpha: f64, tau: f64, points: usize) -> Result<String, String> {
    threshold("soft", alpha, tau)?;
    let n = points.max(2);
    let x: Vec<f64> = (0..n).map(|i| 2.0 * tau * i as f64 / (n - 1) as f64).collect();
    let soft: Vec<f64> = x.iter().map(|&v| omega(v, alpha, tau)).collect();
    let hard: Vec<f64> = x.iter().map(|&v| f64::from(u8::from(v > tau))).collect();
    Ok(json!({ "x": x, "soft": soft, "hard": hard }).to_string())
}

/// Answers `Activation(v) | φ`; returns JSON `{columns, rows: [[id, p]]}`.
pub fn query(
    features: &str,
    activations: &str,
    query: &str,
    mode: &str,
    alpha: f64,
    tau: f64,
    engine: &str,
) -> Result<String, String> {
    let ds = dataset(features, activations)?;
    let cfg = threshold(mode, alpha, tau)?;
    let q = parse_term_query(query).map_err(|e| e.to_string())?;
    let engine: Engine = engine.parse()?;
    let table = term_query(&ds, &cfg, &q, engine).map_err(|e| e.to_string())?;
    let rows: Vec<_> = table.rows().iter().map(|(k, p)| json!([k.join(", "), p])).collect();
    Ok(json!({ "columns": table.columns(), "rows": rows }).to_string())
}

/// The extensional plans the lifted engine runs for a query.
pub fn plan(features: &str, activations: &str, query: &str, mode: &str, alpha: f64, tau: f64) -> Result<String, String> {
    let ds = dataset(features, activations)?;
    let q = parse_term_query(query).map_err(|e| e.to_string())?;
    let plans = explain_term_query(&ds, &threshold(mode, alpha, tau)?, &q).map_err(|e| e.to_string())?;
    Ok(plans.to_string())
}

#[wasm_bindgen(js_name = thresholdCurve)]
pub fn threshold_curve(alpha: f64, tau: f64, points: usize) -> Result<String, JsError> {
    curve(alpha, tau, points).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = runQuery)]
pub fn run_query(
    features: &str,
    activations: &str,
    query_text: &str,
    mode: &str,
    alpha: f64,
    tau: f64,
    engine: &str,
) -> Result<String, JsError> {
    query(features, activations, query_text, mode, alpha, tau, engine).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = explainQuery)]
pub fn explain_query(
    features: &str,
    activations: &str,
    query_text: &str,
    mode: &str,
    alpha: f64,
    tau: f64,
) -> Result<String, JsError> {
    plan(features, activations, query_text, mode, alpha, tau).map_err(|e| JsError::new(&e))
}
