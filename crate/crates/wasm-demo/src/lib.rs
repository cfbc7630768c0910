//! Browser demo over the core crate: run the operation engine on an
//! editable table, score the template headline, and sweep the quantization
//! layer of a freshly initialized model.
//!
//! Each export takes and returns JSON strings. The plain `*_json`
//! functions hold the logic so they can be tested natively.

use opgen::data::{normalize_value, tokenize, RecordTable};
use opgen::eval::{argmax_regions_contiguous, bleu4, extract_result, inspect_quantization, template_generate, winner_correct, Smoothing};
use opgen::model::{ModelConfig, ModelParams, VocabSizes};
use opgen::ops::{execute_all, OpConfig, ResultValue};
use serde_json::{json, Map, Value};
use wasm_bindgen::prelude::*;

/// Reads `[{"Team": "Heat", "Points": 94}, ...]`, one object per row.
pub fn parse_table(table_json: &str) -> Result<RecordTable, String> {
    let rows: Vec<Map<String, Value>> =
        serde_json::from_str(table_json).map_err(|e| format!("table: {e}"))?;
    let mut cells = Vec::with_capacity(rows.len());
    for (i, row) in rows.iter().enumerate() {
        let mut cols = Vec::new();
        for (field, v) in row {
            let value = match v {
                Value::String(s) => s.clone(),
                Value::Number(n) => n.to_string(),
                Value::Null => continue,
                other => return Err(format!("row {}: {field} has unsupported value {other}", i + 1)),
            };
            cols.push((field.clone(), value));
        }
        cells.push(cols);
    }
    RecordTable::from_rows(&cells).map_err(|e| e.to_string())
}

/// Every operation the engine instantiates on the table, with its result.
pub fn ops_json(table_json: &str, both_orders: bool) -> Result<String, String> {
    let table = parse_table(table_json)?;
    let cfg = OpConfig {
        both_orders,
        ..Default::default()
    };
    let results = execute_all(&table, &cfg).map_err(|e| e.to_string())?;
    let out: Vec<Value> = results
        .iter()
        .map(|r| {
            let (kind, value) = match r.value {
                ResultValue::Scalar(x) => ("scalar", json!(x)),
                ResultValue::Index(row) => {
                    let team = table.get(row, "Team").map(|t| t.value.clone());
                    ("index", json!({ "row": row, "team": team }))
                }
            };
            json!({ "op": r.op.to_string(), "kind": kind, "result": value })
        })
        .collect();
    Ok(Value::Array(out).to_string())
}

/// Template headline for the table, its BLEU against a reference and
/// whether the reference names the right winner.
pub fn headline_json(table_json: &str, reference: &str) -> Result<String, String> {
    let table = parse_table(table_json)?;
    let headline = template_generate(&table).map_err(|e| e.to_string())?;
    let reference = tokenize(reference);
    let bleu = if reference.is_empty() {
        Value::Null
    } else {
        let s = |m| bleu4(std::slice::from_ref(&headline), std::slice::from_ref(&reference), m);
        json!({
            "none": s(Smoothing::None).map_err(|e| e.to_string())?,
            "add_one": s(Smoothing::AddOne).map_err(|e| e.to_string())?,
        })
    };
    let parsed = extract_result(&reference).map(|(w, l, a, b)| json!({ "winner": w, "loser": l, "scores": [a, b] }));
    Ok(json!({
        "headline": headline.join(" "),
        "bleu": bleu,
        "reference_parse": parsed,
        "reference_correct": !reference.is_empty() && winner_correct(&reference, &table),
        "teams": (1..=table.rows()).filter_map(|r| table.get(r, "Team").map(|t| normalize_value(&t.value))).collect::<Vec<_>>(),
    })
    .to_string())
}

/// Quantization weights over `from..=to` for a model initialized from
/// `seed`; values are divided by `scale` first.
pub fn quantization_json(seed: u64, from: f64, to: f64, step: f64, scale: f64) -> Result<String, String> {
    if !(step > 0.0) || !(scale > 0.0) || !from.is_finite() || !to.is_finite() || to < from {
        return Err("need from <= to, step > 0 and scale > 0".into());
    }
    let n = ((to - from) / step + 1e-9).floor() as usize;
    if n > 10_000 {
        return Err("too many values".into());
    }
    let values: Vec<f64> = (0..=n).map(|i| from + i as f64 * step).collect();
    let mut config = ModelConfig::with_dims(8, 4, 16);
    config.scalar_scale = scale;
    let sizes = VocabSizes {
        words: 8,
        fields: 2,
        rows: 3,
    };
    let model: ModelParams<f64> = ModelParams::init(config, sizes, seed).map_err(|e| e.to_string())?;
    let weights = inspect_quantization(&model, &values).map_err(|e| e.to_string())?;
    let argmax: Vec<usize> = weights
        .iter()
        .map(|r| (0..r.len()).fold(0, |b, l| if r[l] > r[b] { l } else { b }))
        .collect();
    Ok(json!({
        "values": values,
        "weights": weights,
        "argmax": argmax,
        "contiguous": argmax_regions_contiguous(&weights),
    })
    .to_string())
}

#[wasm_bindgen(js_name = runOperations)]
pub fn run_operations(table_json: &str, both_orders: bool) -> Result<String, JsError> {
    ops_json(table_json, both_orders).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = runHeadline)]
pub fn run_headline(table_json: &str, reference: &str) -> Result<String, JsError> {
    headline_json(table_json, reference).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = runQuantization)]
pub fn run_quantization(seed: u32, from: f64, to: f64, step: f64, scale: f64) -> Result<String, JsError> {
    quantization_json(u64::from(seed), from, to, step, scale).map_err(|e| JsError::new(&e))
}
