//! Evaluation: corpus BLEU-4, the template baseline, the winner-accuracy
//! diagnostic and the quantization / gate inspection dumps.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::data::{normalize_value, IndexedExample, RecordTable, Vocab};
use crate::decode::trace_example;
use crate::model::{quantize_scalar, ModelParams, OpInput};
use crate::ops::{execute, Operation, ResultValue};
use crate::tensor::{Graph, Real};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Smoothing {
    /// A zero n-gram precision makes the score zero.
    #[default]
    None,
    /// Add one to the matched and total counts of orders 2 to 4.
    AddOne,
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Corpus-level BLEU-4 in percent, one reference per candidate.
pub fn bleu4(candidates: &[Vec<String>], references: &[Vec<String>], smoothing: Smoothing) -> Result<f64> {
    if candidates.len() != references.len() {
        return Err(Error::Contract(format!(
            "{} candidates for {} references",
            candidates.len(),
            references.len()
        )));
    }
    if references.is_empty() {
        return Err(Error::Contract("BLEU needs at least one reference".into()));
    }
    let mut matched = [0usize; 4];
    let mut total = [0usize; 4];
    let (mut cand_len, mut ref_len) = (0usize, 0usize);
    for (c, r) in candidates.iter().zip(references) {
        cand_len += c.len();
        ref_len += r.len();
        for n in 1..=4 {
            let rc = ngram_counts(r, n);
            for (g, k) in ngram_counts(c, n) {
                matched[n - 1] += k.min(rc.get(g).copied().unwrap_or(0));
                total[n - 1] += k;
            }
        }
    }
    if cand_len == 0 {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for n in 0..4 {
        let (m, t) = match smoothing {
            Smoothing::AddOne if n > 0 => (matched[n] + 1, total[n] + 1),
            _ => (matched[n], total[n]),
        };
        if m == 0 || t == 0 {
            return Ok(0.0);
        }
        log_sum += (m as f64 / t as f64).ln();
    }
    let bp = if cand_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    };
    Ok(100.0 * bp * (log_sum / 4.0).exp())
}

fn team_points(table: &RecordTable) -> Result<Vec<(usize, String, f64)>> {
    let mut rows = Vec::new();
    for row in 1..=table.rows() {
        let team = table.get(row, "Team");
        let points = table.get(row, "Points").and_then(|r| r.numeric);
        if let (Some(t), Some(p)) = (team, points) {
            rows.push((row, normalize_value(&t.value), p));
        }
    }
    if rows.len() < 2 {
        return Err(Error::TemplateInapplicable(
            "need Team and numeric Points on at least two rows".into(),
        ));
    }
    Ok(rows)
}

/// Row of the points leader, by the operation engine's tie rule.
fn leader(table: &RecordTable) -> Result<usize> {
    match execute(table, &Operation::argmax("Points")) {
        Ok(r) => match r.value {
            ResultValue::Index(row) => Ok(row),
            ResultValue::Scalar(_) => unreachable!("ARGMAX yields an index"),
        },
        Err(e) => Err(Error::TemplateInapplicable(e.to_string())),
    }
}

/// `"{team1} beats {team2} with {p1} - {p2}"` where team1 leads in points.
pub fn template_generate(table: &RecordTable) -> Result<Vec<String>> {
    let rows = team_points(table)?;
    let lead = leader(table)?;
    let first = rows
        .iter()
        .find(|r| r.0 == lead)
        .ok_or_else(|| Error::TemplateInapplicable(format!("leader row {lead} has no Team")))?;
    let second = rows.iter().find(|r| r.0 != lead).expect("two rows");
    let p = |row: usize| normalize_value(&table.get(row, "Points").expect("checked").value);
    Ok(vec![
        first.1.clone(),
        "beats".into(),
        second.1.clone(),
        "with".into(),
        p(first.0),
        "-".into(),
        p(second.0),
    ])
}

/// Verb phrases that state who won, with inflections.
pub const WIN_VERBS: &[&str] = &[
    "beat", "beats", "edge", "edges", "top", "tops", "past", "rout", "routs", "hold off",
    "holds off", "blow out", "blows out", "power", "powers", "roll past", "rolls past",
    "win over", "out last", "outlast", "outlasts", "pull away", "pulls away", "survive",
    "survives", "easy win over",
];

fn is_number(t: &str) -> bool {
    crate::data::parse_number(t).is_some()
}

/// Winner, loser and the two scores of the first `A <verb> B [with] p1 - p2`
/// pattern.
pub fn extract_result(tokens: &[String]) -> Option<(String, String, f64, f64)> {
    let mut verbs: Vec<Vec<&str>> = WIN_VERBS.iter().map(|v| v.split(' ').collect()).collect();
    // longest phrase first, so "easy win over" beats "win over"
    verbs.sort_by_key(|v| std::cmp::Reverse(v.len()));
    let word = |t: &str| !is_number(t) && t.chars().any(char::is_alphanumeric);
    for v in 0..tokens.len() {
        let Some(phrase) = verbs
            .iter()
            .find(|p| tokens[v..].len() >= p.len() && tokens[v..v + p.len()].iter().zip(p.iter()).all(|(a, b)| a == b))
        else {
            continue;
        };
        let mut a_start = v;
        while a_start > 0 && word(&tokens[a_start - 1]) {
            a_start -= 1;
        }
        let mut a = &tokens[a_start..v];
        if a.first().is_some_and(|t| t == "the") {
            a = &a[1..];
        }
        let mut i = v + phrase.len();
        if tokens.get(i).is_some_and(|t| t == "the") {
            i += 1;
        }
        let b_start = i;
        while i < tokens.len() && word(&tokens[i]) && tokens[i] != "with" {
            i += 1;
        }
        let b = &tokens[b_start..i];
        if tokens.get(i).is_some_and(|t| t == "with") {
            i += 1;
        }
        if a.is_empty() || b.is_empty() || i + 3 > tokens.len() {
            continue;
        }
        let (p1, dash, p2) = (&tokens[i], &tokens[i + 1], &tokens[i + 2]);
        if dash != "-" {
            continue;
        }
        if let (Some(x), Some(y)) = (crate::data::parse_number(p1), crate::data::parse_number(p2)) {
            return Some((a.join(" "), b.join(" "), x, y));
        }
    }
    None
}

/// Whether an output names the points leader as the winner and states the
/// two scores.
pub fn winner_correct(output: &[String], table: &RecordTable) -> bool {
    let (Ok(rows), Ok(lead)) = (team_points(table), leader(table)) else {
        return false;
    };
    let Some((a, _, p1, p2)) = extract_result(output) else {
        return false;
    };
    let Some(winner) = rows.iter().find(|r| r.0 == lead) else {
        return false;
    };
    let mut said = [p1, p2];
    let mut truth = [winner.2, rows.iter().find(|r| r.0 != lead).expect("two rows").2];
    said.sort_by(f64::total_cmp);
    truth.sort_by(f64::total_cmp);
    a == winner.1 && said == truth
}

/// Fraction of outputs with the correct winner; unparsable outputs count
/// as wrong.
pub fn winner_accuracy(outputs: &[Vec<String>], tables: &[RecordTable]) -> Result<f64> {
    if outputs.len() != tables.len() {
        return Err(Error::Contract(format!(
            "{} outputs for {} tables",
            outputs.len(),
            tables.len()
        )));
    }
    if outputs.is_empty() {
        return Ok(0.0);
    }
    let correct = outputs
        .iter()
        .zip(tables)
        .filter(|(o, t)| winner_correct(o, t))
        .count();
    Ok(correct as f64 / outputs.len() as f64)
}

/// Quantization weights for each value, one row per value.
pub fn inspect_quantization<T: Real>(model: &ModelParams<T>, values: &[f64]) -> Result<Vec<Vec<f64>>> {
    let mut g = Graph::new(&model.store);
    let quant = model.with_ablations(crate::model::Ablations {
        no_quantization: false,
        ..model.config.ablations
    });
    values
        .iter()
        .map(|&x| {
            let (mu, _) = quantize_scalar(&mut g, &quant, x)?;
            let mu = mu.expect("quantization enabled");
            Ok(g.value(mu).iter().map(|&v| Real::to_f64(v)).collect())
        })
        .collect()
}

pub fn quantization_csv(values: &[f64], weights: &[Vec<f64>]) -> String {
    let bins = weights.first().map_or(0, Vec::len);
    let mut s = String::from("value");
    for l in 0..bins {
        s.push_str(&format!(",bin{l}"));
    }
    s.push('\n');
    for (x, row) in values.iter().zip(weights) {
        s.push_str(&x.to_string());
        for w in row {
            s.push_str(&format!(",{w}"));
        }
        s.push('\n');
    }
    s
}

/// Per bin, whether the values where it holds the largest weight form one
/// contiguous run of rows.
pub fn argmax_regions_contiguous(weights: &[Vec<f64>]) -> bool {
    let winners: Vec<usize> = weights
        .iter()
        .map(|row| {
            let mut best = 0;
            for (l, &w) in row.iter().enumerate() {
                if w > row[best] {
                    best = l;
                }
            }
            best
        })
        .collect();
    let mut closed = vec![false; weights.first().map_or(0, Vec::len)];
    for i in 0..winners.len() {
        if i > 0 && winners[i] != winners[i - 1] {
            closed[winners[i - 1]] = true;
            if closed[winners[i]] {
                return false;
            }
        }
    }
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateRow {
    pub token: String,
    pub lambda: f64,
    pub p_gen: f64,
}

/// Gate values along a greedy decode, one row per emitted token (the final
/// `<eos>` included).
pub fn inspect_gates<T: Real>(
    model: &ModelParams<T>,
    vocab: &Vocab,
    ex: &IndexedExample,
    ops: &[OpInput],
    max_len: usize,
) -> Result<Vec<GateRow>> {
    Ok(trace_example(model, vocab, ex, ops, max_len)?
        .into_iter()
        .map(|s| GateRow {
            token: s.token,
            lambda: s.output.lambda,
            p_gen: s.output.p_gen,
        })
        .collect())
}

pub fn gates_csv(rows: &[GateRow]) -> String {
    let mut s = String::from("step,token,lambda,p_gen\n");
    for (t, r) in rows.iter().enumerate() {
        s.push_str(&format!("{},{},{},{}\n", t + 1, csv_field(&r.token), r.lambda, r.p_gen));
    }
    s
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExampleReport {
    pub id: String,
    pub candidate: String,
    pub reference: String,
    pub candidate_len: usize,
    pub reference_len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub bleu4: f64,
    pub smoothing: Smoothing,
    pub examples: Vec<ExampleReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub winner_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beam: Option<usize>,
}

/// Scores aligned outputs against references; the winner diagnostic is
/// added when tables are given.
pub fn evaluate(
    ids: &[String],
    candidates: &[Vec<String>],
    references: &[Vec<String>],
    tables: Option<&[RecordTable]>,
    smoothing: Smoothing,
) -> Result<EvalReport> {
    if ids.len() != candidates.len() {
        return Err(Error::Contract(format!(
            "{} ids for {} candidates",
            ids.len(),
            candidates.len()
        )));
    }
    let bleu = bleu4(candidates, references, smoothing)?;
    let examples = ids
        .iter()
        .zip(candidates.iter().zip(references))
        .map(|(id, (c, r))| ExampleReport {
            id: id.clone(),
            candidate: c.join(" "),
            reference: r.join(" "),
            candidate_len: c.len(),
            reference_len: r.len(),
        })
        .collect();
    let winner_accuracy = tables.map(|t| winner_accuracy(candidates, t)).transpose()?;
    Ok(EvalReport {
        bleu4: bleu,
        smoothing,
        examples,
        winner_accuracy,
        checkpoint: None,
        beam: None,
    })
}
