//! Pre-execution of symbolic operations over numeric table columns.
//!
//! Two operations are supported: `MINUS(column, i, j)` yields the scalar
//! `value(i) − value(j)`, and `ARGMAX(column)` over all rows yields the row
//! holding the largest value (smallest row wins ties).

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::RecordTable;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum OpKind {
    Minus,
    Argmax,
}

impl OpKind {
    /// Row of the operation-kind embedding table.
    pub fn id(self) -> usize {
        match self {
            OpKind::Minus => 0,
            OpKind::Argmax => 1,
        }
    }

    pub const COUNT: usize = 2;
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OpArgs {
    Rows(Vec<usize>),
    All(AllMarker),
}

/// Serializes as the string `"ALL"`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AllMarker {
    #[serde(rename = "ALL")]
    All,
}

impl OpArgs {
    pub fn all() -> Self {
        OpArgs::All(AllMarker::All)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Operation {
    pub kind: OpKind,
    pub column: String,
    pub args: OpArgs,
}

impl Operation {
    pub fn minus(column: impl Into<String>, i: usize, j: usize) -> Self {
        Operation {
            kind: OpKind::Minus,
            column: column.into(),
            args: OpArgs::Rows(vec![i, j]),
        }
    }

    pub fn argmax(column: impl Into<String>) -> Self {
        Operation {
            kind: OpKind::Argmax,
            column: column.into(),
            args: OpArgs::all(),
        }
    }
}

impl fmt::Display for Operation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.kind, &self.args) {
            (OpKind::Minus, OpArgs::Rows(r)) => write!(f, "MINUS({}, {:?})", self.column, r),
            (OpKind::Minus, OpArgs::All(_)) => write!(f, "MINUS({}, ALL)", self.column),
            (OpKind::Argmax, _) => write!(f, "ARGMAX({})", self.column),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "lowercase")]
pub enum ResultValue {
    Scalar(f64),
    Index(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperationResult {
    pub op: Operation,
    #[serde(rename = "result")]
    pub value: ResultValue,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpConfig {
    /// Emit `MINUS(j, i)` next to every `MINUS(i, j)`.
    #[serde(default)]
    pub both_orders: bool,
    /// Maximum number of MINUS operations per column.
    #[serde(default)]
    pub per_column_cap: Option<usize>,
}

/// Columns with at least one numeric cell, in table field order, each with
/// the sorted rows whose cell parses as a number.
pub fn numeric_columns(table: &RecordTable) -> Vec<(String, Vec<usize>)> {
    table
        .fields()
        .iter()
        .filter_map(|field| {
            let mut rows: Vec<usize> = table
                .records()
                .iter()
                .filter(|r| &r.field == field && r.numeric.is_some())
                .map(|r| r.row)
                .collect();
            rows.sort_unstable();
            (!rows.is_empty()).then(|| (field.clone(), rows))
        })
        .collect()
}

/// All MINUS pairs then ARGMAX, column by column.
pub fn enumerate_operations(table: &RecordTable, config: &OpConfig) -> Vec<Operation> {
    let mut ops = Vec::new();
    for (column, rows) in numeric_columns(table) {
        let mut minus = Vec::new();
        for &i in &rows {
            for &j in &rows {
                if i < j || (config.both_orders && i > j) {
                    minus.push(Operation::minus(column.clone(), i, j));
                }
            }
        }
        if let Some(cap) = config.per_column_cap {
            minus.truncate(cap);
        }
        ops.extend(minus);
        if rows.len() >= 2 {
            ops.push(Operation::argmax(column));
        }
    }
    ops
}

fn cell(table: &RecordTable, op: &Operation, row: usize) -> Result<f64> {
    table
        .get(row, &op.column)
        .and_then(|r| r.numeric)
        .ok_or_else(|| Error::NonNumericCell {
            op: op.to_string(),
            row,
            column: op.column.clone(),
        })
}

pub fn execute(table: &RecordTable, op: &Operation) -> Result<OperationResult> {
    let value = match (&op.kind, &op.args) {
        (OpKind::Minus, OpArgs::Rows(rows)) if rows.len() == 2 => {
            ResultValue::Scalar(cell(table, op, rows[0])? - cell(table, op, rows[1])?)
        }
        (OpKind::Argmax, OpArgs::All(_)) => {
            let mut best: Option<(usize, f64)> = None;
            let mut rows: Vec<usize> = table
                .records()
                .iter()
                .filter(|r| r.field == op.column && r.numeric.is_some())
                .map(|r| r.row)
                .collect();
            rows.sort_unstable();
            for row in rows {
                let v = cell(table, op, row)?;
                if best.is_none_or(|(_, b)| v > b) {
                    best = Some((row, v));
                }
            }
            match best {
                Some((row, _)) => ResultValue::Index(row),
                None => {
                    return Err(Error::NonNumericCell {
                        op: op.to_string(),
                        row: 0,
                        column: op.column.clone(),
                    })
                }
            }
        }
        _ => {
            return Err(Error::Contract(format!(
                "malformed operation {op}: MINUS takes two rows, ARGMAX takes ALL"
            )))
        }
    };
    Ok(OperationResult {
        op: op.clone(),
        value,
    })
}

pub fn execute_all(table: &RecordTable, config: &OpConfig) -> Result<Vec<OperationResult>> {
    enumerate_operations(table, config)
        .iter()
        .map(|op| execute(table, op))
        .collect()
}

/// One JSONL line of the operation dump: `{"id", "results": [{op, result}]}`.
pub fn dump_line(id: &str, results: &[OperationResult]) -> String {
    #[derive(Serialize)]
    struct Line<'a> {
        id: &'a str,
        results: &'a [OperationResult],
    }
    serde_json::to_string(&Line { id, results }).expect("serializable")
}
