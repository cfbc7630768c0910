use crate::data::{normalize_value, IndexedExample, RecordIds, Vocab};
use crate::ops::{OpArgs, OpKind, OperationResult, ResultValue};
use crate::{Error, Result};

use super::Ablations;

/// Operation arguments as row-embedding ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ArgIds {
    Rows(Vec<usize>),
    All(usize),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ResultInput {
    Scalar(f64),
    /// Row-embedding id of the selected row.
    Index(usize),
}

/// One executed operation mapped to embedding ids.
#[derive(Clone, Debug, PartialEq)]
pub struct OpInput {
    pub kind: usize,
    pub column: usize,
    pub args: ArgIds,
    pub result: ResultInput,
}

/// Maps executed operations to model inputs, dropping what the ablations
/// remove.
pub fn prepare_ops(
    results: &[OperationResult],
    vocab: &Vocab,
    ablations: &Ablations,
) -> Result<Vec<OpInput>> {
    if ablations.no_ops {
        return Ok(Vec::new());
    }
    let mut out = Vec::with_capacity(results.len());
    for r in results {
        if ablations.no_argmax && r.op.kind == OpKind::Argmax {
            continue;
        }
        let args = match &r.op.args {
            OpArgs::Rows(rows) => {
                if rows.len() > 2 {
                    return Err(Error::Contract(format!(
                        "operation {} has more than two row arguments",
                        r.op
                    )));
                }
                ArgIds::Rows(rows.iter().map(|&row| vocab.row_id(row)).collect::<Result<_>>()?)
            }
            OpArgs::All(_) => ArgIds::All(vocab.all_id()),
        };
        let result = match r.value {
            ResultValue::Scalar(v) => ResultInput::Scalar(v),
            ResultValue::Index(row) => ResultInput::Index(vocab.row_id(row)?),
        };
        out.push(OpInput {
            kind: r.op.kind.id(),
            column: vocab.field_id(&r.op.column),
            args,
            result,
        });
    }
    Ok(out)
}

/// Text form of a result: integral scalars without a fraction, rows as
/// their number.
pub fn result_string(value: &ResultValue) -> String {
    match *value {
        ResultValue::Scalar(x) if x.fract() == 0.0 && x.abs() < 1e15 => format!("{}", x as i64),
        ResultValue::Scalar(x) => format!("{x}"),
        ResultValue::Index(row) => row.to_string(),
    }
}

/// Baseline treatment of operation results as extra records: each result
/// becomes a record on the ALL row whose field is the operated column and
/// whose value is the result string. The values join the copy targets.
pub fn results_as_records(
    ex: &IndexedExample,
    results: &[OperationResult],
    vocab: &Vocab,
) -> IndexedExample {
    let mut out = ex.clone();
    for r in results {
        let value = normalize_value(&result_string(&r.value));
        out.records.push(RecordIds {
            row: vocab.all_id(),
            field: vocab.field_id(&r.op.column),
            value: vocab.id(&value),
        });
        let copy = match vocab.token_id(&value) {
            Some(id) => id,
            None => match out.oov.iter().position(|t| *t == value) {
                Some(i) => vocab.len() + i,
                None => {
                    out.oov.push(value.clone());
                    vocab.len() + out.oov.len() - 1
                }
            },
        };
        out.copy_ids.push(copy);
        out.values.push(value);
    }
    out
}
