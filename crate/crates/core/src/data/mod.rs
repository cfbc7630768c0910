//! Tables as record triples, datasets, vocabularies and example indexing.

mod dataset;
mod encode;
mod tokenize;
mod vocab;

pub use dataset::{from_box_score, load_dataset, load_inputs, parse_dataset, parse_inputs, write_dataset, RawExample, RawRecord};
pub use encode::{encode_example, IndexedExample, RecordIds};
pub use tokenize::{normalize_value, tokenize};
pub use vocab::{build_vocab, build_vocab_with_capacity, Vocab, DEFAULT_ROW_CAPACITY, BOS, EOS, PAD, SPECIALS, UNK};

use std::collections::HashSet;

use crate::{Error, Result};

/// One table cell: `(row, field, value)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub row: usize,
    pub field: String,
    pub value: String,
    pub numeric: Option<f64>,
}

impl Record {
    pub fn new(row: usize, field: impl Into<String>, value: impl Into<String>) -> Result<Self> {
        let field = field.into();
        let value = value.into();
        if row == 0 {
            return Err(Error::InvalidRecord("row indices start at 1".into()));
        }
        if field.trim().is_empty() {
            return Err(Error::InvalidRecord(format!("row {row}: empty field name")));
        }
        if value.trim().is_empty() {
            return Err(Error::InvalidRecord(format!(
                "row {row}, field {field:?}: empty value"
            )));
        }
        let numeric = parse_number(&value);
        Ok(Record {
            row,
            field,
            value,
            numeric,
        })
    }
}

/// Parses a finite decimal; anything else is text.
pub fn parse_number(s: &str) -> Option<f64> {
    s.trim().parse::<f64>().ok().filter(|x| x.is_finite())
}

/// A table flattened into records, with unique `(row, field)` cells.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct RecordTable {
    records: Vec<Record>,
    rows: usize,
    fields: Vec<String>,
}

impl RecordTable {
    pub fn new(records: Vec<Record>) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut fields: Vec<String> = Vec::new();
        let mut rows = 0;
        for r in &records {
            if !seen.insert((r.row, r.field.clone())) {
                return Err(Error::DuplicateRecord {
                    row: r.row,
                    field: r.field.clone(),
                });
            }
            if !fields.contains(&r.field) {
                fields.push(r.field.clone());
            }
            rows = rows.max(r.row);
        }
        Ok(RecordTable {
            records,
            rows,
            fields,
        })
    }

    /// Builds a table from row-major `(field, value)` lists; row `i` of the
    /// input becomes row `i + 1`.
    pub fn from_rows<F: AsRef<str>, V: AsRef<str>>(rows: &[Vec<(F, V)>]) -> Result<Self> {
        let mut records = Vec::new();
        for (i, row) in rows.iter().enumerate() {
            for (f, v) in row {
                records.push(Record::new(i + 1, f.as_ref(), v.as_ref())?);
            }
        }
        Self::new(records)
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn fields(&self) -> &[String] {
        &self.fields
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, row: usize, field: &str) -> Option<&Record> {
        self.records
            .iter()
            .find(|r| r.row == row && r.field == field)
    }
}

/// A table paired with its reference description.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub id: String,
    pub table: RecordTable,
    pub text: Vec<String>,
}

impl Example {
    pub fn new(id: impl Into<String>, table: RecordTable, text: Vec<String>) -> Result<Self> {
        let id = id.into();
        if text.is_empty() {
            return Err(Error::InvalidRecord(format!("example {id}: empty text")));
        }
        if text.iter().any(|t| t.is_empty()) {
            return Err(Error::InvalidRecord(format!("example {id}: empty token")));
        }
        Ok(Example { id, table, text })
    }

    /// A table without reference text, for generation only.
    pub fn unlabeled(id: impl Into<String>, table: RecordTable) -> Self {
        Example {
            id: id.into(),
            table,
            text: Vec::new(),
        }
    }
}
