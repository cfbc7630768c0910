use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{tokenize, Example, Record, RecordTable};
use crate::{Error, Result};

/// One cell of a dataset line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    pub row: usize,
    pub field: String,
    #[serde(deserialize_with = "string_or_number")]
    pub value: String,
}

/// One dataset line: `{"id", "records": [...], "text"}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawExample {
    pub id: String,
    pub records: Vec<RawRecord>,
    pub text: String,
}

fn string_or_number<'de, D: serde::Deserializer<'de>>(d: D) -> Result<String, D::Error> {
    match Value::deserialize(d)? {
        Value::String(s) => Ok(s),
        Value::Number(n) => Ok(n.to_string()),
        other => Err(serde::de::Error::custom(format!(
            "expected string value, got {other}"
        ))),
    }
}

impl RawExample {
    pub fn into_example(self) -> Result<Example> {
        let records = self
            .records
            .into_iter()
            .map(|r| Record::new(r.row, r.field, r.value))
            .collect::<Result<Vec<_>>>()?;
        let table = RecordTable::new(records)?;
        Example::new(self.id, table, tokenize(&self.text))
    }

    pub fn from_example(ex: &Example) -> Self {
        RawExample {
            id: ex.id.clone(),
            records: ex
                .table
                .records()
                .iter()
                .map(|r| RawRecord {
                    row: r.row,
                    field: r.field.clone(),
                    value: r.value.clone(),
                })
                .collect(),
            text: ex.text.join(" "),
        }
    }
}

/// Parses dataset JSONL. Blank lines are skipped; errors carry the 1-based
/// line number.
pub fn parse_dataset(contents: &str) -> Result<Vec<Example>> {
    let mut out = Vec::new();
    for (i, line) in contents.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawExample = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        let ex = raw.into_example().map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(ex);
    }
    Ok(out)
}

/// Parses generation inputs: dataset lines or box-score lines, detected per
/// line, with the reference text optional.
pub fn parse_inputs(contents: &str) -> Result<Vec<Example>> {
    let mut out = Vec::new();
    for (i, line) in contents.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let at = |e: Error| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        };
        let mut v: Value = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        let has_text = v.get("text").and_then(Value::as_str).is_some_and(|t| !t.trim().is_empty());
        if v.get("home").is_some() {
            if !has_text {
                v["text"] = Value::String("-".into());
            }
            let mut ex = from_box_score(&v.to_string()).map_err(at)?;
            if !has_text {
                ex.text.clear();
            }
            out.push(ex);
            continue;
        }
        if !has_text {
            v["text"] = Value::String(String::new());
        }
        let raw: RawExample = serde_json::from_value(v).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        let ex = if has_text {
            raw.into_example().map_err(at)?
        } else {
            let records = raw
                .records
                .into_iter()
                .map(|r| Record::new(r.row, r.field, r.value))
                .collect::<Result<Vec<_>>>()
                .map_err(at)?;
            Example::unlabeled(raw.id, RecordTable::new(records).map_err(at)?)
        };
        out.push(ex);
    }
    Ok(out)
}

pub fn load_inputs(path: impl AsRef<Path>) -> Result<Vec<Example>> {
    let path = path.as_ref();
    let contents = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_inputs(&contents)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<Example>> {
    let path = path.as_ref();
    let contents = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&contents)
}

pub fn write_dataset(examples: &[Example]) -> String {
    let mut s = String::new();
    for ex in examples {
        s.push_str(&serde_json::to_string(&RawExample::from_example(ex)).expect("serializable"));
        s.push('\n');
    }
    s
}

/// Converts a box-score line `{"id", "home": {field: value}, "away": {...},
/// "text"}` into an example with the home team on row 1 and the away team
/// on row 2. Fields are taken in sorted key order.
pub fn from_box_score(line: &str) -> Result<Example> {
    let v: Value = serde_json::from_str(line).map_err(|e| Error::Parse {
        line: 1,
        message: e.to_string(),
    })?;
    let obj = v
        .as_object()
        .ok_or_else(|| Error::InvalidRecord("box score must be an object".into()))?;
    let id = obj
        .get("id")
        .and_then(Value::as_str)
        .unwrap_or_default()
        .to_string();
    let text = obj
        .get("text")
        .and_then(Value::as_str)
        .ok_or_else(|| Error::InvalidRecord("box score without text".into()))?;
    let mut records = Vec::new();
    for (row, side) in ["home", "away"].iter().enumerate() {
        let line = obj
            .get(*side)
            .and_then(Value::as_object)
            .ok_or_else(|| Error::InvalidRecord(format!("box score without {side} line")))?;
        for (field, value) in line {
            let value = match value {
                Value::String(s) => s.clone(),
                Value::Number(n) => n.to_string(),
                other => {
                    return Err(Error::InvalidRecord(format!(
                        "{side}.{field}: unsupported value {other}"
                    )))
                }
            };
            records.push(Record::new(row + 1, field.clone(), value)?);
        }
    }
    Example::new(id, RecordTable::new(records)?, tokenize(text))
}

#[cfg(test)]
mod tests {
    use super::*;

    const TABLE1_LINE: &str = r#"{"id":"g1","records":[{"row":1,"field":"Team","value":"Heat"},{"row":1,"field":"Points","value":"94"},{"row":2,"field":"Team","value":"Hawks"},{"row":2,"field":"Points","value":"95"}],"text":"hawks edges the heat with 95 - 94"}"#;

    #[test]
    fn parses_table_one_line() {
        let ex = parse_dataset(TABLE1_LINE).unwrap();
        assert_eq!(ex.len(), 1);
        assert_eq!(ex[0].id, "g1");
        assert_eq!(ex[0].table.len(), 4);
        assert_eq!(ex[0].text.len(), 8);
        assert_eq!(ex[0].table.get(2, "Points").unwrap().numeric, Some(95.0));
        assert_eq!(ex[0].table.get(2, "Team").unwrap().numeric, None);
    }

    #[test]
    fn inputs_accept_missing_text_and_box_scores() {
        let bare = r#"{"id":"u","records":[{"row":1,"field":"Points","value":"9"}]}"#;
        let box_score = r#"{"id":"b","home":{"Team":"Heat","Points":94},"away":{"Team":"Hawks","Points":95}}"#;
        let got = parse_inputs(&format!("{bare}\n{box_score}\n{TABLE1_LINE}\n")).unwrap();
        assert_eq!(got.len(), 3);
        assert!(got[0].text.is_empty() && got[1].text.is_empty());
        assert_eq!(got[1].table.get(2, "Points").unwrap().value, "95");
        assert_eq!(got[2].text.len(), 8);
        assert!(matches!(parse_inputs("{}\n"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn empty_input_is_empty() {
        assert!(parse_dataset("").unwrap().is_empty());
        assert!(parse_dataset("\n\n").unwrap().is_empty());
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let input = format!("{TABLE1_LINE}\n{{not json}}\n");
        match parse_dataset(&input) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn duplicate_cell_names_the_pair() {
        let line = r#"{"id":"d","records":[{"row":1,"field":"Team","value":"A"},{"row":1,"field":"Team","value":"B"}],"text":"x"}"#;
        let err = parse_dataset(line).unwrap_err().to_string();
        assert!(err.contains("line 1"), "{err}");
        assert!(err.contains("row 1") && err.contains("Team"), "{err}");
    }

    #[test]
    fn numeric_values_are_accepted_as_strings() {
        let line = r#"{"id":"n","records":[{"row":1,"field":"Rebound","value":44}],"text":"x"}"#;
        let ex = parse_dataset(line).unwrap();
        let r = &ex[0].table.records()[0];
        assert_eq!(r.value, "44");
        assert_eq!(r.numeric, Some(44.0));
    }

    #[test]
    fn load_is_order_preserving_and_idempotent() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        let second = TABLE1_LINE.replace("\"g1\"", "\"g2\"");
        std::fs::write(&p, format!("{TABLE1_LINE}\n{second}\n")).unwrap();
        let a = load_dataset(&p).unwrap();
        let b = load_dataset(&p).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[0].id, "g1");
        assert_eq!(a[1].id, "g2");
        assert_eq!(parse_dataset(&write_dataset(&a)).unwrap(), a);
        assert!(load_dataset(dir.path().join("missing.jsonl")).unwrap_err().is_io());
    }

    #[test]
    fn box_score_adapter() {
        let line = r#"{"id":"b","home":{"Team":"Heat","Points":94},"away":{"Team":"Hawks","Points":95},"text":"Hawks edges the Heat with 95 - 94"}"#;
        let ex = from_box_score(line).unwrap();
        assert_eq!(ex.table.get(1, "Team").unwrap().value, "Heat");
        assert_eq!(ex.table.get(2, "Points").unwrap().numeric, Some(95.0));
        assert_eq!(ex.text[0], "hawks");
    }
}
