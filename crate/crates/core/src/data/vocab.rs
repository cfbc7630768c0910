use std::collections::{BTreeMap, HashMap};

use super::{normalize_value, Example};
use crate::{Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const SPECIALS: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

/// Default number of addressable table rows (plus one reserved ALL id).
pub const DEFAULT_ROW_CAPACITY: usize = 64;

/// Word vocabulary (text tokens and record values), field vocabulary and
/// row-index vocabulary.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocab {
    words: Vec<String>,
    word_ids: HashMap<String, usize>,
    fields: Vec<String>,
    field_ids: HashMap<String, usize>,
    row_capacity: usize,
}

impl Vocab {
    /// `tokens` excludes the four specials; `fields` excludes the reserved
    /// unknown-field entry.
    pub fn from_parts(tokens: Vec<String>, fields: Vec<String>, row_capacity: usize) -> Result<Self> {
        let mut words: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        words.extend(tokens);
        let mut word_ids = HashMap::new();
        for (i, w) in words.iter().enumerate() {
            if word_ids.insert(w.clone(), i).is_some() {
                return Err(Error::Contract(format!("duplicate vocabulary token {w:?}")));
            }
        }
        let mut all_fields = vec!["<unk>".to_string()];
        all_fields.extend(fields);
        let mut field_ids = HashMap::new();
        for (i, f) in all_fields.iter().enumerate() {
            if field_ids.insert(f.clone(), i).is_some() {
                return Err(Error::Contract(format!("duplicate field {f:?}")));
            }
        }
        if row_capacity == 0 {
            return Err(Error::Config("row capacity must be positive".into()));
        }
        Ok(Vocab {
            words,
            word_ids,
            fields: all_fields,
            field_ids,
            row_capacity,
        })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn token_id(&self, token: &str) -> Option<usize> {
        self.word_ids.get(token).copied()
    }

    /// Id of a token, `UNK` when out of vocabulary.
    pub fn id(&self, token: &str) -> usize {
        self.token_id(token).unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> &str {
        self.words.get(id).map(String::as_str).unwrap_or(SPECIALS[UNK])
    }

    /// Non-special tokens in id order.
    pub fn tokens(&self) -> &[String] {
        &self.words[SPECIALS.len()..]
    }

    pub fn field_count(&self) -> usize {
        self.fields.len()
    }

    /// Field id; 0 is the reserved unknown field.
    pub fn field_id(&self, field: &str) -> usize {
        self.field_ids.get(field).copied().unwrap_or(0)
    }

    pub fn field(&self, id: usize) -> &str {
        &self.fields[id]
    }

    /// Field names excluding the reserved unknown entry.
    pub fn fields(&self) -> &[String] {
        &self.fields[1..]
    }

    pub fn row_capacity(&self) -> usize {
        self.row_capacity
    }

    /// Size of the row embedding table: every row plus ALL.
    pub fn row_vocab_size(&self) -> usize {
        self.row_capacity + 1
    }

    pub fn row_id(&self, row: usize) -> Result<usize> {
        if row == 0 || row > self.row_capacity {
            return Err(Error::RowCapacity {
                row,
                capacity: self.row_capacity,
            });
        }
        Ok(row - 1)
    }

    pub fn all_id(&self) -> usize {
        self.row_capacity
    }

    /// Maps ids back to tokens; ids outside the vocabulary render as `<unk>`.
    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter().map(|&i| self.token(i).to_string()).collect()
    }

    /// Vocabulary file: one token per line, line `n` (0-based) holds id `n + 4`.
    pub fn words_file(&self) -> String {
        lines(self.tokens())
    }

    pub fn fields_file(&self) -> String {
        lines(self.fields())
    }

    pub fn from_files(words: &str, fields: &str, row_capacity: usize) -> Result<Self> {
        Self::from_parts(
            words.lines().map(str::to_string).collect(),
            fields.lines().map(str::to_string).collect(),
            row_capacity,
        )
    }
}

fn lines(items: &[String]) -> String {
    let mut s = String::new();
    for t in items {
        s.push_str(t);
        s.push('\n');
    }
    s
}

/// Counts text tokens and normalized record values; keeps those seen at
/// least `min_count` times, ordered by descending count then token.
pub fn build_vocab(examples: &[Example], min_count: usize) -> Result<Vocab> {
    build_vocab_with_capacity(examples, min_count, DEFAULT_ROW_CAPACITY)
}

pub fn build_vocab_with_capacity(
    examples: &[Example],
    min_count: usize,
    row_capacity: usize,
) -> Result<Vocab> {
    if min_count == 0 {
        return Err(Error::Config("min_count must be at least 1".into()));
    }
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut fields: Vec<String> = Vec::new();
    for ex in examples {
        for t in &ex.text {
            *counts.entry(t.clone()).or_default() += 1;
        }
        for r in ex.table.records() {
            *counts.entry(normalize_value(&r.value)).or_default() += 1;
            if !fields.contains(&r.field) {
                fields.push(r.field.clone());
            }
        }
    }
    for s in SPECIALS {
        counts.remove(s);
    }
    let mut kept: Vec<(String, usize)> = counts.into_iter().filter(|(_, c)| *c >= min_count).collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Vocab::from_parts(kept.into_iter().map(|(t, _)| t).collect(), fields, row_capacity)
}
