use super::{normalize_value, Example, Vocab, BOS, EOS, UNK};
use crate::Result;

/// Embedding ids of one record.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RecordIds {
    pub row: usize,
    pub field: usize,
    pub value: usize,
}

/// An example mapped to ids.
///
/// The extended vocabulary is the word vocabulary followed by the distinct
/// record values that are out of vocabulary (`oov`), in first-seen order.
#[derive(Clone, Debug, PartialEq)]
pub struct IndexedExample {
    pub id: String,
    /// `BOS, w_1 .. w_T, EOS` with `UNK` for out-of-vocabulary tokens.
    pub text_ids: Vec<usize>,
    /// Prediction targets `w_1 .. w_T, EOS` in extended ids: an OOV token
    /// that equals a record value points at that value's extended id.
    pub targets: Vec<usize>,
    pub records: Vec<RecordIds>,
    /// Normalized value string per record.
    pub values: Vec<String>,
    /// Extended id per record, the copy destination of its value.
    pub copy_ids: Vec<usize>,
    pub oov: Vec<String>,
}

impl IndexedExample {
    pub fn ext_size(&self, vocab: &Vocab) -> usize {
        vocab.len() + self.oov.len()
    }

    pub fn ext_token<'a>(&'a self, id: usize, vocab: &'a Vocab) -> &'a str {
        if id < vocab.len() {
            vocab.token(id)
        } else {
            self.oov.get(id - vocab.len()).map(String::as_str).unwrap_or("<unk>")
        }
    }

    pub fn ext_id(&self, token: &str, vocab: &Vocab) -> usize {
        if let Some(id) = vocab.token_id(token) {
            return id;
        }
        match self.oov.iter().position(|t| t == token) {
            Some(i) => vocab.len() + i,
            None => UNK,
        }
    }
}

pub fn encode_example(example: &Example, vocab: &Vocab) -> Result<IndexedExample> {
    let mut records = Vec::with_capacity(example.table.len());
    let mut values = Vec::with_capacity(example.table.len());
    let mut copy_ids = Vec::with_capacity(example.table.len());
    let mut oov: Vec<String> = Vec::new();
    for r in example.table.records() {
        let value = normalize_value(&r.value);
        records.push(RecordIds {
            row: vocab.row_id(r.row)?,
            field: vocab.field_id(&r.field),
            value: vocab.id(&value),
        });
        let copy = match vocab.token_id(&value) {
            Some(id) => id,
            None => match oov.iter().position(|t| *t == value) {
                Some(i) => vocab.len() + i,
                None => {
                    oov.push(value.clone());
                    vocab.len() + oov.len() - 1
                }
            },
        };
        copy_ids.push(copy);
        values.push(value);
    }

    let mut text_ids = Vec::with_capacity(example.text.len() + 2);
    text_ids.push(BOS);
    text_ids.extend(example.text.iter().map(|t| vocab.id(t)));
    text_ids.push(EOS);

    let mut ex = IndexedExample {
        id: example.id.clone(),
        text_ids,
        targets: Vec::new(),
        records,
        values,
        copy_ids,
        oov,
    };
    let mut targets: Vec<usize> = example.text.iter().map(|t| ex.ext_id(t, vocab)).collect();
    targets.push(EOS);
    ex.targets = targets;
    Ok(ex)
}
