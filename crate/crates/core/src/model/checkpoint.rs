//! Checkpoint file: one JSON manifest line, then every parameter as
//! little-endian `f32` in manifest order.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Vocab;
use crate::tensor::{Real, Tensor};
use crate::{Error, Result};

use super::{ModelConfig, ModelParams, VocabSizes};

const FORMAT: &str = "opgen-checkpoint";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArraySpec {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VocabSpec {
    pub words: Vec<String>,
    pub fields: Vec<String>,
    pub row_capacity: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    pub sizes: VocabSizes,
    pub vocab: VocabSpec,
    pub arrays: Vec<ArraySpec>,
    /// Initialization seed, when known.
    #[serde(default)]
    pub seed: Option<u64>,
    /// Free-form training metadata (seed, epoch, ...).
    #[serde(default)]
    pub meta: serde_json::Value,
}

pub fn write_checkpoint<T: Real>(
    mut w: impl Write,
    model: &ModelParams<T>,
    vocab: &Vocab,
    seed: Option<u64>,
    meta: serde_json::Value,
) -> Result<()> {
    let manifest = Manifest {
        format: FORMAT.into(),
        version: VERSION,
        config: model.config,
        sizes: model.sizes,
        vocab: VocabSpec {
            words: vocab.tokens().to_vec(),
            fields: vocab.fields().to_vec(),
            row_capacity: vocab.row_capacity(),
        },
        arrays: model
            .store
            .iter()
            .map(|(_, name, t)| ArraySpec {
                name: name.to_string(),
                shape: t.shape().to_vec(),
            })
            .collect(),
        seed,
        meta,
    };
    let io = |e| Error::Checkpoint(format!("write failed: {e}"));
    let header = serde_json::to_string(&manifest).map_err(|e| Error::Checkpoint(e.to_string()))?;
    w.write_all(header.as_bytes()).map_err(io)?;
    w.write_all(b"\n").map_err(io)?;
    for (_, _, t) in model.store.iter() {
        let mut buf = Vec::with_capacity(t.len() * 4);
        for x in t.data() {
            buf.extend_from_slice(&(Real::to_f64(*x) as f32).to_le_bytes());
        }
        w.write_all(&buf).map_err(io)?;
    }
    Ok(())
}

pub fn read_checkpoint<T: Real>(r: impl Read) -> Result<(ModelParams<T>, Vocab, Manifest)> {
    let mut r = BufReader::new(r);
    let mut header = String::new();
    r.read_line(&mut header)
        .map_err(|e| Error::Checkpoint(format!("unreadable header: {e}")))?;
    let manifest: Manifest = serde_json::from_str(header.trim_end())
        .map_err(|e| Error::Checkpoint(format!("bad manifest: {e}")))?;
    if manifest.format != FORMAT || manifest.version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint {} v{}",
            manifest.format, manifest.version
        )));
    }
    let vocab = Vocab::from_parts(
        manifest.vocab.words.clone(),
        manifest.vocab.fields.clone(),
        manifest.vocab.row_capacity,
    )?;
    if VocabSizes::of(&vocab) != manifest.sizes {
        return Err(Error::Checkpoint("vocabulary does not match recorded sizes".into()));
    }
    let mut model = ModelParams::<T>::zeros(manifest.config, manifest.sizes)?;
    let layout: Vec<ArraySpec> = model
        .store
        .iter()
        .map(|(_, name, t)| ArraySpec {
            name: name.to_string(),
            shape: t.shape().to_vec(),
        })
        .collect();
    if layout != manifest.arrays {
        return Err(Error::Checkpoint(
            "parameter layout differs from this model version".into(),
        ));
    }
    let ids: Vec<_> = model.store.ids().collect();
    for (id, array) in ids.into_iter().zip(&manifest.arrays) {
        let n: usize = array.shape.iter().product();
        let mut buf = vec![0u8; n * 4];
        r.read_exact(&mut buf)
            .map_err(|_| Error::Checkpoint(format!("truncated payload in {}", array.name)))?;
        let data = buf
            .chunks_exact(4)
            .map(|c| T::from_f64(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
            .collect();
        *model.store.get_mut(id) = Tensor::new(array.shape.clone(), data)?;
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(|e| Error::Checkpoint(e.to_string()))? != 0 {
        return Err(Error::Checkpoint("trailing bytes after payload".into()));
    }
    Ok((model, vocab, manifest))
}

pub fn save_checkpoint<T: Real>(
    path: impl AsRef<Path>,
    model: &ModelParams<T>,
    vocab: &Vocab,
    seed: Option<u64>,
    meta: serde_json::Value,
) -> Result<()> {
    let path = path.as_ref();
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(f);
    write_checkpoint(&mut w, model, vocab, seed, meta)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Real>(path: impl AsRef<Path>) -> Result<(ModelParams<T>, Vocab, Manifest)> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(f)
}
