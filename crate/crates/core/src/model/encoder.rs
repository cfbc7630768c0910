use crate::data::{IndexedExample, RecordIds};
use crate::tensor::{Graph, Real, Tensor, Var};
use crate::{Error, Result};

use super::{ArgIds, AttentionIds, GruIds, ModelParams, OpInput, ResultInput};

/// Keys and values of one attention group.
#[derive(Clone, Copy, Debug)]
pub struct OpGroup {
    /// `[N, H]` operation encodings.
    pub keys: Var,
    /// Keys already multiplied by the attention key weights.
    pub key_proj: Var,
    /// `[N, H]` result encodings.
    pub values: Var,
}

/// Everything the decoder reads from the input side of one example.
#[derive(Clone, Debug)]
pub struct EncodedInput {
    /// `[K, 2 * enc_hidden]` bidirectional record states.
    pub records: Var,
    pub record_proj: Var,
    pub copy_proj: Var,
    pub scalar: Option<OpGroup>,
    pub index: Option<OpGroup>,
    /// Initial decoder state.
    pub bridge: Var,
    /// Quantization weights of each scalar result, in input order.
    pub quant_weights: Vec<Var>,
}

fn linear<T: Real>(g: &mut Graph<'_, T>, x: Var, w: crate::tensor::ParamId, b: crate::tensor::ParamId) -> Result<Var> {
    let (w, b) = (g.param(w), g.param(b));
    let y = g.vecmat(x, w)?;
    Ok(g.add(y, b)?)
}

/// `[row embedding; field embedding; value embedding]` of one record.
pub fn embed_record<T: Real>(g: &mut Graph<'_, T>, m: &ModelParams<T>, r: RecordIds) -> Result<Var> {
    let (re, fe, we) = (g.param(m.ids.row_emb), g.param(m.ids.field_emb), g.param(m.ids.word_emb));
    let parts = [g.embed(re, r.row)?, g.embed(fe, r.field)?, g.embed(we, r.value)?];
    Ok(g.concat(&parts, 0)?)
}

/// One GRU update from input `x` and previous state `h`.
pub fn gru_step<T: Real>(g: &mut Graph<'_, T>, gru: &GruIds, x: Var, h: Var) -> Result<Var> {
    let wx = g.param(gru.wx);
    let bx = g.param(gru.bx);
    let gx = g.vecmat(x, wx)?;
    let gx = g.add(gx, bx)?;
    gru_projected(g, gru, gx, h)
}

/// GRU update with the input projection `x·Wx + bx` precomputed.
fn gru_projected<T: Real>(g: &mut Graph<'_, T>, gru: &GruIds, gx: Var, h: Var) -> Result<Var> {
    let n = g.shape(h)[0];
    let wh = g.param(gru.wh);
    let bh = g.param(gru.bh);
    let gh = g.vecmat(h, wh)?;
    let gh = g.add(gh, bh)?;
    let part = |g: &mut Graph<'_, T>, v: Var, k: usize| g.slice(v, k * n, n);
    let (xr, xz, xn) = (part(g, gx, 0)?, part(g, gx, 1)?, part(g, gx, 2)?);
    let (hr, hz, hn) = (part(g, gh, 0)?, part(g, gh, 1)?, part(g, gh, 2)?);
    let r = g.add(xr, hr)?;
    let r = g.sigmoid(r)?;
    let z = g.add(xz, hz)?;
    let z = g.sigmoid(z)?;
    let rh = g.mul(r, hn)?;
    let cand = g.add(xn, rh)?;
    let cand = g.tanh(cand)?;
    // h' = cand + z * (h - cand)
    let diff = g.sub(h, cand)?;
    let keep = g.mul(z, diff)?;
    Ok(g.add(cand, keep)?)
}

/// Bidirectional GRU over the records in table order.
///
/// Returns the `[K, 2 * enc_hidden]` state matrix and the initial decoder
/// state bridged from the final forward and first backward states.
pub fn encode_records<T: Real>(
    g: &mut Graph<'_, T>,
    m: &ModelParams<T>,
    records: &[RecordIds],
) -> Result<(Var, Var)> {
    if records.is_empty() {
        return Err(Error::Contract("cannot encode an empty record table".into()));
    }
    let ids = &m.ids;
    let he = m.config.enc_hidden;
    let (re, fe, we) = (g.param(ids.row_emb), g.param(ids.field_emb), g.param(ids.word_emb));
    let rows: Vec<usize> = records.iter().map(|r| r.row).collect();
    let fields: Vec<usize> = records.iter().map(|r| r.field).collect();
    let values: Vec<usize> = records.iter().map(|r| r.value).collect();
    let parts = [
        g.gather_rows(re, &rows)?,
        g.gather_rows(fe, &fields)?,
        g.gather_rows(we, &values)?,
    ];
    let x = g.concat(&parts, 1)?;

    let run = |g: &mut Graph<'_, T>, gru: &GruIds, order: &mut dyn Iterator<Item = usize>| -> Result<Vec<(usize, Var)>> {
        let wx = g.param(gru.wx);
        let bx = g.param(gru.bx);
        let proj = g.matmul(x, wx)?;
        let proj = g.add_row(proj, bx)?;
        let mut h = g.zeros(he);
        let mut out = Vec::with_capacity(records.len());
        for k in order {
            let gx = g.row(proj, k)?;
            h = gru_projected(g, gru, gx, h)?;
            out.push((k, h));
        }
        Ok(out)
    };
    let fwd = run(g, &ids.enc_fwd, &mut (0..records.len()))?;
    let mut bwd = run(g, &ids.enc_bwd, &mut (0..records.len()).rev())?;
    bwd.reverse();

    let mut states = Vec::with_capacity(records.len());
    for (f, b) in fwd.iter().zip(&bwd) {
        states.push(g.concat(&[f.1, b.1], 0)?);
    }
    let states = g.stack(&states)?;
    let last = g.concat(&[fwd[fwd.len() - 1].1, bwd[0].1], 0)?;
    let bridge = linear(g, last, ids.bridge_w, ids.bridge_b)?;
    let bridge = g.tanh(bridge)?;
    Ok((states, bridge))
}

/// Argument encoding: per-slot projections of the row embeddings, or the
/// ALL projection.
pub fn encode_op_args<T: Real>(g: &mut Graph<'_, T>, m: &ModelParams<T>, args: &ArgIds) -> Result<Var> {
    let ids = &m.ids;
    let re = g.param(ids.row_emb);
    let mut terms = Vec::new();
    match args {
        ArgIds::Rows(rows) => {
            if rows.is_empty() || rows.len() > ids.arg_w.len() {
                return Err(Error::Contract(format!(
                    "operations take one or two row arguments, got {}",
                    rows.len()
                )));
            }
            for (slot, &row) in rows.iter().enumerate() {
                let e = g.embed(re, row)?;
                let w = g.param(ids.arg_w[slot]);
                terms.push(g.vecmat(e, w)?);
            }
        }
        ArgIds::All(all) => {
            let e = g.embed(re, *all)?;
            let w = g.param(ids.arg_all_w);
            terms.push(g.vecmat(e, w)?);
        }
    }
    terms.push(g.param(ids.arg_b));
    let s = g.add_n(&terms)?;
    Ok(g.tanh(s)?)
}

/// `tanh(W [kind; column; args] + b)`.
pub fn encode_operation<T: Real>(g: &mut Graph<'_, T>, m: &ModelParams<T>, op: &OpInput) -> Result<Var> {
    let ke = g.param(m.ids.kind_emb);
    let fe = g.param(m.ids.field_emb);
    let kind = g.embed(ke, op.kind)?;
    let column = g.embed(fe, op.column)?;
    let args = encode_op_args(g, m, &op.args)?;
    let x = g.concat(&[kind, column, args], 0)?;
    let y = linear(g, x, m.ids.op_w, m.ids.op_b)?;
    Ok(g.tanh(y)?)
}

/// Soft binning of a scalar: returns the bin weights `μ = softmax(w·x + b)`
/// and the encoding `μ · Bins`.
///
/// With quantization ablated the encoding is the direct affine map
/// `w·x + b` and the returned weights are `None`.
pub fn quantize_scalar<T: Real>(
    g: &mut Graph<'_, T>,
    m: &ModelParams<T>,
    value: f64,
) -> Result<(Option<Var>, Var)> {
    if !value.is_finite() {
        return Err(Error::Contract(format!("scalar result {value} is not finite")));
    }
    let x = g.constant(Tensor::scalar(T::from_f64(value / m.config.scalar_scale)));
    if m.config.ablations.no_quantization {
        let w = g.param(m.ids.direct_w);
        let b = g.param(m.ids.direct_b);
        let wx = g.scale(w, x)?;
        return Ok((None, g.add(wx, b)?));
    }
    let w = g.param(m.ids.quant_w);
    let b = g.param(m.ids.quant_b);
    let wx = g.scale(w, x)?;
    let logits = g.add(wx, b)?;
    let mu = g.softmax(logits, None)?;
    let bins = g.param(m.ids.quant_emb);
    let h = g.vecmat(mu, bins)?;
    Ok((Some(mu), h))
}

/// Linear projection of the selected row's embedding.
pub fn encode_index_result<T: Real>(g: &mut Graph<'_, T>, m: &ModelParams<T>, row: usize) -> Result<Var> {
    let re = g.param(m.ids.row_emb);
    let e = g.embed(re, row)?;
    linear(g, e, m.ids.idx_w, m.ids.idx_b)
}

fn group<T: Real>(g: &mut Graph<'_, T>, att: &AttentionIds, keys: &[Var], values: &[Var]) -> Result<Option<OpGroup>> {
    if keys.is_empty() {
        return Ok(None);
    }
    let keys = g.stack(keys)?;
    let values = g.stack(values)?;
    let wk = g.param(att.wk);
    let key_proj = g.matmul(keys, wk)?;
    Ok(Some(OpGroup {
        keys,
        key_proj,
        values,
    }))
}

/// Encodes records and operation results of one example.
pub fn encode_input<T: Real>(
    g: &mut Graph<'_, T>,
    m: &ModelParams<T>,
    ex: &IndexedExample,
    ops: &[OpInput],
) -> Result<EncodedInput> {
    let (records, bridge) = encode_records(g, m, &ex.records)?;
    let wk_rec = g.param(m.ids.att_rec.wk);
    let record_proj = g.matmul(records, wk_rec)?;
    let wk_copy = g.param(m.ids.att_copy.wk);
    let copy_proj = g.matmul(records, wk_copy)?;

    let mut quant_weights = Vec::new();
    let (mut sk, mut sv, mut ik, mut iv) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    if !m.config.ablations.no_ops {
        for op in ops {
            let key = encode_operation(g, m, op)?;
            match op.result {
                ResultInput::Scalar(x) => {
                    let (mu, h) = quantize_scalar(g, m, x)?;
                    quant_weights.extend(mu);
                    sk.push(key);
                    sv.push(h);
                }
                ResultInput::Index(row) => {
                    if m.config.ablations.no_argmax {
                        continue;
                    }
                    ik.push(key);
                    iv.push(encode_index_result(g, m, row)?);
                }
            }
        }
    }
    let scalar = group(g, &m.ids.att_scl, &sk, &sv)?;
    let index = group(g, &m.ids.att_idx, &ik, &iv)?;
    Ok(EncodedInput {
        records,
        record_proj,
        copy_proj,
        scalar,
        index,
        bridge,
        quant_weights,
    })
}
