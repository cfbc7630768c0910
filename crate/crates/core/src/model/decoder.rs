use crate::data::{IndexedExample, UNK};
use crate::tensor::{Graph, ParamId, Real, Var};
use crate::{Error, Result};

use super::encoder::{encode_input, gru_step, EncodedInput};
use super::{AttentionIds, ModelParams, OpInput};

/// Where copied record values land in the extended vocabulary.
#[derive(Clone, Copy, Debug)]
pub struct CopyMap<'a> {
    pub ids: &'a [usize],
    pub ext_size: usize,
}

impl<'a> CopyMap<'a> {
    pub fn of(ex: &'a IndexedExample, words: usize) -> Self {
        CopyMap {
            ids: &ex.copy_ids,
            ext_size: words + ex.oov.len(),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct DecoderState {
    pub hidden: Var,
    pub context: Var,
    pub step: usize,
}

/// Fixed values substituted for the learned gates, for inspection.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepOverrides {
    pub lambda: Option<f64>,
    pub p_gen: Option<f64>,
}

/// Graph nodes produced by one decoder step.
#[derive(Clone, Copy, Debug)]
pub struct StepVars {
    /// Output distribution over the extended vocabulary.
    pub dist: Var,
    pub vocab_dist: Var,
    pub lambda: Var,
    pub p_gen: Var,
    pub alpha_records: Var,
    pub alpha_scalar: Option<Var>,
    pub alpha_index: Option<Var>,
    pub alpha_copy: Var,
    pub context: Var,
}

/// Plain values of one decoder step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutput {
    pub dist: Vec<f64>,
    pub vocab_dist: Vec<f64>,
    pub lambda: f64,
    pub p_gen: f64,
    pub alpha_records: Vec<f64>,
    pub alpha_scalar: Option<Vec<f64>>,
    pub alpha_index: Option<Vec<f64>>,
    pub alpha_copy: Vec<f64>,
}

impl StepVars {
    pub fn output<T: Real>(&self, g: &Graph<'_, T>) -> StepOutput {
        let v = |x: Var| g.value(x).iter().map(|&t| Real::to_f64(t)).collect::<Vec<f64>>();
        StepOutput {
            dist: v(self.dist),
            vocab_dist: v(self.vocab_dist),
            lambda: Real::to_f64(g.value(self.lambda)[0]),
            p_gen: Real::to_f64(g.value(self.p_gen)[0]),
            alpha_records: v(self.alpha_records),
            alpha_scalar: self.alpha_scalar.map(v),
            alpha_index: self.alpha_index.map(v),
            alpha_copy: v(self.alpha_copy),
        }
    }
}

fn linear<T: Real>(g: &mut Graph<'_, T>, x: Var, w: ParamId, b: ParamId) -> Result<Var> {
    let (w, b) = (g.param(w), g.param(b));
    let y = g.vecmat(x, w)?;
    Ok(g.add(y, b)?)
}

fn attention_scores<T: Real>(g: &mut Graph<'_, T>, att: &AttentionIds, query: Var, key_proj: Var) -> Result<Var> {
    let q = linear(g, query, att.wq, att.b)?;
    let pre = g.add_row(key_proj, q)?;
    let act = g.tanh(pre)?;
    let v = g.param(att.v);
    let scores = g.matvec(act, v)?;
    Ok(g.softmax(scores, None)?)
}

/// Attention with keys already projected by `att.wk`; returns the context
/// and the weights.
pub fn attend_projected<T: Real>(
    g: &mut Graph<'_, T>,
    att: &AttentionIds,
    query: Var,
    key_proj: Var,
    values: Var,
) -> Result<(Var, Var)> {
    let alpha = attention_scores(g, att, query, key_proj)?;
    let ctx = g.vecmat(alpha, values)?;
    Ok((ctx, alpha))
}

/// `α = softmax_j(v · tanh(q·Wq + k_j·Wk + b))`, context `Σ α_j value_j`.
pub fn attend<T: Real>(
    g: &mut Graph<'_, T>,
    att: &AttentionIds,
    query: Var,
    keys: Var,
    values: Var,
) -> Result<(Var, Var)> {
    let wk = g.param(att.wk);
    let key_proj = g.matmul(keys, wk)?;
    attend_projected(g, att, query, key_proj, values)
}

/// `tanh(W [c_scalar; c_index] + b)`, with a zero vector standing in for a
/// group that has no results.
pub fn combine_op_contexts<T: Real>(
    g: &mut Graph<'_, T>,
    m: &ModelParams<T>,
    scalar: Option<Var>,
    index: Option<Var>,
) -> Result<Var> {
    let h = m.config.hidden;
    let s = scalar.unwrap_or_else(|| g.zeros(h));
    let i = index.unwrap_or_else(|| g.zeros(h));
    let x = g.concat(&[s, i], 0)?;
    let y = linear(g, x, m.ids.comb_w, m.ids.comb_b)?;
    Ok(g.tanh(y)?)
}

/// `(1 − λ) c_op + λ c_records`.
pub fn gate_contexts<T: Real>(g: &mut Graph<'_, T>, lambda: Var, op_ctx: Var, rec_ctx: Var) -> Result<Var> {
    let rest = g.affine(lambda, -T::one(), T::one());
    let a = g.scale(op_ctx, rest)?;
    let b = g.scale(rec_ctx, lambda)?;
    Ok(g.add(a, b)?)
}

/// Record-level attention weights used for copying.
pub fn copy_attention<T: Real>(
    g: &mut Graph<'_, T>,
    m: &ModelParams<T>,
    enc: &EncodedInput,
    query: Var,
) -> Result<Var> {
    attention_scores(g, &m.ids.att_copy, query, enc.copy_proj)
}

/// `σ(w_c·c + w_d·d + w_y·y + b)` as a one-element vector.
pub fn generation_gate<T: Real>(
    g: &mut Graph<'_, T>,
    m: &ModelParams<T>,
    context: Var,
    hidden: Var,
    prev_emb: Var,
) -> Result<Var> {
    let ids = &m.ids;
    let (wc, wd, wy, b) = (g.param(ids.ptr_wc), g.param(ids.ptr_wd), g.param(ids.ptr_wy), g.param(ids.ptr_b));
    let parts = [g.vecmat(context, wc)?, g.vecmat(hidden, wd)?, g.vecmat(prev_emb, wy)?, b];
    let s = g.add_n(&parts)?;
    Ok(g.sigmoid(s)?)
}

pub fn start_state<T: Real>(g: &mut Graph<'_, T>, m: &ModelParams<T>, enc: &EncodedInput) -> DecoderState {
    DecoderState {
        hidden: enc.bridge,
        context: g.zeros(m.config.hidden),
        step: 0,
    }
}

/// One decoder step consuming the previous token `prev` (an extended id;
/// copied OOV ids are fed back as `UNK`).
pub fn step<T: Real>(
    g: &mut Graph<'_, T>,
    m: &ModelParams<T>,
    enc: &EncodedInput,
    copy: &CopyMap<'_>,
    state: &DecoderState,
    prev: usize,
    overrides: &StepOverrides,
) -> Result<(DecoderState, StepVars)> {
    let ids = &m.ids;
    let ab = &m.config.ablations;
    let we = g.param(ids.word_emb);
    let prev_in = if prev < m.sizes.words { prev } else { UNK };
    let y = g.embed(we, prev_in)?;
    let d_prev = state.hidden;

    let x = g.concat(&[y, state.context], 0)?;
    let d = gru_step(g, &ids.dec, x, d_prev)?;

    let (c_rec, alpha_records) = attend_projected(g, &ids.att_rec, d_prev, enc.record_proj, enc.records)?;

    let (context, lambda, alpha_scalar, alpha_index) = if ab.no_ops {
        (c_rec, g.constant_vec(vec![T::one()]), None, None)
    } else {
        let ctx_of = |g: &mut Graph<'_, T>, att: &AttentionIds, grp: Option<super::OpGroup>| {
            grp.map(|grp| attend_projected(g, att, d_prev, grp.key_proj, grp.values))
                .transpose()
        };
        let scl = ctx_of(g, &ids.att_scl, enc.scalar)?;
        let idx = ctx_of(g, &ids.att_idx, enc.index)?;
        let c_op = combine_op_contexts(g, m, scl.map(|s| s.0), idx.map(|s| s.0))?;
        let lambda = match overrides.lambda {
            Some(l) => g.constant_vec(vec![T::from_f64(l)]),
            None if ab.no_gate => g.constant_vec(vec![T::from_f64(0.5)]),
            None => {
                let z = linear(g, d, ids.gate_w, ids.gate_b)?;
                g.sigmoid(z)?
            }
        };
        let c = gate_contexts(g, lambda, c_op, c_rec)?;
        (c, lambda, scl.map(|s| s.1), idx.map(|s| s.1))
    };

    let feat = g.concat(&[d, context, y], 0)?;
    let hid = linear(g, feat, ids.out_w1, ids.out_b1)?;
    let hid = g.tanh(hid)?;
    let logits = linear(g, hid, ids.out_w2, ids.out_b2)?;
    let vocab_dist = g.softmax(logits, None)?;

    let query = g.concat(&[d_prev, context], 0)?;
    let alpha_copy = copy_attention(g, m, enc, query)?;

    let p_gen = match overrides.p_gen {
        Some(p) => g.constant_vec(vec![T::from_f64(p)]),
        None => generation_gate(g, m, context, d, y)?,
    };
    let gen = g.pad(vocab_dist, copy.ext_size)?;
    let gen = g.scale(gen, p_gen)?;
    let cp = g.scatter_add(alpha_copy, copy.ids, copy.ext_size)?;
    let rest = g.affine(p_gen, -T::one(), T::one());
    let cp = g.scale(cp, rest)?;
    let dist = g.add(gen, cp)?;

    if let Some(i) = g.value(dist).iter().position(|p| !p.is_finite()) {
        return Err(Error::NonFinite {
            step: state.step,
            what: format!("output probability of token {i}"),
        });
    }
    Ok((
        DecoderState {
            hidden: d,
            context,
            step: state.step + 1,
        },
        StepVars {
            dist,
            vocab_dist,
            lambda,
            p_gen,
            alpha_records,
            alpha_scalar,
            alpha_index,
            alpha_copy,
            context,
        },
    ))
}

/// Teacher-forced loss of one example.
#[derive(Clone, Debug)]
pub struct ExampleLoss {
    /// Summed negative log-likelihood of the reference.
    pub loss: Var,
    pub tokens: usize,
    /// Gate value at every step.
    pub lambdas: Vec<Var>,
}

pub fn example_loss<T: Real>(
    g: &mut Graph<'_, T>,
    m: &ModelParams<T>,
    ex: &IndexedExample,
    ops: &[OpInput],
) -> Result<ExampleLoss> {
    let enc = encode_input(g, m, ex, ops)?;
    let copy = CopyMap::of(ex, m.sizes.words);
    let mut state = start_state(g, m, &enc);
    let mut terms = Vec::with_capacity(ex.targets.len());
    let mut lambdas = Vec::with_capacity(ex.targets.len());
    for (t, &target) in ex.targets.iter().enumerate() {
        let (next, vars) = step(g, m, &enc, &copy, &state, ex.text_ids[t], &StepOverrides::default())?;
        terms.push(g.nll(vars.dist, target)?);
        lambdas.push(vars.lambda);
        state = next;
    }
    Ok(ExampleLoss {
        loss: g.add_n(&terms)?,
        tokens: terms.len(),
        lambdas,
    })
}
