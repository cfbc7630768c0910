//! The operation-guided encoder-decoder.
//!
//! Parameters are laid out `[in, out]` and applied as `x · W`, so every
//! linear layer is a [`Graph::vecmat`](crate::tensor::Graph::vecmat).

mod checkpoint;
mod decoder;
mod encoder;
mod inputs;

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, ArraySpec, Manifest, VocabSpec,
};
pub use decoder::{
    attend, attend_projected, combine_op_contexts, copy_attention, example_loss, gate_contexts,
    generation_gate, start_state, step, CopyMap, DecoderState, ExampleLoss, StepOutput, StepOverrides,
    StepVars,
};
pub use encoder::{
    embed_record, encode_index_result, encode_input, encode_op_args, encode_operation,
    encode_records, gru_step, quantize_scalar, EncodedInput, OpGroup,
};
pub use inputs::{prepare_ops, result_string, results_as_records, ArgIds, OpInput, ResultInput};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::Vocab;
use crate::ops::OpKind;
use crate::tensor::{ParamId, ParamStore, Real, Tensor};
use crate::{Error, Result};

/// Switches that remove parts of the model.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablations {
    /// Drop ARGMAX results before encoding.
    pub no_argmax: bool,
    /// Encode scalar results with a direct affine map instead of the
    /// quantization softmax.
    pub no_quantization: bool,
    /// Pin the context gate at 0.5.
    pub no_gate: bool,
    /// Remove the operation branch; the context is the record context alone.
    pub no_ops: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Word, field and operation-kind embedding width.
    pub word_dim: usize,
    /// Row-index embedding width.
    pub row_dim: usize,
    /// Decoder hidden size; also the width of operation, result, context
    /// and attention hidden vectors.
    pub hidden: usize,
    /// Encoder GRU width per direction; `2 * enc_hidden == hidden`.
    pub enc_hidden: usize,
    /// Number of quantization bins.
    pub quant_bins: usize,
    /// Scalar results are divided by this before quantization.
    pub scalar_scale: f64,
    pub ablations: Ablations,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            word_dim: 256,
            row_dim: 32,
            hidden: 512,
            enc_hidden: 256,
            quant_bins: 5,
            scalar_scale: 1.0,
            ablations: Ablations::default(),
        }
    }
}

impl ModelConfig {
    /// `word/row/hidden` with the encoder at half the hidden width.
    pub fn with_dims(word_dim: usize, row_dim: usize, hidden: usize) -> Self {
        ModelConfig {
            word_dim,
            row_dim,
            hidden,
            enc_hidden: hidden / 2,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.word_dim,
            self.row_dim,
            self.hidden,
            self.enc_hidden,
            self.quant_bins,
        ];
        if dims.contains(&0) {
            return Err(Error::Config("all dimensions must be positive".into()));
        }
        if 2 * self.enc_hidden != self.hidden {
            return Err(Error::Config(format!(
                "record context width 2*{} must equal hidden {}",
                self.enc_hidden, self.hidden
            )));
        }
        if self.quant_bins < 2 {
            return Err(Error::Config("at least two quantization bins".into()));
        }
        if !(self.scalar_scale.is_finite() && self.scalar_scale > 0.0) {
            return Err(Error::Config("scalar_scale must be positive".into()));
        }
        Ok(())
    }

    pub fn record_dim(&self) -> usize {
        self.row_dim + 2 * self.word_dim
    }
}

/// Vocabulary sizes that fix embedding shapes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabSizes {
    pub words: usize,
    pub fields: usize,
    pub rows: usize,
}

impl VocabSizes {
    pub fn of(vocab: &Vocab) -> Self {
        VocabSizes {
            words: vocab.len(),
            fields: vocab.field_count(),
            rows: vocab.row_vocab_size(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GruIds {
    pub wx: ParamId,
    pub wh: ParamId,
    pub bx: ParamId,
    pub bh: ParamId,
}

/// One-layer perceptron scorer: `v · tanh(q·Wq + k·Wk + b)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionIds {
    pub wq: ParamId,
    pub wk: ParamId,
    pub b: ParamId,
    pub v: ParamId,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamIds {
    pub word_emb: ParamId,
    pub field_emb: ParamId,
    pub row_emb: ParamId,
    pub kind_emb: ParamId,
    pub enc_fwd: GruIds,
    pub enc_bwd: GruIds,
    pub bridge_w: ParamId,
    pub bridge_b: ParamId,
    /// One projection per argument slot of a MINUS.
    pub arg_w: [ParamId; 2],
    pub arg_all_w: ParamId,
    pub arg_b: ParamId,
    pub op_w: ParamId,
    pub op_b: ParamId,
    pub quant_w: ParamId,
    pub quant_b: ParamId,
    pub quant_emb: ParamId,
    pub direct_w: ParamId,
    pub direct_b: ParamId,
    pub idx_w: ParamId,
    pub idx_b: ParamId,
    pub att_scl: AttentionIds,
    pub att_idx: AttentionIds,
    pub att_rec: AttentionIds,
    pub att_copy: AttentionIds,
    pub comb_w: ParamId,
    pub comb_b: ParamId,
    pub gate_w: ParamId,
    pub gate_b: ParamId,
    pub dec: GruIds,
    pub out_w1: ParamId,
    pub out_b1: ParamId,
    pub out_w2: ParamId,
    pub out_b2: ParamId,
    pub ptr_wc: ParamId,
    pub ptr_wd: ParamId,
    pub ptr_wy: ParamId,
    pub ptr_b: ParamId,
}

/// Whether a parameter is a bias (initialized to zero) or a weight.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamRole {
    Weight { fan_in: usize, fan_out: usize },
    Bias,
}

pub fn init_std(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// All trainable tensors of the model plus the shapes that produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub config: ModelConfig,
    pub sizes: VocabSizes,
    pub store: ParamStore<T>,
    pub ids: ParamIds,
    roles: Vec<ParamRole>,
}

struct Builder<T> {
    store: ParamStore<T>,
    roles: Vec<ParamRole>,
}

impl<T: Real> Builder<T> {
    fn weight(&mut self, name: &str, fan_in: usize, fan_out: usize) -> ParamId {
        self.push(name, vec![fan_in, fan_out], ParamRole::Weight { fan_in, fan_out })
    }

    /// Weight stored as a flat vector, e.g. the `1 → L` quantization map.
    fn weight_vec(&mut self, name: &str, fan_in: usize, fan_out: usize) -> ParamId {
        self.push(name, vec![fan_in * fan_out], ParamRole::Weight { fan_in, fan_out })
    }

    fn bias(&mut self, name: &str, n: usize) -> ParamId {
        self.push(name, vec![n], ParamRole::Bias)
    }

    fn push(&mut self, name: &str, shape: Vec<usize>, role: ParamRole) -> ParamId {
        self.roles.push(role);
        self.store
            .insert(name, Tensor::zeros(&shape))
            .expect("unique parameter names")
    }

    fn gru(&mut self, prefix: &str, input: usize, hidden: usize) -> GruIds {
        GruIds {
            wx: self.weight(&format!("{prefix}.wx"), input, 3 * hidden),
            wh: self.weight(&format!("{prefix}.wh"), hidden, 3 * hidden),
            bx: self.bias(&format!("{prefix}.bx"), 3 * hidden),
            bh: self.bias(&format!("{prefix}.bh"), 3 * hidden),
        }
    }

    fn attention(&mut self, prefix: &str, query: usize, key: usize, hidden: usize) -> AttentionIds {
        AttentionIds {
            wq: self.weight(&format!("{prefix}.wq"), query, hidden),
            wk: self.weight(&format!("{prefix}.wk"), key, hidden),
            b: self.bias(&format!("{prefix}.b"), hidden),
            v: self.weight_vec(&format!("{prefix}.v"), hidden, 1),
        }
    }
}

impl<T: Real> ModelParams<T> {
    /// Registers every parameter with zero values.
    pub fn zeros(config: ModelConfig, sizes: VocabSizes) -> Result<Self> {
        config.validate()?;
        let c = config;
        let (dw, dr, h, he, l) = (c.word_dim, c.row_dim, c.hidden, c.enc_hidden, c.quant_bins);
        let mut b = Builder {
            store: ParamStore::new(),
            roles: Vec::new(),
        };
        let ids = ParamIds {
            word_emb: b.weight("emb.word", sizes.words, dw),
            field_emb: b.weight("emb.field", sizes.fields, dw),
            row_emb: b.weight("emb.row", sizes.rows, dr),
            kind_emb: b.weight("emb.op_kind", OpKind::COUNT, dw),
            enc_fwd: b.gru("enc.fwd", c.record_dim(), he),
            enc_bwd: b.gru("enc.bwd", c.record_dim(), he),
            bridge_w: b.weight("enc.bridge.w", 2 * he, h),
            bridge_b: b.bias("enc.bridge.b", h),
            arg_w: [b.weight("op.arg.w0", dr, dw), b.weight("op.arg.w1", dr, dw)],
            arg_all_w: b.weight("op.arg.w_all", dr, dw),
            arg_b: b.bias("op.arg.b", dw),
            op_w: b.weight("op.w", 3 * dw, h),
            op_b: b.bias("op.b", h),
            quant_w: b.weight_vec("quant.w", 1, l),
            quant_b: b.bias("quant.b", l),
            quant_emb: b.weight("quant.emb", l, h),
            direct_w: b.weight_vec("scalar.direct.w", 1, h),
            direct_b: b.bias("scalar.direct.b", h),
            idx_w: b.weight("index.w", dr, h),
            idx_b: b.bias("index.b", h),
            att_scl: b.attention("att.scalar", h, h, h),
            att_idx: b.attention("att.index", h, h, h),
            att_rec: b.attention("att.record", h, 2 * he, h),
            att_copy: b.attention("att.copy", 2 * h, 2 * he, h),
            comb_w: b.weight("op_ctx.w", 2 * h, h),
            comb_b: b.bias("op_ctx.b", h),
            gate_w: b.weight("gate.w", h, 1),
            gate_b: b.bias("gate.b", 1),
            dec: b.gru("dec", dw + h, h),
            out_w1: b.weight("out.w1", 2 * h + dw, h),
            out_b1: b.bias("out.b1", h),
            out_w2: b.weight("out.w2", h, sizes.words),
            out_b2: b.bias("out.b2", sizes.words),
            ptr_wc: b.weight("ptr.wc", h, 1),
            ptr_wd: b.weight("ptr.wd", h, 1),
            ptr_wy: b.weight("ptr.wy", dw, 1),
            ptr_b: b.bias("ptr.b", 1),
        };
        Ok(ModelParams {
            config,
            sizes,
            store: b.store,
            ids,
            roles: b.roles,
        })
    }

    /// Registers every parameter and draws weights from `Normal(0, σ²)` with
    /// `σ = sqrt(6 / (fan_in + fan_out))`; biases stay zero.
    pub fn init(config: ModelConfig, sizes: VocabSizes, seed: u64) -> Result<Self> {
        let mut m = Self::zeros(config, sizes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        m.initialize(&mut rng);
        Ok(m)
    }

    pub fn initialize(&mut self, rng: &mut impl Rng) {
        let ids: Vec<ParamId> = self.store.ids().collect();
        for id in ids {
            let data = self.store.get_mut(id).data_mut();
            match self.roles[id.0] {
                ParamRole::Bias => data.fill(T::zero()),
                ParamRole::Weight { fan_in, fan_out } => {
                    let normal = Normal::new(0.0, init_std(fan_in, fan_out)).expect("positive std");
                    for x in data.iter_mut() {
                        *x = T::from_f64(normal.sample(rng));
                    }
                }
            }
        }
    }

    pub fn role(&self, id: ParamId) -> ParamRole {
        self.roles[id.0]
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        ModelParams {
            config: self.config,
            sizes: self.sizes,
            store: self.store.cast(),
            ids: self.ids.clone(),
            roles: self.roles.clone(),
        }
    }

    /// Same parameters under different ablation switches.
    pub fn with_ablations(&self, ablations: Ablations) -> Self {
        let mut m = self.clone();
        m.config.ablations = ablations;
        m
    }
}
