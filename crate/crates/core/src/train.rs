//! Maximum-likelihood training with AdaDelta.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{encode_example, Example, IndexedExample, Vocab, EOS};
use crate::model::{
    example_loss, prepare_ops, results_as_records, ModelConfig, ModelParams, OpInput, VocabSizes,
};
use crate::ops::{execute_all, OpConfig};
use crate::tensor::{Graph, ParamGrads, ParamStore, Real, Var};
use crate::{Error, Result};

/// Random substreams derived from the one configured seed.
pub const INIT_STREAM: u64 = 0;
pub const SHUFFLE_STREAM: u64 = 1;

pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub ops: OpConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub rho: f64,
    pub eps: f64,
    /// Multiplier on every AdaDelta update.
    pub lr: f64,
    /// Global gradient-norm threshold; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub seed: u64,
    /// Reference texts are cut to this many tokens.
    pub max_text_len: Option<usize>,
    pub min_count: usize,
    /// Also feed operation results to the record encoder as extra records.
    pub results_as_records: bool,
    /// Stop once an epoch's mean per-token loss falls below this.
    pub stop_below: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            ops: OpConfig::default(),
            epochs: 40,
            batch_size: 32,
            rho: 0.95,
            eps: 1e-6,
            lr: 1.0,
            clip_norm: Some(5.0),
            seed: 1,
            max_text_len: None,
            min_count: 1,
            results_as_records: false,
            stop_below: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.rho) || self.eps <= 0.0 || self.lr <= 0.0 {
            return Err(Error::Config("AdaDelta needs 0 <= rho < 1, eps > 0, lr > 0".into()));
        }
        if self.min_count == 0 {
            return Err(Error::Config("min_count must be at least 1".into()));
        }
        if self.max_text_len == Some(0) {
            return Err(Error::Config("max_text_len must be at least 1".into()));
        }
        Ok(())
    }

    pub fn from_toml(s: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&s)
    }
}

/// Seeded initialization of every parameter.
pub fn init_params(config: &TrainConfig, sizes: VocabSizes) -> Result<ModelParams<f32>> {
    let mut m = ModelParams::zeros(config.model, sizes)?;
    m.initialize(&mut rng_for(config.seed, INIT_STREAM));
    Ok(m)
}

/// AdaDelta accumulators, one pair per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaDelta {
    pub rho: f64,
    pub eps: f64,
    pub lr: f64,
    /// Running mean of squared gradients.
    pub sq_grad: Vec<Vec<f64>>,
    /// Running mean of squared updates.
    pub sq_update: Vec<Vec<f64>>,
    /// Tensor updates skipped because of a non-finite gradient.
    pub skipped: usize,
}

impl AdaDelta {
    pub fn new<T: Real>(params: &ParamStore<T>, rho: f64, eps: f64, lr: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, _, t)| vec![0.0; t.len()]).collect();
        AdaDelta {
            rho,
            eps,
            lr,
            sq_grad: zeros.clone(),
            sq_update: zeros,
            skipped: 0,
        }
    }

    /// Applies one update. Parameters without a gradient are left alone.
    pub fn step<T: Real>(&mut self, params: &mut ParamStore<T>, grads: &ParamGrads<T>) {
        let ids: Vec<_> = params.ids().collect();
        for id in ids {
            let Some(g) = grads.get(id) else { continue };
            if g.iter().any(|x| !x.is_finite()) {
                self.skipped += 1;
                continue;
            }
            let (eg, ed) = (&mut self.sq_grad[id.0], &mut self.sq_update[id.0]);
            let p = params.get_mut(id).data_mut();
            for i in 0..p.len() {
                let gi = Real::to_f64(g[i]);
                eg[i] = self.rho * eg[i] + (1.0 - self.rho) * gi * gi;
                let delta = -((ed[i] + self.eps).sqrt() / (eg[i] + self.eps).sqrt()) * gi;
                ed[i] = self.rho * ed[i] + (1.0 - self.rho) * delta * delta;
                p[i] += T::from_f64(self.lr * delta);
            }
        }
    }
}

/// One training example with its operation inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct Prepared {
    pub ex: IndexedExample,
    pub ops: Vec<OpInput>,
}

/// Encodes examples, executes their operations and applies the ablations.
pub fn prepare(examples: &[Example], vocab: &Vocab, cfg: &TrainConfig) -> Result<Vec<Prepared>> {
    examples
        .iter()
        .map(|e| {
            let mut ex = encode_example(e, vocab)?;
            if let Some(cap) = cfg.max_text_len {
                if ex.targets.len() > cap + 1 {
                    ex.targets.truncate(cap);
                    ex.targets.push(EOS);
                    ex.text_ids.truncate(cap + 1);
                    ex.text_ids.push(EOS);
                }
            }
            let results = execute_all(&e.table, &cfg.ops)?;
            if cfg.results_as_records {
                ex = results_as_records(&ex, &results, vocab);
            }
            let ops = prepare_ops(&results, vocab, &cfg.model.ablations)?;
            Ok(Prepared { ex, ops })
        })
        .collect()
}

/// Loss node `(1/N) Σ_k NLL_k` of a batch on a single graph.
pub fn batch_loss_var<T: Real>(g: &mut Graph<'_, T>, model: &ModelParams<T>, batch: &[Prepared]) -> Result<Var> {
    if batch.is_empty() {
        return Err(Error::Contract("empty batch".into()));
    }
    let mut parts = Vec::with_capacity(batch.len());
    for p in batch {
        parts.push(example_loss(g, model, &p.ex, &p.ops)?.loss);
    }
    let total = g.add_n(&parts)?;
    Ok(g.affine(total, T::one() / T::from_f64(batch.len() as f64), T::zero()))
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct BatchStats {
    /// Summed example NLL.
    pub nll: f64,
    pub examples: usize,
    pub tokens: usize,
    /// Probabilities floored before the log.
    pub clamped: usize,
    pub lambda_min: f64,
    pub lambda_max: f64,
}

impl BatchStats {
    fn absorb(&mut self, other: &BatchStats) {
        if self.examples == 0 {
            self.lambda_min = other.lambda_min;
            self.lambda_max = other.lambda_max;
        } else {
            self.lambda_min = self.lambda_min.min(other.lambda_min);
            self.lambda_max = self.lambda_max.max(other.lambda_max);
        }
        self.nll += other.nll;
        self.examples += other.examples;
        self.tokens += other.tokens;
        self.clamped += other.clamped;
    }

    /// Example-averaged loss, the training objective.
    pub fn loss(&self) -> f64 {
        self.nll / self.examples.max(1) as f64
    }

    pub fn token_loss(&self) -> f64 {
        self.nll / self.tokens.max(1) as f64
    }
}

/// Batch loss and its gradient, one graph per example.
pub fn batch_gradients<T: Real>(
    model: &ModelParams<T>,
    batch: &[Prepared],
) -> Result<(BatchStats, ParamGrads<T>)> {
    if batch.is_empty() {
        return Err(Error::Contract("empty batch".into()));
    }
    let mut grads = ParamGrads::new(&model.store);
    let mut stats = BatchStats::default();
    let scale = T::one() / T::from_f64(batch.len() as f64);
    for p in batch {
        let mut g = Graph::new(&model.store);
        let out = example_loss(&mut g, model, &p.ex, &p.ops)?;
        g.backward_into(out.loss, &mut grads, scale)?;
        stats.absorb(&example_stats(&g, &out));
    }
    Ok((stats, grads))
}

fn example_stats<T: Real>(g: &Graph<'_, T>, out: &crate::model::ExampleLoss) -> BatchStats {
    let lambdas: Vec<f64> = out.lambdas.iter().map(|&v| Real::to_f64(g.value(v)[0])).collect();
    BatchStats {
        nll: Real::to_f64(g.scalar(out.loss)),
        examples: 1,
        tokens: out.tokens,
        clamped: g.nll_clamped(),
        lambda_min: lambdas.iter().copied().fold(f64::INFINITY, f64::min),
        lambda_max: lambdas.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    }
}

/// Forward-only statistics over a dataset.
pub fn evaluate_loss<T: Real>(model: &ModelParams<T>, data: &[Prepared]) -> Result<BatchStats> {
    let mut stats = BatchStats::default();
    for p in data {
        let mut g = Graph::new(&model.store);
        let out = example_loss(&mut g, model, &p.ex, &p.ops)?;
        stats.absorb(&example_stats(&g, &out));
    }
    Ok(stats)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    /// 0 is the untrained model.
    pub epoch: usize,
    /// Mean example NLL over the epoch.
    pub loss: f64,
    pub token_loss: f64,
    pub grad_norm: f64,
    pub skipped_updates: usize,
    pub clamped: usize,
    pub lambda_min: f64,
    pub lambda_max: f64,
}

impl EpochLog {
    fn from_stats(epoch: usize, s: &BatchStats, grad_norm: f64, skipped: usize) -> Self {
        EpochLog {
            epoch,
            loss: s.loss(),
            token_loss: s.token_loss(),
            grad_norm,
            skipped_updates: skipped,
            clamped: s.clamped,
            lambda_min: s.lambda_min,
            lambda_max: s.lambda_max,
        }
    }
}

/// Runs `cfg.epochs` epochs of shuffled mini-batch AdaDelta.
///
/// `on_epoch` sees each log entry (epoch 0 first, measured before any
/// update) with the parameters at that point; an error from it aborts.
pub fn train(
    model: &mut ModelParams<f32>,
    data: &[Prepared],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog, &ModelParams<f32>) -> Result<()>,
) -> Result<Vec<EpochLog>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Contract("cannot train on an empty dataset".into()));
    }
    let mut opt = AdaDelta::new(&model.store, cfg.rho, cfg.eps, cfg.lr);
    let mut rng = rng_for(cfg.seed, SHUFFLE_STREAM);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut logs = Vec::with_capacity(cfg.epochs + 1);

    let initial = EpochLog::from_stats(0, &evaluate_loss(model, data)?, 0.0, 0);
    on_epoch(&initial, model)?;
    logs.push(initial);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut stats = BatchStats::default();
        let mut norm_sum = 0.0;
        let mut batches = 0;
        let skipped_before = opt.skipped;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<Prepared> = chunk.iter().map(|&i| data[i].clone()).collect();
            let (s, mut grads) = batch_gradients(model, &batch)?;
            let norm = Real::to_f64(grads.global_norm());
            if let Some(clip) = cfg.clip_norm {
                if norm.is_finite() && norm > clip {
                    grads.scale((clip / norm) as f32);
                }
            }
            opt.step(&mut model.store, &grads);
            stats.absorb(&s);
            norm_sum += norm;
            batches += 1;
        }
        let log = EpochLog::from_stats(epoch, &stats, norm_sum / batches as f64, opt.skipped - skipped_before);
        on_epoch(&log, model)?;
        let done = cfg.stop_below.is_some_and(|t| log.token_loss < t);
        logs.push(log);
        if done {
            break;
        }
    }
    Ok(logs)
}
