//! Greedy and beam-search decoding over any step-wise scorer.

use crate::data::{IndexedExample, Vocab, BOS, EOS};
use crate::model::{
    encode_input, start_state, step, CopyMap, DecoderState, EncodedInput, ModelParams, OpInput,
    StepOutput, StepOverrides,
};
use crate::tensor::{Graph, Real};
use crate::train::Prepared;
use crate::{Error, Result};

/// A left-to-right model: from a state and the last emitted token, the
/// next state and log-probabilities of every next token.
pub trait StepScorer {
    type State: Clone;
    fn start(&mut self) -> Result<Self::State>;
    fn next(&mut self, state: &Self::State, last: usize) -> Result<(Self::State, Vec<f64>)>;
}

/// Partial or finished output sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis<S> {
    /// Starts with `BOS`; ends with `EOS` once finished.
    pub tokens: Vec<usize>,
    pub logprob: f64,
    pub state: S,
}

impl<S> Hypothesis<S> {
    pub fn finished(&self) -> bool {
        self.tokens.len() > 1 && self.tokens.last() == Some(&EOS)
    }

    /// Emitted tokens without `BOS` and `EOS`.
    pub fn output(&self) -> &[usize] {
        let end = if self.finished() { self.tokens.len() - 1 } else { self.tokens.len() };
        &self.tokens[1..end]
    }

    /// Generated length including a final `EOS`.
    fn generated(&self) -> usize {
        self.tokens.len() - 1
    }

    pub fn score(&self, length_norm: f64) -> f64 {
        if length_norm == 0.0 {
            self.logprob
        } else {
            self.logprob / (self.generated().max(1) as f64).powf(length_norm)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BeamConfig {
    pub beam: usize,
    pub max_len: usize,
    /// Exponent of the length penalty applied to finished hypotheses.
    pub length_norm: f64,
}

impl Default for BeamConfig {
    fn default() -> Self {
        BeamConfig {
            beam: 5,
            max_len: 40,
            length_norm: 1.0,
        }
    }
}

/// Highest-probability token at each step until `EOS` or `max_len` tokens;
/// ties go to the smallest id.
pub fn greedy<S: StepScorer>(scorer: &mut S, max_len: usize) -> Result<Hypothesis<S::State>> {
    if max_len == 0 {
        return Err(Error::Contract("max_len must be at least 1".into()));
    }
    let mut hyp = Hypothesis {
        tokens: vec![BOS],
        logprob: 0.0,
        state: scorer.start()?,
    };
    for _ in 0..max_len {
        let (state, logp) = scorer.next(&hyp.state, *hyp.tokens.last().expect("nonempty"))?;
        let mut best = 0;
        for (i, &lp) in logp.iter().enumerate() {
            if lp > logp[best] {
                best = i;
            }
        }
        hyp.tokens.push(best);
        hyp.logprob += logp[best];
        hyp.state = state;
        if best == EOS {
            break;
        }
    }
    Ok(hyp)
}

/// Beam search. Each step keeps the `beam` best expansions of all live
/// hypotheses; expansions ending in `EOS` move to the finished pool. The
/// best finished hypothesis under the length penalty wins; if none finished
/// within `max_len`, the best partial one is returned.
pub fn beam_search<S: StepScorer>(scorer: &mut S, cfg: &BeamConfig) -> Result<Hypothesis<S::State>> {
    if cfg.beam == 0 || cfg.max_len == 0 {
        return Err(Error::Contract("beam and max_len must be at least 1".into()));
    }
    let mut live = vec![Hypothesis {
        tokens: vec![BOS],
        logprob: 0.0,
        state: scorer.start()?,
    }];
    let mut finished: Vec<Hypothesis<S::State>> = Vec::new();
    for _ in 0..cfg.max_len {
        let mut expansions = Vec::with_capacity(live.len());
        let mut cands: Vec<(f64, usize, usize)> = Vec::new();
        for (h, hyp) in live.iter().enumerate() {
            let (state, logp) = scorer.next(&hyp.state, *hyp.tokens.last().expect("nonempty"))?;
            for (w, &lp) in logp.iter().enumerate() {
                if lp.is_finite() {
                    cands.push((hyp.logprob + lp, h, w));
                }
            }
            expansions.push(state);
        }
        cands.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut next = Vec::with_capacity(cfg.beam);
        for &(lp, h, w) in cands.iter().take(cfg.beam) {
            let mut tokens = live[h].tokens.clone();
            tokens.push(w);
            let hyp = Hypothesis {
                tokens,
                logprob: lp,
                state: expansions[h].clone(),
            };
            if w == EOS {
                finished.push(hyp);
            } else {
                next.push(hyp);
            }
        }
        live = next;
        if live.is_empty() {
            break;
        }
        // Scores only fall as hypotheses grow, so without a length penalty
        // no live hypothesis can overtake the best finished one.
        if cfg.length_norm == 0.0 {
            let best_done = finished.iter().map(|h| h.logprob).fold(f64::NEG_INFINITY, f64::max);
            let best_live = live.iter().map(|h| h.logprob).fold(f64::NEG_INFINITY, f64::max);
            if best_done >= best_live {
                break;
            }
        }
    }
    let pool = if finished.is_empty() { live } else { finished };
    let mut best: Option<Hypothesis<S::State>> = None;
    for h in pool {
        if best
            .as_ref()
            .is_none_or(|b| h.score(cfg.length_norm) > b.score(cfg.length_norm))
        {
            best = Some(h);
        }
    }
    best.ok_or_else(|| Error::Contract("beam search produced no hypothesis".into()))
}

/// [`StepScorer`] over the neural model for one encoded example. All steps
/// share one graph.
pub struct ModelScorer<'p, 'e, T: Real> {
    pub graph: Graph<'p, T>,
    model: &'p ModelParams<T>,
    enc: EncodedInput,
    copy: CopyMap<'e>,
    overrides: StepOverrides,
    /// Step outputs in call order, when recording.
    pub trace: Option<Vec<StepOutput>>,
}

impl<'p, 'e, T: Real> ModelScorer<'p, 'e, T> {
    pub fn new(
        model: &'p ModelParams<T>,
        ex: &'e IndexedExample,
        ops: &[OpInput],
        overrides: StepOverrides,
    ) -> Result<Self> {
        let mut graph = Graph::new(&model.store);
        let enc = encode_input(&mut graph, model, ex, ops)?;
        Ok(ModelScorer {
            graph,
            model,
            enc,
            copy: CopyMap::of(ex, model.sizes.words),
            overrides,
            trace: None,
        })
    }

    pub fn recording(mut self) -> Self {
        self.trace = Some(Vec::new());
        self
    }

    /// Quantization weights of each scalar result.
    pub fn quant_weights(&self) -> Vec<Vec<f64>> {
        self.enc
            .quant_weights
            .iter()
            .map(|&v| self.graph.value(v).iter().map(|&x| Real::to_f64(x)).collect())
            .collect()
    }
}

impl<T: Real> StepScorer for ModelScorer<'_, '_, T> {
    type State = DecoderState;

    fn start(&mut self) -> Result<DecoderState> {
        Ok(start_state(&mut self.graph, self.model, &self.enc))
    }

    fn next(&mut self, state: &DecoderState, last: usize) -> Result<(DecoderState, Vec<f64>)> {
        let (next, vars) = step(
            &mut self.graph,
            self.model,
            &self.enc,
            &self.copy,
            state,
            last,
            &self.overrides,
        )?;
        let out = vars.output(&self.graph);
        let logp = out.dist.iter().map(|&p| p.ln()).collect();
        if let Some(t) = self.trace.as_mut() {
            t.push(out);
        }
        Ok((next, logp))
    }
}

/// Decodes one example to output tokens (copied OOV values as their text).
pub fn decode_example<T: Real>(
    model: &ModelParams<T>,
    vocab: &Vocab,
    ex: &IndexedExample,
    ops: &[OpInput],
    cfg: &BeamConfig,
) -> Result<Vec<String>> {
    let mut scorer = ModelScorer::new(model, ex, ops, StepOverrides::default())?;
    let hyp = if cfg.beam == 1 {
        greedy(&mut scorer, cfg.max_len)?
    } else {
        beam_search(&mut scorer, cfg)?
    };
    Ok(hyp.output().iter().map(|&id| ex.ext_token(id, vocab).to_string()).collect())
}

/// Decodes every prepared example, fanning out over the available cores.
/// Output order follows input order.
pub fn decode_all<T: Real + Sync>(
    model: &ModelParams<T>,
    vocab: &Vocab,
    data: &[Prepared],
    cfg: &BeamConfig,
) -> Result<Vec<Vec<String>>> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(data.len().max(1));
    let chunk = data.len().div_ceil(workers).max(1);
    std::thread::scope(|s| {
        let handles: Vec<_> = data
            .chunks(chunk)
            .map(|part| {
                s.spawn(move || {
                    part.iter()
                        .map(|p| decode_example(model, vocab, &p.ex, &p.ops, cfg))
                        .collect::<Result<Vec<_>>>()
                })
            })
            .collect();
        let mut out = Vec::with_capacity(data.len());
        for h in handles {
            out.extend(h.join().expect("decode worker panicked")?);
        }
        Ok(out)
    })
}

/// One greedy step as seen by inspection tools.
#[derive(Clone, Debug, PartialEq)]
pub struct TracedStep {
    pub token: String,
    pub output: StepOutput,
}

/// Greedy decode recording every step, including the final `EOS`.
pub fn trace_example<T: Real>(
    model: &ModelParams<T>,
    vocab: &Vocab,
    ex: &IndexedExample,
    ops: &[OpInput],
    max_len: usize,
) -> Result<Vec<TracedStep>> {
    let mut scorer = ModelScorer::new(model, ex, ops, StepOverrides::default())?.recording();
    let hyp = greedy(&mut scorer, max_len)?;
    let trace = scorer.trace.take().unwrap_or_default();
    Ok(hyp.tokens[1..]
        .iter()
        .zip(trace)
        .map(|(&id, output)| TracedStep {
            token: ex.ext_token(id, vocab).to_string(),
            output,
        })
        .collect())
}
