//! Flag-directed decoding.

use std::collections::BTreeSet;

use crate::corpus::{Vocabulary, EOS, PAD};
use crate::error::{Error, Result};
use crate::nmt::{DecoderStepState, InferenceSession, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeConfig {
    pub max_len: usize,
    pub beam_size: usize,
    /// Length-normalization exponent γ: hypotheses compete on `score / len^γ`.
    pub length_norm: f64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            max_len: 64,
            beam_size: 1,
            length_norm: 0.0,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_len == 0 || self.beam_size == 0 || !(self.length_norm >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "decode config needs max_len >= 1, beam_size >= 1, length_norm >= 0; got {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Translation {
    /// Emitted ids, EOS included when generation stopped on it.
    pub tokens: Vec<usize>,
    /// Sum of chosen log-probabilities divided by `len^γ`.
    pub score: f64,
    pub log_prob: f64,
    /// One row of attention weights per emitted token.
    pub attention: Vec<Vec<f64>>,
}

impl Translation {
    pub fn finished(&self) -> bool {
        self.tokens.last() == Some(&EOS)
    }
}

/// Log-softmax with PAD excluded from the support.
fn log_probs(logits: &[f64]) -> Vec<f64> {
    let max = logits
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != PAD)
        .map(|(_, x)| *x)
        .fold(f64::NEG_INFINITY, f64::max);
    let lse = max
        + logits
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != PAD)
            .map(|(_, x)| (x - max).exp())
            .sum::<f64>()
            .ln();
    logits
        .iter()
        .enumerate()
        .map(|(i, x)| if i == PAD { f64::NEG_INFINITY } else { x - lse })
        .collect()
}

/// Index of the maximum; ties go to the lowest index.
fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in xs.iter().enumerate() {
        if *x > xs[best] {
            best = i;
        }
    }
    best
}

fn normalized(log_prob: f64, len: usize, gamma: f64) -> f64 {
    if gamma == 0.0 {
        log_prob
    } else {
        log_prob / (len.max(1) as f64).powf(gamma)
    }
}

/// One-token-at-a-time scorer driven by the decoders.
pub trait StepModel {
    type State: Clone;

    fn initial(&self) -> Self::State;

    /// Logits for the token following `state`, the successor state to be
    /// continued with [`StepModel::advance`], and the step's attention row.
    fn step(&mut self, state: &Self::State) -> Result<(Vec<f64>, Self::State, Vec<f64>)>;

    /// `successor` (from [`StepModel::step`]) after emitting `token`.
    fn advance(&self, successor: &Self::State, token: usize) -> Self::State;
}

impl StepModel for InferenceSession<'_> {
    type State = DecoderStepState;

    fn initial(&self) -> DecoderStepState {
        self.initial_state()
    }

    fn step(&mut self, state: &DecoderStepState) -> Result<(Vec<f64>, DecoderStepState, Vec<f64>)> {
        let (logits, next) = InferenceSession::step(self, state)?;
        let attention = next.attention.clone();
        Ok((logits, next, attention))
    }

    fn advance(&self, successor: &DecoderStepState, token: usize) -> DecoderStepState {
        DecoderStepState {
            prev_token: token,
            ..successor.clone()
        }
    }
}

/// Argmax decoding until EOS or `max_len` tokens.
pub fn greedy_search<M: StepModel>(model: &mut M, cfg: &DecodeConfig) -> Result<Translation> {
    cfg.validate()?;
    let mut state = model.initial();
    let mut tokens = Vec::new();
    let mut attention = Vec::new();
    let mut log_prob = 0.0;
    while tokens.len() < cfg.max_len {
        let (logits, next, att) = model.step(&state)?;
        let lp = log_probs(&logits);
        let tok = argmax(&lp);
        log_prob += lp[tok];
        tokens.push(tok);
        attention.push(att);
        state = model.advance(&next, tok);
        if tok == EOS {
            break;
        }
    }
    Ok(Translation {
        score: normalized(log_prob, tokens.len(), cfg.length_norm),
        tokens,
        log_prob,
        attention,
    })
}

/// Greedy decoding from BOS under flag `tgt_lang`.
pub fn greedy_decode(
    params: &ModelParams,
    src_ids: &[usize],
    tgt_lang: usize,
    cfg: &DecodeConfig,
) -> Result<Translation> {
    cfg.validate()?;
    greedy_search(&mut InferenceSession::new(params, src_ids, tgt_lang)?, cfg)
}

#[derive(Clone)]
struct Hypothesis<S> {
    tokens: Vec<usize>,
    log_prob: f64,
    attention: Vec<Vec<f64>>,
    state: S,
}

impl<S> Hypothesis<S> {
    fn into_translation(self, gamma: f64) -> Translation {
        Translation {
            score: normalized(self.log_prob, self.tokens.len(), gamma),
            tokens: self.tokens,
            log_prob: self.log_prob,
            attention: self.attention,
        }
    }
}

/// Beam search over log-probabilities. Returns at most `beam_size`
/// translations, best first.
///
/// Candidates at each step are ranked by log-probability with ties broken by
/// parent rank then by the parent's own token ranking, so a beam of one
/// follows the greedy path exactly.
pub fn beam_search<M: StepModel>(model: &mut M, cfg: &DecodeConfig) -> Result<Vec<Translation>> {
    cfg.validate()?;
    let k = cfg.beam_size;
    let mut beam = vec![Hypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        attention: Vec::new(),
        state: model.initial(),
    }];
    let mut finished: Vec<Hypothesis<M::State>> = Vec::new();

    for _ in 0..cfg.max_len {
        // (total log-prob, parent rank, position in parent's ranking, token)
        let mut candidates: Vec<(f64, usize, usize, usize)> = Vec::new();
        let mut steps = Vec::with_capacity(beam.len());
        for (rank, hyp) in beam.iter().enumerate() {
            let (logits, next, att) = model.step(&hyp.state)?;
            let lp = log_probs(&logits);
            let mut order: Vec<usize> = (0..lp.len()).filter(|t| *t != PAD).collect();
            order.sort_by(|a, b| lp[*b].total_cmp(&lp[*a]).then(a.cmp(b)));
            for (pos, &tok) in order.iter().take(k).enumerate() {
                candidates.push((hyp.log_prob + lp[tok], rank, pos, tok));
            }
            steps.push((next, att));
        }
        // Rounding is monotone, so within one parent the total order agrees
        // with the per-parent order and ties fall back to it.
        candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

        let mut next_beam = Vec::with_capacity(k);
        for (lp, rank, _, tok) in candidates.into_iter().take(k) {
            let parent = &beam[rank];
            let mut tokens = parent.tokens.clone();
            tokens.push(tok);
            let mut attention = parent.attention.clone();
            attention.push(steps[rank].1.clone());
            let hyp = Hypothesis {
                tokens,
                log_prob: lp,
                attention,
                state: model.advance(&steps[rank].0, tok),
            };
            if tok == EOS {
                finished.push(hyp);
            } else {
                next_beam.push(hyp);
            }
        }
        beam = next_beam;
        if beam.is_empty() {
            break;
        }
        // A finished hypothesis can only be overtaken by an open one when
        // length normalization can raise a longer hypothesis's score.
        if cfg.length_norm == 0.0 && finished.len() >= k {
            let worst_finished = finished
                .iter()
                .map(|h| h.log_prob)
                .fold(f64::INFINITY, f64::min);
            if beam.iter().all(|h| h.log_prob <= worst_finished) {
                break;
            }
        }
    }
    if finished.len() < k {
        finished.extend(beam);
    }
    let gamma = cfg.length_norm;
    let mut out: Vec<Translation> = finished
        .into_iter()
        .map(|h| h.into_translation(gamma))
        .collect();
    out.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.tokens.cmp(&b.tokens))
    });
    out.truncate(k);
    Ok(out)
}

/// Beam search from BOS under flag `tgt_lang`.
pub fn beam_decode(
    params: &ModelParams,
    src_ids: &[usize],
    tgt_lang: usize,
    cfg: &DecodeConfig,
) -> Result<Vec<Translation>> {
    cfg.validate()?;
    beam_search(&mut InferenceSession::new(params, src_ids, tgt_lang)?, cfg)
}

/// Greedy when `beam_size == 1`, otherwise the best beam hypothesis.
pub fn translate(
    params: &ModelParams,
    src_ids: &[usize],
    tgt_lang: usize,
    cfg: &DecodeConfig,
) -> Result<Translation> {
    if cfg.beam_size == 1 {
        greedy_decode(params, src_ids, tgt_lang, cfg)
    } else {
        beam_decode(params, src_ids, tgt_lang, cfg)?
            .into_iter()
            .next()
            .ok_or_else(|| Error::InvalidArgument("beam search produced no hypothesis".into()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlagPurity {
    pub lang: usize,
    /// Emitted tokens (EOS excluded) across all sentences.
    pub tokens: usize,
    pub in_language: usize,
    pub purity: f64,
}

/// For each flag, decodes every source greedily and measures the share of
/// emitted tokens that belong to the flagged language's corpus token set.
pub fn flag_switch_report(
    params: &ModelParams,
    vocab: &Vocabulary,
    sources: &[Vec<usize>],
    flags: &[usize],
    token_sets: &[BTreeSet<String>],
    cfg: &DecodeConfig,
) -> Result<Vec<FlagPurity>> {
    let mut out = Vec::with_capacity(flags.len());
    for &flag in flags {
        let set = token_sets
            .get(flag)
            .filter(|s| !s.is_empty())
            .ok_or_else(|| Error::NoCorpusTokens(flag.to_string()))?;
        let (mut tokens, mut hits) = (0usize, 0usize);
        for src in sources {
            let t = greedy_decode(params, src, flag, cfg)?;
            for tok in vocab.decode(&t.tokens) {
                tokens += 1;
                if set.contains(tok) {
                    hits += 1;
                }
            }
        }
        out.push(FlagPurity {
            lang: flag,
            tokens,
            in_language: hits,
            purity: if tokens == 0 {
                0.0
            } else {
                hits as f64 / tokens as f64
            },
        });
    }
    Ok(out)
}
