//! Multilingual GRU encoder-decoder with additive attention and a dedicated
//! language-flag embedding table.

mod model;
mod params;

pub use model::{attend, decoder_step, encode, initial_hidden, sequence_loss, EncoderOutput};
pub use params::{Bound, GruParams, ModelConfig, ModelParams};

use crate::autodiff::{Graph, Tensor};
use crate::corpus::BOS;
use crate::error::{Error, Result};

/// Decoder state carried between inference steps.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderStepState {
    pub hidden: Vec<f64>,
    pub prev_token: usize,
    /// Attention weights of the step that produced this state (empty for the
    /// initial state).
    pub attention: Vec<f64>,
}

/// A source sentence encoded once under one flag, stepped token by token.
pub struct InferenceSession<'p> {
    params: &'p ModelParams,
    graph: Graph<'p>,
    bound: Bound,
    enc: EncoderOutput,
    initial: Vec<f64>,
}

impl<'p> InferenceSession<'p> {
    pub fn new(params: &'p ModelParams, src_ids: &[usize], tgt_lang: usize) -> Result<Self> {
        let mut graph = Graph::new(params.config.precision);
        let bound = params.bind(&mut graph);
        let enc = encode(&mut graph, params, &bound, src_ids, tgt_lang)?;
        let h0 = initial_hidden(&mut graph, &bound, &enc)?;
        let initial = graph.value(h0).to_vec();
        Ok(InferenceSession {
            params,
            graph,
            bound,
            enc,
            initial,
        })
    }

    pub fn source_positions(&self) -> usize {
        self.enc.positions
    }

    pub fn initial_state(&self) -> DecoderStepState {
        DecoderStepState {
            hidden: self.initial.clone(),
            prev_token: BOS,
            attention: Vec::new(),
        }
    }

    /// Logits over the vocabulary for the token following `state.prev_token`,
    /// and the state after consuming it.
    pub fn step(&mut self, state: &DecoderStepState) -> Result<(Vec<f64>, DecoderStepState)> {
        let v = self.params.config.vocab_size;
        if state.prev_token >= v {
            return Err(Error::IndexOutOfRange {
                id: state.prev_token,
                size: v,
            });
        }
        let g = &mut self.graph;
        let hidden = g.constant(Tensor::new(&[1, state.hidden.len()], state.hidden.clone())?);
        let prev = g.embedding(self.bound.embed, &[state.prev_token])?;
        let (logits, next, alpha) = decoder_step(g, &self.bound, prev, hidden, &self.enc, None)?;
        let out = DecoderStepState {
            hidden: g.value(next).to_vec(),
            prev_token: state.prev_token,
            attention: g.value(alpha).to_vec(),
        };
        Ok((g.value(logits).to_vec(), out))
    }

    /// [`InferenceSession::step`] followed by moving to `next_token`.
    pub fn advance(
        &mut self,
        state: &DecoderStepState,
        next_token: usize,
    ) -> Result<(Vec<f64>, DecoderStepState)> {
        let (logits, mut s) = self.step(state)?;
        s.prev_token = next_token;
        Ok((logits, s))
    }
}
