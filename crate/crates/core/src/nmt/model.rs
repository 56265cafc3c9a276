//! Forward computations of the flag-conditioned encoder-decoder.
//!
//! Encoder input is `[Λ[flag]] ++ E[src]`; both recurrent directions see the
//! flag at position 0. The target language reaches the decoder only through
//! that row.

use super::params::{Bound, BoundGru, ModelParams};
use crate::autodiff::{Graph, Tensor, Var};
use crate::corpus::ParallelExample;
use crate::error::{Error, Result};

/// Per-position context vectors for one source sentence.
#[derive(Debug, Clone, Copy)]
pub struct EncoderOutput {
    /// `[T+1, 2·d_h]`, row 0 is the flag position.
    pub states: Var,
    /// `states · U_a`, cached for attention.
    pub keys: Var,
    /// Final state of the backward pass (at position 0), `[1, d_h]`.
    pub summary: Var,
    pub positions: usize,
}

fn gru_step(g: &mut Graph<'_>, p: &BoundGru, x: Var, h: Var) -> Result<Var> {
    let gate = |g: &mut Graph<'_>, w: Var, u: Var, b: Var| -> Result<Var> {
        let xw = g.matmul(x, w)?;
        let hu = g.matmul(h, u)?;
        let s = g.add(xw, hu)?;
        let s = g.add(s, b)?;
        Ok(g.sigmoid(s))
    };
    let z = gate(g, p.w_z, p.u_z, p.b_z)?;
    let r = gate(g, p.w_r, p.u_r, p.b_r)?;
    let xw = g.matmul(x, p.w_h)?;
    let rh = g.mul(r, h)?;
    let rhu = g.matmul(rh, p.u_h)?;
    let cand = g.add(xw, rhu)?;
    let cand = g.add(cand, p.b_h)?;
    let cand = g.tanh(cand);
    // (1−z)⊙h + z⊙h̃  ==  h + z⊙(h̃ − h)
    let delta = g.sub(cand, h)?;
    let step = g.mul(z, delta)?;
    g.add(h, step)
}

fn zeros(g: &mut Graph<'_>, n: usize) -> Var {
    g.constant(Tensor::zeros(&[1, n]))
}

pub fn encode(
    g: &mut Graph<'_>,
    p: &ModelParams,
    b: &Bound,
    src_ids: &[usize],
    tgt_lang: usize,
) -> Result<EncoderOutput> {
    if src_ids.is_empty() {
        return Err(Error::InvalidArgument("empty source sequence".into()));
    }
    let cfg = &p.config;
    if tgt_lang >= cfg.lang_count {
        return Err(Error::IndexOutOfRange {
            id: tgt_lang,
            size: cfg.lang_count,
        });
    }
    let mut flag = g.embedding(b.lang_embed, &[tgt_lang])?;
    if let Some(proj) = b.flag_proj {
        flag = g.matmul(flag, proj)?;
    }
    let tokens = g.embedding(b.embed, src_ids)?;
    let mut inputs = vec![flag];
    for i in 0..src_ids.len() {
        inputs.push(g.slice_rows(tokens, i, i + 1)?);
    }

    let dh = cfg.hidden_dim;
    let mut fwd = Vec::with_capacity(inputs.len());
    let mut h = zeros(g, dh);
    for &x in &inputs {
        h = gru_step(g, &b.enc_fwd, x, h)?;
        fwd.push(h);
    }
    let mut bwd = vec![h; inputs.len()];
    let mut h = zeros(g, dh);
    for (t, &x) in inputs.iter().enumerate().rev() {
        h = gru_step(g, &b.enc_bwd, x, h)?;
        bwd[t] = h;
    }
    let rows = fwd
        .iter()
        .zip(&bwd)
        .map(|(f, r)| g.concat_last(&[*f, *r]))
        .collect::<Result<Vec<_>>>()?;
    let states = g.concat_rows(&rows)?;
    let keys = g.matmul(states, b.attn_u)?;
    Ok(EncoderOutput {
        states,
        keys,
        summary: bwd[0],
        positions: inputs.len(),
    })
}

/// Additive attention: `e_j = vᵀ tanh(W_a s + U_a h_j)`, `α = softmax(e)`,
/// `c = Σ α_j h_j`. Returns `(c [1, 2·d_h], α [1, T+1])`.
pub fn attend(
    g: &mut Graph<'_>,
    b: &Bound,
    hidden: Var,
    enc: &EncoderOutput,
    mask: Option<&[bool]>,
) -> Result<(Var, Var)> {
    let q = g.matmul(hidden, b.attn_w)?;
    let e = g.add(enc.keys, q)?;
    let e = g.tanh(e);
    let scores = g.matmul(e, b.attn_v)?;
    let scores = g.reshape(scores, &[1, enc.positions])?;
    let alpha = g.row_softmax(scores, mask)?;
    let ctx = g.matmul(alpha, enc.states)?;
    Ok((ctx, alpha))
}

/// `s₀ = tanh(summary · W_init)`.
pub fn initial_hidden(g: &mut Graph<'_>, b: &Bound, enc: &EncoderOutput) -> Result<Var> {
    let s = g.matmul(enc.summary, b.init_w)?;
    Ok(g.tanh(s))
}

/// One decoder step from embedded previous token `prev` (`[1, d_e]`).
/// Returns `(logits [1, V], next hidden, α)`.
pub fn decoder_step(
    g: &mut Graph<'_>,
    b: &Bound,
    prev: Var,
    hidden: Var,
    enc: &EncoderOutput,
    mask: Option<&[bool]>,
) -> Result<(Var, Var, Var)> {
    let (ctx, alpha) = attend(g, b, hidden, enc, mask)?;
    let x = g.concat_last(&[prev, ctx])?;
    let next = gru_step(g, &b.dec, x, hidden)?;
    let feat = g.concat_last(&[next, ctx])?;
    let logits = g.matmul(feat, b.out_w)?;
    let logits = g.add(logits, b.out_b)?;
    Ok((logits, next, alpha))
}

/// Teacher-forced mean cross-entropy of `example.tgt_ids[1..]`.
pub fn sequence_loss(
    g: &mut Graph<'_>,
    p: &ModelParams,
    b: &Bound,
    example: &ParallelExample,
) -> Result<Var> {
    let tgt = &example.tgt_ids;
    if tgt.len() < 2 {
        return Err(Error::InvalidArgument(
            "target must hold at least 2 tokens".into(),
        ));
    }
    let enc = encode(g, p, b, &example.src_ids, example.tgt_lang)?;
    let mut hidden = initial_hidden(g, b, &enc)?;
    let inputs = g.embedding(b.embed, &tgt[..tgt.len() - 1])?;
    let mut logits = Vec::with_capacity(tgt.len() - 1);
    for t in 0..tgt.len() - 1 {
        let prev = g.slice_rows(inputs, t, t + 1)?;
        let (l, next, _) = decoder_step(g, b, prev, hidden, &enc, None)?;
        logits.push(l);
        hidden = next;
    }
    let logits = g.concat_rows(&logits)?;
    let mask = vec![true; tgt.len() - 1];
    g.masked_cross_entropy(logits, &tgt[1..], &mask)
}

impl ModelParams {
    /// Forward-only loss of one example.
    pub fn loss(&self, example: &ParallelExample) -> Result<f64> {
        let mut g = Graph::new(self.config.precision);
        let b = self.bind(&mut g);
        let l = sequence_loss(&mut g, self, &b, example)?;
        Ok(g.value(l)[0])
    }

    /// Loss and per-tensor gradients (in [`ModelParams::named`] order) of one
    /// example, without touching the stored gradient buffers.
    pub fn loss_and_gradients(&self, example: &ParallelExample) -> Result<(f64, Vec<Vec<f64>>)> {
        let mut g = Graph::new(self.config.precision);
        let b = self.bind(&mut g);
        let l = sequence_loss(&mut g, self, &b, example)?;
        let grads = g.backward(l)?;
        let per_tensor = b
            .vars()
            .iter()
            .zip(self.tensors())
            .map(|(v, t)| {
                grads
                    .get(*v)
                    .map_or_else(|| vec![0.0; t.len()], <[f64]>::to_vec)
            })
            .collect();
        Ok((g.value(l)[0], per_tensor))
    }

    /// Adds `scale ·` the example's gradient into every tensor's grad buffer.
    pub fn accumulate_gradients(&mut self, example: &ParallelExample, scale: f64) -> Result<f64> {
        let (loss, grads) = self.loss_and_gradients(example)?;
        self.add_gradients(&grads, scale);
        Ok(loss)
    }

    pub fn add_gradients(&mut self, grads: &[Vec<f64>], scale: f64) {
        for (t, g) in self.tensors_mut().into_iter().zip(grads) {
            if scale == 1.0 {
                t.accumulate_grad(g);
            } else {
                t.accumulate_grad(&g.iter().map(|x| x * scale).collect::<Vec<_>>());
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Precision;
    use crate::nmt::ModelConfig;
    use approx::assert_abs_diff_eq;

    fn small(seed: u64) -> ModelParams {
        ModelParams::init(
            ModelConfig::new(12, 6, 8, 6, 3).with_precision(Precision::F64),
            seed,
        )
        .unwrap()
    }

    fn example() -> ParallelExample {
        ParallelExample {
            src_lang: 0,
            tgt_lang: 1,
            src_ids: vec![4, 5, 6],
            tgt_ids: vec![2, 7, 8, 3],
        }
    }

    #[test]
    fn encoder_shape_law() {
        let p = small(1);
        let mut g = Graph::new(Precision::F64);
        let b = p.bind(&mut g);
        let enc = encode(&mut g, &p, &b, &[4, 5, 6, 7], 2).unwrap();
        assert_eq!(g.shape(enc.states), &[5, 16]);
        assert!(encode(&mut g, &p, &b, &[], 0).is_err());
        assert!(encode(&mut g, &p, &b, &[4], 3).is_err());
    }

    #[test]
    fn flag_changes_every_context_row() {
        let p = small(2);
        let mut g = Graph::new(Precision::F64);
        let b = p.bind(&mut g);
        let e0 = encode(&mut g, &p, &b, &[4, 5], 0).unwrap();
        let e1 = encode(&mut g, &p, &b, &[4, 5], 1).unwrap();
        let (a, c) = (g.value(e0.states).to_vec(), g.value(e1.states).to_vec());
        for row in 0..3 {
            assert_ne!(a[row * 16..(row + 1) * 16], c[row * 16..(row + 1) * 16]);
        }
    }

    #[test]
    fn zero_parameters_give_zero_contexts() {
        let mut p = small(3);
        for t in p.tensors_mut() {
            t.data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
        let mut g = Graph::new(Precision::F64);
        let b = p.bind(&mut g);
        let enc = encode(&mut g, &p, &b, &[4, 5, 6], 1).unwrap();
        assert!(g.value(enc.states).iter().all(|x| *x == 0.0));
    }

    #[test]
    fn attention_singleton_and_uniform() {
        let mut p = small(4);
        let mut g = Graph::new(Precision::F64);
        let b = p.bind(&mut g);
        let enc = encode(&mut g, &p, &b, &[4, 5], 0).unwrap();
        let s = g.constant(Tensor::new(&[1, 8], vec![0.3; 8]).unwrap());
        let (c, a) = attend(&mut g, &b, s, &enc, Some(&[true, false, false])).unwrap();
        assert_eq!(g.value(a), &[1.0, 0.0, 0.0]);
        assert_eq!(g.value(c), &g.value(enc.states)[..16]);
        drop(g);

        p.attn_v.data_mut().iter_mut().for_each(|x| *x = 0.0);
        let mut g = Graph::new(Precision::F64);
        let b = p.bind(&mut g);
        let enc = encode(&mut g, &p, &b, &[4, 5, 6], 0).unwrap();
        let s = g.constant(Tensor::new(&[1, 8], vec![0.3; 8]).unwrap());
        let (_, a) = attend(&mut g, &b, s, &enc, None).unwrap();
        assert_eq!(g.value(a), &[0.25; 4]);
        let (_, a) = attend(&mut g, &b, s, &enc, Some(&[true, true, false, true])).unwrap();
        for (x, y) in g
            .value(a)
            .iter()
            .zip([1.0 / 3.0, 1.0 / 3.0, 0.0, 1.0 / 3.0])
        {
            assert_abs_diff_eq!(*x, y, epsilon = 1e-15);
        }
        assert!(attend(&mut g, &b, s, &enc, Some(&[false; 4])).is_err());
    }

    #[test]
    fn attention_hand_softmax() {
        // Scores [ln 3, 0] must give weights [0.75, 0.25]. With d_a = 1,
        // v = 2, W_a = 0 and keys chosen so that 2·tanh(key_j) hits the scores.
        let cfg = ModelConfig::new(6, 1, 1, 1, 1).with_precision(Precision::F64);
        let mut p = ModelParams::init(cfg, 0).unwrap();
        p.attn_v.data_mut()[0] = 2.0;
        p.attn_w.data_mut()[0] = 0.0;
        let mut g = Graph::new(Precision::F64);
        let b = p.bind(&mut g);
        let states = g.constant(Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, 0.0]).unwrap());
        let keys = g.constant(Tensor::new(&[2, 1], vec![(3f64.ln() / 2.0).atanh(), 0.0]).unwrap());
        let enc = EncoderOutput {
            states,
            keys,
            summary: states,
            positions: 2,
        };
        let s = g.constant(Tensor::zeros(&[1, 1]));
        let (_, a) = attend(&mut g, &b, s, &enc, None).unwrap();
        assert_abs_diff_eq!(g.value(a)[0], 0.75, epsilon = 1e-12);
        assert_abs_diff_eq!(g.value(a)[1], 0.25, epsilon = 1e-12);
    }

    #[test]
    fn uniform_logits_give_ln_v() {
        let mut p = small(5);
        p.out_w.data_mut().iter_mut().for_each(|x| *x = 0.0);
        let l = p.loss(&example()).unwrap();
        assert_abs_diff_eq!(l, 12f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn loss_requires_two_target_tokens() {
        let p = small(6);
        let mut ex = example();
        ex.tgt_ids = vec![2];
        assert!(p.loss(&ex).is_err());
    }

    #[test]
    fn only_the_used_flag_row_gets_gradient() {
        let p = small(7);
        let (_, grads) = p.loss_and_gradients(&example()).unwrap();
        let lang = &grads[1];
        let d = p.config.lang_embed_dim;
        assert!(lang[d..2 * d].iter().any(|x| *x != 0.0));
        assert!(lang[..d].iter().all(|x| *x == 0.0));
        assert!(lang[2 * d..].iter().all(|x| *x == 0.0));
    }

    #[test]
    fn decoder_step_shape_and_purity() {
        let p = small(8);
        let mut g = Graph::new(Precision::F64);
        let b = p.bind(&mut g);
        let enc = encode(&mut g, &p, &b, &[4, 5], 0).unwrap();
        let h = initial_hidden(&mut g, &b, &enc).unwrap();
        let prev = g.embedding(b.embed, &[2]).unwrap();
        let (l1, h1, _) = decoder_step(&mut g, &b, prev, h, &enc, None).unwrap();
        let (l2, h2, _) = decoder_step(&mut g, &b, prev, h, &enc, None).unwrap();
        assert_eq!(g.shape(l1), &[1, 12]);
        assert_eq!(g.value(l1), g.value(l2));
        assert_eq!(g.value(h1), g.value(h2));
    }
}
