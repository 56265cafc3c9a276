//! Multilingual training loop, held-out perplexity and checkpoints.

mod checkpoint;
mod log;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, OptimizerState, MAGIC, VERSION,
};
pub use log::{EvalRecord, StepRecord, TrainLog};

use crate::autodiff::{clip_grad_norm, sgd_step, AdamConfig, AdamState};
use crate::corpus::{Batcher, LanguageInventory, ParallelExample, Vocabulary};
use crate::error::{Error, Result};
use crate::nmt::ModelParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub clip_norm: f64,
    pub seed: u64,
    /// Evaluate held-out data every this many optimizer steps.
    pub eval_every: usize,
    /// Consecutive non-improving evaluations tolerated before stopping.
    pub patience: usize,
    /// Worker threads for per-example gradients and evaluation. Results are
    /// identical for every thread count.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 16,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            clip_norm: 5.0,
            seed: 0,
            eval_every: 100,
            patience: 5,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("eval_every", self.eval_every),
            ("patience", self.patience),
            ("threads", self.threads),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidArgument(format!("{name} must be positive")));
        }
        if !(self.learning_rate > 0.0) || !(self.clip_norm > 0.0) {
            return Err(Error::InvalidArgument(
                "learning_rate and clip_norm must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn provenance(&self) -> BTreeMap<String, String> {
        let value = serde_json::to_value(self).expect("plain struct");
        value
            .as_object()
            .expect("object")
            .iter()
            .map(|(k, v)| (k.clone(), v.to_string().trim_matches('"').to_string()))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairPerplexity {
    pub src_lang: usize,
    pub tgt_lang: usize,
    pub tokens: usize,
    pub nll: f64,
    pub perplexity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerplexityReport {
    /// Sorted by `(src_lang, tgt_lang)`.
    pub pairs: Vec<PairPerplexity>,
    pub tokens: usize,
    pub nll: f64,
    pub overall: f64,
}

fn run_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    if threads <= 1 {
        return f();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

/// Maps `f` over `items` on up to `threads` workers, returning results in
/// input order.
fn ordered_map<T, R, F>(threads: usize, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    if threads <= 1 {
        items.iter().map(f).collect()
    } else {
        run_pool(threads, || items.par_iter().map(f).collect())
    }
}

/// `exp(total cross-entropy / total predicted tokens)`, per directed pair and
/// overall.
pub fn evaluate_perplexity(
    params: &ModelParams,
    examples: &[ParallelExample],
    threads: usize,
) -> Result<PerplexityReport> {
    if examples.is_empty() {
        return Err(Error::InvalidArgument("no examples to evaluate".into()));
    }
    let losses = ordered_map(threads, examples, |ex| params.loss(ex));
    let mut groups: BTreeMap<(usize, usize), (usize, f64)> = BTreeMap::new();
    let (mut tokens, mut nll) = (0usize, 0.0f64);
    for (ex, loss) in examples.iter().zip(losses) {
        let n = ex.predicted_tokens();
        let total = loss? * n as f64;
        let g = groups.entry((ex.src_lang, ex.tgt_lang)).or_default();
        g.0 += n;
        g.1 += total;
        tokens += n;
        nll += total;
    }
    let pairs = groups
        .into_iter()
        .map(|((s, t), (n, l))| PairPerplexity {
            src_lang: s,
            tgt_lang: t,
            tokens: n,
            nll: l,
            perplexity: (l / n as f64).exp(),
        })
        .collect();
    Ok(PerplexityReport {
        pairs,
        tokens,
        nll,
        overall: (nll / tokens as f64).exp(),
    })
}

/// Everything [`train`] needs besides the examples.
pub struct TrainSetup<'a> {
    pub vocab: &'a Vocabulary,
    pub inventory: &'a LanguageInventory,
    pub provenance: BTreeMap<String, String>,
}

/// Trains `params` and returns the best checkpoint (lowest overall held-out
/// perplexity; the final state when there is no held-out data) and the log.
pub fn train(
    mut params: ModelParams,
    examples: &[ParallelExample],
    heldout: &[ParallelExample],
    config: &TrainConfig,
    setup: &TrainSetup<'_>,
) -> Result<(Checkpoint, TrainLog)> {
    config.validate()?;
    if examples.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let precision = params.config.precision;
    let adam_cfg = AdamConfig {
        lr: config.learning_rate,
        ..AdamConfig::default()
    };
    let mut adam = AdamState::new(&params.tensors());
    let optimizer_state = |adam: &AdamState| match config.optimizer {
        OptimizerKind::Adam => OptimizerState::Adam {
            config: adam_cfg,
            state: adam.clone(),
        },
        OptimizerKind::Sgd => OptimizerState::Sgd {
            lr: config.learning_rate,
        },
    };
    let snapshot = |params: &ModelParams, step: u64, adam: &AdamState| {
        let mut params = params.clone();
        params.zero_grads();
        Checkpoint {
            params,
            vocab: setup.vocab.clone(),
            inventory: setup.inventory.clone(),
            step,
            optimizer: optimizer_state(adam),
            provenance: setup.provenance.clone(),
        }
    };

    let mut log = TrainLog::default();
    let mut batcher = Batcher::new(examples, config.batch_size, config.seed);
    let mut best: Option<(f64, Checkpoint)> = None;
    let mut stale = 0usize;
    let mut step = 0u64;

    'epochs: for _ in 0..config.epochs {
        for batch in batcher.epoch() {
            step += 1;
            params.zero_grads();
            let batch_examples: Vec<ParallelExample> =
                (0..batch.len()).map(|i| batch.example(i)).collect();
            let total: usize = batch_examples
                .iter()
                .map(ParallelExample::predicted_tokens)
                .sum();
            let results = ordered_map(config.threads, &batch_examples, |ex| {
                params.loss_and_gradients(ex)
            });
            let mut loss_sum = 0.0;
            for (ex, r) in batch_examples.iter().zip(results) {
                let (loss, grads) = r?;
                let weight = ex.predicted_tokens() as f64 / total as f64;
                loss_sum += loss * weight;
                params.add_gradients(&grads, weight);
            }
            if !loss_sum.is_finite() {
                return Err(Error::NonFinite(format!("training loss at step {step}")));
            }
            {
                let mut tensors = params.tensors_mut();
                clip_grad_norm(&mut tensors, config.clip_norm);
                match config.optimizer {
                    OptimizerKind::Adam => adam.step(&mut tensors, &adam_cfg, precision),
                    OptimizerKind::Sgd => sgd_step(&mut tensors, config.learning_rate, precision),
                }
            }
            log.steps.push(StepRecord {
                step,
                loss: loss_sum,
            });

            if !heldout.is_empty() && step.is_multiple_of(config.eval_every as u64) {
                let report = evaluate_perplexity(&params, heldout, config.threads)?;
                log.record_eval(step, &report, setup.inventory);
                let improved = best.as_ref().is_none_or(|(b, _)| report.overall < *b);
                if improved {
                    best = Some((report.overall, snapshot(&params, step, &adam)));
                    stale = 0;
                } else {
                    stale += 1;
                    if stale >= config.patience {
                        break 'epochs;
                    }
                }
            }
        }
    }

    let checkpoint = match best {
        Some((_, c)) => c,
        None => snapshot(&params, step, &adam),
    };
    Ok((checkpoint, log))
}
