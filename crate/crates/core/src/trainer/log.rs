use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::PerplexityReport;
use crate::corpus::LanguageInventory;

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    /// Mean per-token training loss of the batch.
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub step: u64,
    /// `None` for the overall figure, otherwise `(src, tgt)` codes.
    pub pair: Option<(String, String)>,
    pub perplexity: f64,
}

/// Development curve of one training run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    pub evals: Vec<EvalRecord>,
}

impl TrainLog {
    pub(crate) fn record_eval(
        &mut self,
        step: u64,
        report: &PerplexityReport,
        inventory: &LanguageInventory,
    ) {
        let code = |i: usize| {
            inventory
                .get(i)
                .map_or_else(|| i.to_string(), |l| l.code.clone())
        };
        for p in &report.pairs {
            self.evals.push(EvalRecord {
                step,
                pair: Some((code(p.src_lang), code(p.tgt_lang))),
                perplexity: p.perplexity,
            });
        }
        self.evals.push(EvalRecord {
            step,
            pair: None,
            perplexity: report.overall,
        });
    }

    pub fn overall_evals(&self) -> impl Iterator<Item = &EvalRecord> {
        self.evals.iter().filter(|e| e.pair.is_none())
    }

    pub fn best_perplexity(&self) -> Option<f64> {
        self.overall_evals().map(|e| e.perplexity).reduce(f64::min)
    }

    /// `step<TAB>metric<TAB>value[<TAB>pair]`, preceded by `#` provenance
    /// lines. Rows are ordered by step; a step's loss precedes its evals.
    pub fn to_tsv(&self, provenance: &BTreeMap<String, String>) -> String {
        let mut out = String::new();
        for (k, v) in provenance {
            let _ = writeln!(out, "# {k}={v}");
        }
        let mut evals = self.evals.iter().peekable();
        for s in &self.steps {
            let _ = writeln!(out, "{}\tloss\t{}", s.step, s.loss);
            while let Some(e) = evals.next_if(|e| e.step <= s.step) {
                match &e.pair {
                    Some((a, b)) => {
                        let _ = writeln!(out, "{}\tppl\t{}\t{a}-{b}", e.step, e.perplexity);
                    }
                    None => {
                        let _ = writeln!(out, "{}\tppl\t{}", e.step, e.perplexity);
                    }
                }
            }
        }
        out
    }
}
