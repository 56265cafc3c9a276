//! Acceptance criteria A1-A9. Prints one PASS/FAIL line per criterion and
//! exits nonzero when any fails. Pass criterion names (`A4`) to run a subset.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use latl::autodiff::{finite_difference_check, Precision, Tensor};
use latl::corpus::{
    build_dataset, encode_pairs, Corpus, LanguageInventory, PairingManifest, ParallelExample, EOS,
    PAD,
};
use latl::langspace::{
    conditional_probabilities, cut_and_score, emit_plot, extract_language_space,
    joint_probabilities, pairwise_distances, purity, squared_distances, tsne_rows, upgma_cluster,
    DistanceMatrix, Metric, TsneConfig,
};
use latl::nmt::{ModelConfig, ModelParams};
use latl::synth::{disjoint_corpus, family_corpus, FamilyShape, SynthConfig};
use latl::trainer::{
    evaluate_perplexity, load_checkpoint, save_checkpoint, train, Checkpoint, TrainConfig,
    TrainLog, TrainSetup,
};
use latl::translator::{
    beam_decode, beam_search, flag_switch_report, greedy_decode, DecodeConfig, StepModel,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect()
}

struct Trained {
    checkpoint: Checkpoint,
    log: TrainLog,
    examples: Vec<ParallelExample>,
    inventory: LanguageInventory,
    corpus: Corpus,
}

fn fit(
    corpus: Corpus,
    inventory: LanguageInventory,
    manifest: &PairingManifest,
    dim: usize,
    tc: &TrainConfig,
) -> Trained {
    let ds = build_dataset(&corpus, &inventory, manifest, 1, 100_000).unwrap();
    let config = ModelConfig::new(ds.vocab.len(), dim, dim, dim, inventory.len());
    let params = ModelParams::init(config, tc.seed).unwrap();
    let setup = TrainSetup {
        vocab: &ds.vocab,
        inventory: &inventory,
        provenance: BTreeMap::new(),
    };
    let (checkpoint, log) = train(params, &ds.examples, &[], tc, &setup).unwrap();
    Trained {
        checkpoint,
        log,
        examples: ds.examples,
        inventory,
        corpus,
    }
}

fn a1() -> Outcome {
    let config = ModelConfig::new(12, 6, 8, 6, 3).with_precision(Precision::F64);
    let example = ParallelExample {
        src_lang: 0,
        tgt_lang: 1,
        src_ids: vec![4, 9, 6, 11],
        tgt_ids: vec![2, 7, 5, 10, 8, EOS],
    };
    let mut params = ModelParams::init(config, 11).unwrap();
    params.accumulate_gradients(&example, 1.0).unwrap();
    let names: Vec<String> = params.named().into_iter().map(|(n, _)| n).collect();
    let mut tensors: Vec<Tensor> = params.tensors().into_iter().cloned().collect();
    let coords: usize = tensors.iter().map(Tensor::len).sum();
    let err = finite_difference_check(&mut tensors, 1e-4, Precision::F64, |ts| {
        let named = names.iter().cloned().zip(ts.iter().cloned()).collect();
        ModelParams::from_named(config, named)?.loss(&example)
    })
    .unwrap();
    ensure(
        err < 1e-3,
        format!("max relative error {err:.2e} over {coords} coordinates (< 1e-3)"),
    )
}

fn a2() -> Outcome {
    let synth = disjoint_corpus(
        1,
        &SynthConfig {
            verses: 32,
            seed: 5,
            ..SynthConfig::default()
        },
    )
    .unwrap();
    let inventory = synth.inventory().unwrap();
    let corpus = Corpus::new(synth.documents().unwrap()).unwrap();
    let manifest = PairingManifest::new(vec![("eng".into(), "t1".into())], &inventory).unwrap();
    let tc = TrainConfig {
        epochs: 500,
        batch_size: 4,
        learning_rate: 1e-3,
        seed: 0,
        ..TrainConfig::default()
    };
    let t = fit(corpus, inventory, &manifest, 32, &tc);
    let params = &t.checkpoint.params;
    let loss = evaluate_perplexity(params, &t.examples, 1)
        .unwrap()
        .overall
        .ln();
    let cfg = DecodeConfig {
        max_len: 16,
        ..DecodeConfig::default()
    };
    let exact = t
        .examples
        .iter()
        .filter(|e| {
            greedy_decode(params, &e.src_ids, e.tgt_lang, &cfg)
                .unwrap()
                .tokens
                == e.tgt_ids[1..]
        })
        .count();
    let share = exact as f64 / t.examples.len() as f64;
    ensure(
        t.examples.len() == 32 && loss < 0.05 && share >= 0.95,
        format!(
            "{} pairs, per-token loss {loss:.4} (< 0.05), exact greedy {exact}/{} (>= 95%)",
            t.examples.len(),
            t.examples.len()
        ),
    )
}

fn a3() -> Outcome {
    let synth = disjoint_corpus(
        4,
        &SynthConfig {
            seed: 3,
            ..SynthConfig::default()
        },
    )
    .unwrap();
    let inventory = synth.inventory().unwrap();
    let corpus = Corpus::new(synth.documents().unwrap()).unwrap();
    let manifest = PairingManifest::star("eng", &inventory).unwrap();
    let tc = TrainConfig {
        epochs: 30,
        batch_size: 16,
        learning_rate: 5e-3,
        seed: 3,
        ..TrainConfig::default()
    };
    let t = fit(corpus, inventory, &manifest, 16, &tc);
    let eng = t.inventory.index_of("eng").unwrap();
    let sources: Vec<Vec<usize>> = t
        .examples
        .iter()
        .filter(|e| e.src_lang == eng)
        .take(20)
        .map(|e| e.src_ids.clone())
        .collect();
    let flags: Vec<usize> = (0..t.inventory.len()).filter(|&l| l != eng).collect();
    let sets = t.corpus.token_sets(&t.inventory).unwrap();
    let report = flag_switch_report(
        &t.checkpoint.params,
        &t.checkpoint.vocab,
        &sources,
        &flags,
        &sets,
        &DecodeConfig::default(),
    )
    .unwrap();
    let worst = report
        .iter()
        .map(|r| r.purity)
        .fold(f64::INFINITY, f64::min);
    let per_flag: Vec<String> = report
        .iter()
        .map(|r| format!("{}={:.3}", t.inventory.code(r.lang), r.purity))
        .collect();
    ensure(
        sources.len() == 20 && worst >= 0.95,
        format!(
            "purity per flag on 20 sources: {} (>= 0.95)",
            per_flag.join(" ")
        ),
    )
}

/// A4 and A5 share one model per seed: star manifest plus every cross pair
/// between families 1 and 2 except the withheld `f1m1 -> f2m1`.
fn family_run(seed: u64) -> Trained {
    let synth = family_corpus(
        &FamilyShape::default(),
        &SynthConfig {
            seed,
            ..SynthConfig::default()
        },
    )
    .unwrap();
    let inventory = synth.inventory().unwrap();
    let corpus = Corpus::new(synth.documents().unwrap()).unwrap();
    let mut pairs = PairingManifest::star("eng", &inventory)
        .unwrap()
        .pairs()
        .to_vec();
    for i in 1..=4 {
        for j in 1..=4 {
            if (i, j) != (1, 1) {
                pairs.push((format!("f1m{i}"), format!("f2m{j}")));
            }
            pairs.push((format!("f2m{j}"), format!("f1m{i}")));
        }
    }
    let manifest = PairingManifest::new(pairs, &inventory).unwrap();
    let tc = TrainConfig {
        epochs: 30,
        batch_size: 16,
        learning_rate: 5e-3,
        seed,
        ..TrainConfig::default()
    };
    fit(corpus, inventory, &manifest, 16, &tc)
}

fn a4(runs: &[Trained]) -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for (seed, t) in runs.iter().enumerate() {
        let space = extract_language_space(&t.checkpoint)
            .unwrap()
            .without(&["eng"])
            .unwrap();
        let d = pairwise_distances(&space, Metric::Cosine).unwrap();
        let (intra, inter) = d.family_means(space.families()).unwrap();
        let score = cut_and_score(&upgma_cluster(&d).unwrap(), 3, space.families(), &d).unwrap();
        ok &= space.len() == 12 && intra < inter && score.purity >= 10.0 / 12.0;
        lines.push(format!(
            "seed {seed}: intra {intra:.3} < inter {inter:.3}, purity {:.3}",
            score.purity
        ));
    }
    ensure(ok, format!("{} (purity >= 10/12)", lines.join("; ")))
}

fn a5(runs: &[Trained]) -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for (seed, t) in runs.iter().enumerate() {
        let withheld = [("f1m1".to_string(), "f2m1".to_string())];
        let trained = t.examples.iter().any(|e| {
            t.inventory.code(e.src_lang) == "f1m1" && t.inventory.code(e.tgt_lang) == "f2m1"
        });
        let held = encode_pairs(&t.corpus, &t.inventory, &withheld, &t.checkpoint.vocab).unwrap();
        let sources: Vec<Vec<usize>> = held.iter().take(20).map(|e| e.src_ids.clone()).collect();
        let flag = t.inventory.index_of("f2m1").unwrap();
        let sets = t.corpus.token_sets(&t.inventory).unwrap();
        let report = flag_switch_report(
            &t.checkpoint.params,
            &t.checkpoint.vocab,
            &sources,
            &[flag],
            &sets,
            &DecodeConfig::default(),
        )
        .unwrap();
        ok &= !trained && report[0].purity >= 0.8;
        lines.push(format!("seed {seed}: {:.3}", report[0].purity));
    }
    ensure(
        ok,
        format!("withheld f1m1->f2m1 purity {} (>= 0.8)", lines.join(", ")),
    )
}

fn a6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut entropy_err, mut sym_err, mut norm_err, mut shift_err) =
        (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for &perp in &[2.0, 5.0, 10.0] {
        let rows = random_rows(&mut rng, 20, 8);
        let (_, h) = conditional_probabilities(&squared_distances(&rows), 20, perp).unwrap();
        entropy_err = h
            .iter()
            .map(|h| (h - perp.log2()).abs())
            .fold(entropy_err, f64::max);
        let (p, _) = joint_probabilities(&rows, perp).unwrap();
        for i in 0..20 {
            for j in 0..20 {
                sym_err = sym_err.max((p[i * 20 + j] - p[j * 20 + i]).abs());
            }
        }
        norm_err = norm_err.max((p.iter().sum::<f64>() - 1.0).abs());
        let shift: Vec<f64> = (0..8).map(|_| rng.random_range(-3.0..3.0)).collect();
        let moved: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| r.iter().zip(&shift).map(|(x, s)| x + s).collect())
            .collect();
        let (q, _) = joint_probabilities(&moved, perp).unwrap();
        shift_err = p
            .iter()
            .zip(&q)
            .map(|(a, b)| (a - b).abs())
            .fold(shift_err, f64::max);
    }
    let mut kls = Vec::new();
    for seed in 0..3 {
        let rows = random_rows(&mut rng, 20, 8);
        let cfg = TsneConfig {
            seed,
            ..TsneConfig::default()
        };
        let initial = tsne_rows(
            &rows,
            &TsneConfig {
                iterations: 0,
                ..cfg
            },
        )
        .unwrap()
        .kl;
        let last = tsne_rows(&rows, &cfg).unwrap().kl;
        kls.push((initial, last));
    }
    let kl_ok = kls.iter().all(|(a, b)| b < a);
    let kl_text: Vec<String> = kls.iter().map(|(a, b)| format!("{a:.3}->{b:.3}")).collect();
    ensure(
        entropy_err <= 1e-5 && sym_err <= 1e-9 && norm_err <= 1e-9 && shift_err <= 1e-12 && kl_ok,
        format!(
            "entropy err {entropy_err:.1e}, P asym {sym_err:.1e}, |sum P - 1| {norm_err:.1e}, shift {shift_err:.1e}, KL {}",
            kl_text.join(" ")
        ),
    )
}

/// Toy decoder over {PAD, UNK, BOS, EOS, a, b}: logits depend only on the
/// first emitted token, and only `a` and `b` are plausible first tokens.
struct Toy {
    first: [f64; 2],
    second: [[f64; 6]; 2],
}

impl StepModel for Toy {
    type State = Vec<usize>;

    fn initial(&self) -> Vec<usize> {
        Vec::new()
    }

    fn step(&mut self, state: &Vec<usize>) -> latl::Result<(Vec<f64>, Vec<usize>, Vec<f64>)> {
        let logits = match state.first() {
            None => vec![0.0, -40.0, -40.0, -40.0, self.first[0], self.first[1]],
            Some(&t) => self.second[t % 2].to_vec(),
        };
        Ok((logits, state.clone(), vec![1.0]))
    }

    fn advance(&self, successor: &Vec<usize>, token: usize) -> Vec<usize> {
        let mut s = successor.clone();
        s.push(token);
        s
    }
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let live: Vec<usize> = (0..logits.len()).filter(|&t| t != PAD).collect();
    let m = live
        .iter()
        .map(|&t| logits[t])
        .fold(f64::NEG_INFINITY, f64::max);
    let z = m + live
        .iter()
        .map(|&t| (logits[t] - m).exp())
        .sum::<f64>()
        .ln();
    logits.iter().map(|l| l - z).collect()
}

fn a7() -> Outcome {
    let cfg = DecodeConfig {
        max_len: 12,
        beam_size: 1,
        length_norm: 0.0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut same = 0;
    for i in 0..100 {
        let v = rng.random_range(6..14);
        let d = rng.random_range(3..7);
        let langs = rng.random_range(1..4);
        let params = ModelParams::init(ModelConfig::new(v, d, d + 1, d, langs), i).unwrap();
        let src: Vec<usize> = (0..rng.random_range(1..6))
            .map(|_| rng.random_range(4..v))
            .collect();
        let flag = rng.random_range(0..langs);
        let g = greedy_decode(&params, &src, flag, &cfg).unwrap();
        let b = beam_decode(&params, &src, flag, &cfg).unwrap();
        if b.len() == 1 && b[0].tokens == g.tokens && b[0].score.to_bits() == g.score.to_bits() {
            same += 1;
        }
    }

    let beam2 = DecodeConfig {
        max_len: 2,
        beam_size: 2,
        length_norm: 0.0,
    };
    let (mut optimal, mut greedy_misses) = (0, 0);
    for _ in 0..200 {
        let mut toy = Toy {
            first: [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
            second: [[0.0; 6]; 2],
        };
        for row in &mut toy.second {
            for x in row.iter_mut().skip(1) {
                *x = rng.random_range(-3.0..3.0);
            }
        }
        // Every sequence of at most two tokens, stopping at EOS.
        let lp1 = log_softmax(&toy.step(&vec![]).unwrap().0);
        let mut best = (f64::NEG_INFINITY, Vec::new());
        for (t1, l1) in lp1.iter().enumerate().skip(1) {
            if t1 == EOS {
                if *l1 > best.0 {
                    best = (*l1, vec![t1]);
                }
                continue;
            }
            let lp2 = log_softmax(&toy.step(&vec![t1]).unwrap().0);
            for (t2, l2) in lp2.iter().enumerate().skip(1) {
                if l1 + l2 > best.0 {
                    best = (l1 + l2, vec![t1, t2]);
                }
            }
        }
        let found = beam_search(&mut toy, &beam2).unwrap();
        if found[0].tokens == best.1 && (found[0].log_prob - best.0).abs() < 1e-12 {
            optimal += 1;
        }
        let greedy = beam_search(
            &mut toy,
            &DecodeConfig {
                beam_size: 1,
                ..beam2
            },
        )
        .unwrap();
        if greedy[0].tokens != best.1 {
            greedy_misses += 1;
        }
    }
    ensure(
        same == 100 && optimal == 200 && greedy_misses > 0,
        format!("beam(1) = greedy on {same}/100 models; beam(2) optimal on {optimal}/200 toys (greedy misses {greedy_misses})"),
    )
}

fn a8() -> Outcome {
    let synth = disjoint_corpus(
        3,
        &SynthConfig {
            verses: 16,
            seed: 8,
            ..SynthConfig::default()
        },
    )
    .unwrap();
    let inventory = synth.inventory().unwrap();
    let manifest = PairingManifest::star("eng", &inventory).unwrap();
    let run = |threads: usize| {
        let corpus = Corpus::new(synth.documents().unwrap()).unwrap();
        let tc = TrainConfig {
            epochs: 3,
            batch_size: 8,
            learning_rate: 1e-2,
            seed: 8,
            threads,
            ..TrainConfig::default()
        };
        fit(corpus, inventory.clone(), &manifest, 8, &tc)
    };
    let (a, b, c) = (run(1), run(1), run(3));
    let logs_equal = a.log == b.log && a.log == c.log && !a.log.steps.is_empty();
    let params_equal = a.checkpoint.params == c.checkpoint.params;

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.latl");
    save_checkpoint(&path, &a.checkpoint).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    let ulp_equal = a.examples.iter().all(|e| {
        a.checkpoint.params.loss(e).unwrap().to_bits() == loaded.params.loss(e).unwrap().to_bits()
    });
    let bytes_equal = loaded.to_bytes().unwrap() == std::fs::read(&path).unwrap();

    let space = extract_language_space(&loaded).unwrap();
    let prov = BTreeMap::from([("seed".to_string(), "8".to_string())]);
    let cfg = TsneConfig {
        perplexity: 2.0,
        iterations: 300,
        seed: 8,
        ..TsneConfig::default()
    };
    for stem in ["x", "y"] {
        let proj = tsne_rows(space.matrix(), &cfg).unwrap();
        emit_plot(
            &proj,
            space.codes(),
            space.families(),
            10,
            &dir.path().join(stem),
            &prov,
        )
        .unwrap();
    }
    let artifacts_equal = ["tsv", "svg"].iter().all(|ext| {
        std::fs::read(dir.path().join(format!("x.{ext}"))).unwrap()
            == std::fs::read(dir.path().join(format!("y.{ext}"))).unwrap()
    });
    ensure(
        logs_equal && params_equal && ulp_equal && bytes_equal && artifacts_equal,
        format!(
            "train log identical (1, 1, 3 threads): {logs_equal}; params identical: {params_equal}; \
             reloaded loss 0 ulp: {ulp_equal}; checkpoint bytes stable: {bytes_equal}; plot artifacts identical: {artifacts_equal}"
        ),
    )
}

fn a9() -> Outcome {
    let d = DistanceMatrix::from_rows(
        vec![
            vec![0.0, 2.0, 10.0, 10.0],
            vec![2.0, 0.0, 10.0, 10.0],
            vec![10.0, 10.0, 0.0, 2.0],
            vec![10.0, 10.0, 2.0, 0.0],
        ],
        Metric::Euclidean,
    )
    .unwrap();
    let tree = upgma_cluster(&d).unwrap();
    let heights: Vec<f64> = tree.merges().iter().map(|m| m.height).collect();
    let hand = heights == [1.0, 1.0, 5.0];

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut recovered = 0;
    let trials = 50;
    for _ in 0..trials {
        let k = rng.random_range(2..5);
        let n = rng.random_range(k * 2..k * 5);
        let block: Vec<usize> = (0..n).map(|i| i % k).collect();
        let mut rows = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in i + 1..n {
                let v = if block[i] == block[j] {
                    rng.random_range(0.1..1.0)
                } else {
                    rng.random_range(2.0..3.0)
                };
                rows[i][j] = v;
                rows[j][i] = v;
            }
        }
        let d = DistanceMatrix::from_rows(rows, Metric::Euclidean).unwrap();
        let labels: Vec<String> = block.iter().map(|b| format!("b{b}")).collect();
        let assignment = upgma_cluster(&d).unwrap().cut(k).unwrap();
        if purity(&assignment, &labels).unwrap() == 1.0 {
            recovered += 1;
        }
    }
    ensure(
        hand && recovered == trials,
        format!(
            "4-leaf heights {heights:?} (expect [1, 1, 5]); blocks recovered {recovered}/{trials}"
        ),
    )
}

fn main() -> ExitCode {
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let wanted = |name: &str| filter.is_empty() || filter.iter().any(|f| f == name);

    let mut runs: Vec<Trained> = Vec::new();
    let family = |runs: &mut Vec<Trained>| {
        if runs.is_empty() {
            runs.extend((0..3).map(family_run));
        }
    };
    let mut failed = 0;
    let names = ["A1", "A2", "A3", "A4", "A5", "A6", "A7", "A8", "A9"];
    for name in names.into_iter().filter(|n| wanted(n)) {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(|| match name {
            "A1" => a1(),
            "A2" => a2(),
            "A3" => a3(),
            "A4" => {
                family(&mut runs);
                a4(&runs)
            }
            "A5" => {
                family(&mut runs);
                a5(&runs)
            }
            "A6" => a6(),
            "A7" => a7(),
            "A8" => a8(),
            _ => a9(),
        }))
        .unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("{name} PASS ({secs:.1}s) {detail}"),
            Err(detail) => {
                failed += 1;
                println!("{name} FAIL ({secs:.1}s) {detail}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
