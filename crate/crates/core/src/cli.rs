use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use latl::autodiff::Precision;
use latl::corpus::{
    build_dataset, detokenize, encode_pairs, tokenize, Corpus, LanguageInventory, PairingManifest,
    ParallelExample, Vocabulary,
};
use latl::langspace::{
    cut_and_score, emit_plot, extract_language_space, pairwise_distances, parse_plot_tsv,
    render_plot_tsv, tsne_project, upgma_cluster, LanguageSpace, Metric, TsneConfig,
};
use latl::nmt::{ModelConfig, ModelParams};
use latl::synth::{disjoint_corpus, family_corpus, FamilyShape, SynthConfig};
use latl::trainer::{
    evaluate_perplexity, load_checkpoint, save_checkpoint, train, OptimizerKind, TrainConfig,
    TrainSetup,
};
use latl::translator::{translate, DecodeConfig};

#[derive(Debug, Parser)]
#[command(
    name = "latl",
    version,
    about = "Flag-directed multilingual NMT and language-space analysis"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Seed for every random choice [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; outputs do not depend on this [default: 1]
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Align a verse corpus, build the vocabulary and encode examples
    Prepare(PrepareArgs),
    /// Train a model on a prepared dataset
    Train(TrainArgs),
    /// Translate `tgt_lang<TAB>text` lines
    Translate(TranslateArgs),
    /// Report per-pair perplexity of a model
    Eval(EvalArgs),
    /// Analyse the learned language embeddings
    #[command(subcommand)]
    Langspace(LangspaceCommand),
    /// Write a synthetic verse corpus and inventory
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    #[command(flatten)]
    common: Common,
    /// JSON run manifest; flags override its fields
    #[arg(long)]
    run: Option<PathBuf>,
    /// Directory holding `<lang>.txt` verse files
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Inventory TSV `lang<TAB>family`
    #[arg(long)]
    inventory: Option<PathBuf>,
    /// Pairing manifest TSV `src<TAB>tgt`
    #[arg(long, conflicts_with = "star")]
    manifest: Option<PathBuf>,
    /// Pair this pivot with every other language in both directions
    #[arg(long)]
    star: Option<String>,
    /// Withhold `src:tgt` from training and encode it as held-out data
    #[arg(long = "heldout-pair")]
    heldout_pairs: Vec<String>,
    #[arg(long)]
    min_freq: Option<usize>,
    #[arg(long)]
    max_vocab: Option<usize>,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    run: Option<PathBuf>,
    /// Directory written by `prepare`
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    attention_dim: Option<usize>,
    /// Flag embedding width; differs from embed-dim only with --flag-projection
    #[arg(long)]
    lang_embed_dim: Option<usize>,
    #[arg(long)]
    flag_projection: bool,
    #[arg(long, value_enum)]
    precision: Option<PrecisionArg>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long = "lr")]
    learning_rate: Option<f64>,
    #[arg(long, value_enum)]
    optimizer: Option<OptimizerArg>,
    #[arg(long)]
    clip_norm: Option<f64>,
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    /// Output directory for `model.latl` and `train_log.tsv`
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TranslateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    model: PathBuf,
    /// Input file, `-` for stdin
    #[arg(long, default_value = "-")]
    input: PathBuf,
    #[arg(long, default_value_t = 1)]
    beam: usize,
    #[arg(long, default_value_t = 64)]
    max_len: usize,
    /// Length-normalization exponent
    #[arg(long, default_value_t = 0.0)]
    length_norm: f64,
    /// Output file, `-` for stdout
    #[arg(long, default_value = "-")]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Split {
    Train,
    Heldout,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    model: PathBuf,
    /// Directory written by `prepare`
    #[arg(long, required_unless_present = "examples")]
    data: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Split::Heldout)]
    split: Split,
    /// Encoded examples file; overrides --data
    #[arg(long)]
    examples: Option<PathBuf>,
    /// Also write the report here
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SpaceInput {
    /// Language-space TSV written by `langspace extract`
    #[arg(long, required_unless_present = "model", conflicts_with = "model")]
    space: Option<PathBuf>,
    /// Read the space straight from a checkpoint
    #[arg(long)]
    model: Option<PathBuf>,
    /// Drop these languages (for example the pivot)
    #[arg(long)]
    exclude: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum LangspaceCommand {
    /// Write the flag table as `lang<TAB>family<TAB>v1..vd`
    Extract {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        exclude: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// t-SNE projection to two dimensions
    Project {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        input: SpaceInput,
        #[arg(long, default_value_t = 5.0)]
        perplexity: f64,
        #[arg(long, default_value_t = 1000)]
        iterations: usize,
        #[arg(long, default_value_t = 100.0)]
        learning_rate: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// UPGMA tree, k-cut and purity against family labels
    Cluster {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        input: SpaceInput,
        #[arg(long, value_enum, default_value_t = MetricArg::Cosine)]
        metric: MetricArg,
        #[arg(long, default_value_t = 3)]
        k: usize,
        /// Write the Newick tree here
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Scatter plot (TSV and SVG) from a projection TSV
    Plot {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        projection: PathBuf,
        #[arg(long, default_value_t = 10)]
        top_k: usize,
        /// Output path; `.tsv` and `.svg` are written next to it
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SynthKind {
    Families,
    Disjoint,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_enum, default_value_t = SynthKind::Families)]
    kind: SynthKind,
    /// Target languages for `disjoint`
    #[arg(long, default_value_t = 4)]
    targets: usize,
    #[arg(long, default_value_t = 3)]
    families: usize,
    #[arg(long, default_value_t = 4)]
    members: usize,
    #[arg(long, default_value_t = 24)]
    concepts: usize,
    #[arg(long, default_value_t = 64)]
    verses: usize,
    #[arg(long, default_value_t = 3)]
    min_len: usize,
    #[arg(long, default_value_t = 6)]
    max_len: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PrecisionArg {
    F32,
    F64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OptimizerArg {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MetricArg {
    Cosine,
    Euclidean,
}

/// Optional JSON file with the same fields as the `prepare`/`train` flags.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunManifest {
    corpus: Option<PathBuf>,
    inventory: Option<PathBuf>,
    manifest: Option<PathBuf>,
    star: Option<String>,
    heldout_pairs: Option<Vec<String>>,
    min_freq: Option<usize>,
    max_vocab: Option<usize>,
    data: Option<PathBuf>,
    embed_dim: Option<usize>,
    hidden_dim: Option<usize>,
    attention_dim: Option<usize>,
    lang_embed_dim: Option<usize>,
    flag_projection: Option<bool>,
    precision: Option<Precision>,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    learning_rate: Option<f64>,
    optimizer: Option<OptimizerKind>,
    clip_norm: Option<f64>,
    eval_every: Option<usize>,
    patience: Option<usize>,
    seed: Option<u64>,
    threads: Option<usize>,
}

impl RunManifest {
    fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(RunManifest::default());
        };
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading run manifest {}", path.display()))?;
        serde_json::from_str(&text)
            .with_context(|| format!("parsing run manifest {}", path.display()))
    }
}

type Provenance = BTreeMap<String, String>;

fn show(p: &Provenance) {
    for (k, v) in p {
        eprintln!("# {k}={v}");
    }
}

fn header(p: &Provenance) -> String {
    p.iter().map(|(k, v)| format!("# {k}={v}\n")).collect()
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    fs::write(path, body).with_context(|| format!("writing {}", path.display()))
}

fn provenance(command: &str, common: &Common) -> Provenance {
    BTreeMap::from([
        ("command".to_string(), command.to_string()),
        ("seed".to_string(), common.seed.unwrap_or(0).to_string()),
    ])
}

fn parse_pair(s: &str) -> Result<(String, String)> {
    let (a, b) = s
        .split_once(':')
        .or_else(|| s.split_once('-'))
        .ok_or_else(|| anyhow!("held-out pair `{s}` must look like `src:tgt`"))?;
    Ok((a.to_string(), b.to_string()))
}

/// Files of a prepared dataset directory.
struct DataDir {
    vocab: Vocabulary,
    inventory: LanguageInventory,
    train: Vec<ParallelExample>,
    heldout: Vec<ParallelExample>,
}

fn vocab_file(vocab: &Vocabulary) -> String {
    vocab
        .tokens()
        .iter()
        .enumerate()
        .map(|(i, t)| format!("{i}\t{t}\n"))
        .collect()
}

fn read_vocab(path: &Path) -> Result<Vocabulary> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut tokens = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.starts_with('#') || line.is_empty() {
            continue;
        }
        let (id, tok) = line
            .split_once('\t')
            .ok_or_else(|| anyhow!("{}:{}: expected `id<TAB>token`", path.display(), n + 1))?;
        if id.parse::<usize>().ok() != Some(tokens.len()) {
            bail!(
                "{}:{}: ids must be dense and ascending",
                path.display(),
                n + 1
            );
        }
        tokens.push(tok.to_string());
    }
    Ok(Vocabulary::from_tokens(tokens)?)
}

fn examples_file(examples: &[ParallelExample]) -> String {
    examples.iter().map(|e| e.to_tsv_line() + "\n").collect()
}

fn read_examples(path: &Path) -> Result<Vec<ParallelExample>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.starts_with('#') && !l.is_empty())
        .map(|(n, l)| {
            ParallelExample::from_tsv_line(l)
                .with_context(|| format!("{}:{}", path.display(), n + 1))
        })
        .collect()
}

impl DataDir {
    fn load(dir: &Path) -> Result<Self> {
        let heldout_path = dir.join("heldout.tsv");
        Ok(DataDir {
            vocab: read_vocab(&dir.join("vocab.tsv"))?,
            inventory: LanguageInventory::load(dir.join("inventory.tsv"))?,
            train: read_examples(&dir.join("train.tsv"))?,
            heldout: if heldout_path.exists() {
                read_examples(&heldout_path)?
            } else {
                Vec::new()
            },
        })
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Prepare(a) => prepare(a),
        Command::Train(a) => train_cmd(a),
        Command::Translate(a) => translate_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Langspace(c) => langspace_cmd(c),
        Command::Synth(a) => synth_cmd(a),
    }
}

fn prepare(a: PrepareArgs) -> Result<()> {
    let run = RunManifest::load(a.run.as_deref())?;
    let corpus_dir = a
        .corpus
        .or(run.corpus)
        .ok_or_else(|| anyhow!("--corpus is required"))?;
    let inventory_path = a
        .inventory
        .or(run.inventory)
        .ok_or_else(|| anyhow!("--inventory is required"))?;
    let star = a.star.or(run.star);
    let manifest_path = if star.is_some() {
        None
    } else {
        a.manifest.or(run.manifest)
    };
    let heldout_specs = if a.heldout_pairs.is_empty() {
        run.heldout_pairs.unwrap_or_default()
    } else {
        a.heldout_pairs
    };
    let min_freq = a.min_freq.or(run.min_freq).unwrap_or(1);
    let max_vocab = a.max_vocab.or(run.max_vocab).unwrap_or(50_000);
    let common = Common {
        seed: a.common.seed.or(run.seed),
        threads: a.common.threads.or(run.threads),
    };

    let mut prov = provenance("prepare", &common);
    prov.insert("corpus".into(), corpus_dir.display().to_string());
    prov.insert("inventory".into(), inventory_path.display().to_string());
    match (&star, &manifest_path) {
        (Some(s), _) => prov.insert("star".into(), s.clone()),
        (None, Some(m)) => prov.insert("manifest".into(), m.display().to_string()),
        (None, None) => bail!("either --manifest or --star is required"),
    };
    prov.insert("heldout_pairs".into(), heldout_specs.join(","));
    prov.insert("min_freq".into(), min_freq.to_string());
    prov.insert("max_vocab".into(), max_vocab.to_string());
    show(&prov);

    let inventory = LanguageInventory::load(&inventory_path)?;
    let corpus = Corpus::load_dir(&corpus_dir, &inventory)?;
    let full = match (&star, &manifest_path) {
        (Some(s), _) => PairingManifest::star(s, &inventory)?,
        (_, Some(m)) => PairingManifest::load(m, &inventory)?,
        _ => unreachable!("checked above"),
    };
    let heldout_pairs = heldout_specs
        .iter()
        .map(|s| parse_pair(s))
        .collect::<Result<Vec<_>>>()?;
    for (s, t) in &heldout_pairs {
        inventory.index_of(s)?;
        inventory.index_of(t)?;
    }
    let kept: Vec<(String, String)> = full
        .pairs()
        .iter()
        .filter(|p| !heldout_pairs.contains(p))
        .cloned()
        .collect();
    let manifest = PairingManifest::new(kept, &inventory)?;
    let ds = build_dataset(&corpus, &inventory, &manifest, min_freq, max_vocab)?;
    let heldout = encode_pairs(&corpus, &inventory, &heldout_pairs, &ds.vocab)?;

    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let head = header(&prov);
    write_file(
        &a.out.join("vocab.tsv"),
        &(head.clone() + &vocab_file(&ds.vocab)),
    )?;
    write_file(
        &a.out.join("train.tsv"),
        &(head.clone() + &examples_file(&ds.examples)),
    )?;
    write_file(
        &a.out.join("heldout.tsv"),
        &(head.clone() + &examples_file(&heldout)),
    )?;
    write_file(
        &a.out.join("inventory.tsv"),
        &(head.clone() + &inventory.to_tsv()),
    )?;
    write_file(
        &a.out.join("manifest.tsv"),
        &(head.clone() + &manifest.to_tsv()),
    )?;
    let mut sets = head;
    for (lang, set) in inventory
        .languages()
        .iter()
        .zip(corpus.token_sets(&inventory)?)
    {
        let toks: Vec<&str> = set.iter().map(String::as_str).collect();
        let _ = writeln!(sets, "{}\t{}", lang.code, toks.join(" "));
    }
    write_file(&a.out.join("token_sets.tsv"), &sets)?;

    println!("languages\t{}", ds.stats.languages);
    println!("pairs\t{}", ds.stats.pairs);
    println!("examples\t{}", ds.stats.examples);
    println!("heldout_examples\t{}", heldout.len());
    println!("vocab_size\t{}", ds.stats.vocab_size);
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let run = RunManifest::load(a.run.as_deref())?;
    let data_dir = a
        .data
        .or(run.data)
        .ok_or_else(|| anyhow!("--data is required"))?;
    let data = DataDir::load(&data_dir)?;

    let embed_dim = a.embed_dim.or(run.embed_dim).unwrap_or(32);
    let mut model_cfg = ModelConfig::new(
        data.vocab.len(),
        embed_dim,
        a.hidden_dim.or(run.hidden_dim).unwrap_or(32),
        a.attention_dim.or(run.attention_dim).unwrap_or(32),
        data.inventory.len(),
    );
    model_cfg.flag_projection = a.flag_projection || run.flag_projection.unwrap_or(false);
    model_cfg.lang_embed_dim = a.lang_embed_dim.or(run.lang_embed_dim).unwrap_or(embed_dim);
    model_cfg.precision = match a.precision {
        Some(PrecisionArg::F32) => Precision::F32,
        Some(PrecisionArg::F64) => Precision::F64,
        None => run.precision.unwrap_or_default(),
    };
    let defaults = TrainConfig::default();
    let train_cfg = TrainConfig {
        epochs: a.epochs.or(run.epochs).unwrap_or(defaults.epochs),
        batch_size: a
            .batch_size
            .or(run.batch_size)
            .unwrap_or(defaults.batch_size),
        learning_rate: a
            .learning_rate
            .or(run.learning_rate)
            .unwrap_or(defaults.learning_rate),
        optimizer: match a.optimizer {
            Some(OptimizerArg::Sgd) => OptimizerKind::Sgd,
            Some(OptimizerArg::Adam) => OptimizerKind::Adam,
            None => run.optimizer.unwrap_or(defaults.optimizer),
        },
        clip_norm: a.clip_norm.or(run.clip_norm).unwrap_or(defaults.clip_norm),
        seed: a.common.seed.or(run.seed).unwrap_or(defaults.seed),
        eval_every: a
            .eval_every
            .or(run.eval_every)
            .unwrap_or(defaults.eval_every),
        patience: a.patience.or(run.patience).unwrap_or(defaults.patience),
        threads: a.common.threads.or(run.threads).unwrap_or(defaults.threads),
    };
    model_cfg.validate()?;
    train_cfg.validate()?;

    let mut prov = train_cfg.provenance();
    prov.insert("command".into(), "train".into());
    prov.insert("data".into(), data_dir.display().to_string());
    let model_json = serde_json::to_value(model_cfg)?;
    for (k, v) in model_json
        .as_object()
        .expect("struct serializes to an object")
    {
        prov.insert(k.clone(), v.to_string().trim_matches('"').to_string());
    }
    // Thread count never changes results, so it stays out of the artifacts.
    let threads = prov.remove("threads");
    show(&prov);
    if let Some(t) = threads {
        eprintln!("# threads={t}");
    }

    let params = ModelParams::init(model_cfg, train_cfg.seed)?;
    let setup = TrainSetup {
        vocab: &data.vocab,
        inventory: &data.inventory,
        provenance: prov.clone(),
    };
    let (checkpoint, log) = train(params, &data.train, &data.heldout, &train_cfg, &setup)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    save_checkpoint(a.out.join("model.latl"), &checkpoint)?;
    write_file(&a.out.join("train_log.tsv"), &log.to_tsv(&prov))?;

    println!("steps\t{}", log.steps.len());
    if let Some(last) = log.steps.last() {
        println!("final_loss\t{}", last.loss);
    }
    println!("checkpoint_step\t{}", checkpoint.step);
    if let Some(best) = log.best_perplexity() {
        println!("best_heldout_perplexity\t{best}");
    }
    Ok(())
}

fn translate_cmd(a: TranslateArgs) -> Result<()> {
    let cfg = DecodeConfig {
        max_len: a.max_len,
        beam_size: a.beam,
        length_norm: a.length_norm,
    };
    cfg.validate()?;
    let mut prov = provenance("translate", &a.common);
    prov.insert("model".into(), a.model.display().to_string());
    prov.insert("beam".into(), a.beam.to_string());
    prov.insert("max_len".into(), a.max_len.to_string());
    prov.insert("length_norm".into(), a.length_norm.to_string());
    show(&prov);

    let ckpt = load_checkpoint(&a.model)?;
    let reader: Box<dyn BufRead> = if a.input.as_os_str() == "-" {
        Box::new(BufReader::new(io::stdin()))
    } else {
        let f =
            fs::File::open(&a.input).with_context(|| format!("opening {}", a.input.display()))?;
        Box::new(BufReader::new(f))
    };
    let mut out = String::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line.context("reading input")?;
        if line.trim().is_empty() {
            continue;
        }
        let (lang, text) = line
            .split_once('\t')
            .ok_or_else(|| anyhow!("input line {}: expected `tgt_lang<TAB>text`", n + 1))?;
        let flag = ckpt.inventory.index_of(lang)?;
        let src = ckpt.vocab.encode(&tokenize(text));
        if src.is_empty() {
            bail!("input line {}: empty source text", n + 1);
        }
        let t = translate(&ckpt.params, &src, flag, &cfg)?;
        let _ = writeln!(
            out,
            "{}\t{}",
            detokenize(&ckpt.vocab.decode(&t.tokens)),
            t.score
        );
    }
    if a.out.as_os_str() == "-" {
        io::stdout()
            .write_all(out.as_bytes())
            .context("writing stdout")?;
    } else {
        write_file(&a.out, &out)?;
    }
    Ok(())
}

fn eval_cmd(a: EvalArgs) -> Result<()> {
    let mut prov = provenance("eval", &a.common);
    prov.insert("model".into(), a.model.display().to_string());
    let ckpt = load_checkpoint(&a.model)?;
    let examples = match (&a.examples, &a.data) {
        (Some(path), _) => {
            prov.insert("examples".into(), path.display().to_string());
            read_examples(path)?
        }
        (None, Some(dir)) => {
            prov.insert("data".into(), dir.display().to_string());
            let split = match a.split {
                Split::Train => "train",
                Split::Heldout => "heldout",
            };
            prov.insert("split".into(), split.into());
            read_examples(&dir.join(format!("{split}.tsv")))?
        }
        (None, None) => bail!("--data or --examples is required"),
    };
    show(&prov);
    let report = evaluate_perplexity(&ckpt.params, &examples, a.common.threads.unwrap_or(1))?;
    let mut table = String::from("src\ttgt\ttokens\tperplexity\n");
    for p in &report.pairs {
        let _ = writeln!(
            table,
            "{}\t{}\t{}\t{}",
            ckpt.inventory.code(p.src_lang),
            ckpt.inventory.code(p.tgt_lang),
            p.tokens,
            p.perplexity
        );
    }
    let _ = writeln!(table, "*\t*\t{}\t{}", report.tokens, report.overall);
    print!("{table}");
    let body = header(&prov) + &table;
    if let Some(out) = &a.out {
        write_file(out, &body)?;
    }
    Ok(())
}

fn load_space(input: &SpaceInput, prov: &mut Provenance) -> Result<LanguageSpace> {
    let space = match (&input.space, &input.model) {
        (Some(path), _) => {
            prov.insert("space".into(), path.display().to_string());
            LanguageSpace::load_tsv(path)?
        }
        (None, Some(path)) => {
            prov.insert("model".into(), path.display().to_string());
            extract_language_space(&load_checkpoint(path)?)?
        }
        (None, None) => bail!("--space or --model is required"),
    };
    prov.insert("exclude".into(), input.exclude.join(","));
    let exclude: Vec<&str> = input.exclude.iter().map(String::as_str).collect();
    Ok(space.without(&exclude)?)
}

fn langspace_cmd(c: LangspaceCommand) -> Result<()> {
    match c {
        LangspaceCommand::Extract {
            common,
            model,
            exclude,
            out,
        } => {
            let mut prov = provenance("langspace extract", &common);
            let input = SpaceInput {
                space: None,
                model: Some(model),
                exclude,
            };
            let space = load_space(&input, &mut prov)?;
            show(&prov);
            write_file(&out, &space.to_tsv(&prov))?;
            println!("languages\t{}\ndim\t{}", space.len(), space.dim());
        }
        LangspaceCommand::Project {
            common,
            input,
            perplexity,
            iterations,
            learning_rate,
            out,
        } => {
            let mut prov = provenance("langspace project", &common);
            let space = load_space(&input, &mut prov)?;
            let cfg = TsneConfig {
                perplexity,
                iterations,
                learning_rate,
                seed: common.seed.unwrap_or(0),
                ..TsneConfig::default()
            };
            prov.insert("perplexity".into(), perplexity.to_string());
            prov.insert("iterations".into(), iterations.to_string());
            prov.insert("learning_rate".into(), learning_rate.to_string());
            show(&prov);
            let proj = tsne_project(&space, &cfg)?;
            write_file(
                &out,
                &render_plot_tsv(&proj, space.codes(), space.families(), &prov)?,
            )?;
            println!("kl\t{}", proj.kl);
        }
        LangspaceCommand::Cluster {
            common,
            input,
            metric,
            k,
            out,
        } => {
            let mut prov = provenance("langspace cluster", &common);
            let space = load_space(&input, &mut prov)?;
            let metric = match metric {
                MetricArg::Cosine => Metric::Cosine,
                MetricArg::Euclidean => Metric::Euclidean,
            };
            prov.insert("metric".into(), metric.to_string());
            prov.insert("k".into(), k.to_string());
            show(&prov);
            let d = pairwise_distances(&space, metric)?;
            let tree = upgma_cluster(&d)?;
            let newick = tree.newick(space.codes())?;
            let score = cut_and_score(&tree, k, space.families(), &d)?;
            let (intra, inter) = d.family_means(space.families())?;
            println!("newick\t{newick}");
            println!("purity\t{}", score.purity);
            println!("silhouette\t{}", score.silhouette);
            println!("intra_family_distance\t{intra}");
            println!("inter_family_distance\t{inter}");
            for (code, c) in space.codes().iter().zip(&score.assignment) {
                println!("cluster\t{code}\t{c}");
            }
            if let Some(out) = out {
                write_file(&out, &format!("{}{newick}\n", header(&prov)))?;
            }
        }
        LangspaceCommand::Plot {
            common,
            projection,
            top_k,
            out,
        } => {
            let mut prov = provenance("langspace plot", &common);
            prov.insert("projection".into(), projection.display().to_string());
            prov.insert("top_k".into(), top_k.to_string());
            show(&prov);
            let text = fs::read_to_string(&projection)
                .with_context(|| format!("reading {}", projection.display()))?;
            let (proj, codes, families) = parse_plot_tsv(&text, &projection)?;
            emit_plot(&proj, &codes, &families, top_k, &out, &prov)?;
            println!("points\t{}", codes.len());
        }
    }
    Ok(())
}

fn synth_cmd(a: SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        concepts: a.concepts,
        verses: a.verses,
        min_len: a.min_len,
        max_len: a.max_len,
        seed: a.common.seed.unwrap_or(0),
    };
    let mut prov = provenance("synth", &a.common);
    for (k, v) in [
        ("concepts", a.concepts),
        ("verses", a.verses),
        ("min_len", a.min_len),
        ("max_len", a.max_len),
    ] {
        prov.insert(k.into(), v.to_string());
    }
    let corpus = match a.kind {
        SynthKind::Families => {
            prov.insert("kind".into(), "families".into());
            prov.insert("families".into(), a.families.to_string());
            prov.insert("members".into(), a.members.to_string());
            let shape = FamilyShape {
                families: a.families,
                members: a.members,
                ..FamilyShape::default()
            };
            family_corpus(&shape, &cfg)?
        }
        SynthKind::Disjoint => {
            prov.insert("kind".into(), "disjoint".into());
            prov.insert("targets".into(), a.targets.to_string());
            disjoint_corpus(a.targets, &cfg)?
        }
    };
    show(&prov);
    corpus.write_dir(&a.out, &prov)?;
    println!("languages\t{}", corpus.languages.len());
    println!("verses\t{}", corpus.verses.len());
    Ok(())
}
