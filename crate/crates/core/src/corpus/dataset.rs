//! Turning verse documents and a pairing manifest into encoded examples.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use super::{
    align_pair, encode_example, load_verse_file, tokenize, LanguageInventory, PairingManifest,
    ParallelExample, VerseDocument, Vocabulary,
};
use crate::error::{Error, Result};

/// Documents keyed by language code.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    docs: BTreeMap<String, VerseDocument>,
}

impl Corpus {
    pub fn new(docs: Vec<VerseDocument>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for d in docs {
            let code = d.lang_code.clone();
            if map.insert(code.clone(), d).is_some() {
                return Err(Error::InvalidArgument(format!(
                    "two documents for `{code}`"
                )));
            }
        }
        Ok(Corpus { docs: map })
    }

    /// Loads `<dir>/<code>.txt` for every inventory language.
    pub fn load_dir(dir: impl AsRef<Path>, inventory: &LanguageInventory) -> Result<Self> {
        let dir = dir.as_ref();
        let docs = inventory
            .languages()
            .iter()
            .map(|l| load_verse_file(dir.join(format!("{}.txt", l.code)), &l.code))
            .collect::<Result<Vec<_>>>()?;
        Corpus::new(docs)
    }

    pub fn get(&self, code: &str) -> Result<&VerseDocument> {
        self.docs
            .get(code)
            .ok_or_else(|| Error::InvalidArgument(format!("no verse document for `{code}`")))
    }

    pub fn documents(&self) -> impl Iterator<Item = &VerseDocument> {
        self.docs.values()
    }

    /// Aligned `(source text, target text)` rows of one directed pair, in
    /// source-document order. Rows with an empty side are dropped.
    pub fn aligned_texts(&self, src: &str, tgt: &str) -> Result<Vec<(String, String)>> {
        let rows = align_pair(self.get(src)?, self.get(tgt)?)?;
        Ok(rows
            .into_iter()
            .filter(|(_, a, b)| !tokenize(a).is_empty() && !tokenize(b).is_empty())
            .map(|(_, a, b)| (a.to_string(), b.to_string()))
            .collect())
    }

    /// Tokens each language uses anywhere in its document.
    pub fn token_sets(&self, inventory: &LanguageInventory) -> Result<Vec<BTreeSet<String>>> {
        inventory
            .languages()
            .iter()
            .map(|l| Ok(self.get(&l.code)?.token_set()))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusStats {
    pub languages: usize,
    pub pairs: usize,
    pub examples: usize,
    pub vocab_size: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub vocab: Vocabulary,
    pub examples: Vec<ParallelExample>,
    pub stats: CorpusStats,
}

/// Encodes every aligned verse of `pairs`, pair by pair.
pub fn encode_pairs(
    corpus: &Corpus,
    inventory: &LanguageInventory,
    pairs: &[(String, String)],
    vocab: &Vocabulary,
) -> Result<Vec<ParallelExample>> {
    let mut out = Vec::new();
    for (s, t) in pairs {
        for (a, b) in corpus.aligned_texts(s, t)? {
            out.push(encode_example(&a, &b, s, t, vocab, inventory)?);
        }
    }
    Ok(out)
}

/// Builds the shared vocabulary over both sides of every manifest pair and
/// encodes the pairs with it.
pub fn build_dataset(
    corpus: &Corpus,
    inventory: &LanguageInventory,
    manifest: &PairingManifest,
    min_freq: usize,
    max_vocab: usize,
) -> Result<Dataset> {
    let mut seqs = Vec::new();
    for (s, t) in manifest.pairs() {
        for (a, b) in corpus.aligned_texts(s, t)? {
            seqs.push(tokenize(&a));
            seqs.push(tokenize(&b));
        }
    }
    let vocab = Vocabulary::build(&seqs, min_freq, max_vocab)?;
    let examples = encode_pairs(corpus, inventory, manifest.pairs(), &vocab)?;
    let languages: BTreeSet<&str> = manifest
        .pairs()
        .iter()
        .flat_map(|(s, t)| [s.as_str(), t.as_str()])
        .collect();
    Ok(Dataset {
        stats: CorpusStats {
            languages: languages.len(),
            pairs: manifest.len(),
            examples: examples.len(),
            vocab_size: vocab.len(),
        },
        vocab,
        examples,
    })
}
