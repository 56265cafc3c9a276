//! Verse-aligned multilingual corpora: loading, alignment, tokenization,
//! the shared vocabulary, flag-carrying examples and seeded batching.

mod batch;
mod dataset;
mod tokenize;
mod vocab;

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

pub use batch::{Batch, Batcher};
pub use dataset::{build_dataset, encode_pairs, Corpus, CorpusStats, Dataset};
pub use tokenize::{detokenize, is_punctuation, tokenize};
pub use vocab::{Vocabulary, BOS, EOS, PAD, SPECIALS, UNK};

use crate::error::{Error, Result};

/// One language's side of the corpus: verse id to raw text, in file order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerseDocument {
    pub lang_code: String,
    entries: IndexMap<String, String>,
}

impl VerseDocument {
    pub fn new(lang_code: impl Into<String>) -> Result<Self> {
        let lang_code = lang_code.into();
        if lang_code.is_empty() {
            return Err(Error::InvalidArgument("empty language code".into()));
        }
        Ok(VerseDocument {
            lang_code,
            entries: IndexMap::new(),
        })
    }

    pub fn insert(&mut self, verse_id: impl Into<String>, text: impl Into<String>) -> Result<()> {
        let (verse_id, text) = (verse_id.into(), text.into());
        if text.contains(['\n', '\r']) {
            return Err(Error::InvalidArgument(format!(
                "verse {verse_id} text contains a line break"
            )));
        }
        if self.entries.contains_key(&verse_id) {
            return Err(Error::DuplicateVerse {
                lang: self.lang_code.clone(),
                verse_id,
                line: self.entries.len() + 1,
            });
        }
        self.entries.insert(verse_id, text);
        Ok(())
    }

    pub fn parse(text: &str, lang_code: &str, path: &Path) -> Result<Self> {
        let mut doc = VerseDocument::new(lang_code)?;
        for (i, line) in text.split('\n').enumerate() {
            let line = line.strip_suffix('\r').unwrap_or(line);
            if line.is_empty() {
                continue;
            }
            let (id, body) = line.split_once('\t').ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: "expected `verse_id<TAB>text`".into(),
            })?;
            if doc.entries.contains_key(id) {
                return Err(Error::DuplicateVerse {
                    lang: lang_code.to_string(),
                    verse_id: id.to_string(),
                    line: i + 1,
                });
            }
            doc.entries.insert(id.to_string(), body.to_string());
        }
        Ok(doc)
    }

    pub fn get(&self, verse_id: &str) -> Option<&str> {
        self.entries.get(verse_id).map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Every distinct token of the document.
    pub fn token_set(&self) -> BTreeSet<String> {
        self.entries.values().flat_map(|t| tokenize(t)).collect()
    }
}

pub fn load_verse_file(path: impl AsRef<Path>, lang_code: &str) -> Result<VerseDocument> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    VerseDocument::parse(&text, lang_code, path)
}

/// A row of [`align_pair`]: `(verse_id, text_a, text_b)`.
pub type AlignedVerse<'a> = (&'a str, &'a str, &'a str);

/// Verses present in both documents, in `a`'s order.
pub fn align_pair<'a>(a: &'a VerseDocument, b: &'a VerseDocument) -> Result<Vec<AlignedVerse<'a>>> {
    let rows: Vec<_> = a
        .iter()
        .filter_map(|(id, ta)| b.get(id).map(|tb| (id, ta, tb)))
        .collect();
    if rows.is_empty() {
        return Err(Error::NoAlignedVerses);
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Language {
    pub code: String,
    pub family: String,
}

/// Ordered language list; a language's position is its flag index.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LanguageInventory {
    languages: Vec<Language>,
    index: HashMap<String, usize>,
}

impl LanguageInventory {
    pub fn new(languages: Vec<Language>) -> Result<Self> {
        let mut index = HashMap::with_capacity(languages.len());
        for (i, l) in languages.iter().enumerate() {
            if l.code.is_empty() || l.code.contains(char::is_whitespace) {
                return Err(Error::Inventory(format!(
                    "invalid language code `{}`",
                    l.code
                )));
            }
            if index.insert(l.code.clone(), i).is_some() {
                return Err(Error::Inventory(format!(
                    "duplicate language code `{}`",
                    l.code
                )));
            }
        }
        Ok(LanguageInventory { languages, index })
    }

    /// TSV `lang_code<TAB>family_label`; the family column may be absent.
    /// Blank lines and lines starting with `#` are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let langs = text
            .lines()
            .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
            .map(|l| {
                let mut cols = l.trim_end_matches('\r').splitn(2, '\t');
                let code = cols.next().unwrap_or_default().trim().to_string();
                let family = cols.next().unwrap_or_default().trim().to_string();
                Language { code, family }
            })
            .collect();
        LanguageInventory::new(langs)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        LanguageInventory::parse(&text)
    }

    pub fn to_tsv(&self) -> String {
        self.languages
            .iter()
            .map(|l| format!("{}\t{}\n", l.code, l.family))
            .collect()
    }

    pub fn index_of(&self, code: &str) -> Result<usize> {
        self.index
            .get(code)
            .copied()
            .ok_or_else(|| Error::UnknownLanguage(code.to_string()))
    }

    pub fn get(&self, index: usize) -> Option<&Language> {
        self.languages.get(index)
    }

    pub fn code(&self, index: usize) -> &str {
        &self.languages[index].code
    }

    pub fn languages(&self) -> &[Language] {
        &self.languages
    }

    pub fn len(&self) -> usize {
        self.languages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.languages.is_empty()
    }
}

/// Directed `(src, tgt)` language pairs to train on.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PairingManifest {
    pairs: Vec<(String, String)>,
}

impl PairingManifest {
    pub fn new(pairs: Vec<(String, String)>, inventory: &LanguageInventory) -> Result<Self> {
        let mut seen = HashSet::new();
        for (s, t) in &pairs {
            if s == t {
                return Err(Error::Manifest(format!(
                    "pair {s}->{t} has identical languages"
                )));
            }
            inventory.index_of(s)?;
            inventory.index_of(t)?;
            if !seen.insert((s.clone(), t.clone())) {
                return Err(Error::Manifest(format!("duplicate pair {s}->{t}")));
            }
        }
        Ok(PairingManifest { pairs })
    }

    pub fn parse(text: &str, inventory: &LanguageInventory) -> Result<Self> {
        let mut pairs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (s, t) = line.split_once('\t').ok_or_else(|| {
                Error::Manifest(format!("line {}: expected `src<TAB>tgt`", i + 1))
            })?;
            pairs.push((s.trim().to_string(), t.trim().to_string()));
        }
        PairingManifest::new(pairs, inventory)
    }

    pub fn load(path: impl AsRef<Path>, inventory: &LanguageInventory) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        PairingManifest::parse(&text, inventory)
    }

    /// Pivot-centred manifest: `pivot→x` and `x→pivot` for every other
    /// language, in inventory order.
    pub fn star(pivot: &str, inventory: &LanguageInventory) -> Result<Self> {
        inventory.index_of(pivot)?;
        let pairs = inventory
            .languages()
            .iter()
            .filter(|l| l.code != pivot)
            .flat_map(|l| {
                [
                    (pivot.to_string(), l.code.clone()),
                    (l.code.clone(), pivot.to_string()),
                ]
            })
            .collect();
        PairingManifest::new(pairs, inventory)
    }

    pub fn pairs(&self) -> &[(String, String)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn to_tsv(&self) -> String {
        self.pairs
            .iter()
            .map(|(s, t)| format!("{s}\t{t}\n"))
            .collect()
    }
}

/// One training pair. `tgt_lang` is the flag the decoder must obey.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParallelExample {
    pub src_lang: usize,
    pub tgt_lang: usize,
    pub src_ids: Vec<usize>,
    /// BOS-prefixed and EOS-suffixed.
    pub tgt_ids: Vec<usize>,
}

impl ParallelExample {
    /// Number of tokens the decoder predicts under teacher forcing.
    pub fn predicted_tokens(&self) -> usize {
        self.tgt_ids.len().saturating_sub(1)
    }

    /// `src_lang<TAB>tgt_lang<TAB>src ids<TAB>tgt ids`, ids space-separated.
    pub fn to_tsv_line(&self) -> String {
        let join = |ids: &[usize]| {
            ids.iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join(" ")
        };
        format!(
            "{}\t{}\t{}\t{}",
            self.src_lang,
            self.tgt_lang,
            join(&self.src_ids),
            join(&self.tgt_ids)
        )
    }

    pub fn from_tsv_line(line: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("malformed example line `{line}`"));
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 {
            return Err(bad());
        }
        let ids = |s: &str| -> Result<Vec<usize>> {
            s.split_whitespace()
                .map(|x| x.parse().map_err(|_| bad()))
                .collect()
        };
        let ex = ParallelExample {
            src_lang: cols[0].parse().map_err(|_| bad())?,
            tgt_lang: cols[1].parse().map_err(|_| bad())?,
            src_ids: ids(cols[2])?,
            tgt_ids: ids(cols[3])?,
        };
        if ex.src_ids.is_empty() || ex.tgt_ids.len() < 2 {
            return Err(bad());
        }
        Ok(ex)
    }
}

pub fn encode_example(
    src_text: &str,
    tgt_text: &str,
    src_lang: &str,
    tgt_lang: &str,
    vocab: &Vocabulary,
    inventory: &LanguageInventory,
) -> Result<ParallelExample> {
    let src_lang = inventory.index_of(src_lang)?;
    let tgt_lang = inventory.index_of(tgt_lang)?;
    let src_ids = vocab.encode(&tokenize(src_text));
    if src_ids.is_empty() {
        return Err(Error::InvalidArgument("empty source sentence".into()));
    }
    let mut tgt_ids = vec![BOS];
    tgt_ids.extend(vocab.encode(&tokenize(tgt_text)));
    tgt_ids.push(EOS);
    Ok(ParallelExample {
        src_lang,
        tgt_lang,
        src_ids,
        tgt_ids,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;

    fn doc(code: &str, rows: &[(&str, &str)]) -> VerseDocument {
        let mut d = VerseDocument::new(code).unwrap();
        for (id, t) in rows {
            d.insert(*id, *t).unwrap();
        }
        d
    }

    #[test]
    fn load_verse_file_parses_and_preserves_order() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        write!(f, "40001001\tIn the beginning\n40001002\tsecond\n").unwrap();
        let d = load_verse_file(f.path(), "eng").unwrap();
        assert_eq!(d.get("40001001"), Some("In the beginning"));
        assert_eq!(
            d.iter().map(|(k, _)| k).collect::<Vec<_>>(),
            ["40001001", "40001002"]
        );
    }

    #[test]
    fn empty_file_gives_empty_document() {
        let f = tempfile::NamedTempFile::new().unwrap();
        assert!(load_verse_file(f.path(), "eng").unwrap().is_empty());
    }

    #[test]
    fn duplicate_and_malformed_lines() {
        let p = Path::new("x.txt");
        let err = VerseDocument::parse("40001001\ta\n40001001\tb\n", "eng", p).unwrap_err();
        assert!(matches!(err, Error::DuplicateVerse { line: 2, .. }));
        let err = VerseDocument::parse("1\tok\nno tab here\n", "eng", p).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other}"),
        }
        assert!(VerseDocument::new("").is_err());
    }

    #[test]
    fn alignment_cases() {
        let a = doc("a", &[("1", "x1"), ("2", "x2"), ("3", "x3")]);
        let b = doc("b", &[("2", "y2"), ("1", "y1")]);
        let rows = align_pair(&a, &b).unwrap();
        assert_eq!(rows, vec![("1", "x1", "y1"), ("2", "x2", "y2")]);

        let same = align_pair(&a, &a).unwrap();
        assert!(same.iter().all(|(_, x, y)| x == y));
        assert_eq!(same.len(), 3);

        let c = doc("c", &[("9", "z")]);
        assert!(matches!(align_pair(&a, &c), Err(Error::NoAlignedVerses)));
    }

    #[test]
    fn inventory_and_manifest_parsing() {
        let inv = LanguageInventory::parse("eng\tgermanic\ndan\tgermanic\nfin\n").unwrap();
        assert_eq!(inv.len(), 3);
        assert_eq!(inv.index_of("dan").unwrap(), 1);
        assert_eq!(inv.get(2).unwrap().family, "");
        assert!(LanguageInventory::parse("eng\ta\neng\tb\n").is_err());

        let m = PairingManifest::parse("eng\tdan\ndan\teng\n", &inv).unwrap();
        assert_eq!(m.len(), 2);
        assert!(PairingManifest::parse("eng\teng\n", &inv).is_err());
        assert!(matches!(
            PairingManifest::parse("eng\txxx\n", &inv),
            Err(Error::UnknownLanguage(_))
        ));
    }

    #[test]
    fn star_manifest() {
        let inv = LanguageInventory::parse("eng\t\ndan\t\nswe\t\n").unwrap();
        let m = PairingManifest::star("eng", &inv).unwrap();
        let expect: Vec<(String, String)> = [
            ("eng", "dan"),
            ("dan", "eng"),
            ("eng", "swe"),
            ("swe", "eng"),
        ]
        .iter()
        .map(|(a, b)| (a.to_string(), b.to_string()))
        .collect();
        assert_eq!(m.pairs(), &expect[..]);
    }

    #[test]
    fn encode_example_cases() {
        let inv = LanguageInventory::parse("eng\t\ndan\t\n").unwrap();
        let seqs = vec![tokenize("I know"), tokenize("Jeg ved")];
        let vocab = Vocabulary::build(&seqs, 1, 100).unwrap();
        let ex = encode_example("I know", "Jeg ved", "eng", "dan", &vocab, &inv).unwrap();
        assert_eq!(ex.src_ids.len(), 2);
        assert_eq!(ex.tgt_ids.len(), 4);
        assert_eq!(ex.tgt_ids[0], BOS);
        assert_eq!(*ex.tgt_ids.last().unwrap(), EOS);
        assert_eq!(ex.tgt_lang, 1);

        let ex = encode_example("I forgot", "Jeg ved", "eng", "dan", &vocab, &inv).unwrap();
        assert_eq!(ex.src_ids[1], UNK);

        assert!(matches!(
            encode_example("I know", "x", "eng", "xxx", &vocab, &inv),
            Err(Error::UnknownLanguage(_))
        ));
        let line = ex.to_tsv_line();
        assert_eq!(ParallelExample::from_tsv_line(&line).unwrap(), ex);
    }

    proptest! {
        #[test]
        fn alignment_is_set_intersection(
            a in proptest::collection::btree_set(0u8..20, 0..12),
            b in proptest::collection::btree_set(0u8..20, 0..12),
        ) {
            let da = doc("a", &a.iter().map(|i| (i.to_string(), "t".to_string())).collect::<Vec<_>>()
                .iter().map(|(x, y)| (x.as_str(), y.as_str())).collect::<Vec<_>>());
            let db = doc("b", &b.iter().map(|i| (i.to_string(), "u".to_string())).collect::<Vec<_>>()
                .iter().map(|(x, y)| (x.as_str(), y.as_str())).collect::<Vec<_>>());
            let expect: BTreeSet<String> = a.intersection(&b).map(|i| i.to_string()).collect();
            match align_pair(&da, &db) {
                Ok(rows) => {
                    let got: BTreeSet<String> = rows.iter().map(|r| r.0.to_string()).collect();
                    prop_assert_eq!(got, expect);
                }
                Err(Error::NoAlignedVerses) => prop_assert!(expect.is_empty()),
                Err(e) => prop_assert!(false, "{}", e),
            }
        }

        #[test]
        fn encode_decode_round_trip(words in proptest::collection::vec("[a-zé]{1,6}[.,!]?", 1..8)) {
            let text = words.join(" ");
            let toks = tokenize(&text);
            let vocab = Vocabulary::build(std::slice::from_ref(&toks), 1, 1000).unwrap();
            let ids = vocab.encode(&toks);
            prop_assert_eq!(vocab.decode(&ids), toks.iter().map(String::as_str).collect::<Vec<_>>());
            for id in 0..vocab.len() {
                let t = vocab.token(id).unwrap();
                prop_assert_eq!(vocab.id(t), Some(id));
            }
        }
    }
}
