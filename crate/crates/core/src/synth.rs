//! Synthetic verse-aligned corpora with known language structure.
//!
//! Every verse is a sequence of concept ids. A language is a lexicon mapping
//! concepts to words, so all languages translate each verse word for word.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Language, LanguageInventory, VerseDocument};
use crate::error::{Error, Result};

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthConfig {
    /// Number of distinct concepts (words per lexicon).
    pub concepts: usize,
    pub verses: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            concepts: 24,
            verses: 64,
            min_len: 3,
            max_len: 6,
            seed: 0,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if self.concepts == 0
            || self.verses == 0
            || self.min_len == 0
            || self.min_len > self.max_len
        {
            return Err(Error::InvalidArgument(format!(
                "invalid synthetic corpus shape: {} concepts, {} verses, lengths {}..={}",
                self.concepts, self.verses, self.min_len, self.max_len
            )));
        }
        Ok(())
    }
}

/// Member perturbation rates for [`family_corpus`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FamilyShape {
    pub families: usize,
    pub members: usize,
    /// Share of concepts for which a member uses its own word.
    pub own_word_rate: f64,
    /// Share of concepts for which a member appends its suffix to the stem.
    pub suffix_rate: f64,
}

impl Default for FamilyShape {
    fn default() -> Self {
        FamilyShape {
            families: 3,
            members: 4,
            own_word_rate: 0.15,
            suffix_rate: 0.15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthLanguage {
    pub code: String,
    pub family: String,
    /// Word for each concept.
    pub lexicon: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthCorpus {
    pub languages: Vec<SynthLanguage>,
    /// Concept sequence of each verse.
    pub verses: Vec<Vec<usize>>,
}

impl SynthCorpus {
    pub fn inventory(&self) -> Result<LanguageInventory> {
        LanguageInventory::new(
            self.languages
                .iter()
                .map(|l| Language {
                    code: l.code.clone(),
                    family: l.family.clone(),
                })
                .collect(),
        )
    }

    pub fn verse_id(index: usize) -> String {
        format!("v{:05}", index + 1)
    }

    pub fn text(&self, lang: usize, verse: usize) -> String {
        let lex = &self.languages[lang].lexicon;
        let words: Vec<&str> = self.verses[verse]
            .iter()
            .map(|&c| lex[c].as_str())
            .collect();
        words.join(" ")
    }

    pub fn document(&self, lang: usize) -> Result<VerseDocument> {
        let mut doc = VerseDocument::new(self.languages[lang].code.clone())?;
        for v in 0..self.verses.len() {
            doc.insert(Self::verse_id(v), self.text(lang, v))?;
        }
        Ok(doc)
    }

    pub fn documents(&self) -> Result<Vec<VerseDocument>> {
        (0..self.languages.len())
            .map(|i| self.document(i))
            .collect()
    }

    pub fn index_of(&self, code: &str) -> Result<usize> {
        self.languages
            .iter()
            .position(|l| l.code == code)
            .ok_or_else(|| Error::UnknownLanguage(code.to_string()))
    }

    /// Words of a language's lexicon.
    pub fn token_set(&self, lang: usize) -> BTreeSet<String> {
        self.languages[lang].lexicon.iter().cloned().collect()
    }

    /// Writes `<code>.txt` verse files and `inventory.tsv` into `dir`.
    pub fn write_dir(&self, dir: &Path, provenance: &BTreeMap<String, String>) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (i, lang) in self.languages.iter().enumerate() {
            let mut body = String::new();
            for v in 0..self.verses.len() {
                let _ = writeln!(body, "{}\t{}", Self::verse_id(v), self.text(i, v));
            }
            let path = dir.join(format!("{}.txt", lang.code));
            fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        }
        let mut inv = String::new();
        for (k, v) in provenance {
            let _ = writeln!(inv, "# {k}={v}");
        }
        inv.push_str(&self.inventory()?.to_tsv());
        let path = dir.join("inventory.tsv");
        fs::write(&path, inv).map_err(|e| Error::io(&path, e))
    }
}

/// Draws globally unique pseudo-words.
struct WordSource {
    rng: ChaCha8Rng,
    used: BTreeSet<String>,
}

impl WordSource {
    fn new(rng: ChaCha8Rng) -> Self {
        WordSource {
            rng,
            used: BTreeSet::new(),
        }
    }

    fn syllable(&mut self) -> String {
        let c = CONSONANTS[self.rng.random_range(0..CONSONANTS.len())] as char;
        let v = VOWELS[self.rng.random_range(0..VOWELS.len())] as char;
        format!("{c}{v}")
    }

    fn fresh(&mut self, syllables: usize) -> String {
        loop {
            let w: String = (0..syllables).map(|_| self.syllable()).collect();
            if self.used.insert(w.clone()) {
                return w;
            }
        }
    }

    fn lexicon(&mut self, n: usize) -> Vec<String> {
        (0..n).map(|_| self.fresh(3)).collect()
    }

    /// Reserves `word` if still free.
    fn claim(&mut self, word: String) -> Option<String> {
        self.used.insert(word.clone()).then_some(word)
    }
}

fn sample_verses(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    (0..cfg.verses)
        .map(|_| {
            let len = rng.random_range(cfg.min_len..=cfg.max_len);
            (0..len)
                .map(|_| rng.random_range(0..cfg.concepts))
                .collect()
        })
        .collect()
}

/// A pivot `eng` plus `targets` languages (`t1`, `t2`, ...) whose
/// vocabularies are pairwise disjoint; each language is its own family.
pub fn disjoint_corpus(targets: usize, cfg: &SynthConfig) -> Result<SynthCorpus> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let verses = sample_verses(cfg, &mut rng);
    let mut words = WordSource::new(rng);
    let mut languages = vec![SynthLanguage {
        code: "eng".into(),
        family: "pivot".into(),
        lexicon: words.lexicon(cfg.concepts),
    }];
    for t in 1..=targets {
        languages.push(SynthLanguage {
            code: format!("t{t}"),
            family: format!("t{t}"),
            lexicon: words.lexicon(cfg.concepts),
        });
    }
    Ok(SynthCorpus { languages, verses })
}

/// A pivot `eng` plus `families × members` languages coded `f<i>m<j>` in
/// family `fam<i>`. A family shares a stem lexicon; each member replaces a
/// seeded subset of stems with its own words and suffixes another subset.
pub fn family_corpus(shape: &FamilyShape, cfg: &SynthConfig) -> Result<SynthCorpus> {
    cfg.validate()?;
    if shape.families == 0
        || shape.members == 0
        || !(0.0..=1.0).contains(&shape.own_word_rate)
        || !(0.0..=1.0).contains(&shape.suffix_rate)
        || shape.own_word_rate + shape.suffix_rate > 1.0
    {
        return Err(Error::InvalidArgument(format!(
            "invalid family shape {shape:?}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let verses = sample_verses(cfg, &mut rng);
    let mut words = WordSource::new(rng);
    let mut languages = vec![SynthLanguage {
        code: "eng".into(),
        family: "pivot".into(),
        lexicon: words.lexicon(cfg.concepts),
    }];
    for f in 0..shape.families {
        let stems = words.lexicon(cfg.concepts);
        for m in 0..shape.members {
            let suffix = words.fresh(1);
            let lexicon = stems
                .iter()
                .map(|stem| {
                    let r: f64 = words.rng.random();
                    if r < shape.own_word_rate {
                        words.fresh(3)
                    } else if r < shape.own_word_rate + shape.suffix_rate {
                        words
                            .claim(format!("{stem}{suffix}"))
                            .unwrap_or_else(|| words.fresh(4))
                    } else {
                        stem.clone()
                    }
                })
                .collect();
            languages.push(SynthLanguage {
                code: format!("f{}m{}", f + 1, m + 1),
                family: format!("fam{}", f + 1),
                lexicon,
            });
        }
    }
    Ok(SynthCorpus { languages, verses })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn disjoint_vocabularies() {
        let c = disjoint_corpus(4, &SynthConfig::default()).unwrap();
        assert_eq!(c.languages.len(), 5);
        for i in 0..5 {
            assert_eq!(c.token_set(i).len(), 24);
            for j in i + 1..5 {
                assert!(c.token_set(i).is_disjoint(&c.token_set(j)));
            }
        }
        assert_eq!(c.inventory().unwrap().code(2), "t2");
    }

    #[test]
    fn families_share_stems_only_within() {
        let c = family_corpus(&FamilyShape::default(), &SynthConfig::default()).unwrap();
        assert_eq!(c.languages.len(), 13);
        let shared = |a: usize, b: usize| c.token_set(a).intersection(&c.token_set(b)).count();
        for a in 1..13 {
            for b in a + 1..13 {
                let same = c.languages[a].family == c.languages[b].family;
                if same {
                    assert!(shared(a, b) >= 4, "{a} {b}: {}", shared(a, b));
                } else {
                    assert_eq!(shared(a, b), 0);
                }
            }
            assert_eq!(shared(0, a), 0);
        }
        // Members are distinct languages.
        assert_ne!(c.languages[1].lexicon, c.languages[2].lexicon);
    }

    #[test]
    fn verses_align_across_languages() {
        let cfg = SynthConfig {
            verses: 5,
            ..SynthConfig::default()
        };
        let c = disjoint_corpus(2, &cfg).unwrap();
        let docs = c.documents().unwrap();
        let aligned = crate::corpus::align_pair(&docs[0], &docs[1]).unwrap();
        assert_eq!(aligned.len(), 5);
        for (id, a, b) in aligned {
            assert!(id.starts_with('v'));
            assert_eq!(a.split(' ').count(), b.split(' ').count());
        }
    }

    #[test]
    fn seeded() {
        let cfg = SynthConfig::default();
        let a = family_corpus(&FamilyShape::default(), &cfg).unwrap();
        assert_eq!(a, family_corpus(&FamilyShape::default(), &cfg).unwrap());
        let b = family_corpus(&FamilyShape::default(), &SynthConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn writes_loadable_files() {
        let dir = tempfile::tempdir().unwrap();
        let c = disjoint_corpus(
            2,
            &SynthConfig {
                verses: 3,
                ..SynthConfig::default()
            },
        )
        .unwrap();
        c.write_dir(dir.path(), &BTreeMap::from([("seed".into(), "0".into())]))
            .unwrap();
        let inv = LanguageInventory::load(dir.path().join("inventory.tsv")).unwrap();
        assert_eq!(inv.len(), 3);
        let doc = crate::corpus::load_verse_file(dir.path().join("t1.txt"), "t1").unwrap();
        assert_eq!(doc, c.document(1).unwrap());
    }

    #[test]
    fn rejects_bad_shapes() {
        let bad = SynthConfig {
            min_len: 4,
            max_len: 2,
            ..SynthConfig::default()
        };
        assert!(disjoint_corpus(2, &bad).is_err());
        let shape = FamilyShape {
            own_word_rate: 0.8,
            suffix_rate: 0.5,
            ..FamilyShape::default()
        };
        assert!(family_corpus(&shape, &SynthConfig::default()).is_err());
    }
}
