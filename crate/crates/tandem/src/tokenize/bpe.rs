//! Byte-pair subword model. Merges are learned within SUW boundaries so
//! every subword stays contained in exactly one SUW.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::corpus::Sentence;
use crate::error::{Error, Result};

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const ROOT: &str = "[ROOT]";

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const CLS_ID: u32 = 2;
pub const SEP_ID: u32 = 3;
pub const ROOT_ID: u32 = 4;

const SPECIALS: [&str; 5] = [PAD, UNK, CLS, SEP, ROOT];

#[derive(Debug, Clone, PartialEq)]
pub struct SubwordModel {
    merges: Vec<(String, String)>,
    vocab: Vec<String>,
    ids: BTreeMap<String, u32>,
    whole_word: bool,
}

fn word_counts(corpus: &[Sentence]) -> Result<BTreeMap<String, u64>> {
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    for s in corpus {
        for w in &s.suw {
            if w.is_empty() {
                return Err(Error::validation(format!(
                    "sentence {}: empty SUW surface",
                    s.id
                )));
            }
            if w.chars().any(char::is_whitespace) {
                return Err(Error::validation(format!(
                    "sentence {}: SUW `{w}` contains whitespace",
                    s.id
                )));
            }
            *counts.entry(w.clone()).or_insert(0) += 1;
        }
    }
    if counts.is_empty() {
        return Err(Error::validation("cannot learn subwords from an empty corpus"));
    }
    Ok(counts)
}

/// Merge every adjacent `(a, b)` occurrence left to right.
fn apply_merge(symbols: &mut Vec<String>, a: &str, b: &str) {
    let mut out: Vec<String> = Vec::with_capacity(symbols.len());
    let mut i = 0;
    while i < symbols.len() {
        if i + 1 < symbols.len() && symbols[i] == a && symbols[i + 1] == b {
            out.push(format!("{a}{b}"));
            i += 2;
        } else {
            out.push(symbols[i].clone());
            i += 1;
        }
    }
    *symbols = out;
}

impl SubwordModel {
    /// Greedy most-frequent-pair merges within SUW boundaries. Frequency
    /// ties break by lexicographic order of the merged string.
    pub fn learn(corpus: &[Sentence], n_merges: usize) -> Result<Self> {
        let counts = word_counts(corpus)?;
        let mut segmentations: Vec<(Vec<String>, u64)> = counts
            .iter()
            .map(|(w, &c)| (w.chars().map(|ch| ch.to_string()).collect(), c))
            .collect();

        let mut vocab: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        let mut chars: Vec<String> = counts
            .keys()
            .flat_map(|w| w.chars())
            .map(|c| c.to_string())
            .collect();
        chars.sort();
        chars.dedup();
        vocab.extend(chars);

        let mut merges = Vec::with_capacity(n_merges);
        for _ in 0..n_merges {
            let mut pair_counts: BTreeMap<(String, String), u64> = BTreeMap::new();
            for (symbols, c) in &segmentations {
                for win in symbols.windows(2) {
                    *pair_counts
                        .entry((win[0].clone(), win[1].clone()))
                        .or_insert(0) += c;
                }
            }
            // max count; ties -> lexicographically smallest merged string
            let best = pair_counts.into_iter().max_by(|(pa, ca), (pb, cb)| {
                ca.cmp(cb).then_with(|| {
                    let ma = format!("{}{}", pa.0, pa.1);
                    let mb = format!("{}{}", pb.0, pb.1);
                    mb.cmp(&ma)
                })
            });
            let Some(((a, b), _)) = best else { break };
            for (symbols, _) in segmentations.iter_mut() {
                apply_merge(symbols, &a, &b);
            }
            vocab.push(format!("{a}{b}"));
            merges.push((a, b));
        }

        Self::build(merges, vocab, false)
    }

    /// The no-subword variant: every distinct SUW surface is one atomic
    /// vocabulary entry.
    pub fn learn_whole_words(corpus: &[Sentence]) -> Result<Self> {
        let counts = word_counts(corpus)?;
        let mut vocab: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        vocab.extend(counts.keys().cloned());
        Self::build(Vec::new(), vocab, true)
    }

    fn build(merges: Vec<(String, String)>, vocab: Vec<String>, whole_word: bool) -> Result<Self> {
        let mut ids = BTreeMap::new();
        for (i, tok) in vocab.iter().enumerate() {
            if ids.insert(tok.clone(), i as u32).is_some() {
                return Err(Error::validation(format!(
                    "duplicate vocabulary entry `{tok}`"
                )));
            }
        }
        for (sp, want) in SPECIALS.iter().zip(0u32..) {
            if ids.get(*sp) != Some(&want) {
                return Err(Error::validation(format!(
                    "special token {sp} must have id {want}"
                )));
            }
        }
        Ok(SubwordModel {
            merges,
            vocab,
            ids,
            whole_word,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn is_whole_word(&self) -> bool {
        self.whole_word
    }

    pub fn n_merges(&self) -> usize {
        self.merges.len()
    }

    pub fn token_str(&self, id: u32) -> Option<&str> {
        self.vocab.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.ids.get(token).copied()
    }

    /// Subword ids for one SUW. Unknown material maps to `[UNK]`, which
    /// always forms its own subword.
    pub fn encode_suw(&self, suw: &str) -> Vec<u32> {
        if self.whole_word {
            return vec![self.ids.get(suw).copied().unwrap_or(UNK_ID)];
        }
        let mut symbols: Vec<String> = suw.chars().map(|c| c.to_string()).collect();
        for (a, b) in &self.merges {
            apply_merge(&mut symbols, a, b);
        }
        symbols
            .into_iter()
            .map(|s| self.ids.get(&s).copied().unwrap_or(UNK_ID))
            .collect()
    }

    /// Deterministic text form: merge rules then the token table, one
    /// entry per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("tandem-subwords v1\n");
        out.push_str(&format!("whole_word {}\n", self.whole_word));
        out.push_str(&format!("merges {}\n", self.merges.len()));
        for (a, b) in &self.merges {
            out.push_str(&format!("{a}\t{b}\n"));
        }
        out.push_str(&format!("vocab {}\n", self.vocab.len()));
        for tok in &self.vocab {
            out.push_str(tok);
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text =
            fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let pathstr = source.to_string();
        let mut lines = text.lines().enumerate();
        let mut next = |what: &str| -> Result<(usize, &str)> {
            lines.next().map(|(i, l)| (i + 1, l)).ok_or_else(|| Error::Parse {
                path: pathstr.clone(),
                line: 0,
                msg: format!("unexpected end of file, expected {what}"),
            })
        };
        let (ln, header) = next("header")?;
        if header != "tandem-subwords v1" {
            return Err(Error::Parse {
                path: pathstr.clone(),
                line: ln,
                msg: format!("unrecognized header `{header}`"),
            });
        }
        let parse_kv = |ln: usize, line: &str, key: &str| -> Result<String> {
            line.strip_prefix(key)
                .and_then(|r| r.strip_prefix(' '))
                .map(str::to_string)
                .ok_or_else(|| Error::Parse {
                    path: pathstr.clone(),
                    line: ln,
                    msg: format!("expected `{key} <value>`, got `{line}`"),
                })
        };
        let (ln, line) = next("whole_word flag")?;
        let whole_word: bool = parse_kv(ln, line, "whole_word")?
            .parse()
            .map_err(|_| Error::Parse {
                path: pathstr.clone(),
                line: ln,
                msg: "whole_word flag must be true or false".into(),
            })?;
        let (ln, line) = next("merge count")?;
        let n_merges: usize = parse_kv(ln, line, "merges")?
            .parse()
            .map_err(|_| Error::Parse {
                path: pathstr.clone(),
                line: ln,
                msg: "merge count must be an integer".into(),
            })?;
        let mut merges = Vec::with_capacity(n_merges);
        for _ in 0..n_merges {
            let (ln, line) = next("merge rule")?;
            let (a, b) = line.split_once('\t').ok_or_else(|| Error::Parse {
                path: pathstr.clone(),
                line: ln,
                msg: "merge rule must be two tab-separated symbols".into(),
            })?;
            merges.push((a.to_string(), b.to_string()));
        }
        let (ln, line) = next("vocab count")?;
        let n_vocab: usize = parse_kv(ln, line, "vocab")?
            .parse()
            .map_err(|_| Error::Parse {
                path: pathstr.clone(),
                line: ln,
                msg: "vocab count must be an integer".into(),
            })?;
        let mut vocab = Vec::with_capacity(n_vocab);
        for _ in 0..n_vocab {
            let (_, line) = next("vocab entry")?;
            vocab.push(line.to_string());
        }
        Self::build(merges, vocab, whole_word)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus_of(words: &[(&str, usize)]) -> Vec<Sentence> {
        // one sentence per repetition keeps counts explicit
        let mut out = Vec::new();
        let mut i = 0;
        for (w, n) in words {
            for _ in 0..*n {
                out.push(Sentence::from_suw(format!("w{i}"), vec![w.to_string()]));
                i += 1;
            }
        }
        out
    }

    #[test]
    fn zero_merges_is_pure_character_vocabulary() {
        let corpus = corpus_of(&[("abc", 2), ("cb", 1)]);
        let model = SubwordModel::learn(&corpus, 0).unwrap();
        assert_eq!(model.n_merges(), 0);
        assert_eq!(model.vocab_size(), 5 + 3); // specials + {a,b,c}
        assert_eq!(
            model.encode_suw("abc"),
            vec![
                model.id("a").unwrap(),
                model.id("b").unwrap(),
                model.id("c").unwrap()
            ]
        );
    }

    #[test]
    fn aaab_corpus_learns_aa_merge() {
        // pairs per word: (a,a) twice, (a,b) once; times 3 occurrences
        let corpus = corpus_of(&[("aaab", 3)]);
        let model = SubwordModel::learn(&corpus, 1).unwrap();
        assert_eq!(model.n_merges(), 1);
        assert_eq!(
            model.encode_suw("aaab"),
            vec![
                model.id("aa").unwrap(),
                model.id("a").unwrap(),
                model.id("b").unwrap()
            ]
        );
    }

    #[test]
    fn frequency_tie_breaks_lexicographically() {
        // "ab" and "ba" pairs appear equally often; "ab" < "ba"
        let corpus = corpus_of(&[("ab", 2), ("ba", 2)]);
        let model = SubwordModel::learn(&corpus, 1).unwrap();
        assert!(model.id("ab").is_some());
        assert!(model.id("ba").is_none());
    }

    #[test]
    fn training_corpus_never_encodes_to_unk() {
        let corpus = corpus_of(&[("hello", 3), ("help", 2), ("lop", 4)]);
        for n_merges in [0, 1, 3, 10] {
            let model = SubwordModel::learn(&corpus, n_merges).unwrap();
            for s in &corpus {
                for w in &s.suw {
                    assert!(
                        model.encode_suw(w).iter().all(|&id| id != UNK_ID),
                        "UNK for {w} at {n_merges} merges"
                    );
                }
            }
        }
    }

    #[test]
    fn unknown_character_maps_to_unk() {
        let corpus = corpus_of(&[("ab", 1)]);
        let model = SubwordModel::learn(&corpus, 0).unwrap();
        assert_eq!(model.encode_suw("az"), vec![model.id("a").unwrap(), UNK_ID]);
    }

    #[test]
    fn detokenized_subwords_reconstruct_the_suw() {
        let corpus = corpus_of(&[("banana", 3), ("bandana", 2)]);
        let model = SubwordModel::learn(&corpus, 4).unwrap();
        for w in ["banana", "bandana"] {
            let joined: String = model
                .encode_suw(w)
                .iter()
                .map(|&id| model.token_str(id).unwrap())
                .collect();
            assert_eq!(joined, w);
        }
    }

    #[test]
    fn whole_word_mode_is_atomic() {
        let corpus = corpus_of(&[("alpha", 1), ("beta", 1)]);
        let model = SubwordModel::learn_whole_words(&corpus).unwrap();
        assert!(model.is_whole_word());
        assert_eq!(model.encode_suw("alpha").len(), 1);
        assert_eq!(model.encode_suw("gamma"), vec![UNK_ID]);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert!(SubwordModel::learn(&[], 5).is_err());
    }

    #[test]
    fn save_load_roundtrip() {
        let corpus = corpus_of(&[("tokenize", 2), ("token", 3)]);
        let model = SubwordModel::learn(&corpus, 6).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("subwords.txt");
        model.save(&path).unwrap();
        let loaded = SubwordModel::load(&path).unwrap();
        assert_eq!(model, loaded);
    }
}
