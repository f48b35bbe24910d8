//! Corpus ingestion, leak-safe splitting, and synthetic generation.
//!
//! Head indexing follows the CoNLL-U convention externally: 0 is the
//! root, 1..n are token positions.

mod conllu;
mod jsonl;
mod split;
mod synth;

pub use conllu::{read_conllu, read_conllu_str, write_conllu, write_conllu_string};
pub use jsonl::{read_srl_jsonl, read_srl_jsonl_str, write_srl_jsonl, write_srl_jsonl_string};
pub use split::{apportion, split_leak_safe, Split, SplitCorpus, SplitSpec};
pub use synth::{generate_synthetic, SynthConfig};

use crate::error::{Error, Result};

/// A labeled argument span of one predicate, in LUW indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Argument {
    pub label: String,
    /// Half-open LUW index range.
    pub span: (usize, usize),
}

/// One predicate span plus its labeled argument spans, LUW-indexed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredicateFrame {
    /// Half-open LUW index range of the predicate.
    pub predicate: (usize, usize),
    pub arguments: Vec<Argument>,
}

/// One sentence: SUW morphemes with an LUW span partition, optionally a
/// gold dependency tree and gold predicate-argument frames.
#[derive(Debug, Clone, PartialEq)]
pub struct Sentence {
    pub id: String,
    pub suw: Vec<String>,
    /// Half-open SUW index ranges partitioning `[0, suw.len())`.
    pub luw_spans: Vec<(usize, usize)>,
    /// Per-SUW head indices, 0 = root, 1..=n = token positions.
    pub heads: Option<Vec<usize>>,
    pub dep_labels: Option<Vec<String>>,
    pub frames: Vec<PredicateFrame>,
}

impl Sentence {
    /// A sentence without annotations; LUW spans default to one per SUW.
    pub fn from_suw(id: impl Into<String>, suw: Vec<String>) -> Self {
        let luw_spans = (0..suw.len()).map(|i| (i, i + 1)).collect();
        Sentence {
            id: id.into(),
            suw,
            luw_spans,
            heads: None,
            dep_labels: None,
            frames: Vec::new(),
        }
    }

    pub fn n_suw(&self) -> usize {
        self.suw.len()
    }

    pub fn n_luw(&self) -> usize {
        self.luw_spans.len()
    }

    /// SUW index range covered by the LUW range `[lo, hi)`.
    pub fn luw_range_to_suw(&self, lo: usize, hi: usize) -> (usize, usize) {
        (self.luw_spans[lo].0, self.luw_spans[hi - 1].1)
    }

    /// Check every structural invariant; returns the first violation.
    pub fn validate(&self) -> Result<()> {
        let n = self.suw.len();
        // LUW spans: sorted, non-overlapping, covering [0, n) exactly.
        let mut cursor = 0;
        for (k, &(s, e)) in self.luw_spans.iter().enumerate() {
            if s != cursor || e <= s {
                return Err(Error::validation(format!(
                    "sentence {}: luw_spans do not partition [0,{}): span {} is [{},{})",
                    self.id, n, k, s, e
                )));
            }
            cursor = e;
        }
        if cursor != n {
            return Err(Error::validation(format!(
                "sentence {}: luw_spans cover [0,{}) but sentence has {} SUWs",
                self.id, cursor, n
            )));
        }

        if let Some(heads) = &self.heads {
            if heads.len() != n {
                return Err(Error::validation(format!(
                    "sentence {}: {} heads for {} tokens",
                    self.id,
                    heads.len(),
                    n
                )));
            }
            match &self.dep_labels {
                Some(labels) if labels.len() == n => {}
                _ => {
                    return Err(Error::validation(format!(
                        "sentence {}: heads present but dep_labels missing or mismatched",
                        self.id
                    )));
                }
            }
            let mut roots = 0;
            for (i, &h) in heads.iter().enumerate() {
                if h > n {
                    return Err(Error::validation(format!(
                        "sentence {}: token {} has head {} out of range 0..={}",
                        self.id,
                        i + 1,
                        h,
                        n
                    )));
                }
                if h == 0 {
                    roots += 1;
                } else if h == i + 1 {
                    return Err(Error::validation(format!(
                        "sentence {}: token {} is its own head",
                        self.id,
                        i + 1
                    )));
                }
            }
            if roots != 1 {
                return Err(Error::validation(format!(
                    "sentence {}: {} roots, expected exactly 1",
                    self.id, roots
                )));
            }
            // Acyclicity: following head pointers from any token must reach
            // the root without revisiting a token.
            for start in 0..n {
                let mut seen = vec![false; n];
                let mut cur = start;
                loop {
                    if seen[cur] {
                        return Err(Error::validation(format!(
                            "sentence {}: head pointers cycle through token {}",
                            self.id,
                            cur + 1
                        )));
                    }
                    seen[cur] = true;
                    let h = heads[cur];
                    if h == 0 {
                        break;
                    }
                    cur = h - 1;
                }
            }
        } else if self.dep_labels.is_some() {
            return Err(Error::validation(format!(
                "sentence {}: dep_labels present without heads",
                self.id
            )));
        }

        for (fi, frame) in self.frames.iter().enumerate() {
            frame.validate(self, fi)?;
        }
        Ok(())
    }
}

impl PredicateFrame {
    fn validate(&self, sentence: &Sentence, index: usize) -> Result<()> {
        let n_luw = sentence.n_luw();
        let check_span = |(s, e): (usize, usize), what: &str| -> Result<()> {
            if s >= e || e > n_luw {
                return Err(Error::validation(format!(
                    "sentence {} frame {}: {} span [{},{}) invalid for {} LUWs",
                    sentence.id, index, what, s, e, n_luw
                )));
            }
            Ok(())
        };
        check_span(self.predicate, "predicate")?;
        for arg in &self.arguments {
            check_span(arg.span, "argument")?;
            if arg.label.is_empty() {
                return Err(Error::validation(format!(
                    "sentence {} frame {}: empty argument label",
                    sentence.id, index
                )));
            }
        }
        // Argument spans must not overlap each other or the predicate.
        let overlap =
            |a: (usize, usize), b: (usize, usize)| -> bool { a.0 < b.1 && b.0 < a.1 };
        for (i, a) in self.arguments.iter().enumerate() {
            if overlap(a.span, self.predicate) {
                return Err(Error::validation(format!(
                    "sentence {} frame {}: argument {} [{},{}) overlaps the predicate [{},{})",
                    sentence.id, index, a.label, a.span.0, a.span.1, self.predicate.0, self.predicate.1
                )));
            }
            for b in &self.arguments[i + 1..] {
                if overlap(a.span, b.span) {
                    return Err(Error::validation(format!(
                        "sentence {} frame {}: arguments {} [{},{}) and {} [{},{}) overlap",
                        sentence.id,
                        index,
                        a.label,
                        a.span.0,
                        a.span.1,
                        b.label,
                        b.span.0,
                        b.span.1
                    )));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_token() -> Sentence {
        Sentence {
            id: "t1".into(),
            suw: vec!["a".into(), "b".into()],
            luw_spans: vec![(0, 1), (1, 2)],
            heads: Some(vec![2, 0]),
            dep_labels: Some(vec!["dep".into(), "root".into()]),
            frames: Vec::new(),
        }
    }

    #[test]
    fn valid_sentence_passes() {
        two_token().validate().unwrap();
    }

    #[test]
    fn out_of_range_head_rejected() {
        let mut s = two_token();
        s.heads = Some(vec![3, 0]);
        assert!(s.validate().is_err());
    }

    #[test]
    fn self_loop_rejected() {
        let mut s = two_token();
        s.heads = Some(vec![1, 0]);
        assert!(s.validate().is_err());
    }

    #[test]
    fn cycle_rejected() {
        let mut s = Sentence::from_suw("c", vec!["a".into(), "b".into(), "c".into()]);
        s.heads = Some(vec![2, 1, 0]);
        s.dep_labels = Some(vec!["x".into(), "x".into(), "root".into()]);
        let err = s.validate().unwrap_err().to_string();
        assert!(err.contains("cycle"), "{err}");
    }

    #[test]
    fn double_root_rejected() {
        let mut s = two_token();
        s.heads = Some(vec![0, 0]);
        assert!(s.validate().is_err());
    }

    #[test]
    fn luw_partition_must_cover() {
        let mut s = two_token();
        s.luw_spans = vec![(0, 1)];
        assert!(s.validate().is_err());
        s.luw_spans = vec![(0, 1), (0, 2)];
        assert!(s.validate().is_err());
    }

    #[test]
    fn overlapping_arguments_rejected() {
        let mut s = Sentence::from_suw("f", vec!["a".into(), "b".into(), "c".into()]);
        s.frames = vec![PredicateFrame {
            predicate: (2, 3),
            arguments: vec![
                Argument {
                    label: "Agent".into(),
                    span: (0, 2),
                },
                Argument {
                    label: "Theme".into(),
                    span: (1, 2),
                },
            ],
        }];
        let err = s.validate().unwrap_err().to_string();
        assert!(err.contains("frame 0"), "{err}");
    }

    #[test]
    fn argument_overlapping_predicate_rejected() {
        let mut s = Sentence::from_suw("g", vec!["a".into(), "b".into()]);
        s.frames = vec![PredicateFrame {
            predicate: (1, 2),
            arguments: vec![Argument {
                label: "Agent".into(),
                span: (0, 2),
            }],
        }];
        assert!(s.validate().is_err());
    }
}
