//! SRL corpus in JSONL form: one JSON object per line with fields
//! `sentence_id`, `suw`, `luw_spans`, `frames`, and optional
//! `dp { heads, labels }`. Lines without a `sentence_id` key are treated
//! as file headers (they carry the run manifest hash) and skipped.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Argument, PredicateFrame, Sentence};
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct WireArgument {
    label: String,
    span: (usize, usize),
}

#[derive(Debug, Serialize, Deserialize)]
struct WireFrame {
    predicate: (usize, usize),
    arguments: Vec<WireArgument>,
}

#[derive(Debug, Serialize, Deserialize)]
struct WireDp {
    heads: Vec<usize>,
    labels: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct WireSentence {
    sentence_id: String,
    suw: Vec<String>,
    luw_spans: Vec<(usize, usize)>,
    #[serde(default)]
    frames: Vec<WireFrame>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dp: Option<WireDp>,
}

impl From<WireSentence> for Sentence {
    fn from(w: WireSentence) -> Self {
        let (heads, dep_labels) = match w.dp {
            Some(dp) => (Some(dp.heads), Some(dp.labels)),
            None => (None, None),
        };
        Sentence {
            id: w.sentence_id,
            suw: w.suw,
            luw_spans: w.luw_spans,
            heads,
            dep_labels,
            frames: w
                .frames
                .into_iter()
                .map(|f| PredicateFrame {
                    predicate: f.predicate,
                    arguments: f
                        .arguments
                        .into_iter()
                        .map(|a| Argument {
                            label: a.label,
                            span: a.span,
                        })
                        .collect(),
                })
                .collect(),
        }
    }
}

impl From<&Sentence> for WireSentence {
    fn from(s: &Sentence) -> Self {
        let dp = match (&s.heads, &s.dep_labels) {
            (Some(h), Some(l)) => Some(WireDp {
                heads: h.clone(),
                labels: l.clone(),
            }),
            _ => None,
        };
        WireSentence {
            sentence_id: s.id.clone(),
            suw: s.suw.clone(),
            luw_spans: s.luw_spans.clone(),
            frames: s
                .frames
                .iter()
                .map(|f| WireFrame {
                    predicate: f.predicate,
                    arguments: f
                        .arguments
                        .iter()
                        .map(|a| WireArgument {
                            label: a.label.clone(),
                            span: a.span,
                        })
                        .collect(),
                })
                .collect(),
            dp,
        }
    }
}

pub fn read_srl_jsonl_str(text: &str, path: &str) -> Result<Vec<Sentence>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_string(),
            line: lineno,
            msg: e.to_string(),
        })?;
        if value.get("sentence_id").is_none() {
            // header object (manifest hash etc.)
            continue;
        }
        let wire: WireSentence = serde_json::from_value(value).map_err(|e| Error::Parse {
            path: path.to_string(),
            line: lineno,
            msg: e.to_string(),
        })?;
        let sentence: Sentence = wire.into();
        sentence.validate()?;
        out.push(sentence);
    }
    Ok(out)
}

pub fn read_srl_jsonl(path: impl AsRef<Path>) -> Result<Vec<Sentence>> {
    let path = path.as_ref();
    let text =
        fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    read_srl_jsonl_str(&text, &path.display().to_string())
}

pub fn write_srl_jsonl_string(sentences: &[Sentence], manifest_hash: Option<&str>) -> String {
    let mut out = String::new();
    if let Some(h) = manifest_hash {
        out.push_str(&format!("{{\"_manifest_hash\":\"{h}\"}}\n"));
    }
    for s in sentences {
        let wire = WireSentence::from(s);
        out.push_str(&serde_json::to_string(&wire).expect("sentence serializes"));
        out.push('\n');
    }
    out
}

pub fn write_srl_jsonl(
    path: impl AsRef<Path>,
    sentences: &[Sentence],
    manifest_hash: Option<&str>,
) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, write_srl_jsonl_string(sentences, manifest_hash))
        .map_err(|e| Error::io(path.display().to_string(), e))
}
