//! CoNLL-U reader/writer. Only the ID, FORM, HEAD, and DEPREL columns are
//! consumed; multiword ranges and empty nodes are skipped.

use std::fs;
use std::path::Path;

use crate::corpus::Sentence;
use crate::error::{Error, Result};

struct BlockState {
    sent_id: Option<String>,
    forms: Vec<String>,
    heads: Vec<Option<usize>>,
    deprels: Vec<Option<String>>,
    start_line: usize,
}

impl BlockState {
    fn new() -> Self {
        BlockState {
            sent_id: None,
            forms: Vec::new(),
            heads: Vec::new(),
            deprels: Vec::new(),
            start_line: 0,
        }
    }

    fn is_empty(&self) -> bool {
        self.forms.is_empty() && self.sent_id.is_none()
    }

    fn finish(self, path: &str, index: usize) -> Result<Sentence> {
        let id = self
            .sent_id
            .unwrap_or_else(|| format!("{path}#{index}"));
        let n = self.forms.len();
        if n == 0 {
            return Err(Error::Parse {
                path: path.to_string(),
                line: self.start_line,
                msg: format!("sentence {id} has no token lines"),
            });
        }
        let mut sentence = Sentence::from_suw(id, self.forms);
        let n_heads = self.heads.iter().filter(|h| h.is_some()).count();
        let n_rels = self.deprels.iter().filter(|r| r.is_some()).count();
        if n_heads == n && n_rels == n {
            sentence.heads = Some(self.heads.into_iter().map(|h| h.unwrap()).collect());
            sentence.dep_labels = Some(self.deprels.into_iter().map(|r| r.unwrap()).collect());
        } else if n_heads != 0 || n_rels != 0 {
            return Err(Error::validation(format!(
                "sentence {}: mixed annotated and unannotated HEAD/DEPREL columns",
                sentence.id
            )));
        }
        sentence.validate()?;
        Ok(sentence)
    }
}

pub fn read_conllu_str(text: &str, path: &str) -> Result<Vec<Sentence>> {
    let mut sentences = Vec::new();
    let mut block = BlockState::new();

    for (lineno, raw) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = raw.trim_end_matches('\r');
        if line.is_empty() {
            if !block.is_empty() {
                let done = std::mem::replace(&mut block, BlockState::new());
                sentences.push(done.finish(path, sentences.len())?);
            }
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            if block.is_empty() {
                block.start_line = lineno;
            }
            let rest = rest.trim();
            if let Some(v) = rest.strip_prefix("sent_id") {
                let v = v.trim_start().trim_start_matches('=').trim();
                if !v.is_empty() {
                    block.sent_id = Some(v.to_string());
                }
            }
            continue;
        }
        if block.forms.is_empty() && block.sent_id.is_none() {
            block.start_line = lineno;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 10 {
            return Err(Error::Parse {
                path: path.to_string(),
                line: lineno,
                msg: format!("expected 10 tab-separated columns, found {}", cols.len()),
            });
        }
        let id_col = cols[0];
        if id_col.contains('-') || id_col.contains('.') {
            // multiword token range or empty node
            continue;
        }
        let tok_id: usize = id_col.parse().map_err(|_| Error::Parse {
            path: path.to_string(),
            line: lineno,
            msg: format!("non-integer token ID `{id_col}`"),
        })?;
        if tok_id != block.forms.len() + 1 {
            return Err(Error::Parse {
                path: path.to_string(),
                line: lineno,
                msg: format!(
                    "token ID {tok_id} out of sequence (expected {})",
                    block.forms.len() + 1
                ),
            });
        }
        block.forms.push(cols[1].to_string());
        block.heads.push(match cols[6] {
            "_" => None,
            h => Some(h.parse().map_err(|_| Error::Parse {
                path: path.to_string(),
                line: lineno,
                msg: format!("non-integer HEAD `{h}`"),
            })?),
        });
        block.deprels.push(match cols[7] {
            "_" => None,
            r => Some(r.to_string()),
        });
    }
    if !block.is_empty() {
        let done = block;
        sentences.push(done.finish(path, sentences.len())?);
    }
    Ok(sentences)
}

pub fn read_conllu(path: impl AsRef<Path>) -> Result<Vec<Sentence>> {
    let path = path.as_ref();
    let text =
        fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    read_conllu_str(&text, &path.display().to_string())
}

pub fn write_conllu_string(sentences: &[Sentence], manifest_hash: Option<&str>) -> String {
    let mut out = String::new();
    if let Some(h) = manifest_hash {
        out.push_str(&format!("# manifest_hash = {h}\n"));
    }
    for s in sentences {
        out.push_str(&format!("# sent_id = {}\n", s.id));
        for (i, form) in s.suw.iter().enumerate() {
            let head = match &s.heads {
                Some(hs) => hs[i].to_string(),
                None => "_".to_string(),
            };
            let rel = match &s.dep_labels {
                Some(rs) => rs[i].clone(),
                None => "_".to_string(),
            };
            out.push_str(&format!(
                "{}\t{}\t_\t_\t_\t_\t{}\t{}\t_\t_\n",
                i + 1,
                form,
                head,
                rel
            ));
        }
        out.push('\n');
    }
    out
}

pub fn write_conllu(
    path: impl AsRef<Path>,
    sentences: &[Sentence],
    manifest_hash: Option<&str>,
) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, write_conllu_string(sentences, manifest_hash))
        .map_err(|e| Error::io(path.display().to_string(), e))
}
