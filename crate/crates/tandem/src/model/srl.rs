//! Semantic role labeling: BIO tagging over LUW units (morpheme setting)
//! or span classification (span-given setting), plus BIO decoding and the
//! span-level metric suite.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::PredicateFrame;
use crate::error::{Error, Result};
use crate::model::encoder::bilstm_layer;
use crate::model::{ModelConfig, RunMode, TapeParams};
use crate::numerics::{Tape, Tensor, Var};
use crate::tokenize::AssembledInput;

/// Tag ids in the morpheme setting: `O` = 0, `B-role_k` = 1+2k,
/// `I-role_k` = 2+2k. The span-given setting uses role ids directly.
pub const O_TAG: usize = 0;

pub fn b_tag(role: usize) -> usize {
    1 + 2 * role
}

pub fn i_tag(role: usize) -> usize {
    2 + 2 * role
}

pub fn morpheme_tagset(roles: &[String]) -> Vec<String> {
    let mut tags = vec!["O".to_string()];
    for r in roles {
        tags.push(format!("B-{r}"));
        tags.push(format!("I-{r}"));
    }
    tags
}

/// Role-labeled half-open LUW span.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct RoleSpan {
    pub role: usize,
    pub start: usize,
    pub end: usize,
}

/// Gold BIO tags for one frame over `n_luw` units. The predicate's own
/// units are tagged like any others: O unless annotated as an argument.
pub fn gold_tags_morpheme(frame: &PredicateFrame, n_luw: usize, role_ids: &BTreeMap<String, usize>) -> Result<Vec<usize>> {
    let mut tags = vec![O_TAG; n_luw];
    for arg in &frame.arguments {
        let role = *role_ids.get(&arg.label).ok_or_else(|| {
            Error::validation(format!("role {} not in the configured inventory", arg.label))
        })?;
        tags[arg.span.0] = b_tag(role);
        for t in tags.iter_mut().take(arg.span.1).skip(arg.span.0 + 1) {
            *t = i_tag(role);
        }
    }
    Ok(tags)
}

/// Encode spans as BIO tags (the inverse of `bio_decode` on valid input).
pub fn spans_to_tags(spans: &[RoleSpan], n_units: usize) -> Vec<usize> {
    let mut tags = vec![O_TAG; n_units];
    for s in spans {
        tags[s.start] = b_tag(s.role);
        for t in tags.iter_mut().take(s.end).skip(s.start + 1) {
            *t = i_tag(s.role);
        }
    }
    tags
}

/// Maximal `B-l (I-l)*` runs become spans; an `I-l` without a compatible
/// predecessor is repaired to `B-l`; `O` breaks spans. Total on any input.
pub fn bio_decode(tags: &[usize]) -> Vec<RoleSpan> {
    let mut spans = Vec::new();
    let mut open: Option<RoleSpan> = None;
    for (pos, &tag) in tags.iter().enumerate() {
        if tag == O_TAG {
            if let Some(s) = open.take() {
                spans.push(s);
            }
            continue;
        }
        let is_b = tag % 2 == 1;
        let role = (tag - 1) / 2;
        if is_b {
            if let Some(s) = open.take() {
                spans.push(s);
            }
            open = Some(RoleSpan {
                role,
                start: pos,
                end: pos + 1,
            });
        } else {
            match &mut open {
                Some(s) if s.role == role => s.end = pos + 1,
                _ => {
                    // repair: I with no compatible predecessor acts as B
                    if let Some(s) = open.take() {
                        spans.push(s);
                    }
                    open = Some(RoleSpan {
                        role,
                        start: pos,
                        end: pos + 1,
                    });
                }
            }
        }
    }
    if let Some(s) = open {
        spans.push(s);
    }
    spans
}

/// Per-unit tag log-probabilities for one assembled SRL input.
///
/// The indicator column joins the encoder output, the result runs through
/// the one-layer BiLSTM (unless ablated), unit averaging collapses
/// positions to units, and each unit vector concatenated with the
/// predicate unit vector feeds the MLP classifier.
pub fn srl_log_probs(
    tape: &mut Tape,
    tp: &TapeParams,
    cfg: &ModelConfig,
    x_srl: Var,
    input: &AssembledInput,
    mode: &mut RunMode,
) -> Result<Var> {
    let predicate_unit = input
        .predicate_unit
        .ok_or_else(|| Error::validation("assembled input has no predicate unit"))?;
    let t_len = tape.value(x_srl).rows();
    if input.predicate_indicator.len() != t_len {
        return Err(Error::shape(format!(
            "predicate indicator length {} vs {} positions",
            input.predicate_indicator.len(),
            t_len
        )));
    }
    let ind = tape.constant(Tensor::matrix(t_len, 1, input.predicate_indicator.clone())?);
    let xi = tape.concat_cols(x_srl, ind)?;
    let g = if cfg.use_srl_bilstm {
        let g = bilstm_layer(tape, tp, xi, "srl.lstm", cfg.hidden_dim / 2)?;
        match mode {
            RunMode::Train(rng) => tape.dropout_seeded(g, cfg.gamma_lstm, *rng)?,
            RunMode::Eval => g,
        }
    } else {
        xi
    };
    let units = tape.mean_over_sets(g, &input.unit_map)?;
    let pred_vec = tape.row(units, predicate_unit)?;
    let targets = tape.rows_slice(units, 0, input.n_prediction_units)?;
    let tiled = tape.tile_row(pred_vec, input.n_prediction_units)?;
    let mlp_in = tape.concat_cols(targets, tiled)?;
    let h1_pre = tape.matmul(mlp_in, tp.var("srl.mlp.w1")?)?;
    let h1_pre = tape.add_row_broadcast(h1_pre, tp.var("srl.mlp.b1")?)?;
    let h1 = tape.tanh(h1_pre);
    let logits = tape.matmul(h1, tp.var("srl.mlp.w2")?)?;
    let logits = tape.add_row_broadcast(logits, tp.var("srl.mlp.b2")?)?;
    tape.log_softmax_rows(logits, None)
}

/// Sum of gold-tag log-probabilities for one input; the batch loss
/// divides the negated total by the number of sentences in the batch.
pub fn srl_item_log_prob(tape: &mut Tape, logp: Var, gold_tags: &[usize]) -> Result<Var> {
    let n_units = tape.value(logp).rows();
    if gold_tags.len() != n_units {
        return Err(Error::validation(format!(
            "{} gold tags for {} prediction units",
            gold_tags.len(),
            n_units
        )));
    }
    let picks: Vec<(usize, usize)> = gold_tags.iter().enumerate().map(|(i, &t)| (i, t)).collect();
    let terms = tape.gather(logp, &picks)?;
    Ok(tape.sum(terms))
}

/// Per-label precision/recall/F1 with raw counts.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct LabelScore {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Span-level SRL metrics.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SrlEval {
    pub micro_precision: f64,
    pub micro_recall: f64,
    pub micro_f1: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    /// Boundary-only matching.
    pub identification_f1: f64,
    /// Label accuracy over correctly-identified spans.
    pub classification_acc: f64,
    pub n_frames: usize,
    pub n_gold_spans: usize,
    pub n_pred_spans: usize,
    pub per_label: BTreeMap<String, LabelScore>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// F1 from counts: dividing 2tp by (2tp + fp + fn) keeps the span-given
/// equality F1 == accuracy exact in floating point.
fn f1_counts(tp: usize, fp: usize, fn_: usize) -> f64 {
    ratio(2 * tp, 2 * tp + fp + fn_)
}

/// Evaluate predicted against gold spans, frame by frame. Spans within a
/// frame are non-overlapping, so (start, end) identifies a span.
pub fn evaluate_srl_spans(
    frames: &[(Vec<RoleSpan>, Vec<RoleSpan>)],
    roles: &[String],
) -> Result<SrlEval> {
    let mut tp: BTreeMap<usize, usize> = BTreeMap::new();
    let mut fp: BTreeMap<usize, usize> = BTreeMap::new();
    let mut fn_: BTreeMap<usize, usize> = BTreeMap::new();
    let mut id_tp = 0;
    let mut n_gold = 0;
    let mut n_pred = 0;
    let mut labeled_tp_total = 0;

    for (pred, gold) in frames {
        for s in pred.iter().chain(gold.iter()) {
            if s.role >= roles.len() {
                return Err(Error::validation(format!(
                    "role id {} out of inventory size {}",
                    s.role,
                    roles.len()
                )));
            }
        }
        n_gold += gold.len();
        n_pred += pred.len();
        let gold_by_bounds: BTreeMap<(usize, usize), usize> =
            gold.iter().map(|s| ((s.start, s.end), s.role)).collect();
        let mut matched_gold: BTreeSet<(usize, usize)> = BTreeSet::new();
        for p in pred {
            match gold_by_bounds.get(&(p.start, p.end)) {
                Some(&grole) => {
                    id_tp += 1;
                    matched_gold.insert((p.start, p.end));
                    if grole == p.role {
                        *tp.entry(p.role).or_insert(0) += 1;
                        labeled_tp_total += 1;
                    } else {
                        *fp.entry(p.role).or_insert(0) += 1;
                        *fn_.entry(grole).or_insert(0) += 1;
                    }
                }
                None => {
                    *fp.entry(p.role).or_insert(0) += 1;
                }
            }
        }
        for g in gold {
            if !matched_gold.contains(&(g.start, g.end)) {
                *fn_.entry(g.role).or_insert(0) += 1;
            }
        }
    }

    let total_tp: usize = tp.values().sum();
    let total_fp: usize = fp.values().sum();
    let total_fn: usize = fn_.values().sum();

    // macro average over labels that occur in gold or predictions
    let mut active: BTreeSet<usize> = BTreeSet::new();
    active.extend(tp.keys());
    active.extend(fp.keys());
    active.extend(fn_.keys());
    let mut per_label = BTreeMap::new();
    let (mut macro_p, mut macro_r, mut macro_f) = (0.0, 0.0, 0.0);
    for &role in &active {
        let t = tp.get(&role).copied().unwrap_or(0);
        let p = fp.get(&role).copied().unwrap_or(0);
        let f = fn_.get(&role).copied().unwrap_or(0);
        let score = LabelScore {
            tp: t,
            fp: p,
            fn_: f,
            precision: ratio(t, t + p),
            recall: ratio(t, t + f),
            f1: f1_counts(t, p, f),
        };
        macro_p += score.precision;
        macro_r += score.recall;
        macro_f += score.f1;
        per_label.insert(roles[role].clone(), score);
    }
    let n_active = active.len().max(1);

    Ok(SrlEval {
        micro_precision: ratio(total_tp, total_tp + total_fp),
        micro_recall: ratio(total_tp, total_tp + total_fn),
        micro_f1: f1_counts(total_tp, total_fp, total_fn),
        macro_precision: macro_p / n_active as f64,
        macro_recall: macro_r / n_active as f64,
        macro_f1: macro_f / n_active as f64,
        identification_f1: f1_counts(id_tp, n_pred - id_tp, n_gold - id_tp),
        classification_acc: ratio(labeled_tp_total, id_tp),
        n_frames: frames.len(),
        n_gold_spans: n_gold,
        n_pred_spans: n_pred,
        per_label,
    })
}

/// Align predicted and gold corpora frame by frame, keyed on sentence id
/// and predicate span, and convert arguments to role spans over the union
/// role inventory. Misaligned frames are an error.
pub fn align_frame_spans(
    pred: &[crate::corpus::Sentence],
    gold: &[crate::corpus::Sentence],
) -> Result<(Vec<(Vec<RoleSpan>, Vec<RoleSpan>)>, Vec<String>)> {
    let mut roles: Vec<String> = pred
        .iter()
        .chain(gold.iter())
        .flat_map(|s| &s.frames)
        .flat_map(|f| &f.arguments)
        .map(|a| a.label.clone())
        .collect();
    roles.sort();
    roles.dedup();
    let role_ids: BTreeMap<&str, usize> = roles
        .iter()
        .enumerate()
        .map(|(i, r)| (r.as_str(), i))
        .collect();
    let to_spans = |frame: &PredicateFrame| -> Vec<RoleSpan> {
        frame
            .arguments
            .iter()
            .map(|a| RoleSpan {
                role: role_ids[a.label.as_str()],
                start: a.span.0,
                end: a.span.1,
            })
            .collect()
    };

    let gold_by_id: BTreeMap<&str, &crate::corpus::Sentence> =
        gold.iter().map(|s| (s.id.as_str(), s)).collect();
    let mut out = Vec::new();
    for p in pred {
        let g = gold_by_id.get(p.id.as_str()).ok_or_else(|| {
            Error::validation(format!("sentence {} has no gold counterpart", p.id))
        })?;
        if p.frames.len() != g.frames.len() {
            return Err(Error::validation(format!(
                "sentence {}: {} predicted frames vs {} gold frames",
                p.id,
                p.frames.len(),
                g.frames.len()
            )));
        }
        for (pf, gf) in p.frames.iter().zip(&g.frames) {
            if pf.predicate != gf.predicate {
                return Err(Error::validation(format!(
                    "sentence {}: predicate span [{},{}) does not match gold [{},{})",
                    p.id, pf.predicate.0, pf.predicate.1, gf.predicate.0, gf.predicate.1
                )));
            }
            out.push((to_spans(pf), to_spans(gf)));
        }
    }
    Ok((out, roles))
}
