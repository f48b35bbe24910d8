//! Dependency parsing as head selection: score every head candidate for
//! every dependent, pick the argmax, then label the chosen edge. The
//! label scorer shares U and W with head scoring.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, RunMode, TapeParams};
use crate::numerics::{Tape, Var};

/// Shared pre-activations of the edge scorer: `ux = X U`, `wx = X W`,
/// over the unit-averaged rows (SUW units then the root unit).
pub struct DpScorer {
    pub ux: Var,
    pub wx: Var,
    pub n_units: usize,
}

/// Build the scorer from unit-averaged encoder output `x_dp`
/// (`[n_tokens+1, h]`, root row last). Dropout applies to the scorer
/// inputs in train mode.
pub fn dp_scorer(
    tape: &mut Tape,
    tp: &TapeParams,
    cfg: &ModelConfig,
    x_dp: Var,
    mode: &mut RunMode,
) -> Result<DpScorer> {
    let n_units = tape.value(x_dp).rows();
    let x = match mode {
        RunMode::Train(rng) => tape.dropout_seeded(x_dp, cfg.gamma_dp, *rng)?,
        RunMode::Eval => x_dp,
    };
    let ux = tape.matmul(x, tp.var("dp.u")?)?;
    let wx = tape.matmul(x, tp.var("dp.w")?)?;
    Ok(DpScorer { ux, wx, n_units })
}

/// Head scores `s(x_j, x_i) = v^T tanh(U x_j + W x_i)` for every
/// dependent `i` (rows) against every candidate `j` (columns).
pub fn head_scores(tape: &mut Tape, tp: &TapeParams, sc: &DpScorer) -> Result<Var> {
    let v = tp.var("dp.v")?;
    let n_tokens = sc.n_units - 1;
    let mut rows = Vec::with_capacity(n_tokens);
    for i in 0..n_tokens {
        let wx_i = tape.row(sc.wx, i)?;
        let tiled = tape.tile_row(wx_i, sc.n_units)?;
        let pre = tape.add(sc.ux, tiled)?;
        let th = tape.tanh(pre);
        let col = tape.matmul(th, v)?;
        rows.push(tape.transpose(col)?);
    }
    tape.concat_rows(&rows)
}

/// Log-probabilities over head candidates with self-selection masked.
pub fn head_log_probs(tape: &mut Tape, scores: Var) -> Result<Var> {
    let (n_tokens, n_cands) = {
        let t = tape.value(scores);
        (t.rows(), t.cols())
    };
    let mask: Vec<Vec<bool>> = (0..n_tokens)
        .map(|i| (0..n_cands).map(|j| j == i).collect())
        .collect();
    tape.log_softmax_rows(scores, Some(mask))
}

/// Label logits `g(l, <w_j, w_i>) = u_l^T tanh(U x_j + W x_i)` for the
/// given `(head_unit, dependent_unit)` pairs, one row per pair.
pub fn label_logits(
    tape: &mut Tape,
    tp: &TapeParams,
    sc: &DpScorer,
    pairs: &[(usize, usize)],
) -> Result<Var> {
    let label_u = tp.var("dp.label_u")?;
    let mut rows = Vec::with_capacity(pairs.len());
    for &(j, i) in pairs {
        let uxj = tape.row(sc.ux, j)?;
        let wxi = tape.row(sc.wx, i)?;
        let pre = tape.add(uxj, wxi)?;
        let th = tape.tanh(pre);
        rows.push(tape.matmul(th, label_u)?);
    }
    tape.concat_rows(&rows)
}

/// Candidate column for a CoNLL-U head index (0 = root).
pub fn head_to_candidate(head: usize, n_tokens: usize) -> usize {
    if head == 0 {
        n_tokens
    } else {
        head - 1
    }
}

/// Sum of gold head and label log-probabilities for one sentence.
/// The batch loss divides the negated total by the token count.
pub fn dp_sentence_log_prob(
    tape: &mut Tape,
    tp: &TapeParams,
    sc: &DpScorer,
    gold_heads: &[usize],
    gold_label_ids: &[usize],
) -> Result<Var> {
    let n_tokens = sc.n_units - 1;
    if gold_heads.len() != n_tokens || gold_label_ids.len() != n_tokens {
        return Err(Error::validation(format!(
            "gold annotations for {} tokens, scorer has {}",
            gold_heads.len(),
            n_tokens
        )));
    }
    let scores = head_scores(tape, tp, sc)?;
    let logp = head_log_probs(tape, scores)?;
    let head_picks: Vec<(usize, usize)> = gold_heads
        .iter()
        .enumerate()
        .map(|(i, &h)| (i, head_to_candidate(h, n_tokens)))
        .collect();
    let head_terms = tape.gather(logp, &head_picks)?;
    let head_sum = tape.sum(head_terms);

    // label term conditioned on the gold head
    let pairs: Vec<(usize, usize)> = gold_heads
        .iter()
        .enumerate()
        .map(|(i, &h)| (head_to_candidate(h, n_tokens), i))
        .collect();
    let logits = label_logits(tape, tp, sc, &pairs)?;
    let label_logp = tape.log_softmax_rows(logits, None)?;
    let label_picks: Vec<(usize, usize)> = gold_label_ids
        .iter()
        .enumerate()
        .map(|(i, &l)| (i, l))
        .collect();
    let label_terms = tape.gather(label_logp, &label_picks)?;
    let label_sum = tape.sum(label_terms);
    tape.add(head_sum, label_sum)
}

/// Greedy per-token decode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DpDecode {
    /// Predicted heads in CoNLL-U convention (0 = root).
    pub heads: Vec<usize>,
    pub label_ids: Vec<usize>,
    /// Token index with the highest root-attachment log-probability,
    /// used to supply `w_root` to root-known inputs at test time.
    pub root_token: usize,
}

pub fn decode_dp(tape: &mut Tape, tp: &TapeParams, sc: &DpScorer) -> Result<DpDecode> {
    let n_tokens = sc.n_units - 1;
    let scores = head_scores(tape, tp, sc)?;
    let logp = head_log_probs(tape, scores)?;
    let lp = tape.value(logp).clone();

    let mut heads = Vec::with_capacity(n_tokens);
    let mut best_pairs = Vec::with_capacity(n_tokens);
    for i in 0..n_tokens {
        // ties resolve to the lowest candidate index
        let mut best = usize::MAX;
        let mut best_score = f64::NEG_INFINITY;
        for j in 0..sc.n_units {
            if j == i {
                continue;
            }
            let s = lp.at(i, j);
            if s > best_score {
                best_score = s;
                best = j;
            }
        }
        best_pairs.push((best, i));
        heads.push(if best == n_tokens { 0 } else { best + 1 });
    }

    let logits = label_logits(tape, tp, sc, &best_pairs)?;
    let lv = tape.value(logits);
    let mut label_ids = Vec::with_capacity(n_tokens);
    for i in 0..n_tokens {
        let row = lv.row_slice(i);
        let mut best = 0;
        for (k, &x) in row.iter().enumerate() {
            if x > row[best] {
                best = k;
            }
        }
        label_ids.push(best);
    }

    let root_col = n_tokens;
    let mut root_token = 0;
    for i in 1..n_tokens {
        if lp.at(i, root_col) > lp.at(root_token, root_col) {
            root_token = i;
        }
    }
    Ok(DpDecode {
        heads,
        label_ids,
        root_token,
    })
}

/// Attachment metrics over a corpus.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DpEval {
    pub uas: f64,
    pub las: f64,
    /// Fraction of sentences whose gold-root token is attached to [ROOT].
    pub root_acc: f64,
    pub n_tokens: usize,
    pub n_sentences: usize,
    /// Sentences whose predicted heads contain a cycle (diagnostic only;
    /// greedy decoding enforces no tree constraint).
    pub cycle_sentences: usize,
}

fn has_cycle(heads: &[usize]) -> bool {
    let n = heads.len();
    for start in 0..n {
        let mut cur = start;
        let mut steps = 0;
        loop {
            let h = heads[cur];
            if h == 0 {
                break;
            }
            cur = h - 1;
            steps += 1;
            if steps > n {
                return true;
            }
        }
    }
    false
}

/// UAS/LAS/ROOT against gold. Labels compare by equality, so both label
/// ids and label strings work.
pub fn evaluate_dp<L: PartialEq>(
    predictions: &[(Vec<usize>, Vec<L>)],
    gold: &[(Vec<usize>, Vec<L>)],
) -> Result<DpEval> {
    if predictions.len() != gold.len() {
        return Err(Error::validation(format!(
            "{} predictions vs {} gold sentences",
            predictions.len(),
            gold.len()
        )));
    }
    let mut n_tokens = 0;
    let mut head_hits = 0;
    let mut labeled_hits = 0;
    let mut root_hits = 0;
    let mut cycles = 0;
    for ((ph, pl), (gh, gl)) in predictions.iter().zip(gold) {
        if ph.len() != gh.len() || pl.len() != gl.len() || ph.len() != pl.len() {
            return Err(Error::validation(format!(
                "prediction/gold length mismatch: {} vs {} tokens",
                ph.len(),
                gh.len()
            )));
        }
        n_tokens += gh.len();
        for i in 0..gh.len() {
            if ph[i] == gh[i] {
                head_hits += 1;
                if pl[i] == gl[i] {
                    labeled_hits += 1;
                }
            }
        }
        if let Some(gold_root) = gh.iter().position(|&h| h == 0) {
            if ph[gold_root] == 0 {
                root_hits += 1;
            }
        }
        if has_cycle(ph) {
            cycles += 1;
        }
    }
    let frac = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    Ok(DpEval {
        uas: frac(head_hits, n_tokens),
        las: frac(labeled_hits, n_tokens),
        root_acc: frac(root_hits, gold.len()),
        n_tokens,
        n_sentences: gold.len(),
        cycle_sentences: cycles,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, ModelConfig};
    use crate::numerics::{ParamSet, Tensor};

    fn head_cfg(h: usize, d: usize, n_labels: usize) -> ModelConfig {
        ModelConfig {
            vocab_size: 10,
            max_tokens: 16,
            embed_dim: 4,
            hidden_dim: h,
            encoder_layers: 1,
            dp_dim: d,
            n_dep_labels: n_labels,
            n_srl_tags: 3,
            mlp_hidden: 4,
            use_srl_bilstm: true,
            gamma_bert: 0.0,
            gamma_dp: 0.0,
            gamma_lstm: 0.0,
        }
    }

    fn zero_dp_params(cfg: &ModelConfig) -> ParamSet {
        let mut params = init_params(cfg, 0).unwrap();
        for name in ["dp.u", "dp.w", "dp.v", "dp.label_u"] {
            let shape = params.get(name).unwrap().shape().to_vec();
            *params.get_mut(name).unwrap() = Tensor::zeros(shape);
        }
        params
    }

    fn scorer_for(
        tape: &mut Tape,
        params: &ParamSet,
        cfg: &ModelConfig,
        x: Tensor,
    ) -> (TapeParams, DpScorer) {
        let tp = TapeParams::leaf_all(tape, params);
        let xv = tape.constant(x);
        let sc = dp_scorer(tape, &tp, cfg, xv, &mut RunMode::Eval).unwrap();
        (tp, sc)
    }

    #[test]
    fn zero_parameters_give_all_zero_scores() {
        let cfg = head_cfg(4, 4, 2);
        let params = zero_dp_params(&cfg);
        let mut tape = Tape::new();
        let x = Tensor::matrix(3, 4, (0..12).map(|i| i as f64).collect()).unwrap();
        let (tp, sc) = scorer_for(&mut tape, &params, &cfg, x);
        let scores = head_scores(&mut tape, &tp, &sc).unwrap();
        assert!(tape.value(scores).data().iter().all(|&s| s == 0.0));
    }

    #[test]
    fn scalar_scorer_saturates_with_large_input() {
        // d = h = 1, v = 1, U = 1, W = 0: score = tanh(x_j)
        let cfg = head_cfg(2, 1, 2);
        let mut params = init_params(&cfg, 0).unwrap();
        *params.get_mut("dp.u").unwrap() = Tensor::matrix(2, 1, vec![1.0, 0.0]).unwrap();
        *params.get_mut("dp.w").unwrap() = Tensor::matrix(2, 1, vec![0.0, 0.0]).unwrap();
        *params.get_mut("dp.v").unwrap() = Tensor::matrix(1, 1, vec![1.0]).unwrap();
        let mut tape = Tape::new();
        let x = Tensor::matrix(2, 2, vec![0.0, 0.0, 50.0, 0.0]).unwrap();
        let (tp, sc) = scorer_for(&mut tape, &params, &cfg, x);
        let scores = head_scores(&mut tape, &tp, &sc).unwrap();
        let sv = tape.value(scores);
        assert_eq!(sv.at(0, 0), 0.0); // tanh(0)
        assert!((sv.at(0, 1) - 1.0).abs() < 1e-9); // saturated
    }

    #[test]
    fn head_scores_match_direct_formula() {
        let cfg = head_cfg(6, 5, 3);
        let params = init_params(&cfg, 3).unwrap();
        let n_units = 4;
        let x = Tensor::matrix(
            n_units,
            6,
            (0..24).map(|i| (i as f64 * 0.37).sin()).collect(),
        )
        .unwrap();
        let mut tape = Tape::new();
        let (tp, sc) = scorer_for(&mut tape, &params, &cfg, x.clone());
        let scores = head_scores(&mut tape, &tp, &sc).unwrap();
        let sv = tape.value(scores).clone();

        let u = params.get("dp.u").unwrap();
        let w = params.get("dp.w").unwrap();
        let v = params.get("dp.v").unwrap();
        let d = cfg.dp_dim;
        for i in 0..n_units - 1 {
            for j in 0..n_units {
                let mut expect = 0.0;
                for k in 0..d {
                    let mut pre = 0.0;
                    for c in 0..6 {
                        pre += x.at(j, c) * u.at(c, k) + x.at(i, c) * w.at(c, k);
                    }
                    expect += v.at(k, 0) * pre.tanh();
                }
                assert!(
                    (sv.at(i, j) - expect).abs() < 1e-12,
                    "mismatch at ({i},{j}): {} vs {expect}",
                    sv.at(i, j)
                );
            }
        }
    }

    #[test]
    fn head_distribution_normalizes_and_masks_self() {
        let cfg = head_cfg(4, 4, 2);
        let params = init_params(&cfg, 5).unwrap();
        let mut tape = Tape::new();
        let x = Tensor::matrix(4, 4, (0..16).map(|i| (i as f64).cos()).collect()).unwrap();
        let (tp, sc) = scorer_for(&mut tape, &params, &cfg, x);
        let scores = head_scores(&mut tape, &tp, &sc).unwrap();
        let logp = head_log_probs(&mut tape, scores).unwrap();
        let lv = tape.value(logp);
        for i in 0..3 {
            assert_eq!(lv.at(i, i), f64::NEG_INFINITY);
            let total: f64 = (0..4).filter(|&j| j != i).map(|j| lv.at(i, j).exp()).sum();
            assert!((total - 1.0).abs() < 1e-9, "row {i} sums to {total}");
        }
    }

    #[test]
    fn two_candidates_with_equal_scores_split_evenly() {
        let mut tape = Tape::new();
        let scores = tape.constant(Tensor::matrix(1, 2, vec![0.7, 0.7]).unwrap());
        // dependent 0 may not choose itself; build a 3-wide row instead
        let _ = scores;
        let scores = tape.constant(Tensor::matrix(1, 3, vec![0.0, 0.7, 0.7]).unwrap());
        let logp = head_log_probs(&mut tape, scores).unwrap();
        let lv = tape.value(logp);
        assert!((lv.at(0, 1).exp() - 0.5).abs() < 1e-12);
        assert!((lv.at(0, 2).exp() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn ln3_score_gap_gives_three_to_one_odds() {
        let mut tape = Tape::new();
        let scores =
            tape.constant(Tensor::matrix(1, 3, vec![0.0, 3.0f64.ln(), 0.0]).unwrap());
        let logp = head_log_probs(&mut tape, scores).unwrap();
        let lv = tape.value(logp);
        assert!((lv.at(0, 1).exp() - 0.75).abs() < 1e-12);
        assert!((lv.at(0, 2).exp() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn label_distribution_uniform_when_weights_equal() {
        let cfg = head_cfg(4, 4, 3);
        let mut params = init_params(&cfg, 0).unwrap();
        // all u_l equal: every label gets the same score
        let d = cfg.dp_dim;
        let mut data = Vec::new();
        for _ in 0..d {
            data.extend([0.4, 0.4, 0.4]);
        }
        *params.get_mut("dp.label_u").unwrap() = Tensor::matrix(d, 3, data).unwrap();
        let mut tape = Tape::new();
        let x = Tensor::matrix(3, 4, (0..12).map(|i| (i as f64).sin()).collect()).unwrap();
        let (tp, sc) = scorer_for(&mut tape, &params, &cfg, x);
        let logits = label_logits(&mut tape, &tp, &sc, &[(2, 0)]).unwrap();
        let logp = tape.log_softmax_rows(logits, None).unwrap();
        for &v in tape.value(logp).data() {
            assert!((v.exp() - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn uas_hand_count() {
        let preds = vec![(vec![2, 0, 1], vec![0, 1, 0])];
        let gold = vec![(vec![2, 0, 2], vec![0, 1, 0])];
        let eval = evaluate_dp(&preds, &gold).unwrap();
        assert!((eval.uas - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn exact_predictions_score_one() {
        let gold = vec![(vec![2, 0, 2], vec![1, 0, 2]), (vec![0], vec![0])];
        let eval = evaluate_dp(&gold, &gold).unwrap();
        assert_eq!((eval.uas, eval.las, eval.root_acc), (1.0, 1.0, 1.0));
        assert_eq!(eval.cycle_sentences, 0);
    }

    #[test]
    fn wrong_labels_keep_uas() {
        let gold = vec![(vec![2, 0], vec![0, 1])];
        let preds = vec![(vec![2, 0], vec![1, 0])];
        let eval = evaluate_dp(&preds, &gold).unwrap();
        assert_eq!(eval.uas, 1.0);
        assert_eq!(eval.las, 0.0);
        assert!(eval.las <= eval.uas);
    }

    #[test]
    fn cycles_are_counted() {
        let gold = vec![(vec![2, 0], vec![0, 0])];
        let preds = vec![(vec![2, 1], vec![0, 0])];
        let eval = evaluate_dp(&preds, &gold).unwrap();
        assert_eq!(eval.cycle_sentences, 1);
        assert_eq!(eval.root_acc, 0.0);
    }
}
