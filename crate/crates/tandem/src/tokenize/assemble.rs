//! Build the token sequences each task feeds the encoder, together with
//! the maps that average output vectors back to SUW/LUW/span units.

use crate::corpus::{PredicateFrame, Sentence};
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::tokenize::bpe::{SubwordModel, CLS_ID, ROOT_ID, SEP_ID};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DpMode {
    RootUnknown,
    RootKnown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SrlSetting {
    Morpheme,
    SpanGiven,
}

/// One encoder-ready input sequence.
///
/// `unit_map` lists, per output unit, the subword positions averaged into
/// that unit. For DP the units are the SUWs followed by a singleton
/// `[ROOT]` unit; for SRL they are LUWs (morpheme setting) or argument
/// spans plus a predicate unit (span-given setting).
#[derive(Debug, Clone, PartialEq)]
pub struct AssembledInput {
    pub token_ids: Vec<u32>,
    pub segment_ids: Vec<u8>,
    pub unit_map: Vec<Vec<usize>>,
    /// 0/1 per subword position; 1 exactly on predicate subwords (both the
    /// in-sentence occurrence and the second-segment copy).
    pub predicate_indicator: Vec<f64>,
    /// Position of the `[ROOT]` token (DP only).
    pub root_position: Option<usize>,
    /// DP head-candidate unit indices: all SUW units plus the root unit.
    pub candidate_units: Vec<usize>,
    /// Index of the predicate unit within `unit_map` (SRL only).
    pub predicate_unit: Option<usize>,
    /// Units receiving a prediction: `0..n_prediction_units` of `unit_map`.
    pub n_prediction_units: usize,
}

impl AssembledInput {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }
}

fn check_len(len: usize, max_tokens: usize, what: &str) -> Result<()> {
    if len > max_tokens {
        return Err(Error::length(format!(
            "{what}: assembled length {len} exceeds max_tokens {max_tokens}"
        )));
    }
    Ok(())
}

/// DP input. Root-unknown template: `[CLS] w_1..w_n [SEP] [ROOT]`;
/// root-known appends the root token as a second segment:
/// `[CLS] w_1..w_n [SEP] w_root [SEP] [ROOT]`.
pub fn assemble_dp(
    sentence: &Sentence,
    mode: DpMode,
    root_token: Option<usize>,
    model: &SubwordModel,
    max_tokens: usize,
) -> Result<AssembledInput> {
    let n = sentence.n_suw();
    if n == 0 {
        return Err(Error::validation(format!(
            "sentence {}: cannot assemble an empty sentence",
            sentence.id
        )));
    }
    let mut token_ids = vec![CLS_ID];
    let mut segment_ids = vec![0u8];
    let mut unit_map: Vec<Vec<usize>> = Vec::with_capacity(n + 1);
    for w in &sentence.suw {
        let ids = model.encode_suw(w);
        let start = token_ids.len();
        token_ids.extend(&ids);
        segment_ids.extend(std::iter::repeat(0).take(ids.len()));
        unit_map.push((start..start + ids.len()).collect());
    }
    token_ids.push(SEP_ID);
    segment_ids.push(0);

    if mode == DpMode::RootKnown {
        let root = root_token.ok_or_else(|| {
            Error::config("root_known assembly requires a root token index".to_string())
        })?;
        if root >= n {
            return Err(Error::validation(format!(
                "sentence {}: root token {root} out of {n} SUWs",
                sentence.id
            )));
        }
        for &id in &model.encode_suw(&sentence.suw[root]) {
            token_ids.push(id);
            segment_ids.push(1);
        }
        token_ids.push(SEP_ID);
        segment_ids.push(1);
    }

    let root_position = token_ids.len();
    token_ids.push(ROOT_ID);
    segment_ids.push(1);
    unit_map.push(vec![root_position]);

    check_len(token_ids.len(), max_tokens, "assemble_dp")?;
    Ok(AssembledInput {
        predicate_indicator: vec![0.0; token_ids.len()],
        candidate_units: (0..=n).collect(),
        root_position: Some(root_position),
        predicate_unit: None,
        n_prediction_units: n,
        token_ids,
        segment_ids,
        unit_map,
    })
}

/// SRL input: `[CLS] w_1..w_n [SEP] w_p [SEP]`, the predicate surface
/// appended as a second segment. With `include_predicate_segment` off
/// (the predicate-ablation run) the input stops at the first `[SEP]`.
pub fn assemble_srl(
    sentence: &Sentence,
    frame: &PredicateFrame,
    setting: SrlSetting,
    model: &SubwordModel,
    max_tokens: usize,
    include_predicate_segment: bool,
) -> Result<AssembledInput> {
    let n = sentence.n_suw();
    if n == 0 {
        return Err(Error::validation(format!(
            "sentence {}: cannot assemble an empty sentence",
            sentence.id
        )));
    }
    let (pred_suw_lo, pred_suw_hi) =
        sentence.luw_range_to_suw(frame.predicate.0, frame.predicate.1);

    let mut token_ids = vec![CLS_ID];
    let mut segment_ids = vec![0u8];
    let mut indicator = vec![0.0f64];
    let mut suw_positions: Vec<Vec<usize>> = Vec::with_capacity(n);
    for (wi, w) in sentence.suw.iter().enumerate() {
        let ids = model.encode_suw(w);
        let start = token_ids.len();
        let in_pred = wi >= pred_suw_lo && wi < pred_suw_hi;
        token_ids.extend(&ids);
        segment_ids.extend(std::iter::repeat(0).take(ids.len()));
        indicator.extend(std::iter::repeat(if in_pred { 1.0 } else { 0.0 }).take(ids.len()));
        suw_positions.push((start..start + ids.len()).collect());
    }
    token_ids.push(SEP_ID);
    segment_ids.push(0);
    indicator.push(0.0);

    if include_predicate_segment {
        for wi in pred_suw_lo..pred_suw_hi {
            for &id in &model.encode_suw(&sentence.suw[wi]) {
                token_ids.push(id);
                segment_ids.push(1);
                indicator.push(1.0);
            }
        }
        token_ids.push(SEP_ID);
        segment_ids.push(1);
        indicator.push(0.0);
    }

    let luw_positions = |lo: usize, hi: usize| -> Vec<usize> {
        let (s, e) = sentence.luw_range_to_suw(lo, hi);
        (s..e).flat_map(|wi| suw_positions[wi].iter().copied()).collect()
    };

    let (unit_map, predicate_unit, n_prediction_units) = match setting {
        SrlSetting::Morpheme => {
            // one unit per LUW; the predicate unit is its first LUW
            let unit_map: Vec<Vec<usize>> = (0..sentence.n_luw())
                .map(|li| luw_positions(li, li + 1))
                .collect();
            (unit_map, frame.predicate.0, sentence.n_luw())
        }
        SrlSetting::SpanGiven => {
            // one unit per argument span, then the predicate unit
            let mut unit_map: Vec<Vec<usize>> = frame
                .arguments
                .iter()
                .map(|a| luw_positions(a.span.0, a.span.1))
                .collect();
            let n_args = unit_map.len();
            unit_map.push(luw_positions(frame.predicate.0, frame.predicate.1));
            (unit_map, n_args, n_args)
        }
    };

    check_len(token_ids.len(), max_tokens, "assemble_srl")?;
    Ok(AssembledInput {
        token_ids,
        segment_ids,
        unit_map,
        predicate_indicator: indicator,
        root_position: None,
        candidate_units: Vec::new(),
        predicate_unit: Some(predicate_unit),
        n_prediction_units,
    })
}

/// Row per unit = arithmetic mean of its member rows.
pub fn average_units(hidden: &Tensor, unit_map: &[Vec<usize>]) -> Result<Tensor> {
    if !hidden.is_matrix() {
        return Err(Error::shape(format!(
            "average_units: expected matrix, got shape {:?}",
            hidden.shape()
        )));
    }
    let (n, h) = (hidden.rows(), hidden.cols());
    let mut out = vec![0.0; unit_map.len() * h];
    for (u, set) in unit_map.iter().enumerate() {
        if set.is_empty() {
            return Err(Error::validation(format!(
                "average_units: unit {u} has an empty position set"
            )));
        }
        let inv = 1.0 / set.len() as f64;
        for &p in set {
            if p >= n {
                return Err(Error::shape(format!(
                    "average_units: unit {u} position {p} out of {n} rows"
                )));
            }
            for j in 0..h {
                out[u * h + j] += hidden.at(p, j) * inv;
            }
        }
    }
    Tensor::matrix(unit_map.len(), h, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Argument;
    use crate::tokenize::bpe::{CLS, ROOT, SEP};

    fn model_for(sentences: &[Sentence]) -> SubwordModel {
        SubwordModel::learn(sentences, 0).unwrap()
    }

    fn one_suw() -> Sentence {
        Sentence::from_suw("s1", vec!["a".to_string()])
    }

    fn tokens_of(model: &SubwordModel, input: &AssembledInput) -> Vec<String> {
        input
            .token_ids
            .iter()
            .map(|&id| model.token_str(id).unwrap().to_string())
            .collect()
    }

    #[test]
    fn root_unknown_template() {
        let s = one_suw();
        let model = model_for(std::slice::from_ref(&s));
        let input = assemble_dp(&s, DpMode::RootUnknown, None, &model, 320).unwrap();
        assert_eq!(tokens_of(&model, &input), vec![CLS, "a", SEP, ROOT]);
        assert_eq!(input.segment_ids, vec![0, 0, 0, 1]);
        assert_eq!(input.root_position, Some(3));
        assert_eq!(input.unit_map, vec![vec![1], vec![3]]);
        assert_eq!(input.candidate_units, vec![0, 1]);
    }

    #[test]
    fn root_known_template() {
        let s = one_suw();
        let model = model_for(std::slice::from_ref(&s));
        let input = assemble_dp(&s, DpMode::RootKnown, Some(0), &model, 320).unwrap();
        assert_eq!(tokens_of(&model, &input), vec![CLS, "a", SEP, "a", SEP, ROOT]);
        assert_eq!(input.segment_ids, vec![0, 0, 0, 1, 1, 1]);
        // the second-segment copy belongs to no unit
        assert_eq!(input.unit_map, vec![vec![1], vec![5]]);
    }

    #[test]
    fn root_known_without_root_token_is_config_error() {
        let s = one_suw();
        let model = model_for(std::slice::from_ref(&s));
        let err = assemble_dp(&s, DpMode::RootKnown, None, &model, 320).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn oversized_input_is_length_error() {
        let s = Sentence::from_suw("long", vec!["abcdef".to_string(); 4]);
        let model = model_for(std::slice::from_ref(&s));
        let err = assemble_dp(&s, DpMode::RootUnknown, None, &model, 10).unwrap_err();
        assert!(matches!(err, Error::Length(_)));
    }

    #[test]
    fn dp_unit_map_partitions_content_positions() {
        let s = Sentence::from_suw(
            "p",
            vec!["ab".to_string(), "ba".to_string(), "abba".to_string()],
        );
        let model = model_for(std::slice::from_ref(&s));
        let input = assemble_dp(&s, DpMode::RootUnknown, None, &model, 320).unwrap();
        let mut seen = vec![0usize; input.token_ids.len()];
        for set in &input.unit_map[..s.n_suw()] {
            for &p in set {
                seen[p] += 1;
            }
        }
        // content = everything except [CLS], [SEP], [ROOT]
        let specials = [0, input.token_ids.len() - 2, input.token_ids.len() - 1];
        for (p, &count) in seen.iter().enumerate() {
            let expected = if specials.contains(&p) { 0 } else { 1 };
            assert_eq!(count, expected, "position {p}");
        }
    }

    fn srl_sentence() -> Sentence {
        // LUWs: [ab] [cd e] [fg], predicate = last LUW, one argument
        let mut s = Sentence::from_suw(
            "srl1",
            vec![
                "ab".to_string(),
                "cd".to_string(),
                "e".to_string(),
                "fg".to_string(),
            ],
        );
        s.luw_spans = vec![(0, 1), (1, 3), (3, 4)];
        s.frames = vec![PredicateFrame {
            predicate: (2, 3),
            arguments: vec![Argument {
                label: "Agent".into(),
                span: (0, 1),
            }],
        }];
        s
    }

    #[test]
    fn srl_second_segment_and_indicator() {
        let s = srl_sentence();
        let model = model_for(std::slice::from_ref(&s));
        let input = assemble_srl(
            &s,
            &s.frames[0],
            SrlSetting::Morpheme,
            &model,
            320,
            true,
        )
        .unwrap();
        // indicator is 1 on the in-sentence predicate subwords and on the
        // second-segment copy, 0 everywhere else including both [SEP]s
        let toks = tokens_of(&model, &input);
        assert_eq!(
            toks,
            vec![CLS, "a", "b", "c", "d", "e", "f", "g", SEP, "f", "g", SEP]
        );
        assert_eq!(
            input.predicate_indicator,
            vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0, 0.0]
        );
        assert_eq!(input.segment_ids, vec![0, 0, 0, 0, 0, 0, 0, 0, 0, 1, 1, 1]);
    }

    #[test]
    fn srl_morpheme_unit_map_counts_luws() {
        let s = srl_sentence();
        let model = model_for(std::slice::from_ref(&s));
        let input =
            assemble_srl(&s, &s.frames[0], SrlSetting::Morpheme, &model, 320, true).unwrap();
        assert_eq!(input.unit_map.len(), s.n_luw());
        assert_eq!(input.n_prediction_units, s.n_luw());
        assert_eq!(input.predicate_unit, Some(2));
    }

    #[test]
    fn srl_span_given_unit_map_counts_arguments_plus_predicate() {
        let mut s = srl_sentence();
        s.frames[0].arguments.push(Argument {
            label: "Theme".into(),
            span: (1, 2),
        });
        let model = model_for(std::slice::from_ref(&s));
        let input =
            assemble_srl(&s, &s.frames[0], SrlSetting::SpanGiven, &model, 320, true).unwrap();
        assert_eq!(input.unit_map.len(), 3); // 2 arguments + 1 predicate
        assert_eq!(input.n_prediction_units, 2);
        assert_eq!(input.predicate_unit, Some(2));
    }

    #[test]
    fn srl_without_predicate_segment() {
        let s = srl_sentence();
        let model = model_for(std::slice::from_ref(&s));
        let input =
            assemble_srl(&s, &s.frames[0], SrlSetting::Morpheme, &model, 320, false).unwrap();
        let toks = tokens_of(&model, &input);
        assert_eq!(toks.last().map(String::as_str), Some(SEP));
        assert_eq!(toks.len(), 1 + 7 + 1); // [CLS], content subwords, [SEP]
        // indicator still marks the in-sentence predicate subwords
        assert_eq!(input.predicate_indicator.iter().sum::<f64>(), 2.0);
    }

    #[test]
    fn average_units_singleton_is_identity_and_pairs_average() {
        let hidden = Tensor::matrix(4, 2, vec![1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 5.0, 7.0]).unwrap();
        let out = average_units(&hidden, &[vec![1], vec![0, 2]]).unwrap();
        assert_eq!(out.row_slice(0), &[2.0, 2.0]);
        assert_eq!(out.row_slice(1), &[2.0, 2.0]);
        let out2 = average_units(&hidden, &[vec![3]]).unwrap();
        assert_eq!(out2.row_slice(0), &[5.0, 7.0]);
    }

    #[test]
    fn average_units_rejects_empty_unit() {
        let hidden = Tensor::matrix(2, 2, vec![0.0; 4]).unwrap();
        assert!(average_units(&hidden, &[vec![]]).is_err());
    }
}
