//! Training loops: single-task and hierarchical multitask with task
//! sampling and loss scaling, best-validation checkpointing, evaluation,
//! and random hyperparameter search with median pruning.

pub mod hpo;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{PredicateFrame, Sentence, SplitCorpus};
use crate::error::{Error, Result};
use crate::model::dp::{decode_dp, dp_scorer, dp_sentence_log_prob, evaluate_dp, DpDecode, DpEval};
use crate::model::encoder::encode;
use crate::model::srl::{
    bio_decode, evaluate_srl_spans, gold_tags_morpheme, srl_item_log_prob, srl_log_probs,
    RoleSpan, SrlEval,
};
use crate::model::{init_params, ModelConfig, RunMode, TapeParams};
use crate::numerics::{AdamW, ParamSet, Tape, Var};
use crate::tokenize::{assemble_dp, assemble_srl, AssembledInput, DpMode, SrlSetting, SubwordModel};

/// Validation target selected per the trained task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetMetric {
    Uas,
    MicroF1,
}

/// All training hyperparameters of one run.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub eta: f64,
    pub gamma_bert: f64,
    pub gamma_dp: f64,
    pub gamma_lstm: f64,
    /// Scale on the DP loss; folds into the single-task DP loss too.
    pub lambda_dp: f64,
    /// Probability that a training step draws an SRL batch.
    pub beta_srl: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub max_tokens: usize,
    pub seed: u64,
    pub target_metric: TargetMetric,
    pub weight_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            eta: 1e-3,
            gamma_bert: 0.1,
            gamma_dp: 0.1,
            gamma_lstm: 0.1,
            lambda_dp: 1.0,
            beta_srl: 0.5,
            batch_size: 32,
            epochs: 10,
            max_tokens: 320,
            seed: 0,
            target_metric: TargetMetric::MicroF1,
            weight_decay: 0.01,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.eta <= 0.0 || !self.eta.is_finite() {
            return Err(Error::config(format!("eta must be positive, got {}", self.eta)));
        }
        if !(0.0..=1.0).contains(&self.beta_srl) {
            return Err(Error::config(format!(
                "beta_srl must be in [0,1], got {}",
                self.beta_srl
            )));
        }
        if self.lambda_dp <= 0.0 {
            return Err(Error::config(format!(
                "lambda_dp must be positive, got {}",
                self.lambda_dp
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be at least 1"));
        }
        if self.max_tokens == 0 {
            return Err(Error::config("max_tokens must be positive"));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::config("weight_decay must be non-negative"));
        }
        for (name, g) in [
            ("gamma_bert", self.gamma_bert),
            ("gamma_dp", self.gamma_dp),
            ("gamma_lstm", self.gamma_lstm),
        ] {
            if !(0.0..1.0).contains(&g) {
                return Err(Error::config(format!("{name} must be in [0,1), got {g}")));
            }
        }
        Ok(())
    }
}

/// Subword model plus the label inventories, fixed before training.
#[derive(Debug, Clone)]
pub struct Vocabularies {
    pub subwords: SubwordModel,
    pub dep_labels: Vec<String>,
    pub roles: Vec<String>,
}

impl Vocabularies {
    /// Collect sorted inventories from the given corpora.
    pub fn collect(
        subwords: SubwordModel,
        dp_sentences: &[Sentence],
        srl_sentences: &[Sentence],
    ) -> Self {
        let mut dep_labels: Vec<String> = dp_sentences
            .iter()
            .chain(srl_sentences.iter())
            .filter_map(|s| s.dep_labels.as_ref())
            .flatten()
            .cloned()
            .collect();
        dep_labels.sort();
        dep_labels.dedup();
        let mut roles: Vec<String> = dp_sentences
            .iter()
            .chain(srl_sentences.iter())
            .flat_map(|s| &s.frames)
            .flat_map(|f| &f.arguments)
            .map(|a| a.label.clone())
            .collect();
        roles.sort();
        roles.dedup();
        Vocabularies {
            subwords,
            dep_labels,
            roles,
        }
    }

    pub fn dep_label_ids(&self) -> BTreeMap<String, usize> {
        self.dep_labels
            .iter()
            .enumerate()
            .map(|(i, l)| (l.clone(), i))
            .collect()
    }

    pub fn role_ids(&self) -> BTreeMap<String, usize> {
        self.roles
            .iter()
            .enumerate()
            .map(|(i, r)| (r.clone(), i))
            .collect()
    }

    /// Tag inventory size for an SRL setting.
    pub fn n_srl_tags(&self, setting: SrlSetting) -> usize {
        match setting {
            SrlSetting::Morpheme => 1 + 2 * self.roles.len(),
            SrlSetting::SpanGiven => self.roles.len(),
        }
    }
}

/// Everything the model needs besides the train hyperparameters.
#[derive(Debug, Clone)]
pub struct TrainSetup {
    pub model_cfg: ModelConfig,
    pub vocab: Vocabularies,
    pub dp_mode: DpMode,
    pub srl_setting: SrlSetting,
    /// Off under the SRL-predicate ablation.
    pub srl_predicate_segment: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainTask {
    Dp,
    Srl,
    Multi,
}

/// Per-step Bernoulli draw between the two tasks, on its own RNG stream
/// so the draw sequence never perturbs batches, dropout, or the model.
pub struct TaskSchedule {
    rng: ChaCha8Rng,
    beta_srl: f64,
}

impl TaskSchedule {
    pub fn new(seed: u64, beta_srl: f64) -> Self {
        TaskSchedule {
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5441_534b),
            beta_srl,
        }
    }

    pub fn next_is_srl(&mut self) -> bool {
        self.rng.gen::<f64>() < self.beta_srl
    }
}

/// Cycling batch stream with reshuffle-on-exhaustion.
struct BatchStream {
    order: Vec<usize>,
    pos: usize,
    batch_size: usize,
    rng: ChaCha8Rng,
}

impl BatchStream {
    fn new(n_items: usize, batch_size: usize, seed: u64) -> Self {
        let mut s = BatchStream {
            order: (0..n_items).collect(),
            pos: 0,
            batch_size,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        s.order.shuffle(&mut s.rng);
        s
    }

    fn batches_per_pass(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }

    /// Next batch of item indices and whether it completes a pass.
    fn next_batch(&mut self) -> (Vec<usize>, bool) {
        let end = (self.pos + self.batch_size).min(self.order.len());
        let batch = self.order[self.pos..end].to_vec();
        self.pos = end;
        let completed = self.pos >= self.order.len();
        if completed {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        (batch, completed)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub dp_steps: u64,
    pub srl_steps: u64,
    pub mean_dp_loss: Option<f64>,
    pub mean_srl_loss: Option<f64>,
    pub val_metric: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best_params: ParamSet,
    pub final_params: ParamSet,
    /// 0 means the initialization checkpoint was never beaten (or epochs = 0).
    pub best_epoch: usize,
    pub best_metric: Option<f64>,
    pub history: Vec<EpochRecord>,
    pub pruned: bool,
}

/// Gold SUW index of the root token.
fn gold_root(sentence: &Sentence) -> Result<usize> {
    sentence
        .heads
        .as_ref()
        .and_then(|hs| hs.iter().position(|&h| h == 0))
        .ok_or_else(|| {
            Error::validation(format!("sentence {} has no gold root", sentence.id))
        })
}

/// One trainable DP item: assembled input plus gold targets.
struct DpItem {
    input: AssembledInput,
    heads: Vec<usize>,
    label_ids: Vec<usize>,
}

/// One trainable SRL item.
struct SrlItem {
    input: AssembledInput,
    gold_tags: Vec<usize>,
}

fn build_dp_items(
    setup: &TrainSetup,
    sentences: &[Sentence],
    max_tokens: usize,
    what: &str,
) -> Result<Vec<DpItem>> {
    let label_ids = setup.vocab.dep_label_ids();
    let mut items = Vec::new();
    let mut skipped = 0;
    for s in sentences {
        let heads = s.heads.clone().ok_or_else(|| {
            Error::validation(format!("sentence {} lacks a gold tree", s.id))
        })?;
        let labels = s.dep_labels.as_ref().expect("validated with heads");
        let mut ids = Vec::with_capacity(labels.len());
        for l in labels {
            ids.push(*label_ids.get(l).ok_or_else(|| {
                Error::validation(format!("dependency label {l} not in the inventory"))
            })?);
        }
        let root = match setup.dp_mode {
            DpMode::RootKnown => Some(gold_root(s)?),
            DpMode::RootUnknown => None,
        };
        match assemble_dp(s, setup.dp_mode, root, &setup.vocab.subwords, max_tokens) {
            Ok(input) => items.push(DpItem {
                input,
                heads,
                label_ids: ids,
            }),
            Err(Error::Length(_)) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    if skipped > 0 {
        eprintln!("warning: skipped {skipped} oversize {what} sentences");
    }
    Ok(items)
}

fn build_srl_items(
    setup: &TrainSetup,
    sentences: &[Sentence],
    max_tokens: usize,
    what: &str,
) -> Result<Vec<SrlItem>> {
    let role_ids = setup.vocab.role_ids();
    let mut items = Vec::new();
    let mut skipped = 0;
    for s in sentences {
        for frame in &s.frames {
            let input = match assemble_srl(
                s,
                frame,
                setup.srl_setting,
                &setup.vocab.subwords,
                max_tokens,
                setup.srl_predicate_segment,
            ) {
                Ok(i) => i,
                Err(Error::Length(_)) => {
                    skipped += 1;
                    continue;
                }
                Err(e) => return Err(e),
            };
            let gold_tags = match setup.srl_setting {
                SrlSetting::Morpheme => gold_tags_morpheme(frame, s.n_luw(), &role_ids)?,
                SrlSetting::SpanGiven => {
                    let mut tags = Vec::with_capacity(frame.arguments.len());
                    for a in &frame.arguments {
                        tags.push(*role_ids.get(&a.label).ok_or_else(|| {
                            Error::validation(format!(
                                "role {} not in the inventory",
                                a.label
                            ))
                        })?);
                    }
                    tags
                }
            };
            items.push(SrlItem { input, gold_tags });
        }
    }
    if skipped > 0 {
        eprintln!("warning: skipped {skipped} oversize {what} frames");
    }
    Ok(items)
}

fn dp_batch_loss(
    tape: &mut Tape,
    tp: &TapeParams,
    setup: &TrainSetup,
    items: &[&DpItem],
    mode: &mut RunMode,
) -> Result<Var> {
    let mut total: Option<Var> = None;
    let mut n_tokens = 0usize;
    for item in items {
        let x = encode(tape, tp, &setup.model_cfg, &item.input, mode)?;
        let units = tape.mean_over_sets(x, &item.input.unit_map)?;
        let sc = dp_scorer(tape, tp, &setup.model_cfg, units, mode)?;
        let lp = dp_sentence_log_prob(tape, tp, &sc, &item.heads, &item.label_ids)?;
        n_tokens += item.heads.len();
        total = Some(match total {
            Some(t) => tape.add(t, lp)?,
            None => lp,
        });
    }
    let total = total.ok_or_else(|| Error::validation("empty DP batch"))?;
    Ok(tape.scale(total, -1.0 / n_tokens as f64))
}

fn srl_batch_loss(
    tape: &mut Tape,
    tp: &TapeParams,
    setup: &TrainSetup,
    items: &[&SrlItem],
    mode: &mut RunMode,
) -> Result<Var> {
    let mut total: Option<Var> = None;
    for item in items {
        let x = encode(tape, tp, &setup.model_cfg, &item.input, mode)?;
        let logp = srl_log_probs(tape, tp, &setup.model_cfg, x, &item.input, mode)?;
        let lp = srl_item_log_prob(tape, logp, &item.gold_tags)?;
        total = Some(match total {
            Some(t) => tape.add(t, lp)?,
            None => lp,
        });
    }
    let total = total.ok_or_else(|| Error::validation("empty SRL batch"))?;
    Ok(tape.scale(total, -1.0 / items.len() as f64))
}

/// Which stream's full pass defines an epoch.
fn epoch_task(task: TrainTask) -> TrainTask {
    match task {
        TrainTask::Dp => TrainTask::Dp,
        // the paper counts epochs in SRL passes for every SRL-bearing model
        TrainTask::Srl | TrainTask::Multi => TrainTask::Srl,
    }
}

/// Probability that a step belongs to the epoch-defining task.
fn epoch_task_prob(task: TrainTask, beta_srl: f64) -> f64 {
    match epoch_task(task) {
        TrainTask::Dp => 1.0 - beta_srl,
        _ => beta_srl,
    }
}

/// Unified training engine. Single-task runs are the degenerate mixes:
/// DP is beta = 0, SRL is beta = 1, so single-task SRL and multitask
/// training at beta_srl = 1 follow byte-identical trajectories.
#[allow(clippy::too_many_arguments)]
pub fn run_training(
    setup: &TrainSetup,
    cfg: &TrainConfig,
    task: TrainTask,
    dp_train: Option<&[Sentence]>,
    dp_dev: Option<&[Sentence]>,
    srl_train: Option<&[Sentence]>,
    srl_dev: Option<&[Sentence]>,
    mut epoch_hook: Option<&mut dyn FnMut(usize, f64) -> bool>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    setup.model_cfg.validate()?;
    let beta = match task {
        TrainTask::Dp => 0.0,
        TrainTask::Srl => 1.0,
        TrainTask::Multi => cfg.beta_srl,
    };
    let needs_dp = beta < 1.0;
    let needs_srl = beta > 0.0;
    if task == TrainTask::Multi && cfg.beta_srl == 0.0 {
        return Err(Error::config(
            "multitask training with beta_srl = 0 never completes an SRL epoch",
        ));
    }

    let dp_items = if needs_dp {
        let data = dp_train.ok_or_else(|| Error::config("DP training data missing"))?;
        if data.is_empty() {
            return Err(Error::config("DP training corpus is empty"));
        }
        let items = build_dp_items(setup, data, cfg.max_tokens, "DP train")?;
        if items.is_empty() {
            return Err(Error::config("no usable DP training sentences"));
        }
        items
    } else {
        Vec::new()
    };
    let srl_items = if needs_srl {
        let data = srl_train.ok_or_else(|| Error::config("SRL training data missing"))?;
        if data.is_empty() {
            return Err(Error::config("SRL training corpus is empty"));
        }
        let items = build_srl_items(setup, data, cfg.max_tokens, "SRL train")?;
        if items.is_empty() {
            return Err(Error::config("no usable SRL training frames"));
        }
        items
    } else {
        Vec::new()
    };

    let mut params = init_params(&setup.model_cfg, cfg.seed)?;
    let mut schedule = TaskSchedule::new(cfg.seed, beta);
    let mut dp_stream = BatchStream::new(dp_items.len(), cfg.batch_size, cfg.seed ^ 0x4450_4250);
    let mut srl_stream = BatchStream::new(srl_items.len(), cfg.batch_size, cfg.seed ^ 0x5352_4c42);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x44524f50);

    let epoch_stream_batches = match epoch_task(task) {
        TrainTask::Dp => dp_stream.batches_per_pass(),
        _ => srl_stream.batches_per_pass(),
    };
    let p_epoch = epoch_task_prob(task, beta);
    let warmup_steps = (epoch_stream_batches as f64 / p_epoch).ceil() as u64;
    let mut opt = AdamW::new(cfg.eta, cfg.weight_decay, warmup_steps);

    let mut best_params = params.clone();
    let mut best_metric: Option<f64> = None;
    let mut best_epoch = 0usize;
    let mut history = Vec::new();
    let mut pruned = false;
    let mut step: u64 = 0;

    'epochs: for epoch in 1..=cfg.epochs {
        let mut dp_losses = Vec::new();
        let mut srl_losses = Vec::new();
        let mut dp_steps = 0u64;
        let mut srl_steps = 0u64;
        loop {
            step += 1;
            let take_srl = schedule.next_is_srl();
            let mut tape = Tape::new();
            let tp = TapeParams::leaf_all(&mut tape, &params);
            let mut mode = RunMode::Train(&mut dropout_rng);
            let (loss_var, completed_epoch) = if take_srl {
                let (batch, completed) = srl_stream.next_batch();
                let refs: Vec<&SrlItem> = batch.iter().map(|&i| &srl_items[i]).collect();
                let loss = srl_batch_loss(&mut tape, &tp, setup, &refs, &mut mode)?;
                srl_steps += 1;
                (loss, completed && epoch_task(task) == TrainTask::Srl)
            } else {
                let (batch, completed) = dp_stream.next_batch();
                let refs: Vec<&DpItem> = batch.iter().map(|&i| &dp_items[i]).collect();
                let raw = dp_batch_loss(&mut tape, &tp, setup, &refs, &mut mode)?;
                let loss = tape.scale(raw, cfg.lambda_dp);
                dp_steps += 1;
                (loss, completed && epoch_task(task) == TrainTask::Dp)
            };
            let loss_value = tape.value(loss_var).item()?;
            if !loss_value.is_finite() {
                return Err(Error::numeric(format!(
                    "non-finite loss {loss_value} at epoch {epoch}, step {step}"
                )));
            }
            if take_srl {
                srl_losses.push(loss_value);
            } else {
                dp_losses.push(loss_value);
            }
            tape.backward(loss_var)?;
            let grads = tp.collect_grads(&tape);
            opt.step(&mut params, &grads, step)?;
            if completed_epoch {
                break;
            }
        }

        let val_metric = validate(setup, cfg, task, &params, dp_dev, srl_dev)?;
        let mean = |v: &[f64]| {
            if v.is_empty() {
                None
            } else {
                Some(v.iter().sum::<f64>() / v.len() as f64)
            }
        };
        history.push(EpochRecord {
            epoch,
            dp_steps,
            srl_steps,
            mean_dp_loss: mean(&dp_losses),
            mean_srl_loss: mean(&srl_losses),
            val_metric,
        });
        if best_metric.map_or(true, |b| val_metric > b) {
            best_metric = Some(val_metric);
            best_params = params.clone();
            best_epoch = epoch;
        }
        if let Some(hook) = epoch_hook.as_deref_mut() {
            if !hook(epoch, val_metric) {
                pruned = true;
                break 'epochs;
            }
        }
    }

    Ok(TrainOutcome {
        best_params,
        final_params: params,
        best_epoch,
        best_metric,
        history,
        pruned,
    })
}

/// Validation metric for the configured target.
fn validate(
    setup: &TrainSetup,
    cfg: &TrainConfig,
    task: TrainTask,
    params: &ParamSet,
    dp_dev: Option<&[Sentence]>,
    srl_dev: Option<&[Sentence]>,
) -> Result<f64> {
    let want_uas = match task {
        TrainTask::Dp => true,
        TrainTask::Srl => false,
        TrainTask::Multi => cfg.target_metric == TargetMetric::Uas,
    };
    if want_uas {
        let dev = dp_dev.ok_or_else(|| Error::config("DP validation data missing"))?;
        // during training, root-known inputs use the gold root
        let eval = evaluate_dp_params(setup, params, dev, cfg.max_tokens, None)?.0;
        Ok(eval.uas)
    } else {
        let dev = srl_dev.ok_or_else(|| Error::config("SRL validation data missing"))?;
        let eval = evaluate_srl_params(setup, params, dev, cfg.max_tokens)?.0;
        Ok(eval.micro_f1)
    }
}

/// Decode one corpus with the DP head. `roots` supplies the root token
/// per sentence for root-known inputs at test time; `None` falls back to
/// the gold root.
pub fn predict_dp(
    setup: &TrainSetup,
    params: &ParamSet,
    sentences: &[Sentence],
    max_tokens: usize,
    roots: Option<&[usize]>,
) -> Result<Vec<DpDecode>> {
    if let Some(r) = roots {
        if r.len() != sentences.len() {
            return Err(Error::validation(format!(
                "{} root predictions for {} sentences",
                r.len(),
                sentences.len()
            )));
        }
    }
    let mut out = Vec::with_capacity(sentences.len());
    for (si, s) in sentences.iter().enumerate() {
        let root = match setup.dp_mode {
            DpMode::RootUnknown => None,
            DpMode::RootKnown => Some(match roots {
                Some(r) => r[si],
                None => gold_root(s)?,
            }),
        };
        let input = assemble_dp(s, setup.dp_mode, root, &setup.vocab.subwords, max_tokens)?;
        let mut tape = Tape::new();
        let tp = TapeParams::leaf_all(&mut tape, params);
        let mut mode = RunMode::Eval;
        let x = encode(&mut tape, &tp, &setup.model_cfg, &input, &mut mode)?;
        let units = tape.mean_over_sets(x, &input.unit_map)?;
        let sc = dp_scorer(&mut tape, &tp, &setup.model_cfg, units, &mut mode)?;
        out.push(decode_dp(&mut tape, &tp, &sc)?);
    }
    Ok(out)
}

/// Root tokens predicted by a root-unknown model, for the root-known
/// test-time protocol.
pub fn predict_root_tokens(
    setup: &TrainSetup,
    params: &ParamSet,
    sentences: &[Sentence],
    max_tokens: usize,
) -> Result<Vec<usize>> {
    let unknown_setup = TrainSetup {
        dp_mode: DpMode::RootUnknown,
        ..setup.clone()
    };
    Ok(predict_dp(&unknown_setup, params, sentences, max_tokens, None)?
        .into_iter()
        .map(|d| d.root_token)
        .collect())
}

/// Evaluate the DP head over a corpus with gold trees.
pub fn evaluate_dp_params(
    setup: &TrainSetup,
    params: &ParamSet,
    sentences: &[Sentence],
    max_tokens: usize,
    roots: Option<&[usize]>,
) -> Result<(DpEval, Vec<DpDecode>)> {
    // sentences too long to assemble cannot be decoded; keep eval honest
    // by failing rather than silently skipping
    let decodes = predict_dp(setup, params, sentences, max_tokens, roots)?;
    let label_ids = setup.vocab.dep_label_ids();
    let mut preds = Vec::with_capacity(sentences.len());
    let mut golds = Vec::with_capacity(sentences.len());
    for (s, d) in sentences.iter().zip(&decodes) {
        let heads = s.heads.clone().ok_or_else(|| {
            Error::validation(format!("sentence {} lacks a gold tree", s.id))
        })?;
        let labels = s.dep_labels.as_ref().expect("validated with heads");
        let mut gold_ids = Vec::with_capacity(labels.len());
        for l in labels {
            gold_ids.push(*label_ids.get(l).ok_or_else(|| {
                Error::validation(format!("dependency label {l} not in the inventory"))
            })?);
        }
        preds.push((d.heads.clone(), d.label_ids.clone()));
        golds.push((heads, gold_ids));
    }
    Ok((evaluate_dp(&preds, &golds)?, decodes))
}

/// Per-frame predicted role spans for a corpus.
pub fn predict_srl(
    setup: &TrainSetup,
    params: &ParamSet,
    sentences: &[Sentence],
    max_tokens: usize,
) -> Result<Vec<Vec<Vec<RoleSpan>>>> {
    let role_ids = setup.vocab.role_ids();
    let _ = &role_ids;
    let mut out = Vec::with_capacity(sentences.len());
    for s in sentences {
        let mut per_frame = Vec::with_capacity(s.frames.len());
        for frame in &s.frames {
            let input = assemble_srl(
                s,
                frame,
                setup.srl_setting,
                &setup.vocab.subwords,
                max_tokens,
                setup.srl_predicate_segment,
            )?;
            let mut tape = Tape::new();
            let tp = TapeParams::leaf_all(&mut tape, params);
            let mut mode = RunMode::Eval;
            let x = encode(&mut tape, &tp, &setup.model_cfg, &input, &mut mode)?;
            let logp = srl_log_probs(&mut tape, &tp, &setup.model_cfg, x, &input, &mut mode)?;
            let lv = tape.value(logp);
            let mut tags = Vec::with_capacity(input.n_prediction_units);
            for i in 0..input.n_prediction_units {
                let row = lv.row_slice(i);
                let mut best = 0;
                for (k, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = k;
                    }
                }
                tags.push(best);
            }
            let spans = match setup.srl_setting {
                SrlSetting::Morpheme => bio_decode(&tags),
                SrlSetting::SpanGiven => frame
                    .arguments
                    .iter()
                    .zip(&tags)
                    .map(|(a, &role)| RoleSpan {
                        role,
                        start: a.span.0,
                        end: a.span.1,
                    })
                    .collect(),
            };
            per_frame.push(spans);
        }
        out.push(per_frame);
    }
    Ok(out)
}

/// Predicted spans as frames, for JSONL prediction output.
pub fn spans_to_frames(
    setup: &TrainSetup,
    sentences: &[Sentence],
    predictions: &[Vec<Vec<RoleSpan>>],
) -> Vec<Sentence> {
    sentences
        .iter()
        .zip(predictions)
        .map(|(s, frames)| {
            let mut out = s.clone();
            out.frames = s
                .frames
                .iter()
                .zip(frames)
                .map(|(gold_frame, spans)| PredicateFrame {
                    predicate: gold_frame.predicate,
                    arguments: spans
                        .iter()
                        .map(|sp| crate::corpus::Argument {
                            label: setup.vocab.roles[sp.role].clone(),
                            span: (sp.start, sp.end),
                        })
                        .collect(),
                })
                .collect();
            out
        })
        .collect()
}

/// Evaluate the SRL head over a corpus with gold frames.
pub fn evaluate_srl_params(
    setup: &TrainSetup,
    params: &ParamSet,
    sentences: &[Sentence],
    max_tokens: usize,
) -> Result<(SrlEval, Vec<Vec<Vec<RoleSpan>>>)> {
    let predictions = predict_srl(setup, params, sentences, max_tokens)?;
    let role_ids = setup.vocab.role_ids();
    let mut frames = Vec::new();
    for (s, per_frame) in sentences.iter().zip(&predictions) {
        for (frame, pred_spans) in s.frames.iter().zip(per_frame) {
            let mut gold_spans = Vec::with_capacity(frame.arguments.len());
            for a in &frame.arguments {
                let role = *role_ids.get(&a.label).ok_or_else(|| {
                    Error::validation(format!("role {} not in the inventory", a.label))
                })?;
                gold_spans.push(RoleSpan {
                    role,
                    start: a.span.0,
                    end: a.span.1,
                });
            }
            frames.push((pred_spans.clone(), gold_spans));
        }
    }
    Ok((
        evaluate_srl_spans(&frames, &setup.vocab.roles)?,
        predictions,
    ))
}

/// Train a single task; DP trains on `lambda_dp * J_dp` exactly like the
/// shared multitask code path.
pub fn train_single(
    setup: &TrainSetup,
    cfg: &TrainConfig,
    task: TrainTask,
    train: &SplitCorpus,
    epoch_hook: Option<&mut dyn FnMut(usize, f64) -> bool>,
) -> Result<TrainOutcome> {
    match task {
        TrainTask::Dp => run_training(
            setup,
            cfg,
            TrainTask::Dp,
            Some(&train.train),
            Some(&train.dev),
            None,
            None,
            epoch_hook,
        ),
        TrainTask::Srl => run_training(
            setup,
            cfg,
            TrainTask::Srl,
            None,
            None,
            Some(&train.train),
            Some(&train.dev),
            epoch_hook,
        ),
        TrainTask::Multi => Err(Error::config(
            "use train_multitask for the multitask schedule",
        )),
    }
}

/// Hierarchical multitask training over both corpora.
pub fn train_multitask(
    setup: &TrainSetup,
    cfg: &TrainConfig,
    dp: &SplitCorpus,
    srl: &SplitCorpus,
    epoch_hook: Option<&mut dyn FnMut(usize, f64) -> bool>,
) -> Result<TrainOutcome> {
    run_training(
        setup,
        cfg,
        TrainTask::Multi,
        Some(&dp.train),
        Some(&dp.dev),
        Some(&srl.train),
        Some(&srl.dev),
        epoch_hook,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, SynthConfig};
    use crate::model::ModelConfig;

    pub(crate) fn tiny_setup(
        n_sentences: usize,
        setting: SrlSetting,
        dp_mode: DpMode,
        seed: u64,
    ) -> (TrainSetup, SplitCorpus, SplitCorpus) {
        let synth = SynthConfig {
            n_sentences,
            vocab_size: 40,
            n_roles: 3,
            min_args: 1,
            max_args: 2,
        };
        let sentences = generate_synthetic(&synth, seed).unwrap();
        let subwords = SubwordModel::learn(&sentences, 16).unwrap();
        let vocab = Vocabularies::collect(subwords, &sentences, &sentences);
        let n_tags = vocab.n_srl_tags(setting);
        let model_cfg = ModelConfig {
            vocab_size: vocab.subwords.vocab_size(),
            max_tokens: 128,
            embed_dim: 16,
            hidden_dim: 32,
            encoder_layers: 1,
            dp_dim: 32,
            n_dep_labels: vocab.dep_labels.len(),
            n_srl_tags: n_tags,
            mlp_hidden: 32,
            use_srl_bilstm: true,
            gamma_bert: 0.0,
            gamma_dp: 0.0,
            gamma_lstm: 0.0,
        };
        let setup = TrainSetup {
            model_cfg,
            vocab,
            dp_mode,
            srl_setting: setting,
            srl_predicate_segment: true,
        };
        let corpus = SplitCorpus {
            train: sentences.clone(),
            dev: sentences,
            test: Vec::new(),
        };
        (setup, corpus.clone(), corpus)
    }

    pub(crate) fn fast_config(epochs: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            eta: 1e-2,
            gamma_bert: 0.0,
            gamma_dp: 0.0,
            gamma_lstm: 0.0,
            lambda_dp: 1.0,
            beta_srl: 0.5,
            batch_size: 4,
            epochs,
            max_tokens: 128,
            seed,
            target_metric: TargetMetric::MicroF1,
            weight_decay: 0.0,
        }
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let (setup, dp, _) = tiny_setup(6, SrlSetting::Morpheme, DpMode::RootUnknown, 1);
        let cfg = fast_config(0, 1);
        let out = train_single(&setup, &cfg, TrainTask::Dp, &dp, None).unwrap();
        assert!(out.history.is_empty());
        assert_eq!(out.best_epoch, 0);
        assert_eq!(out.best_params, init_params(&setup.model_cfg, 1).unwrap());
    }

    #[test]
    fn same_seed_reproduces_history() {
        let run = || {
            let (setup, dp, srl) = tiny_setup(8, SrlSetting::Morpheme, DpMode::RootUnknown, 2);
            let cfg = fast_config(2, 9);
            train_multitask(&setup, &cfg, &dp, &srl, None)
                .unwrap()
                .history
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn dp_overfits_small_corpus() {
        let (setup, dp, _) = tiny_setup(10, SrlSetting::Morpheme, DpMode::RootUnknown, 3);
        let cfg = fast_config(40, 3);
        let out = train_single(&setup, &cfg, TrainTask::Dp, &dp, None).unwrap();
        let (eval, _) =
            evaluate_dp_params(&setup, &out.best_params, &dp.train, cfg.max_tokens, None)
                .unwrap();
        assert!(eval.uas > 0.9, "train UAS {} after 30 epochs", eval.uas);
    }

    #[test]
    fn srl_overfits_small_corpus() {
        let (setup, _, srl) = tiny_setup(10, SrlSetting::Morpheme, DpMode::RootUnknown, 4);
        let cfg = fast_config(40, 4);
        let out = train_single(&setup, &cfg, TrainTask::Srl, &srl, None).unwrap();
        let (eval, _) =
            evaluate_srl_params(&setup, &out.best_params, &srl.train, cfg.max_tokens).unwrap();
        assert!(eval.micro_f1 > 0.9, "train micro F1 {}", eval.micro_f1);
    }

    #[test]
    fn multitask_beta_one_equals_single_task_srl() {
        let (setup, dp, srl) = tiny_setup(8, SrlSetting::Morpheme, DpMode::RootUnknown, 5);
        let mut cfg = fast_config(3, 7);
        cfg.beta_srl = 1.0;
        let single = train_single(&setup, &cfg, TrainTask::Srl, &srl, None).unwrap();
        let multi = train_multitask(&setup, &cfg, &dp, &srl, None).unwrap();
        assert_eq!(single.history, multi.history);
        assert_eq!(single.best_params, multi.best_params);
    }

    #[test]
    fn multitask_beta_zero_is_config_error() {
        let (setup, dp, srl) = tiny_setup(6, SrlSetting::Morpheme, DpMode::RootUnknown, 6);
        let mut cfg = fast_config(1, 0);
        cfg.beta_srl = 0.0;
        assert!(train_multitask(&setup, &cfg, &dp, &srl, None).is_err());
    }

    #[test]
    fn task_schedule_tracks_beta() {
        let mut schedule = TaskSchedule::new(41, 0.720);
        let srl = (0..10_000).filter(|_| schedule.next_is_srl()).count();
        let frac = srl as f64 / 10_000.0;
        assert!((0.70..=0.74).contains(&frac), "observed SRL fraction {frac}");
    }

    #[test]
    fn zero_dp_loss_scale_leaves_dp_head_unchanged() {
        // engine-level check of the degenerate scale: lambda = 0 makes the
        // DP gradients vanish, so with zero weight decay the DP head stays
        // bit-identical after a DP step
        let (setup, dp, _) = tiny_setup(6, SrlSetting::Morpheme, DpMode::RootUnknown, 8);
        let items = build_dp_items(&setup, &dp.train, 128, "test").unwrap();
        let mut params = init_params(&setup.model_cfg, 0).unwrap();
        let before_u = params.get("dp.u").unwrap().clone();
        let before_emb = params.get("encoder.tok_emb").unwrap().clone();

        let mut tape = Tape::new();
        let tp = TapeParams::leaf_all(&mut tape, &params);
        let refs: Vec<&DpItem> = items.iter().take(4).collect();
        let raw = dp_batch_loss(&mut tape, &tp, &setup, &refs, &mut RunMode::Eval).unwrap();
        let loss = tape.scale(raw, 0.0);
        tape.backward(loss).unwrap();
        let grads = tp.collect_grads(&tape);
        let mut opt = AdamW::new(0.1, 0.0, 0);
        opt.step(&mut params, &grads, 1).unwrap();

        assert_eq!(params.get("dp.u").unwrap(), &before_u);
        assert_eq!(params.get("encoder.tok_emb").unwrap(), &before_emb);
    }

    #[test]
    fn optimizer_state_untouched_for_inactive_head() {
        let (setup, dp, _) = tiny_setup(6, SrlSetting::Morpheme, DpMode::RootUnknown, 9);
        let items = build_dp_items(&setup, &dp.train, 128, "test").unwrap();
        let mut params = init_params(&setup.model_cfg, 0).unwrap();
        let srl_before = params.get("srl.mlp.w1").unwrap().clone();

        let mut tape = Tape::new();
        let tp = TapeParams::leaf_all(&mut tape, &params);
        let refs: Vec<&DpItem> = items.iter().take(4).collect();
        let loss = dp_batch_loss(&mut tape, &tp, &setup, &refs, &mut RunMode::Eval).unwrap();
        tape.backward(loss).unwrap();
        let grads = tp.collect_grads(&tape);
        assert!(!grads.contains_key("srl.mlp.w1"));
        assert!(grads.contains_key("dp.u"));
        let mut opt = AdamW::new(0.1, 0.01, 0);
        opt.step(&mut params, &grads, 1).unwrap();
        assert_eq!(params.get("srl.mlp.w1").unwrap(), &srl_before);
        assert!(opt.touched().iter().all(|n| !n.starts_with("srl.")));
    }

    #[test]
    fn uniform_dp_loss_closed_form() {
        // zero DP head weights give uniform head and label distributions:
        // J_dp = ln(n candidates) + ln(n labels)
        let (setup, dp, _) = tiny_setup(4, SrlSetting::Morpheme, DpMode::RootUnknown, 10);
        let items = build_dp_items(&setup, &dp.train, 128, "test").unwrap();
        let mut params = init_params(&setup.model_cfg, 0).unwrap();
        for name in ["dp.u", "dp.w", "dp.v", "dp.label_u"] {
            let shape = params.get(name).unwrap().shape().to_vec();
            *params.get_mut(name).unwrap() = crate::numerics::Tensor::zeros(shape);
        }
        for item in &items {
            let mut tape = Tape::new();
            let tp = TapeParams::leaf_all(&mut tape, &params);
            let loss =
                dp_batch_loss(&mut tape, &tp, &setup, &[item], &mut RunMode::Eval).unwrap();
            let n = item.heads.len() as f64;
            let expect = n.ln() + (setup.model_cfg.n_dep_labels as f64).ln();
            let got = tape.value(loss).item().unwrap();
            assert!(
                (got - expect).abs() < 1e-9,
                "J_dp {got} vs closed form {expect}"
            );
        }
    }

    #[test]
    fn uniform_srl_loss_closed_form() {
        // zero MLP output layer gives a uniform tag distribution:
        // per-sentence J_srl = m ln k
        let (setup, _, srl) = tiny_setup(4, SrlSetting::Morpheme, DpMode::RootUnknown, 11);
        let items = build_srl_items(&setup, &srl.train, 128, "test").unwrap();
        let mut params = init_params(&setup.model_cfg, 0).unwrap();
        for name in ["srl.mlp.w2", "srl.mlp.b2"] {
            let shape = params.get(name).unwrap().shape().to_vec();
            *params.get_mut(name).unwrap() = crate::numerics::Tensor::zeros(shape);
        }
        let k = setup.model_cfg.n_srl_tags as f64;
        for item in &items {
            let mut tape = Tape::new();
            let tp = TapeParams::leaf_all(&mut tape, &params);
            let loss =
                srl_batch_loss(&mut tape, &tp, &setup, &[item], &mut RunMode::Eval).unwrap();
            let m = item.gold_tags.len() as f64;
            let got = tape.value(loss).item().unwrap();
            let expect = m * k.ln();
            assert!(
                (got - expect).abs() < 1e-9,
                "J_srl {got} vs closed form {expect}"
            );
        }
    }

    #[test]
    fn span_given_micro_f1_equals_accuracy() {
        let (setup, _, srl) = tiny_setup(10, SrlSetting::SpanGiven, DpMode::RootUnknown, 12);
        let params = init_params(&setup.model_cfg, 3).unwrap();
        let (eval, _) = evaluate_srl_params(&setup, &params, &srl.train, 128).unwrap();
        assert_eq!(eval.micro_f1, eval.classification_acc);
        assert_eq!(eval.identification_f1, 1.0);
    }

    #[test]
    fn untrained_srl_model_scores_near_chance() {
        let (setup, _, srl) = tiny_setup(20, SrlSetting::Morpheme, DpMode::RootUnknown, 13);
        let params = init_params(&setup.model_cfg, 1).unwrap();
        let (eval, _) = evaluate_srl_params(&setup, &params, &srl.train, 128).unwrap();
        assert!(eval.micro_f1 < 0.2, "untrained micro F1 {}", eval.micro_f1);
    }

    #[test]
    fn root_known_pipeline_uses_predicted_roots() {
        let (setup, dp, _) = tiny_setup(8, SrlSetting::Morpheme, DpMode::RootKnown, 14);
        let params = init_params(&setup.model_cfg, 2).unwrap();
        let roots = predict_root_tokens(&setup, &params, &dp.train, 128).unwrap();
        assert_eq!(roots.len(), dp.train.len());
        for (r, s) in roots.iter().zip(&dp.train) {
            assert!(*r < s.n_suw());
        }
        let decodes = predict_dp(&setup, &params, &dp.train, 128, Some(&roots)).unwrap();
        assert_eq!(decodes.len(), dp.train.len());
    }
}
