//! Command-line surface: corpus generation, splitting, subword learning,
//! training, hyperparameter search, evaluation, and prediction.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use tandem::config::RunConfig;
use tandem::corpus::{
    generate_synthetic, read_conllu, read_srl_jsonl, split_leak_safe, write_conllu,
    write_srl_jsonl, Sentence, Split, SplitCorpus, SplitSpec, SynthConfig,
};
use tandem::error::{Error, Result};
use tandem::manifest::{
    load_model_checkpoint, save_model_checkpoint, sha256_file, CheckpointManifest, RunManifest,
};
use tandem::model::srl::align_frame_spans;
use tandem::model::srl::evaluate_srl_spans;
use tandem::model::dp::evaluate_dp;
use tandem::numerics::ParamSet;
use tandem::report::{
    ablation_table, aggregate, per_label_csv, EvalReport,
};
use tandem::tokenize::{DpMode, SrlSetting, SubwordModel};
use tandem::trainer::hpo::{hpo_search, trial_log_jsonl};
use tandem::trainer::{
    evaluate_dp_params, evaluate_srl_params, predict_dp, predict_root_tokens, predict_srl,
    spans_to_frames, train_multitask, train_single, TrainOutcome, TrainSetup, TrainTask,
    Vocabularies,
};

#[derive(Parser)]
#[command(name = "tandem", version, about = "multitask dependency parsing + semantic role labeling toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TaskArg {
    Dp,
    Srl,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum HpoTaskArg {
    Dp,
    Srl,
    Multi,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic DP corpus and SRL corpus with shared sentences.
    GenSynth(GenSynthArgs),
    /// Leak-safe split of a DP corpus and an SRL corpus.
    Split(SplitArgs),
    /// Learn the subword model from one or more corpora.
    LearnBpe(LearnBpeArgs),
    /// Train a single-task model.
    Train(TrainArgs),
    /// Train the hierarchical multitask model.
    TrainMulti(TrainMultiArgs),
    /// Random hyperparameter search with median pruning.
    Hpo(HpoArgs),
    /// Evaluate a checkpoint on a data file, or predictions against gold.
    Eval(EvalArgs),
    /// Predict annotations for a data file.
    Predict(PredictArgs),
    /// Compare completed runs side by side.
    ReportAblation(ReportAblationArgs),
}

#[derive(Args)]
struct GenSynthArgs {
    /// Output CoNLL-U file for the DP corpus.
    #[arg(long)]
    out_dp: PathBuf,
    /// Output JSONL file for the SRL corpus.
    #[arg(long)]
    out_srl: PathBuf,
    #[arg(long, default_value_t = 100)]
    n_dp: usize,
    #[arg(long, default_value_t = 50)]
    n_srl: usize,
    /// Sentences present in both corpora.
    #[arg(long, default_value_t = 0)]
    n_shared: usize,
    #[arg(long, default_value_t = 200)]
    vocab_size: usize,
    #[arg(long, default_value_t = 5)]
    roles: usize,
    #[arg(long, default_value_t = 1)]
    min_args: usize,
    #[arg(long, default_value_t = 3)]
    max_args: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    manifest_out: Option<PathBuf>,
}

#[derive(Args)]
struct SplitArgs {
    /// DP corpus (CoNLL-U).
    #[arg(long)]
    dp: PathBuf,
    /// SRL corpus (JSONL).
    #[arg(long)]
    srl: PathBuf,
    /// Comma-separated train,dev,test ratios summing to 1.
    #[arg(long, default_value = "0.8,0.1,0.1")]
    ratios: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    manifest_out: Option<PathBuf>,
}

#[derive(Args)]
struct LearnBpeArgs {
    /// Input corpora (.conllu or .jsonl), repeatable.
    #[arg(long, required = true)]
    input: Vec<PathBuf>,
    #[arg(long, default_value_t = 500)]
    merges: usize,
    /// Whole-SUW atomic vocabulary instead of subword merges.
    #[arg(long)]
    no_bpe: bool,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    manifest_out: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct OverrideArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    beta_srl: Option<f64>,
    #[arg(long)]
    lambda_dp: Option<f64>,
    #[arg(long)]
    max_tokens: Option<usize>,
    /// Drop the predicate segment from SRL inputs.
    #[arg(long)]
    no_srl_predicate: bool,
    /// Use the root-unknown input for the multitask DP task.
    #[arg(long)]
    no_dp_predicate: bool,
    /// Require a whole-word subword model (no merges).
    #[arg(long)]
    no_bpe: bool,
    /// Remove the SRL BiLSTM; tag from the shared encoder layer.
    #[arg(long)]
    no_bilstm: bool,
}

impl OverrideArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(v) = self.seed {
            cfg.train.seed = v;
        }
        if let Some(v) = self.epochs {
            cfg.train.epochs = v;
        }
        if let Some(v) = self.eta {
            cfg.train.eta = v;
        }
        if let Some(v) = self.batch_size {
            cfg.train.batch_size = v;
        }
        if let Some(v) = self.beta_srl {
            cfg.train.beta_srl = v;
        }
        if let Some(v) = self.lambda_dp {
            cfg.train.lambda_dp = v;
        }
        if let Some(v) = self.max_tokens {
            cfg.train.max_tokens = v;
        }
        cfg.ablation.no_srl_predicate |= self.no_srl_predicate;
        cfg.ablation.no_dp_predicate |= self.no_dp_predicate;
        cfg.ablation.no_bpe |= self.no_bpe;
        cfg.ablation.no_bilstm |= self.no_bilstm;
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_enum)]
    task: TaskArg,
    #[arg(long)]
    out_dir: PathBuf,
    #[command(flatten)]
    overrides: OverrideArgs,
}

#[derive(Args)]
struct TrainMultiArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[command(flatten)]
    overrides: OverrideArgs,
}

#[derive(Args)]
struct HpoArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_enum)]
    task: HpoTaskArg,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    out_dir: PathBuf,
    /// Train pruned trials to completion and log their would-be results.
    #[arg(long)]
    force_complete: bool,
    #[command(flatten)]
    overrides: OverrideArgs,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint(s); repeat the flag for multi-seed aggregation.
    #[arg(long)]
    checkpoint: Vec<PathBuf>,
    /// Gold data file (CoNLL-U for dp, JSONL for srl).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Task to evaluate (required for multitask checkpoints).
    #[arg(long, value_enum)]
    task: Option<TaskArg>,
    /// Root-unknown checkpoint supplying roots for root-known inputs.
    #[arg(long)]
    root_checkpoint: Option<PathBuf>,
    /// Evaluate root-known inputs with gold roots (training protocol).
    #[arg(long)]
    use_gold_root: bool,
    /// Split label recorded in the report.
    #[arg(long, default_value = "test")]
    split: String,
    /// Compare a predictions file against gold instead of a checkpoint.
    #[arg(long)]
    pred: Option<PathBuf>,
    #[arg(long)]
    gold: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Per-label CSV output (SRL evaluations).
    #[arg(long)]
    per_label_out: Option<PathBuf>,
    #[arg(long)]
    manifest_out: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum)]
    task: Option<TaskArg>,
    /// Must match the checkpoint's SRL setting when given.
    #[arg(long)]
    setting: Option<String>,
    #[arg(long)]
    root_checkpoint: Option<PathBuf>,
    #[arg(long)]
    use_gold_root: bool,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    manifest_out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportAblationArgs {
    /// Run directories to compare; the first is the baseline.
    #[arg(long, required = true)]
    run: Vec<PathBuf>,
    /// Report file name inside each run directory.
    #[arg(long, default_value = "eval_dev.json")]
    report_name: String,
    #[arg(long)]
    out: PathBuf,
}

fn main() {
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            let msg = serde_json::json!({
                "error": e.kind(),
                "message": e.to_string(),
            });
            eprintln!("{msg}");
            e.exit_code()
        }
    };
    std::process::exit(code);
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenSynth(args) => cmd_gen_synth(args),
        Command::Split(args) => cmd_split(args),
        Command::LearnBpe(args) => cmd_learn_bpe(args),
        Command::Train(args) => cmd_train(args),
        Command::TrainMulti(args) => cmd_train_multi(args),
        Command::Hpo(args) => cmd_hpo(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Predict(args) => cmd_predict(args),
        Command::ReportAblation(args) => cmd_report_ablation(args),
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| Error::io(parent.display().to_string(), e))?;
        }
    }
    Ok(())
}

fn write_string(path: &Path, content: &str) -> Result<()> {
    ensure_parent(path)?;
    std::fs::write(path, content).map_err(|e| Error::io(path.display().to_string(), e))
}

fn finish_manifest(manifest: &RunManifest, out: Option<&PathBuf>) -> Result<()> {
    if let Some(path) = out {
        ensure_parent(path)?;
        manifest.write(path)?;
    }
    Ok(())
}

fn cmd_gen_synth(args: GenSynthArgs) -> Result<()> {
    let n_shared = args.n_shared.min(args.n_dp).min(args.n_srl);
    let total = args.n_dp + args.n_srl - n_shared;
    let synth = SynthConfig {
        n_sentences: total,
        vocab_size: args.vocab_size,
        n_roles: args.roles,
        min_args: args.min_args,
        max_args: args.max_args,
    };
    let manifest = RunManifest::new(
        "gen-synth",
        args.seed,
        serde_json::json!({
            "n_dp": args.n_dp, "n_srl": args.n_srl, "n_shared": n_shared,
            "vocab_size": args.vocab_size, "roles": args.roles,
            "min_args": args.min_args, "max_args": args.max_args,
        }),
    );
    let hash = manifest.hash();
    let sentences = generate_synthetic(&synth, args.seed)?;
    // DP takes the first n_dp sentences, SRL the last n_srl; the middle
    // n_shared sentences appear in both
    let dp_slice = &sentences[..args.n_dp];
    let srl_slice = &sentences[total - args.n_srl..];
    ensure_parent(&args.out_dp)?;
    write_conllu(&args.out_dp, dp_slice, Some(&hash))?;
    ensure_parent(&args.out_srl)?;
    write_srl_jsonl(&args.out_srl, srl_slice, Some(&hash))?;
    finish_manifest(&manifest, args.manifest_out.as_ref())?;
    println!(
        "wrote {} DP sentences to {} and {} SRL sentences to {} ({} shared)",
        dp_slice.len(),
        args.out_dp.display(),
        srl_slice.len(),
        args.out_srl.display(),
        n_shared
    );
    Ok(())
}

fn parse_ratios(text: &str) -> Result<(f64, f64, f64)> {
    let parts: Vec<&str> = text.split(',').collect();
    if parts.len() != 3 {
        return Err(Error::config(format!(
            "ratios must be three comma-separated numbers, got `{text}`"
        )));
    }
    let mut vals = [0.0; 3];
    for (v, p) in vals.iter_mut().zip(&parts) {
        *v = p
            .trim()
            .parse()
            .map_err(|_| Error::config(format!("ratio `{p}` is not a number")))?;
    }
    Ok((vals[0], vals[1], vals[2]))
}

fn stem_and_ext(path: &Path) -> (String, String) {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "corpus".to_string());
    let ext = path
        .extension()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    (stem, ext)
}

fn cmd_split(args: SplitArgs) -> Result<()> {
    let ratios = parse_ratios(&args.ratios)?;
    let mut manifest = RunManifest::new(
        "split",
        args.seed,
        serde_json::json!({"ratios": args.ratios}),
    );
    manifest.add_checksum(&args.dp)?;
    manifest.add_checksum(&args.srl)?;
    let hash = manifest.hash();

    let dp = read_conllu(&args.dp)?;
    let srl = read_srl_jsonl(&args.srl)?;
    let spec = SplitSpec::new(ratios);
    let (dp_out, srl_out) = split_leak_safe(dp, srl, &spec, args.seed)?;

    std::fs::create_dir_all(&args.out_dir)
        .map_err(|e| Error::io(args.out_dir.display().to_string(), e))?;
    let (dp_stem, dp_ext) = stem_and_ext(&args.dp);
    let (srl_stem, srl_ext) = stem_and_ext(&args.srl);
    for split in Split::ALL {
        let dp_path = args
            .out_dir
            .join(format!("{dp_stem}.{}.{dp_ext}", split.suffix()));
        write_conllu(&dp_path, dp_out.get(split), Some(&hash))?;
        let srl_path = args
            .out_dir
            .join(format!("{srl_stem}.{}.{srl_ext}", split.suffix()));
        write_srl_jsonl(&srl_path, srl_out.get(split), Some(&hash))?;
    }
    finish_manifest(&manifest, args.manifest_out.as_ref())?;
    println!(
        "split {} DP and {} SRL sentences into {}",
        dp_out.len(),
        srl_out.len(),
        args.out_dir.display()
    );
    Ok(())
}

fn read_any_corpus(path: &Path) -> Result<Vec<Sentence>> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("conllu") => read_conllu(path),
        Some("jsonl") => read_srl_jsonl(path),
        _ => Err(Error::config(format!(
            "{}: cannot infer corpus format (expected .conllu or .jsonl)",
            path.display()
        ))),
    }
}

fn cmd_learn_bpe(args: LearnBpeArgs) -> Result<()> {
    let mut manifest = RunManifest::new(
        "learn-bpe",
        0,
        serde_json::json!({"merges": args.merges, "no_bpe": args.no_bpe}),
    );
    let mut corpus = Vec::new();
    for input in &args.input {
        manifest.add_checksum(input)?;
        corpus.extend(read_any_corpus(input)?);
    }
    let model = if args.no_bpe {
        SubwordModel::learn_whole_words(&corpus)?
    } else {
        SubwordModel::learn(&corpus, args.merges)?
    };
    ensure_parent(&args.out)?;
    model.save(&args.out)?;
    finish_manifest(&manifest, args.manifest_out.as_ref())?;
    println!(
        "learned {} merges over {} sentences; vocabulary size {}; wrote {}",
        model.n_merges(),
        corpus.len(),
        model.vocab_size(),
        args.out.display()
    );
    Ok(())
}

struct LoadedData {
    dp: Option<SplitCorpus>,
    srl: Option<SplitCorpus>,
}

fn load_split(
    train: &Option<PathBuf>,
    dev: &Option<PathBuf>,
    test: &Option<PathBuf>,
    reader: fn(&Path) -> Result<Vec<Sentence>>,
    what: &str,
    manifest: &mut RunManifest,
) -> Result<Option<SplitCorpus>> {
    let Some(train) = train else {
        return Ok(None);
    };
    manifest.add_checksum(train)?;
    let train_data = reader(train)?;
    let dev_data = match dev {
        Some(p) => {
            manifest.add_checksum(p)?;
            reader(p)?
        }
        None => {
            return Err(Error::config(format!(
                "{what} training requires a dev file for validation"
            )))
        }
    };
    let test_data = match test {
        Some(p) => {
            manifest.add_checksum(p)?;
            reader(p)?
        }
        None => Vec::new(),
    };
    Ok(Some(SplitCorpus {
        train: train_data,
        dev: dev_data,
        test: test_data,
    }))
}

fn read_conllu_path(p: &Path) -> Result<Vec<Sentence>> {
    read_conllu(p)
}

fn read_jsonl_path(p: &Path) -> Result<Vec<Sentence>> {
    read_srl_jsonl(p)
}

fn load_setup(
    cfg: &RunConfig,
    need_dp: bool,
    need_srl: bool,
    manifest: &mut RunManifest,
) -> Result<(TrainSetup, LoadedData)> {
    let dp = if need_dp {
        let c = load_split(
            &cfg.data.dp_train,
            &cfg.data.dp_dev,
            &cfg.data.dp_test,
            read_conllu_path,
            "DP",
            manifest,
        )?;
        if c.is_none() {
            return Err(Error::config("config is missing data.dp_train"));
        }
        c
    } else {
        None
    };
    let srl = if need_srl {
        let c = load_split(
            &cfg.data.srl_train,
            &cfg.data.srl_dev,
            &cfg.data.srl_test,
            read_jsonl_path,
            "SRL",
            manifest,
        )?;
        if c.is_none() {
            return Err(Error::config("config is missing data.srl_train"));
        }
        c
    } else {
        None
    };

    let subwords_path = cfg
        .data
        .subwords
        .as_ref()
        .ok_or_else(|| Error::config("config is missing data.subwords"))?;
    manifest.add_checksum(subwords_path)?;
    let subwords = SubwordModel::load(subwords_path)?;
    if cfg.ablation.no_bpe && !subwords.is_whole_word() {
        return Err(Error::config(
            "--no-bpe requires a whole-word subword model (learn-bpe --no-bpe)",
        ));
    }

    let empty: Vec<Sentence> = Vec::new();
    let all = |c: &Option<SplitCorpus>| -> Vec<Sentence> {
        c.as_ref()
            .map(|s| {
                s.train
                    .iter()
                    .chain(s.dev.iter())
                    .chain(s.test.iter())
                    .cloned()
                    .collect()
            })
            .unwrap_or_default()
    };
    let dp_all = all(&dp);
    let srl_all = all(&srl);
    let _ = &empty;
    let vocab = Vocabularies::collect(subwords, &dp_all, &srl_all);
    let n_tags = vocab.n_srl_tags(cfg.task.srl_setting);
    let model_cfg = cfg.model_config(
        vocab.subwords.vocab_size(),
        vocab.dep_labels.len(),
        n_tags,
    );
    let setup = TrainSetup {
        model_cfg,
        vocab,
        dp_mode: cfg.effective_dp_mode(),
        srl_setting: cfg.task.srl_setting,
        srl_predicate_segment: !cfg.ablation.no_srl_predicate,
    };
    Ok((setup, LoadedData { dp, srl }))
}

/// Persist a finished training run: checkpoint, history, manifest, and
/// dev/test reports.
#[allow(clippy::too_many_arguments)]
fn persist_run(
    out_dir: &Path,
    cfg: &RunConfig,
    setup: &TrainSetup,
    task: TrainTask,
    outcome: &TrainOutcome,
    data: &LoadedData,
    manifest: &mut RunManifest,
) -> Result<()> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    let run_hash = manifest.hash();

    let ckpt_manifest = CheckpointManifest::from_setup(
        setup,
        task,
        &cfg.train,
        outcome.best_epoch,
        outcome.best_metric,
        run_hash.clone(),
    );
    let ckpt_path = out_dir.join("checkpoint_best.tdmc");
    save_model_checkpoint(&ckpt_path, &ckpt_manifest, &outcome.best_params)?;
    manifest.checkpoint_hash = Some(sha256_file(&ckpt_path)?);

    let history = serde_json::json!({
        "manifest_hash": run_hash,
        "best_epoch": outcome.best_epoch,
        "best_metric": outcome.best_metric,
        "epochs": outcome.history,
    });
    write_string(
        &out_dir.join("history.json"),
        &serde_json::to_string_pretty(&history).expect("history serializes"),
    )?;
    write_string(
        &out_dir.join("config.toml"),
        &toml::to_string_pretty(cfg).map_err(|e| Error::config(e.to_string()))?,
    )?;

    // evaluate the best checkpoint on dev (and test when present)
    let eval_task = match task {
        TrainTask::Dp => TaskArg::Dp,
        TrainTask::Srl => TaskArg::Srl,
        TrainTask::Multi => match cfg.train.target_metric {
            tandem::trainer::TargetMetric::Uas => TaskArg::Dp,
            tandem::trainer::TargetMetric::MicroF1 => TaskArg::Srl,
        },
    };
    let split_sets: Vec<(&str, Option<&[Sentence]>)> = match eval_task {
        TaskArg::Dp => {
            let c = data.dp.as_ref();
            vec![
                ("dev", c.map(|c| c.dev.as_slice())),
                ("test", c.map(|c| c.test.as_slice())),
            ]
        }
        TaskArg::Srl => {
            let c = data.srl.as_ref();
            vec![
                ("dev", c.map(|c| c.dev.as_slice())),
                ("test", c.map(|c| c.test.as_slice())),
            ]
        }
    };
    for (split, sents) in split_sets {
        let Some(sents) = sents else { continue };
        if sents.is_empty() {
            continue;
        }
        let mut report = match eval_task {
            TaskArg::Dp => {
                let (eval, _) = evaluate_dp_params(
                    setup,
                    &outcome.best_params,
                    sents,
                    cfg.train.max_tokens,
                    None,
                )?;
                EvalReport::from_dp(&eval, setting_name(setup, TaskArg::Dp), split)
            }
            TaskArg::Srl => {
                let (eval, _) = evaluate_srl_params(
                    setup,
                    &outcome.best_params,
                    sents,
                    cfg.train.max_tokens,
                )?;
                EvalReport::from_srl(&eval, setting_name(setup, TaskArg::Srl), split, sents.len())
            }
        };
        report.manifest_hash = Some(run_hash.clone());
        write_string(
            &out_dir.join(format!("eval_{split}.json")),
            &serde_json::to_string_pretty(&report).expect("report serializes"),
        )?;
        if eval_task == TaskArg::Srl {
            write_string(
                &out_dir.join(format!("per_label_{split}.csv")),
                &per_label_csv(&report, Some(&run_hash)),
            )?;
        }
    }

    manifest.write(&out_dir.join("manifest.json"))?;
    Ok(())
}

fn setting_name(setup: &TrainSetup, task: TaskArg) -> &'static str {
    match task {
        TaskArg::Dp => match setup.dp_mode {
            DpMode::RootUnknown => "root_unknown",
            DpMode::RootKnown => "root_known",
        },
        TaskArg::Srl => match setup.srl_setting {
            SrlSetting::Morpheme => "morpheme",
            SrlSetting::SpanGiven => "span_given",
        },
    }
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let mut cfg = RunConfig::load(&args.config)?;
    args.overrides.apply(&mut cfg);
    cfg.validate()?;
    let task = match args.task {
        TaskArg::Dp => TrainTask::Dp,
        TaskArg::Srl => TrainTask::Srl,
    };
    let mut manifest = RunManifest::new(
        "train",
        cfg.train.seed,
        serde_json::json!({"config": cfg.to_json(), "task": task}),
    );
    let (setup, data) = load_setup(
        &cfg,
        task == TrainTask::Dp,
        task == TrainTask::Srl,
        &mut manifest,
    )?;
    let corpus = match task {
        TrainTask::Dp => data.dp.as_ref().expect("loaded above"),
        _ => data.srl.as_ref().expect("loaded above"),
    };
    let outcome = train_single(&setup, &cfg.train, task, corpus, None)?;
    persist_run(&args.out_dir, &cfg, &setup, task, &outcome, &data, &mut manifest)?;
    println!(
        "trained {} epochs; best epoch {} with validation metric {:?}; run written to {}",
        outcome.history.len(),
        outcome.best_epoch,
        outcome.best_metric,
        args.out_dir.display()
    );
    Ok(())
}

fn cmd_train_multi(args: TrainMultiArgs) -> Result<()> {
    let mut cfg = RunConfig::load(&args.config)?;
    args.overrides.apply(&mut cfg);
    cfg.validate()?;
    let mut manifest = RunManifest::new(
        "train-multi",
        cfg.train.seed,
        serde_json::json!({"config": cfg.to_json()}),
    );
    let (setup, data) = load_setup(&cfg, true, true, &mut manifest)?;
    let dp = data.dp.as_ref().expect("loaded above");
    let srl = data.srl.as_ref().expect("loaded above");
    let outcome = train_multitask(&setup, &cfg.train, dp, srl, None)?;
    persist_run(
        &args.out_dir,
        &cfg,
        &setup,
        TrainTask::Multi,
        &outcome,
        &data,
        &mut manifest,
    )?;
    println!(
        "multitask training finished; best epoch {} with validation metric {:?}; run written to {}",
        outcome.best_epoch,
        outcome.best_metric,
        args.out_dir.display()
    );
    Ok(())
}

fn cmd_hpo(args: HpoArgs) -> Result<()> {
    let mut cfg = RunConfig::load(&args.config)?;
    args.overrides.apply(&mut cfg);
    cfg.validate()?;
    let task = match args.task {
        HpoTaskArg::Dp => TrainTask::Dp,
        HpoTaskArg::Srl => TrainTask::Srl,
        HpoTaskArg::Multi => TrainTask::Multi,
    };
    let n_trials = args.trials.unwrap_or(cfg.hpo.n_trials);
    let mut manifest = RunManifest::new(
        "hpo",
        cfg.train.seed,
        serde_json::json!({"config": cfg.to_json(), "task": task, "trials": n_trials}),
    );
    let need_dp = task != TrainTask::Srl;
    let need_srl = task != TrainTask::Dp;
    let (setup, data) = load_setup(&cfg, need_dp, need_srl, &mut manifest)?;

    // reduced-epoch, reduced-length trial config
    let mut base = cfg.train.clone();
    base.epochs = match task {
        TrainTask::Dp => cfg.hpo.epochs_dp,
        _ => cfg.hpo.epochs_srl,
    };
    base.max_tokens = cfg.hpo.max_tokens;

    let outcome = hpo_search(
        &setup,
        &base,
        task,
        &cfg.hpo.space,
        n_trials,
        &cfg.hpo.pruning,
        data.dp.as_ref(),
        data.srl.as_ref(),
        args.force_complete,
    )?;

    std::fs::create_dir_all(&args.out_dir)
        .map_err(|e| Error::io(args.out_dir.display().to_string(), e))?;
    write_string(
        &args.out_dir.join("trials.jsonl"),
        &trial_log_jsonl(&outcome.trials),
    )?;
    let mut best_cfg = cfg.clone();
    best_cfg.train = outcome.best_config.clone();
    write_string(
        &args.out_dir.join("best_config.toml"),
        &toml::to_string_pretty(&best_cfg).map_err(|e| Error::config(e.to_string()))?,
    )?;
    manifest.write(&args.out_dir.join("manifest.json"))?;
    let pruned = outcome.trials.iter().filter(|t| t.pruned).count();
    println!(
        "{} trials ({} pruned); best trial {} with metric {:.4}; log written to {}",
        outcome.trials.len(),
        pruned,
        outcome.best_trial,
        outcome.best_metric,
        args.out_dir.display()
    );
    Ok(())
}

fn load_checkpoint_setup(path: &Path) -> Result<(CheckpointManifest, TrainSetup, ParamSet)> {
    let (manifest, params) = load_model_checkpoint(path)?;
    let setup = manifest.to_setup()?;
    Ok((manifest, setup, params))
}

fn resolve_roots(
    setup: &TrainSetup,
    sentences: &[Sentence],
    max_tokens: usize,
    root_checkpoint: &Option<PathBuf>,
    use_gold_root: bool,
) -> Result<Option<Vec<usize>>> {
    if setup.dp_mode != DpMode::RootKnown {
        return Ok(None);
    }
    if let Some(rc) = root_checkpoint {
        let (_, root_setup, root_params) = load_checkpoint_setup(rc)?;
        let roots = predict_root_tokens(&root_setup, &root_params, sentences, max_tokens)?;
        return Ok(Some(roots));
    }
    if use_gold_root {
        return Ok(None); // predict_dp falls back to the gold root
    }
    Err(Error::config(
        "root-known checkpoint needs --root-checkpoint (or --use-gold-root for the training protocol)",
    ))
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    if let (Some(pred), Some(gold)) = (&args.pred, &args.gold) {
        return eval_files(&args, pred.clone(), gold.clone());
    }
    if args.checkpoint.is_empty() {
        return Err(Error::config(
            "eval needs either --checkpoint ... --data ... or --pred ... --gold ...",
        ));
    }
    let data_path = args
        .data
        .as_ref()
        .ok_or_else(|| Error::config("eval with checkpoints requires --data"))?;

    let mut manifest = RunManifest::new(
        "eval",
        0,
        serde_json::json!({"checkpoints": args.checkpoint.len(), "split": args.split}),
    );
    manifest.add_checksum(data_path)?;
    for c in &args.checkpoint {
        manifest.add_checksum(c)?;
    }
    let hash = manifest.hash();

    let mut reports = Vec::new();
    for ckpt in &args.checkpoint {
        let (cman, setup, params) = load_checkpoint_setup(ckpt)?;
        let task = match (args.task, cman.task) {
            (Some(t), _) => t,
            (None, TrainTask::Dp) => TaskArg::Dp,
            (None, TrainTask::Srl) => TaskArg::Srl,
            (None, TrainTask::Multi) => {
                return Err(Error::config(
                    "multitask checkpoint: choose the task to evaluate with --task",
                ))
            }
        };
        let max_tokens = cman.train_config.max_tokens;
        let mut report = match task {
            TaskArg::Dp => {
                let sentences = read_conllu(data_path)?;
                let roots = resolve_roots(
                    &setup,
                    &sentences,
                    max_tokens,
                    &args.root_checkpoint,
                    args.use_gold_root,
                )?;
                let (eval, _) = evaluate_dp_params(
                    &setup,
                    &params,
                    &sentences,
                    max_tokens,
                    roots.as_deref(),
                )?;
                EvalReport::from_dp(&eval, setting_name(&setup, TaskArg::Dp), &args.split)
            }
            TaskArg::Srl => {
                let sentences = read_srl_jsonl(data_path)?;
                let (eval, _) = evaluate_srl_params(&setup, &params, &sentences, max_tokens)?;
                EvalReport::from_srl(
                    &eval,
                    setting_name(&setup, TaskArg::Srl),
                    &args.split,
                    sentences.len(),
                )
            }
        };
        report.manifest_hash = Some(hash.clone());
        reports.push(report);
    }

    if reports.len() == 1 {
        write_string(
            &args.out,
            &serde_json::to_string_pretty(&reports[0]).expect("report serializes"),
        )?;
        if let Some(per_label) = &args.per_label_out {
            write_string(per_label, &per_label_csv(&reports[0], Some(&hash)))?;
        }
        print_metrics(&reports[0]);
    } else {
        let agg = aggregate(&reports)?;
        write_string(
            &args.out,
            &serde_json::to_string_pretty(&agg).expect("report serializes"),
        )?;
        for (k, m) in &agg.metrics {
            println!("{k}: {}", m.formatted);
        }
    }
    finish_manifest(&manifest, args.manifest_out.as_ref())?;
    Ok(())
}

fn print_metrics(report: &EvalReport) {
    for (k, v) in &report.metrics {
        println!("{k}: {v:.4}");
    }
}

fn eval_files(args: &EvalArgs, pred: PathBuf, gold: PathBuf) -> Result<()> {
    let task = args
        .task
        .ok_or_else(|| Error::config("--pred/--gold evaluation requires --task"))?;
    let mut manifest = RunManifest::new(
        "eval",
        0,
        serde_json::json!({"mode": "files", "split": args.split}),
    );
    manifest.add_checksum(&pred)?;
    manifest.add_checksum(&gold)?;
    let hash = manifest.hash();

    let mut report = match task {
        TaskArg::Dp => {
            let pred_s = read_conllu(&pred)?;
            let gold_s = read_conllu(&gold)?;
            if pred_s.len() != gold_s.len() {
                return Err(Error::validation(format!(
                    "{} predicted vs {} gold sentences",
                    pred_s.len(),
                    gold_s.len()
                )));
            }
            let mut preds = Vec::new();
            let mut golds = Vec::new();
            for (p, g) in pred_s.iter().zip(&gold_s) {
                if p.id != g.id {
                    return Err(Error::validation(format!(
                        "sentence id mismatch: {} vs {}",
                        p.id, g.id
                    )));
                }
                let (ph, pl) = annotated(p)?;
                let (gh, gl) = annotated(g)?;
                preds.push((ph, pl));
                golds.push((gh, gl));
            }
            let eval = evaluate_dp(&preds, &golds)?;
            EvalReport::from_dp(&eval, "file", &args.split)
        }
        TaskArg::Srl => {
            let pred_s = read_srl_jsonl(&pred)?;
            let gold_s = read_srl_jsonl(&gold)?;
            let (frames, roles) = align_frame_spans(&pred_s, &gold_s)?;
            let eval = evaluate_srl_spans(&frames, &roles)?;
            EvalReport::from_srl(&eval, "file", &args.split, gold_s.len())
        }
    };
    report.manifest_hash = Some(hash.clone());
    write_string(
        &args.out,
        &serde_json::to_string_pretty(&report).expect("report serializes"),
    )?;
    if let Some(per_label) = &args.per_label_out {
        write_string(per_label, &per_label_csv(&report, Some(&hash)))?;
    }
    print_metrics(&report);
    finish_manifest(&manifest, args.manifest_out.as_ref())?;
    Ok(())
}

fn annotated(s: &Sentence) -> Result<(Vec<usize>, Vec<String>)> {
    match (&s.heads, &s.dep_labels) {
        (Some(h), Some(l)) => Ok((h.clone(), l.clone())),
        _ => Err(Error::validation(format!(
            "sentence {} lacks HEAD/DEPREL annotations",
            s.id
        ))),
    }
}

fn cmd_predict(args: PredictArgs) -> Result<()> {
    let (cman, setup, params) = load_checkpoint_setup(&args.checkpoint)?;
    let task = match (args.task, cman.task) {
        (Some(t), _) => t,
        (None, TrainTask::Dp) => TaskArg::Dp,
        (None, TrainTask::Srl) => TaskArg::Srl,
        (None, TrainTask::Multi) => {
            return Err(Error::config(
                "multitask checkpoint: choose the task to predict with --task",
            ))
        }
    };
    if let Some(setting) = &args.setting {
        let actual = setting_name(&setup, TaskArg::Srl);
        if task == TaskArg::Srl && setting != actual {
            return Err(Error::config(format!(
                "checkpoint was trained in the {actual} setting, not {setting}"
            )));
        }
    }

    let mut manifest = RunManifest::new(
        "predict",
        0,
        serde_json::json!({"checkpoint": args.checkpoint.display().to_string()}),
    );
    manifest.add_checksum(&args.checkpoint)?;
    manifest.add_checksum(&args.data)?;
    let hash = manifest.hash();
    let max_tokens = cman.train_config.max_tokens;

    match task {
        TaskArg::Dp => {
            let sentences = read_conllu(&args.data)?;
            let roots = resolve_roots(
                &setup,
                &sentences,
                max_tokens,
                &args.root_checkpoint,
                args.use_gold_root,
            )?;
            let decodes = predict_dp(&setup, &params, &sentences, max_tokens, roots.as_deref())?;
            let labeled: Vec<Sentence> = sentences
                .iter()
                .zip(&decodes)
                .map(|(s, d)| {
                    let mut out = s.clone();
                    out.heads = Some(d.heads.clone());
                    out.dep_labels = Some(
                        d.label_ids
                            .iter()
                            .map(|&l| setup.vocab.dep_labels[l].clone())
                            .collect(),
                    );
                    out
                })
                .collect();
            ensure_parent(&args.out)?;
            write_conllu(&args.out, &labeled, Some(&hash))?;
        }
        TaskArg::Srl => {
            let sentences = read_srl_jsonl(&args.data)?;
            let predictions = predict_srl(&setup, &params, &sentences, max_tokens)?;
            let labeled = spans_to_frames(&setup, &sentences, &predictions);
            ensure_parent(&args.out)?;
            write_srl_jsonl(&args.out, &labeled, Some(&hash))?;
        }
    }
    finish_manifest(&manifest, args.manifest_out.as_ref())?;
    println!("predictions written to {}", args.out.display());
    Ok(())
}

fn cmd_report_ablation(args: ReportAblationArgs) -> Result<()> {
    if args.run.len() < 2 {
        return Err(Error::validation(
            "report-ablation needs at least two run directories",
        ));
    }
    let mut runs: Vec<(String, EvalReport)> = Vec::new();
    for dir in &args.run {
        let name = dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| dir.display().to_string());
        let path = dir.join(&args.report_name);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let report: EvalReport = serde_json::from_str(&text)
            .map_err(|e| Error::validation(format!("{}: {e}", path.display())))?;
        runs.push((name, report));
    }
    let table = ablation_table(&runs)?;
    write_string(&args.out, &table)?;
    print!("{table}");
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_parsing() {
        assert_eq!(parse_ratios("0.8,0.1,0.1").unwrap(), (0.8, 0.1, 0.1));
        assert!(parse_ratios("0.8,0.2").is_err());
        assert!(parse_ratios("a,b,c").is_err());
    }
}
