//! Command-line front end. Exit codes: 0 success, 1 invalid input, 2 failure
//! while running.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::config::{ModelConfig, Profile};
use crate::corpus::oracle::AUDIO_DIM;
use crate::corpus::{
    corpus_stats, generate_corpus, load_corpus, save_corpus, slice_context, split_corpus, AcousticTargets,
    ContextWindow, EmotionLabel, GeneratorConfig, IntensityLabel, LabelMode, Split, Utterance,
};
use crate::error::{EcssError, Result};
use crate::eval::{
    ablation_csv, ablation_suite, config_echo, confusion_csv, confusion_svg, context_sweep, emotion_names, evaluate,
    intensity_names, report_csv, sweep_csv, test_windows, EvalReport, PAPER_LENGTHS,
};
use crate::model::{forward_sample, Ablation, Mode};
use crate::renderer::argmax;
use crate::synthesizer::{write_mel, MelSidecar};
use crate::tape::Tape;
use crate::train::{load_checkpoint, restore_model, save_checkpoint, write_file, LossBreakdown, TrainConfig, Trainer};

#[derive(Parser, Debug)]
#[command(name = "ecss", version, about = "Emotional conversational speech synthesis on a synthetic corpus")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic corpus as JSON Lines.
    GenData(GenDataArgs),
    /// Train a model and write a checkpoint plus a per-step loss log.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the held-out split.
    Eval(EvalArgs),
    /// Train and evaluate once per context length.
    Sweep(SweepArgs),
    /// Train and evaluate the full model and each single-component ablation.
    Ablate(RunArgs),
    /// Render one context window to a mel file and predicted labels.
    Predict(PredictArgs),
    /// Draw confusion-matrix heatmaps from an evaluation report.
    Plot(PlotArgs),
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Output file; defaults to `<out-dir>/corpus.jsonl`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    #[arg(long, default_value = "paper_skewed")]
    pub label_mode: LabelMode,
    #[arg(long, default_value_t = 9.3)]
    pub mean_turns: f64,
    #[arg(long, default_value_t = 64)]
    pub vocab_size: usize,
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
}

/// Flags shared by every command that trains.
#[derive(Args, Debug, Clone)]
pub struct RunArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 2000)]
    pub steps: usize,
    #[arg(long, default_value_t = 16)]
    pub batch: usize,
    #[arg(long, default_value_t = 10)]
    pub context_length: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value = "lite")]
    pub profile: Profile,
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Comma-separated: emotion, intensity, speaker, audio, supcon.
    #[arg(long, default_value = "none")]
    pub ablate: Ablation,
    /// Continue from this checkpoint up to `--steps`.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Also save a checkpoint every this many steps (0 = only at the end).
    #[arg(long, default_value_t = 0)]
    pub checkpoint_every: usize,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, value_delimiter = ',', default_values_t = PAPER_LENGTHS.to_vec())]
    pub lengths: Vec<usize>,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Context window JSON (see the README for the format).
    #[arg(long, conflicts_with_all = ["corpus", "conversation", "turn"])]
    pub context: Option<PathBuf>,
    /// Pick the window from a corpus instead: conversation id and turn.
    #[arg(long, requires_all = ["conversation", "turn"])]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub conversation: Option<String>,
    #[arg(long)]
    pub turn: Option<usize>,
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct PlotArgs {
    /// `eval_report.json` written by `eval`.
    #[arg(long)]
    pub report: PathBuf,
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
}

/// A history turn in a context file; acoustic targets are not needed.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContextTurn {
    pub tokens: Vec<u32>,
    pub speaker: u8,
    pub audio_feat: Vec<f64>,
    pub emotion: u8,
    pub intensity: u8,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurrentTurn {
    pub tokens: Vec<u32>,
    pub speaker: u8,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContextFile {
    pub id: String,
    pub history: Vec<ContextTurn>,
    pub current: CurrentTurn,
}

fn empty_targets() -> AcousticTargets {
    AcousticTargets { mel: Vec::new(), pitch: Vec::new(), energy: Vec::new(), duration: Vec::new(), prosody: Vec::new() }
}

impl ContextFile {
    pub fn from_window(w: &ContextWindow) -> Self {
        Self {
            id: w.conversation_id.clone(),
            history: w
                .history
                .iter()
                .map(|u| ContextTurn {
                    tokens: u.text_tokens.clone(),
                    speaker: u.speaker,
                    audio_feat: u.audio_feat.clone(),
                    emotion: u.emotion.code(),
                    intensity: u.intensity.code(),
                })
                .collect(),
            current: CurrentTurn { tokens: w.current.text_tokens.clone(), speaker: w.current.speaker },
        }
    }

    pub fn into_window(self) -> Result<ContextWindow> {
        if self.history.is_empty() {
            return Err(EcssError::Validation("context has no history turns".into()));
        }
        let check = |tokens: &[u32], speaker: u8, what: &str| -> Result<()> {
            if tokens.is_empty() {
                return Err(EcssError::Validation(format!("{what}: empty token list")));
            }
            if speaker > 1 {
                return Err(EcssError::Validation(format!("{what}: speaker must be 0 or 1")));
            }
            Ok(())
        };
        let mut history = Vec::with_capacity(self.history.len());
        for (i, h) in self.history.into_iter().enumerate() {
            let what = format!("history turn {i}");
            check(&h.tokens, h.speaker, &what)?;
            if h.audio_feat.len() != AUDIO_DIM || h.audio_feat.iter().any(|v| !v.is_finite()) {
                return Err(EcssError::Validation(format!("{what}: audio_feat needs {AUDIO_DIM} finite values")));
            }
            history.push(Utterance {
                text_tokens: h.tokens,
                speaker: h.speaker,
                audio_feat: h.audio_feat,
                emotion: EmotionLabel::from_code(h.emotion)?,
                intensity: IntensityLabel::from_code(h.intensity)?,
                targets: empty_targets(),
            });
        }
        check(&self.current.tokens, self.current.speaker, "current turn")?;
        let current = Utterance {
            text_tokens: self.current.tokens,
            speaker: self.current.speaker,
            audio_feat: vec![0.0; AUDIO_DIM],
            emotion: EmotionLabel::Neutral,
            intensity: IntensityLabel::Weak,
            targets: empty_targets(),
        };
        Ok(ContextWindow { conversation_id: self.id, current_index: history.len(), history, current })
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| EcssError::io(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_file(path, &serde_json::to_vec_pretty(value)?)
}

fn build_pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| EcssError::Config(format!("cannot start worker threads: {e}")))
}

fn train_config(run: &RunArgs, ablation: Ablation) -> TrainConfig {
    TrainConfig {
        batch_size: run.batch,
        learning_rate: run.lr,
        steps: run.steps,
        context_length: run.context_length,
        seed: run.seed,
        ablation,
        threads: run.threads,
        ..TrainConfig::default()
    }
}

fn model_config(run: &RunArgs, corpus_vocab: usize) -> ModelConfig {
    ModelConfig { vocab_size: corpus_vocab, ..ModelConfig::for_profile(run.profile) }
}

/// Vocabulary size large enough for every token in the corpus (at least 64).
fn vocab_of(corpus: &[crate::corpus::Conversation]) -> usize {
    let max = corpus.iter().flat_map(|c| &c.turns).flat_map(|u| &u.text_tokens).copied().max().unwrap_or(0);
    (max as usize + 1).max(64)
}

fn gen_data(a: &GenDataArgs) -> Result<()> {
    let cfg = GeneratorConfig {
        n_conversations: a.n,
        mean_turns: a.mean_turns,
        vocab_size: a.vocab_size,
        label_mode: a.label_mode,
        seed: a.seed,
    };
    let out = a.out.clone().unwrap_or_else(|| a.out_dir.join("corpus.jsonl"));
    let corpus = build_pool(a.threads)?.install(|| generate_corpus(&cfg))?;
    let dir = out.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    create_dir(dir)?;
    save_corpus(&corpus, &out)?;
    let stats = corpus_stats(&corpus)?;
    write_json(&dir.join("config.json"), &serde_json::json!({ "generator": cfg, "stats": stats }))?;
    log::info!("wrote {} conversations ({} utterances) to {}", stats.conversations, stats.utterances, out.display());
    Ok(())
}

fn train(a: &TrainArgs) -> Result<()> {
    let corpus = load_corpus(&a.run.corpus)?;
    let mc = model_config(&a.run, vocab_of(&corpus));
    let tc = train_config(&a.run, a.ablate.clone());
    let pool = split_corpus(&corpus, Split::Train);
    create_dir(&a.run.out_dir)?;
    let mut trainer = match &a.resume {
        Some(p) => Trainer::resume(&load_checkpoint(p)?, Some((&mc, &tc)), pool)?,
        None => Trainer::new(mc.clone(), tc.clone(), pool)?,
    };
    write_json(&a.run.out_dir.join("config.json"), &config_echo(&mc, &tc))?;
    let ckpt = a.run.out_dir.join("checkpoint.ecss");
    let metrics = a.run.out_dir.join("metrics.csv");
    // A resumed run keeps the earlier log lines up to the checkpoint step.
    let mut log_text = String::from(LossBreakdown::CSV_HEADER);
    log_text.push('\n');
    if a.resume.is_some() {
        if let Ok(old) = std::fs::read_to_string(&metrics) {
            for line in old.lines().skip(1) {
                match line.split(',').next().and_then(|s| s.parse::<usize>().ok()) {
                    Some(step) if step <= trainer.step => {
                        log_text.push_str(line);
                        log_text.push('\n');
                    }
                    _ => {}
                }
            }
        }
    }
    let steps = tc.steps;
    while trainer.step < steps {
        let mark = match a.checkpoint_every {
            0 => steps,
            k => ((trainer.step / k + 1) * k).min(steps),
        };
        trainer.run_until(mark, |s, l| {
            log_text.push_str(&l.csv_row(s));
            log_text.push('\n');
            Ok(())
        })?;
        if mark < steps {
            save_checkpoint(&trainer, &ckpt)?;
            write_file(&metrics, log_text.as_bytes())?;
        }
    }
    save_checkpoint(&trainer, &ckpt)?;
    write_file(&metrics, log_text.as_bytes())?;
    log::info!("saved {} and {}", ckpt.display(), metrics.display());
    Ok(())
}

fn write_report(dir: &Path, stem: &str, r: &EvalReport) -> Result<()> {
    write_file(&dir.join(format!("{stem}.csv")), report_csv(r).as_bytes())?;
    write_json(&dir.join(format!("{stem}.json")), r)?;
    let en = emotion_names();
    let inn = intensity_names();
    write_file(&dir.join("emotion_confusion.csv"), confusion_csv(&r.emotion_confusion, &en).as_bytes())?;
    write_file(&dir.join("intensity_confusion.csv"), confusion_csv(&r.intensity_confusion, &inn).as_bytes())
}

fn eval_cmd(a: &EvalArgs) -> Result<()> {
    let corpus = load_corpus(&a.corpus)?;
    let ck = load_checkpoint(&a.checkpoint)?;
    let tc = ck.train_config.clone();
    let model = restore_model(&ck)?;
    let schema = tc.ablation.schema()?;
    let windows = test_windows(&corpus, tc.context_length)?;
    let echo = config_echo(&ck.model_config, &tc);
    let ev = build_pool(a.threads)?.install(|| evaluate(&model, &schema, &windows, &tc.ablation.label(), echo.clone()))?;
    create_dir(&a.out_dir)?;
    write_json(&a.out_dir.join("config.json"), &echo)?;
    write_report(&a.out_dir, "eval_report", &ev.report)?;
    log::info!(
        "{} windows: MAE-M {:.4} emotion acc {:.3} intensity acc {:.3}",
        ev.report.samples,
        ev.report.mae.mae_m,
        ev.report.emotion_accuracy,
        ev.report.intensity_accuracy
    );
    Ok(())
}

fn sweep(a: &SweepArgs) -> Result<()> {
    if a.lengths.is_empty() || a.lengths.contains(&0) {
        return Err(EcssError::Config("--lengths needs positive values".into()));
    }
    let corpus = load_corpus(&a.run.corpus)?;
    let mc = model_config(&a.run, vocab_of(&corpus));
    let tc = train_config(&a.run, Ablation::none());
    tc.validate()?;
    create_dir(&a.run.out_dir)?;
    let mut echo = config_echo(&mc, &tc);
    echo["lengths"] = serde_json::json!(a.lengths);
    write_json(&a.run.out_dir.join("config.json"), &echo)?;
    let res = build_pool(a.run.threads)?.install(|| context_sweep(&corpus, &mc, &tc, &a.lengths))?;
    write_file(&a.run.out_dir.join("sweep.csv"), sweep_csv(&res).as_bytes())?;
    write_json(&a.run.out_dir.join("sweep.json"), &res)
}

fn ablate(a: &RunArgs) -> Result<()> {
    let corpus = load_corpus(&a.corpus)?;
    let mc = model_config(a, vocab_of(&corpus));
    let tc = train_config(a, Ablation::none());
    tc.validate()?;
    create_dir(&a.out_dir)?;
    write_json(&a.out_dir.join("config.json"), &config_echo(&mc, &tc))?;
    let rows = build_pool(a.threads)?.install(|| ablation_suite(&corpus, &mc, &tc))?;
    write_file(&a.out_dir.join("ablation.csv"), ablation_csv(&rows).as_bytes())?;
    write_json(&a.out_dir.join("ablation.json"), &rows)
}

fn predict(a: &PredictArgs) -> Result<()> {
    let ck = load_checkpoint(&a.checkpoint)?;
    let window = match (&a.context, &a.corpus) {
        (Some(p), _) => {
            let text = std::fs::read_to_string(p).map_err(|e| EcssError::io(p, e))?;
            let ctx: ContextFile = serde_json::from_str(&text)
                .map_err(|e| EcssError::Validation(format!("{}: malformed context: {e}", p.display())))?;
            ctx.into_window()?
        }
        (None, Some(c)) => {
            let corpus = load_corpus(c)?;
            let id = a.conversation.as_deref().unwrap_or_default();
            let conv = corpus
                .iter()
                .find(|x| x.id == id)
                .ok_or_else(|| EcssError::Lookup(format!("conversation `{id}` not in {}", c.display())))?;
            slice_context(conv, a.turn.unwrap_or(0), ck.train_config.context_length)?
        }
        (None, None) => return Err(EcssError::Config("give --context or --corpus with --conversation and --turn".into())),
    };
    let model = restore_model(&ck)?;
    let schema = ck.train_config.ablation.schema()?;
    let mut t = Tape::new(&model.params);
    let out = forward_sample(&mut t, &model, &schema, &window, Mode::Inference)?;
    let mel = t.value(out.acoustic.mel).clone();
    let v = &out.acoustic.variance;
    let sidecar = MelSidecar {
        frames: mel.nrows(),
        bins: mel.ncols(),
        pitch: t.value(v.pitch).iter().copied().collect(),
        energy: t.value(v.energy).iter().copied().collect(),
        duration: v.durations.clone(),
    };
    create_dir(&a.out_dir)?;
    write_json(&a.out_dir.join("context.json"), &ContextFile::from_window(&window))?;
    write_mel(&a.out_dir.join("prediction.mel"), &mel, &sidecar)?;
    let emo: Vec<f64> = t.value(out.rendered.emotion.logits).iter().copied().collect();
    let int: Vec<f64> = t.value(out.rendered.intensity.logits).iter().copied().collect();
    let labels = serde_json::json!({
        "emotion": EmotionLabel::ALL[argmax(&emo)].name(),
        "intensity": IntensityLabel::ALL[argmax(&int)].name(),
        "emotion_logits": emo,
        "intensity_logits": int,
        "emotion_fallback": out.rendered.emotion.fallback,
        "intensity_fallback": out.rendered.intensity.fallback,
    });
    write_json(&a.out_dir.join("labels.json"), &labels)?;
    log::info!("{} frames, emotion {}, intensity {}", mel.nrows(), labels["emotion"], labels["intensity"]);
    Ok(())
}

fn plot(a: &PlotArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.report).map_err(|e| EcssError::io(&a.report, e))?;
    let r: EvalReport = serde_json::from_str(&text)
        .map_err(|e| EcssError::Validation(format!("{}: not an evaluation report: {e}", a.report.display())))?;
    create_dir(&a.out_dir)?;
    let title = |what: &str| format!("{what} confusion ({})", r.label);
    write_file(
        &a.out_dir.join("emotion_confusion.svg"),
        confusion_svg(&r.emotion_confusion, &emotion_names(), &title("emotion")).as_bytes(),
    )?;
    write_file(
        &a.out_dir.join("intensity_confusion.svg"),
        confusion_svg(&r.intensity_confusion, &intensity_names(), &title("intensity")).as_bytes(),
    )
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Sweep(a) => sweep(a),
        Command::Ablate(a) => ablate(a),
        Command::Predict(a) => predict(a),
        Command::Plot(a) => plot(a),
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            let missing_input = matches!(&e, EcssError::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound);
            if e.is_validation() || missing_input {
                1
            } else {
                2
            }
        }
    }
}
