//! Objective metrics, confusion matrices, the context-length sweep and the
//! ablation table.

use std::fmt::Write as _;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::corpus::{all_windows, split_corpus, AcousticTargets, ContextWindow, Conversation, EmotionLabel, IntensityLabel, Split};
use crate::ecg::{expected_counts_with, EdgeSchema};
use crate::error::{EcssError, Result};
use crate::model::{forward_sample, Ablation, Mode, Model};
use crate::renderer::argmax;
use crate::tape::Tape;
use crate::train::{train_loop, TrainConfig};

/// Per-token and per-frame predictions for one utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictedAcoustics {
    pub mel: Array2<f64>,
    pub pitch: Vec<f64>,
    pub energy: Vec<f64>,
    /// Log-durations before rounding.
    pub log_duration: Vec<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MaeMetrics {
    pub mae_m: f64,
    pub mae_p: f64,
    pub mae_e: f64,
    pub mae_d: f64,
}

fn mean_abs(a: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = a.fold((0.0, 0usize), |(s, n), v| (s + v.abs(), n + 1));
    s / n as f64
}

/// Mean absolute errors of one utterance. Durations are compared in the
/// log domain against `ln(target frames)`.
pub fn utterance_mae(pred: &PredictedAcoustics, target: &AcousticTargets) -> Result<MaeMetrics> {
    let frames = target.mel.len();
    let n = target.duration.len();
    if pred.mel.nrows() != frames
        || target.mel.iter().any(|r| r.len() != pred.mel.ncols())
        || pred.pitch.len() != n
        || pred.energy.len() != n
        || pred.log_duration.len() != n
    {
        return Err(EcssError::Shape(format!(
            "prediction {}×{} with {} tokens vs target {frames} frames with {n} tokens",
            pred.mel.nrows(),
            pred.mel.ncols(),
            pred.pitch.len()
        )));
    }
    Ok(MaeMetrics {
        mae_m: mean_abs(pred.mel.indexed_iter().map(|((f, b), &v)| v - target.mel[f][b])),
        mae_p: mean_abs(pred.pitch.iter().zip(&target.pitch).map(|(a, b)| a - b)),
        mae_e: mean_abs(pred.energy.iter().zip(&target.energy).map(|(a, b)| a - b)),
        mae_d: mean_abs(pred.log_duration.iter().zip(&target.duration).map(|(a, &b)| a - (b as f64).ln())),
    })
}

/// Per-utterance MAEs averaged over the set.
pub fn mae_metrics(preds: &[PredictedAcoustics], targets: &[&AcousticTargets]) -> Result<MaeMetrics> {
    if preds.len() != targets.len() || preds.is_empty() {
        return Err(EcssError::Shape(format!("{} predictions for {} targets", preds.len(), targets.len())));
    }
    let mut acc = MaeMetrics::default();
    for (p, t) in preds.iter().zip(targets) {
        let m = utterance_mae(p, t)?;
        acc.mae_m += m.mae_m;
        acc.mae_p += m.mae_p;
        acc.mae_e += m.mae_e;
        acc.mae_d += m.mae_d;
    }
    let k = preds.len() as f64;
    Ok(MaeMetrics { mae_m: acc.mae_m / k, mae_p: acc.mae_p / k, mae_e: acc.mae_e / k, mae_d: acc.mae_d / k })
}

/// Counts indexed `[true][predicted]`.
pub fn confusion(truth: &[usize], predicted: &[usize], classes: usize) -> Result<Vec<Vec<usize>>> {
    if truth.len() != predicted.len() {
        return Err(EcssError::Shape("label and prediction counts differ".into()));
    }
    let mut m = vec![vec![0; classes]; classes];
    for (&t, &p) in truth.iter().zip(predicted) {
        if t >= classes || p >= classes {
            return Err(EcssError::Lookup(format!("class {} out of range", t.max(p))));
        }
        m[t][p] += 1;
    }
    Ok(m)
}

pub fn accuracy(m: &[Vec<usize>]) -> f64 {
    let total: usize = m.iter().flatten().sum();
    let diag: usize = (0..m.len()).map(|i| m[i][i]).sum();
    if total == 0 {
        0.0
    } else {
        diag as f64 / total as f64
    }
}

/// Every diagonal entry exceeds every other entry of its row. Rows with
/// no samples are ignored.
pub fn diagonal_dominant(m: &[Vec<usize>]) -> bool {
    m.iter().enumerate().all(|(i, row)| {
        row.iter().sum::<usize>() == 0 || row.iter().enumerate().all(|(j, &v)| j == i || row[i] > v)
    })
}

/// Mean pairwise cosine similarity within and across classes.
pub fn cosine_gap(features: &[Vec<f64>], labels: &[usize]) -> (f64, f64) {
    let unit: Vec<Vec<f64>> = features
        .iter()
        .map(|f| {
            let n = f.iter().map(|v| v * v).sum::<f64>().sqrt();
            f.iter().map(|v| if n > 0.0 { v / n } else { 0.0 }).collect()
        })
        .collect();
    let (mut intra, mut ni, mut inter, mut nx) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..unit.len() {
        for j in i + 1..unit.len() {
            let s: f64 = unit[i].iter().zip(&unit[j]).map(|(a, b)| a * b).sum();
            if labels[i] == labels[j] {
                intra += s;
                ni += 1;
            } else {
                inter += s;
                nx += 1;
            }
        }
    }
    (intra / ni.max(1) as f64, inter / nx.max(1) as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub label: String,
    pub mae: MaeMetrics,
    pub emotion_confusion: Vec<Vec<usize>>,
    pub intensity_confusion: Vec<Vec<usize>>,
    pub emotion_accuracy: f64,
    pub intensity_accuracy: f64,
    pub samples: usize,
    pub config: serde_json::Value,
}

/// Report plus the raw per-window outputs it was computed from.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub report: EvalReport,
    pub emotion_features: Vec<Vec<f64>>,
    pub intensity_features: Vec<Vec<f64>>,
    pub emotion_labels: Vec<usize>,
    pub intensity_labels: Vec<usize>,
    /// Node and edge counts of each window's graph.
    pub graph_counts: Vec<(usize, usize)>,
}

struct WindowResult {
    pred: PredictedAcoustics,
    emo_logits: Vec<f64>,
    int_logits: Vec<f64>,
    emo_feat: Vec<f64>,
    int_feat: Vec<f64>,
    counts: (usize, usize),
}

fn column(a: &Array2<f64>) -> Vec<f64> {
    a.iter().copied().collect()
}

/// Runs the model on `windows` with teacher durations and no dropout.
pub fn evaluate(model: &Model, schema: &EdgeSchema, windows: &[ContextWindow], label: &str, config: serde_json::Value) -> Result<Evaluation> {
    if windows.is_empty() {
        return Err(EcssError::Validation("evaluation set is empty".into()));
    }
    let results: Vec<Result<WindowResult>> = windows
        .par_iter()
        .map(|w| {
            let mut t = Tape::new(&model.params);
            let out = forward_sample(&mut t, model, schema, w, Mode::Eval)?;
            let v = &out.acoustic.variance;
            Ok(WindowResult {
                pred: PredictedAcoustics {
                    mel: t.value(out.acoustic.mel).clone(),
                    pitch: column(t.value(v.pitch)),
                    energy: column(t.value(v.energy)),
                    log_duration: column(t.value(v.log_duration)),
                },
                emo_logits: column(t.value(out.rendered.emotion.logits)),
                int_logits: column(t.value(out.rendered.intensity.logits)),
                emo_feat: column(t.value(out.rendered.emotion.feature)),
                int_feat: column(t.value(out.rendered.intensity.feature)),
                counts: out.graph.counts(),
            })
        })
        .collect();
    let results: Vec<WindowResult> = results.into_iter().collect::<Result<_>>()?;
    let targets: Vec<&AcousticTargets> = windows.iter().map(|w| &w.current.targets).collect();
    let preds: Vec<PredictedAcoustics> = results.iter().map(|r| r.pred.clone()).collect();
    let mae = mae_metrics(&preds, &targets)?;
    let emotion_labels: Vec<usize> = windows.iter().map(|w| w.current.emotion.code() as usize).collect();
    let intensity_labels: Vec<usize> = windows.iter().map(|w| w.current.intensity.code() as usize).collect();
    let emo_pred: Vec<usize> = results.iter().map(|r| argmax(&r.emo_logits)).collect();
    let int_pred: Vec<usize> = results.iter().map(|r| argmax(&r.int_logits)).collect();
    let emotion_confusion = confusion(&emotion_labels, &emo_pred, 7)?;
    let intensity_confusion = confusion(&intensity_labels, &int_pred, 3)?;
    let report = EvalReport {
        label: label.to_string(),
        mae,
        emotion_accuracy: accuracy(&emotion_confusion),
        intensity_accuracy: accuracy(&intensity_confusion),
        emotion_confusion,
        intensity_confusion,
        samples: windows.len(),
        config,
    };
    Ok(Evaluation {
        report,
        emotion_features: results.iter().map(|r| r.emo_feat.clone()).collect(),
        intensity_features: results.iter().map(|r| r.int_feat.clone()).collect(),
        emotion_labels,
        intensity_labels,
        graph_counts: results.iter().map(|r| r.counts).collect(),
    })
}

/// Held-out windows of `corpus` at the given context length.
pub fn test_windows(corpus: &[Conversation], context_length: usize) -> Result<Vec<ContextWindow>> {
    all_windows(&split_corpus(corpus, Split::Test), context_length)
}

pub fn config_echo(model: &ModelConfig, train: &TrainConfig) -> serde_json::Value {
    serde_json::json!({ "model": model, "train": train })
}

/// Trains a fresh model on the training split and evaluates it on the test split.
pub fn train_and_evaluate(corpus: &[Conversation], model_cfg: &ModelConfig, train_cfg: &TrainConfig) -> Result<Evaluation> {
    let (trainer, _) = train_loop(corpus, model_cfg.clone(), train_cfg.clone())?;
    let windows = test_windows(corpus, train_cfg.context_length)?;
    let label = train_cfg.ablation.label();
    trainer.install(|| evaluate(&trainer.model, &trainer.schema, &windows, &label, config_echo(model_cfg, train_cfg)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<(usize, EvalReport)>,
}

pub const PAPER_LENGTHS: [usize; 7] = [2, 3, 6, 9, 10, 13, 14];

/// One fresh run per context length, all with the same seeds.
pub fn context_sweep(corpus: &[Conversation], model_cfg: &ModelConfig, train_cfg: &TrainConfig, lengths: &[usize]) -> Result<SweepResult> {
    let mut rows = Vec::with_capacity(lengths.len());
    for &len in lengths {
        log::info!("context sweep: length {len}");
        let cfg = TrainConfig { context_length: len, ..train_cfg.clone() };
        let mut ev = train_and_evaluate(corpus, model_cfg, &cfg)?;
        ev.report.label = format!("context {len}");
        rows.push((len, ev.report));
    }
    Ok(SweepResult { rows })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub ablation: Ablation,
    pub report: EvalReport,
    /// Whether every evaluated graph matched the closed-form counts.
    pub counts_match: bool,
}

/// The full model plus each single-component ablation, same seeds.
pub fn ablation_suite(corpus: &[Conversation], model_cfg: &ModelConfig, base: &TrainConfig) -> Result<Vec<AblationRow>> {
    let mut runs = vec![Ablation::none()];
    runs.extend(Ablation::standard_suite());
    let windows = test_windows(corpus, base.context_length)?;
    let mut rows = Vec::with_capacity(runs.len());
    for ab in runs {
        log::info!("ablation run: {}", ab.label());
        let cfg = TrainConfig { ablation: ab.clone(), ..base.clone() };
        let ev = train_and_evaluate(corpus, model_cfg, &cfg)?;
        let schema = ab.schema()?;
        let counts_match = windows
            .iter()
            .zip(&ev.graph_counts)
            .all(|(w, &c)| expected_counts_with(w.history_len(), &schema).is_ok_and(|e| e == c));
        rows.push(AblationRow { ablation: ab, report: ev.report, counts_match });
    }
    Ok(rows)
}

/// `metric,name,value` rows.
pub fn report_csv(r: &EvalReport) -> String {
    let mut s = String::from("metric,name,value\n");
    let _ = writeln!(s, "mae,mel,{}", r.mae.mae_m);
    let _ = writeln!(s, "mae,pitch,{}", r.mae.mae_p);
    let _ = writeln!(s, "mae,energy,{}", r.mae.mae_e);
    let _ = writeln!(s, "mae,duration,{}", r.mae.mae_d);
    let _ = writeln!(s, "accuracy,emotion,{}", r.emotion_accuracy);
    let _ = writeln!(s, "accuracy,intensity,{}", r.intensity_accuracy);
    let _ = writeln!(s, "count,samples,{}", r.samples);
    for (i, row) in r.emotion_confusion.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            let (a, b) = (EmotionLabel::ALL[i].name(), EmotionLabel::ALL[j].name());
            let _ = writeln!(s, "emotion_confusion,{a}->{b},{v}");
        }
    }
    for (i, row) in r.intensity_confusion.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            let (a, b) = (IntensityLabel::ALL[i].name(), IntensityLabel::ALL[j].name());
            let _ = writeln!(s, "intensity_confusion,{a}->{b},{v}");
        }
    }
    s
}

const SUMMARY_HEADER: &str = "mae_m,mae_p,mae_e,mae_d,emotion_accuracy,intensity_accuracy,samples";

fn summary_cells(r: &EvalReport) -> String {
    format!(
        "{},{},{},{},{},{},{}",
        r.mae.mae_m, r.mae.mae_p, r.mae.mae_e, r.mae.mae_d, r.emotion_accuracy, r.intensity_accuracy, r.samples
    )
}

pub fn sweep_csv(s: &SweepResult) -> String {
    let mut out = format!("context_length,{SUMMARY_HEADER}\n");
    for (len, r) in &s.rows {
        let _ = writeln!(out, "{len},{}", summary_cells(r));
    }
    out
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = format!("model,{SUMMARY_HEADER},counts_match\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{}", r.ablation.label(), summary_cells(&r.report), r.counts_match);
    }
    out
}

/// Confusion matrix as a CSV grid with a header row of predicted labels.
pub fn confusion_csv(m: &[Vec<usize>], names: &[&str]) -> String {
    let mut s = format!("true\\pred,{}\n", names.join(","));
    for (i, row) in m.iter().enumerate() {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(s, "{},{}", names[i], cells.join(","));
    }
    s
}

/// Standalone SVG heatmap of row-normalised counts on a white-to-blue ramp,
/// with the raw count printed in each cell.
pub fn confusion_svg(m: &[Vec<usize>], names: &[&str], title: &str) -> String {
    let n = m.len();
    let cell = 56;
    let left = 90;
    let top = 60;
    let w = left + n * cell + 20;
    let h = top + n * cell + 40;
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" font-size="14" text-anchor="middle">{title}</text>"#, w / 2);
    for (j, name) in names.iter().enumerate() {
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{name}</text>"#, left + j * cell + cell / 2, top - 8);
    }
    for (i, row) in m.iter().enumerate() {
        let total: usize = row.iter().sum();
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, left - 6, top + i * cell + cell / 2 + 4, names[i]);
        for (j, &v) in row.iter().enumerate() {
            let frac = if total == 0 { 0.0 } else { v as f64 / total as f64 };
            let r = (255.0 - frac * 222.0).round() as u8;
            let g = (255.0 - frac * 153.0).round() as u8;
            let b = (255.0 - frac * 75.0).round() as u8;
            let fg = if frac > 0.5 { "white" } else { "black" };
            let (x, y) = (left + j * cell, top + i * cell);
            let _ = writeln!(s, r##"<rect x="{x}" y="{y}" width="{cell}" height="{cell}" fill="#{r:02x}{g:02x}{b:02x}" stroke="#999"/>"##);
            let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle" fill="{fg}">{v}</text>"#, x + cell / 2, y + cell / 2 + 4);
        }
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">predicted</text>"#, left + n * cell / 2, h - 12);
    s.push_str("</svg>\n");
    s
}

pub fn emotion_names() -> Vec<&'static str> {
    EmotionLabel::ALL.iter().map(|e| e.name()).collect()
}

pub fn intensity_names() -> Vec<&'static str> {
    IntensityLabel::ALL.iter().map(|e| e.name()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn confusion_shapes_and_dominance() {
        let truth = [0, 1, 2, 2, 1];
        let m = confusion(&truth, &truth, 3).unwrap();
        assert!(diagonal_dominant(&m));
        assert_eq!(accuracy(&m), 1.0);
        let constant = confusion(&truth, &[2; 5], 3).unwrap();
        assert_eq!(constant.iter().map(|r| r[2]).sum::<usize>(), 5);
        assert!(!diagonal_dominant(&constant));
        let rows: Vec<usize> = m.iter().map(|r| r.iter().sum()).collect();
        assert_eq!(rows, vec![1, 2, 2]);
    }

    #[test]
    fn mae_identity_and_offset() {
        let target = AcousticTargets {
            mel: vec![vec![0.0; 80]; 3],
            pitch: vec![0.1, 0.2],
            energy: vec![0.3, 0.4],
            duration: vec![1, 2],
            prosody: vec![0.0; 256],
        };
        let mut pred = PredictedAcoustics {
            mel: Array2::zeros((3, 80)),
            pitch: target.pitch.clone(),
            energy: target.energy.clone(),
            log_duration: vec![0.0, 2f64.ln()],
        };
        assert_eq!(mae_metrics(&[pred.clone()], &[&target]).unwrap(), MaeMetrics::default());
        pred.mel.fill(0.5);
        let m = mae_metrics(&[pred], &[&target]).unwrap();
        assert_eq!(m.mae_m, 0.5);
        assert_eq!(m.mae_p, 0.0);
    }

    #[test]
    fn cosine_gap_separates_clusters() {
        let f = vec![vec![1.0, 0.0], vec![2.0, 0.1], vec![0.0, 1.0], vec![0.1, 3.0]];
        let (intra, inter) = cosine_gap(&f, &[0, 0, 1, 1]);
        assert!(intra > 0.99 && inter < 0.2);
    }

    #[test]
    fn svg_prints_every_count() {
        let m = vec![vec![3, 1], vec![0, 4]];
        let svg = confusion_svg(&m, &["a", "b"], "t");
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<rect").count(), 4);
        assert!(svg.contains(">3</text>") && svg.contains(">4</text>"));
    }
}
