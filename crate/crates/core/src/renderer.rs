//! Emotion, intensity and prosody rendering from encoded history nodes,
//! plus the losses that supervise them.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::corpus::oracle::PROSODY_DIM;
use crate::ecg::{EcgGraph, NodeKind};
use crate::error::{EcssError, Result};
use crate::nn::{BiLstm, Conv3, Linear, MultiHeadAttention};
use crate::params::{InitScheme, ParamBuilder};
use crate::tape::{Tape, Var};

pub const DEFAULT_TEMPERATURE: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupConConfig {
    pub temperature: f64,
}

impl Default for SupConConfig {
    fn default() -> Self {
        Self { temperature: DEFAULT_TEMPERATURE }
    }
}

/// Shared trunk of both label predictors: two convolutions, a BiLSTM and
/// two fully connected layers, plus a linear classification head.
#[derive(Clone, Copy, Debug)]
pub struct SequencePredictor {
    pub conv1: Conv3,
    pub conv2: Conv3,
    pub lstm: BiLstm,
    pub fc1: Linear,
    pub fc2: Linear,
    pub head: Linear,
    pub classes: usize,
}

impl SequencePredictor {
    fn new(pb: &mut ParamBuilder<'_>, name: &str, cfg: &ModelConfig, classes: usize) -> Self {
        let d = cfg.hgt.hidden_dim;
        pb.scoped(name, |pb| SequencePredictor {
            conv1: Conv3::new(pb, "conv1", d, d),
            conv2: Conv3::new(pb, "conv2", d, d),
            lstm: BiLstm::new(pb, "lstm", d, cfg.lstm_hidden),
            fc1: Linear::new(pb, "fc1", 2 * cfg.lstm_hidden, cfg.render_dim),
            fc2: Linear::new(pb, "fc2", cfg.render_dim, cfg.render_dim),
            head: Linear::new(pb, "head", cfg.render_dim, classes),
            classes,
        })
    }

    fn trunk(&self, t: &mut Tape<'_>, seq: Var) -> crate::nn::BiLstmOutput {
        let x = self.conv1.forward(t, seq);
        let x = t.gelu(x);
        let x = self.conv2.forward(t, x);
        let x = t.gelu(x);
        self.lstm.forward(t, x)
    }

    pub fn feature_dim(&self) -> usize {
        self.fc2.fan_out
    }
}

#[derive(Clone, Debug)]
pub struct Renderer {
    pub emotion: SequencePredictor,
    pub intensity: SequencePredictor,
    pub prosody: MultiHeadAttention,
}

impl Renderer {
    pub fn new(pb: &mut ParamBuilder<'_>, cfg: &ModelConfig) -> Self {
        pb.scoped_with("render", InitScheme::He, |pb| Renderer {
            emotion: SequencePredictor::new(pb, "emotion", cfg, 7),
            intensity: SequencePredictor::new(pb, "intensity", cfg, 3),
            prosody: MultiHeadAttention::new(
                pb,
                "prosody",
                cfg.text_node_dim,
                cfg.hgt.hidden_dim,
                cfg.hgt.hidden_dim,
                PROSODY_DIM,
                cfg.prosody_heads,
            ),
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LabelPrediction {
    pub feature: Var,
    pub logits: Var,
    /// True when the node kind was absent and the output is the fallback.
    pub fallback: bool,
}

#[derive(Clone, Copy, Debug)]
pub struct RenderedFeatures {
    pub emotion: LabelPrediction,
    pub intensity: LabelPrediction,
    pub prosody: Var,
}

/// Encoded rows of the history nodes of `kind`, oldest first.
fn history_sequence(t: &mut Tape<'_>, graph: &EcgGraph, encoded: Var, kind: NodeKind) -> Option<Var> {
    let mut nodes: Vec<(usize, usize)> = graph
        .nodes_of_kind(kind)
        .into_iter()
        .map(|i| (graph.nodes()[i].turn, i))
        .filter(|&(turn, _)| turn < graph.history_len())
        .collect();
    if nodes.is_empty() {
        return None;
    }
    nodes.sort_unstable();
    Some(t.gather_rows(encoded, nodes.into_iter().map(|(_, i)| i).collect()))
}

fn fallback(t: &mut Tape<'_>, p: &SequencePredictor) -> LabelPrediction {
    LabelPrediction {
        feature: t.constant(Array2::zeros((1, p.feature_dim()))),
        logits: t.constant(Array2::zeros((1, p.classes))),
        fallback: true,
    }
}

/// Feature of the current emotion from the history emotion nodes: the BiLSTM
/// summary (last forward and last backward state) through two FC layers.
pub fn predict_emotion(t: &mut Tape<'_>, r: &Renderer, graph: &EcgGraph, encoded: Var) -> LabelPrediction {
    let p = &r.emotion;
    let Some(seq) = history_sequence(t, graph, encoded, NodeKind::Emotion) else {
        return fallback(t, p);
    };
    let out = p.trunk(t, seq);
    let h = p.fc1.forward(t, out.summary);
    let h = t.gelu(h);
    let feature = p.fc2.forward(t, h);
    let logits = p.head.forward(t, feature);
    LabelPrediction { feature, logits, fallback: false }
}

/// Feature of the current intensity: per-step FC layers over the BiLSTM
/// sequence, kernel-2 average pooling, then the mean over steps.
pub fn predict_intensity(t: &mut Tape<'_>, r: &Renderer, graph: &EcgGraph, encoded: Var) -> LabelPrediction {
    let p = &r.intensity;
    let Some(seq) = history_sequence(t, graph, encoded, NodeKind::Intensity) else {
        return fallback(t, p);
    };
    let out = p.trunk(t, seq);
    let h = p.fc1.forward(t, out.sequence);
    let h = t.gelu(h);
    let h = p.fc2.forward(t, h);
    let pooled = t.avg_pool2(h);
    let feature = t.mean_rows(pooled);
    let logits = p.head.forward(t, feature);
    LabelPrediction { feature, logits, fallback: false }
}

/// Attention of the current text feature over the encoded history text nodes.
pub fn predict_prosody(
    t: &mut Tape<'_>,
    r: &Renderer,
    graph: &EcgGraph,
    encoded: Var,
    current_text: Var,
) -> Result<(Var, Vec<Var>)> {
    let keys = history_sequence(t, graph, encoded, NodeKind::Text)
        .ok_or_else(|| EcssError::Validation("prosody needs at least one history text node".into()))?;
    Ok(r.prosody.forward(t, current_text, keys))
}

pub fn render(t: &mut Tape<'_>, r: &Renderer, graph: &EcgGraph, encoded: Var, current_text: Var) -> Result<RenderedFeatures> {
    Ok(RenderedFeatures {
        emotion: predict_emotion(t, r, graph, encoded),
        intensity: predict_intensity(t, r, graph, encoded),
        prosody: predict_prosody(t, r, graph, encoded, current_text)?.0,
    })
}

/// Mean squared error against a fixed target row.
pub fn prosody_mse(t: &mut Tape<'_>, pred: Var, target: &[f64]) -> Result<Var> {
    let (r, c) = t.shape(pred);
    if r != 1 || c != target.len() {
        return Err(EcssError::Shape(format!(
            "prosody prediction is {r}×{c} but target has {} values",
            target.len()
        )));
    }
    let tv = t.row(target);
    let d = t.sub(pred, tv);
    let sq = t.mul(d, d);
    Ok(t.mean_all(sq))
}

/// Batch loss value with its gradient with respect to the input rows.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchLoss {
    pub loss: f64,
    pub grad: Array2<f64>,
    /// Anchors that contributed (contrastive) or samples (cross-entropy).
    pub anchors: usize,
    /// Set when nothing contributed: every anchor lacked positives, or the
    /// batch had fewer than two rows.
    pub degenerate: bool,
}

/// Supervised contrastive loss on cosine similarity.
///
/// For each anchor with at least one same-label partner, the loss is the
/// mean over those partners of the negative log softmax of their similarity
/// among all other batch rows. Anchors without partners are skipped and the
/// result is averaged over the remaining anchors.
pub fn supcon_loss(features: &Array2<f64>, labels: &[usize], tau: f64) -> Result<BatchLoss> {
    let (b, d) = features.dim();
    if labels.len() != b {
        return Err(EcssError::Shape(format!("{b} features but {} labels", labels.len())));
    }
    if tau <= 0.0 || !tau.is_finite() {
        return Err(EcssError::Config(format!("temperature must be positive, got {tau}")));
    }
    let mut grad = Array2::zeros((b, d));
    if b < 2 {
        log::warn!("contrastive batch has fewer than two rows; loss is zero");
        return Ok(BatchLoss { loss: 0.0, grad, anchors: 0, degenerate: true });
    }
    let norms: Vec<f64> = features.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
    let mut z = features.clone();
    for (i, mut row) in z.rows_mut().into_iter().enumerate() {
        if norms[i] > 0.0 {
            row /= norms[i];
        } else {
            row.fill(0.0);
        }
    }
    let sim = z.dot(&z.t()) / tau;
    let anchors: Vec<usize> = (0..b)
        .filter(|&k| (0..b).any(|q| q != k && labels[q] == labels[k]))
        .collect();
    let m = anchors.len();
    if m == 0 {
        return Ok(BatchLoss { loss: 0.0, grad, anchors: 0, degenerate: true });
    }
    // d loss / d sim, accumulated per anchor.
    let mut dsim = Array2::<f64>::zeros((b, b));
    let mut total = 0.0;
    for &k in &anchors {
        let others: Vec<usize> = (0..b).filter(|&d| d != k).collect();
        let mx = others.iter().map(|&d| sim[[k, d]]).fold(f64::NEG_INFINITY, f64::max);
        let zsum: f64 = others.iter().map(|&d| (sim[[k, d]] - mx).exp()).sum();
        let log_z = mx + zsum.ln();
        let pos: Vec<usize> = others.iter().copied().filter(|&q| labels[q] == labels[k]).collect();
        let np = pos.len() as f64;
        total += pos.iter().map(|&q| log_z - sim[[k, q]]).sum::<f64>() / np;
        for &dd in &others {
            let p = (sim[[k, dd]] - log_z).exp();
            let is_pos = if labels[dd] == labels[k] { 1.0 / np } else { 0.0 };
            dsim[[k, dd]] += (p - is_pos) / m as f64;
        }
    }
    // sim = z zᵀ / τ, so dz = (dsim + dsimᵀ) z / τ.
    let sym = &dsim + &dsim.t();
    let gz = sym.dot(&z) / tau;
    for i in 0..b {
        if norms[i] > 0.0 {
            let zi = z.row(i);
            let gi = gz.row(i);
            let proj = zi.dot(&gi);
            for c in 0..d {
                grad[[i, c]] = (gi[c] - zi[c] * proj) / norms[i];
            }
        }
    }
    Ok(BatchLoss { loss: total / m as f64, grad, anchors: m, degenerate: false })
}

/// Mean softmax cross-entropy of `logits` rows against `labels`.
pub fn cross_entropy(logits: &Array2<f64>, labels: &[usize]) -> Result<BatchLoss> {
    let (b, c) = logits.dim();
    if labels.len() != b {
        return Err(EcssError::Shape(format!("{b} logit rows but {} labels", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(EcssError::Lookup(format!("label {bad} out of range for {c} classes")));
    }
    let mut grad = Array2::zeros((b, c));
    if b == 0 {
        return Ok(BatchLoss { loss: 0.0, grad, anchors: 0, degenerate: true });
    }
    let mut total = 0.0;
    for i in 0..b {
        let row = logits.row(i);
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|v| (v - mx).exp()).sum();
        let log_z = mx + z.ln();
        total += log_z - row[labels[i]];
        for j in 0..c {
            let p = (row[j] - log_z).exp();
            grad[[i, j]] = (p - if j == labels[i] { 1.0 } else { 0.0 }) / b as f64;
        }
    }
    Ok(BatchLoss { loss: total / b as f64, grad, anchors: b, degenerate: false })
}

/// Argmax with ties resolved toward the lower index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
