//! Acoustic decoding of the current utterance.
//!
//! Tokens are encoded by a small transformer, the five conditioning streams
//! (content, speaker, emotion, intensity, prosody) are mixed by softmaxed
//! trainable weights and added to every token, and a variance adaptor
//! predicts per-token duration, pitch and energy before the length regulator
//! expands tokens to frames for the mel decoder.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::corpus::oracle::{MEL_BINS, PROSODY_DIM};
use crate::corpus::AcousticTargets;
use crate::encoders::{lookup_embedding, EmbeddingTable};
use crate::error::{EcssError, Result};
use crate::nn::{sinusoidal_positions, Conv3, Dropout, FftBlock, LayerNorm, Linear};
use crate::params::{ParamBuilder, ParamId};
use crate::tape::{Tape, Var};

#[derive(Clone, Debug)]
pub struct TextEncoder {
    pub embedding: EmbeddingTable,
    pub blocks: Vec<FftBlock>,
    pub dim: usize,
}

impl TextEncoder {
    pub fn new(pb: &mut ParamBuilder<'_>, cfg: &ModelConfig) -> Self {
        pb.scoped("text_enc", |pb| TextEncoder {
            embedding: EmbeddingTable::new(pb, "embed", cfg.vocab_size, cfg.model_dim),
            blocks: (0..cfg.encoder_layers)
                .map(|i| FftBlock::new(pb, &format!("b{i}"), cfg.model_dim, cfg.ffn_dim, cfg.attention_heads))
                .collect(),
            dim: cfg.model_dim,
        })
    }
}

/// Per-token encodings (`n × dim`) and their mean.
pub fn encode_text(t: &mut Tape<'_>, enc: &TextEncoder, tokens: &[u32], drop: &mut Dropout) -> Result<(Var, Var)> {
    if tokens.is_empty() {
        return Err(EcssError::Validation("cannot encode an empty token list".into()));
    }
    let ids: Vec<usize> = tokens.iter().map(|&x| x as usize).collect();
    let e = lookup_embedding(t, enc.embedding, &ids)?;
    let pos = t.constant(sinusoidal_positions(tokens.len(), enc.dim));
    let mut x = t.add(e, pos);
    x = drop.apply(t, x);
    for b in &enc.blocks {
        x = b.forward(t, x, drop);
    }
    let pooled = t.mean_rows(x);
    Ok((x, pooled))
}

/// Softmax-weighted sum of per-stream linear projections. The projections
/// carry no bias, so a zero stream contributes nothing.
#[derive(Clone, Debug)]
pub struct Aggregator {
    pub weights: ParamId,
    pub proj: Vec<ParamId>,
}

pub const STREAMS: [&str; 5] = ["content", "speaker", "emotion", "intensity", "prosody"];

impl Aggregator {
    pub fn new(pb: &mut ParamBuilder<'_>, cfg: &ModelConfig) -> Self {
        let dims = [cfg.model_dim, cfg.model_dim, cfg.render_dim, cfg.render_dim, PROSODY_DIM];
        pb.scoped("agg", |pb| Aggregator {
            weights: pb.constant("weights", 1, 5, 0.0),
            proj: STREAMS
                .iter()
                .zip(dims)
                .map(|(n, d)| pb.uniform(n, d, cfg.model_dim, d))
                .collect(),
        })
    }
}

/// `streams` in [`STREAMS`] order, each `1 × d_k`.
pub fn aggregate_features(t: &mut Tape<'_>, agg: &Aggregator, streams: [Var; 5]) -> Var {
    let w = t.param(agg.weights);
    let sm = t.softmax_rows(w);
    let mut acc: Option<Var> = None;
    for (k, s) in streams.into_iter().enumerate() {
        let p = t.param(agg.proj[k]);
        let y = t.matmul(s, p);
        let wk = t.slice_cols(sm, k, k + 1);
        let y = t.mul_scalar(y, wk);
        acc = Some(match acc {
            Some(a) => t.add(a, y),
            None => y,
        });
    }
    acc.expect("five streams")
}

/// Conv → GELU → LayerNorm twice, then a scalar head per token.
#[derive(Clone, Copy, Debug)]
pub struct VariancePredictor {
    pub conv1: Conv3,
    pub ln1: LayerNorm,
    pub conv2: Conv3,
    pub ln2: LayerNorm,
    pub head: Linear,
}

impl VariancePredictor {
    fn new(pb: &mut ParamBuilder<'_>, name: &str, dim: usize) -> Self {
        pb.scoped(name, |pb| VariancePredictor {
            conv1: Conv3::new(pb, "conv1", dim, dim),
            ln1: LayerNorm::new(pb, "ln1", dim),
            conv2: Conv3::new(pb, "conv2", dim, dim),
            ln2: LayerNorm::new(pb, "ln2", dim),
            head: Linear::new(pb, "head", dim, 1),
        })
    }

    fn forward(&self, t: &mut Tape<'_>, x: Var) -> Var {
        let h = self.conv1.forward(t, x);
        let h = t.gelu(h);
        let h = self.ln1.forward(t, h);
        let h = self.conv2.forward(t, h);
        let h = t.gelu(h);
        let h = self.ln2.forward(t, h);
        self.head.forward(t, h)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct VarianceAdaptor {
    pub duration: VariancePredictor,
    pub pitch: VariancePredictor,
    pub energy: VariancePredictor,
    pub pitch_embed: Linear,
    pub energy_embed: Linear,
}

impl VarianceAdaptor {
    pub fn new(pb: &mut ParamBuilder<'_>, cfg: &ModelConfig) -> Self {
        let d = cfg.model_dim;
        pb.scoped("var", |pb| VarianceAdaptor {
            duration: VariancePredictor::new(pb, "duration", d),
            pitch: VariancePredictor::new(pb, "pitch", d),
            energy: VariancePredictor::new(pb, "energy", d),
            pitch_embed: Linear::new(pb, "pitch_embed", 1, d),
            energy_embed: Linear::new(pb, "energy_embed", 1, d),
        })
    }
}

/// How the adaptor picks durations and the pitch/energy values it adds back.
#[derive(Clone, Copy, Debug)]
pub enum Guidance<'a> {
    /// Teacher durations, pitch and energy (training).
    Teacher(&'a AcousticTargets),
    /// Teacher durations, predicted pitch and energy (evaluation with
    /// aligned frames).
    TeacherDurations(&'a [u32]),
    /// Everything predicted.
    Free,
}

#[derive(Clone, Debug)]
pub struct VarianceOutput {
    /// `n × 1` predicted log-durations.
    pub log_duration: Var,
    pub pitch: Var,
    pub energy: Var,
    /// Durations used by the length regulator.
    pub durations: Vec<u32>,
    /// `frames × dim`.
    pub frames: Var,
}

/// Rounded `exp` of the predicted log-durations, at least one frame.
pub fn durations_from_log(log_d: &Array2<f64>) -> Vec<u32> {
    log_d.iter().map(|&v| (v.exp().round().max(1.0)).min(1e6) as u32).collect()
}

pub fn variance_adapt(t: &mut Tape<'_>, va: &VarianceAdaptor, x: Var, guide: Guidance<'_>) -> Result<VarianceOutput> {
    let n = t.shape(x).0;
    if n == 0 {
        return Err(EcssError::Validation("variance adaptor needs at least one token".into()));
    }
    let log_duration = va.duration.forward(t, x);
    let pitch = va.pitch.forward(t, x);
    let energy = va.energy.forward(t, x);
    let column = |t: &mut Tape<'_>, v: &[f64]| -> Result<Var> {
        if v.len() != n {
            return Err(EcssError::Shape(format!("{} teacher values for {n} tokens", v.len())));
        }
        Ok(t.constant(Array2::from_shape_vec((n, 1), v.to_vec()).expect("column shape")))
    };
    let (p_in, e_in, durations) = match guide {
        Guidance::Teacher(tg) => (column(t, &tg.pitch)?, column(t, &tg.energy)?, tg.duration.clone()),
        Guidance::TeacherDurations(d) => (pitch, energy, d.to_vec()),
        Guidance::Free => (pitch, energy, durations_from_log(t.value(log_duration))),
    };
    if durations.len() != n || durations.contains(&0) {
        return Err(EcssError::Shape(format!(
            "need {n} durations of at least one frame, got {:?}",
            durations
        )));
    }
    let pe = va.pitch_embed.forward(t, p_in);
    let ee = va.energy_embed.forward(t, e_in);
    let h = t.add(x, pe);
    let h = t.add(h, ee);
    let frames = t.repeat_rows(h, durations.iter().map(|&d| d as usize).collect());
    Ok(VarianceOutput { log_duration, pitch, energy, durations, frames })
}

#[derive(Clone, Debug)]
pub struct MelDecoder {
    pub blocks: Vec<FftBlock>,
    pub out: Linear,
    pub dim: usize,
}

impl MelDecoder {
    pub fn new(pb: &mut ParamBuilder<'_>, cfg: &ModelConfig) -> Self {
        pb.scoped("dec", |pb| MelDecoder {
            blocks: (0..cfg.decoder_layers)
                .map(|i| FftBlock::new(pb, &format!("b{i}"), cfg.model_dim, cfg.ffn_dim, cfg.attention_heads))
                .collect(),
            out: Linear::new(pb, "out", cfg.model_dim, MEL_BINS),
            dim: cfg.model_dim,
        })
    }
}

pub fn decode_mel(t: &mut Tape<'_>, dec: &MelDecoder, frames: Var) -> Result<Var> {
    let n = t.shape(frames).0;
    if n == 0 {
        return Err(EcssError::Validation("mel decoder needs at least one frame".into()));
    }
    let pos = t.constant(sinusoidal_positions(n, dec.dim));
    let mut x = t.add(frames, pos);
    let mut off = Dropout::disabled();
    for b in &dec.blocks {
        x = b.forward(t, x, &mut off);
    }
    Ok(dec.out.forward(t, x))
}

#[derive(Clone, Debug)]
pub struct Synthesizer {
    pub text: TextEncoder,
    pub speaker: EmbeddingTable,
    pub aggregator: Aggregator,
    pub variance: VarianceAdaptor,
    pub decoder: MelDecoder,
}

impl Synthesizer {
    pub fn new(pb: &mut ParamBuilder<'_>, cfg: &ModelConfig) -> Self {
        pb.scoped("synth", |pb| Synthesizer {
            text: TextEncoder::new(pb, cfg),
            speaker: EmbeddingTable::new(pb, "speaker", 2, cfg.model_dim),
            aggregator: Aggregator::new(pb, cfg),
            variance: VarianceAdaptor::new(pb, cfg),
            decoder: MelDecoder::new(pb, cfg),
        })
    }
}

#[derive(Clone, Debug)]
pub struct AcousticPrediction {
    pub mel: Var,
    pub variance: VarianceOutput,
    /// The mixed conditioning vector added to every token.
    pub condition: Var,
}

/// Conditioning streams from the renderer: emotion, intensity, prosody.
#[derive(Clone, Copy, Debug)]
pub struct Conditioning {
    pub emotion: Var,
    pub intensity: Var,
    pub prosody: Var,
}

pub fn synthesize(
    t: &mut Tape<'_>,
    s: &Synthesizer,
    tokens: &[u32],
    speaker: u8,
    cond: Conditioning,
    guide: Guidance<'_>,
    drop: &mut Dropout,
) -> Result<AcousticPrediction> {
    let (tok, content) = encode_text(t, &s.text, tokens, drop)?;
    let spk = lookup_embedding(t, s.speaker, &[speaker as usize])?;
    let condition = aggregate_features(t, &s.aggregator, [content, spk, cond.emotion, cond.intensity, cond.prosody]);
    let x = t.add_row(tok, condition);
    let variance = variance_adapt(t, &s.variance, x, guide)?;
    let mel = decode_mel(t, &s.decoder, variance.frames)?;
    Ok(AcousticPrediction { mel, variance, condition })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Fs2Components {
    pub mel: f64,
    pub pitch: f64,
    pub energy: f64,
    pub duration: f64,
}

impl Fs2Components {
    pub fn total(&self) -> f64 {
        self.mel + self.pitch + self.energy + self.duration
    }
}

/// Mel MAE plus MSE on pitch, energy and log-duration.
pub fn fs2_loss(t: &mut Tape<'_>, pred: &AcousticPrediction, targets: &AcousticTargets) -> Result<(Var, Fs2Components)> {
    let (frames, bins) = t.shape(pred.mel);
    let n = t.shape(pred.variance.pitch).0;
    if frames != targets.mel.len() || bins != MEL_BINS || n != targets.pitch.len() || n != targets.duration.len() {
        return Err(EcssError::Shape(format!(
            "prediction {frames}×{bins} with {n} tokens vs target {}×{MEL_BINS} with {} tokens",
            targets.mel.len(),
            targets.pitch.len()
        )));
    }
    let mel_t = Array2::from_shape_fn((frames, bins), |(f, b)| targets.mel[f][b]);
    let mel_t = t.constant(mel_t);
    let d = t.sub(pred.mel, mel_t);
    let a = t.abs(d);
    let mel = t.mean_all(a);
    let mse = |t: &mut Tape<'_>, p: Var, v: Vec<f64>| {
        let c = t.constant(Array2::from_shape_vec((v.len(), 1), v).expect("column"));
        let d = t.sub(p, c);
        let sq = t.mul(d, d);
        t.mean_all(sq)
    };
    let pitch = mse(t, pred.variance.pitch, targets.pitch.clone());
    let energy = mse(t, pred.variance.energy, targets.energy.clone());
    let log_d = targets.duration.iter().map(|&d| (d as f64).ln()).collect();
    let dur = mse(t, pred.variance.log_duration, log_d);
    let comps = Fs2Components {
        mel: t.scalar(mel),
        pitch: t.scalar(pitch),
        energy: t.scalar(energy),
        duration: t.scalar(dur),
    };
    let s = t.add(mel, pitch);
    let s = t.add(s, energy);
    let total = t.add(s, dur);
    Ok((total, comps))
}

/// Per-token values written next to an exported mel matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MelSidecar {
    pub frames: usize,
    pub bins: usize,
    pub pitch: Vec<f64>,
    pub energy: Vec<f64>,
    pub duration: Vec<u32>,
}

pub fn sidecar_path(mel_path: &Path) -> PathBuf {
    mel_path.with_extension("json")
}

/// Writes `frames u32, bins u32` (little-endian) then row-major `f32`s, and
/// the JSON sidecar beside it.
pub fn write_mel(path: &Path, mel: &Array2<f64>, sidecar: &MelSidecar) -> Result<()> {
    let (frames, bins) = mel.dim();
    let mut buf = Vec::with_capacity(8 + 4 * mel.len());
    buf.extend_from_slice(&(frames as u32).to_le_bytes());
    buf.extend_from_slice(&(bins as u32).to_le_bytes());
    for v in mel.iter() {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    let mut f = std::fs::File::create(path).map_err(|e| EcssError::io(path, e))?;
    f.write_all(&buf).map_err(|e| EcssError::io(path, e))?;
    let side = sidecar_path(path);
    std::fs::write(&side, serde_json::to_vec_pretty(sidecar)?).map_err(|e| EcssError::io(&side, e))?;
    Ok(())
}

pub fn read_mel(path: &Path) -> Result<Array2<f32>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| EcssError::io(path, e))?;
    if bytes.len() < 8 {
        return Err(EcssError::Validation(format!("{}: truncated mel header", path.display())));
    }
    let frames = u32::from_le_bytes(bytes[0..4].try_into().expect("4 bytes")) as usize;
    let bins = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    if bytes.len() != 8 + 4 * frames * bins {
        return Err(EcssError::Validation(format!(
            "{}: header says {frames}×{bins} but body has {} bytes",
            path.display(),
            bytes.len() - 8
        )));
    }
    let vals = bytes[8..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Ok(Array2::from_shape_vec((frames, bins), vals).expect("checked length"))
}
