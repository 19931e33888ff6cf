//! The full pipeline for one context window: graph, node features, HGT,
//! renderer and synthesizer, with the per-sample losses.

use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::corpus::ContextWindow;
use crate::ecg::{build_ecg_with, EcgGraph, EdgeSchema, NodeKind};
use crate::encoders::{init_node_features, Encoders};
use crate::error::{EcssError, Result};
use crate::hgt::{hgt_forward, Hgt};
use crate::nn::Dropout;
use crate::params::{ParamBuilder, ParamStore};
use crate::renderer::{prosody_mse, render, RenderedFeatures, Renderer};
use crate::synthesizer::{fs2_loss, synthesize, AcousticPrediction, Conditioning, Fs2Components, Guidance, Synthesizer};
use crate::tape::{Tape, Var};

/// Which parts of the full model a run leaves out.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablation {
    pub drop_nodes: Vec<NodeKind>,
    /// Train the label heads with cross-entropy instead of the contrastive loss.
    pub cross_entropy: bool,
}

impl Ablation {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn schema(&self) -> Result<EdgeSchema> {
        EdgeSchema::without(&self.drop_nodes)
    }

    /// Short name used in tables: `full`, `w/o emotion`, ... `w/o supcon`.
    pub fn label(&self) -> String {
        let mut parts: Vec<String> = self.drop_nodes.iter().map(|k| k.name().to_string()).collect();
        if self.cross_entropy {
            parts.push("supcon".into());
        }
        if parts.is_empty() {
            "full".into()
        } else {
            format!("w/o {}", parts.join("+"))
        }
    }

    /// The five single-component ablations, in table order.
    pub fn standard_suite() -> Vec<Ablation> {
        ["emotion", "intensity", "speaker", "audio", "supcon"]
            .iter()
            .map(|s| s.parse().expect("known ablation"))
            .collect()
    }
}

impl FromStr for Ablation {
    type Err = EcssError;
    fn from_str(s: &str) -> Result<Self> {
        let mut a = Ablation::none();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "emotion" => a.drop_nodes.push(NodeKind::Emotion),
                "intensity" => a.drop_nodes.push(NodeKind::Intensity),
                "speaker" => a.drop_nodes.push(NodeKind::Speaker),
                "audio" => a.drop_nodes.push(NodeKind::Audio),
                "supcon" => a.cross_entropy = true,
                "none" | "full" => {}
                other => {
                    return Err(EcssError::Config(format!(
                        "unknown ablation `{other}` (expected emotion, intensity, speaker, audio or supcon)"
                    )))
                }
            }
        }
        Ok(a)
    }
}

#[derive(Clone, Debug)]
pub struct Architecture {
    pub encoders: Encoders,
    pub hgt: Hgt,
    pub renderer: Renderer,
    pub synth: Synthesizer,
}

/// Parameters plus the layer layout that indexes into them.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub arch: Architecture,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pb = ParamBuilder::new(&mut params, &mut rng);
        let encoders = Encoders::new(&mut pb, &config)?;
        let hgt = Hgt::new(&mut pb, &config.hgt, config.text_node_dim, config.node_dim)?;
        let renderer = Renderer::new(&mut pb, &config);
        let synth = Synthesizer::new(&mut pb, &config);
        Ok(Self {
            config,
            params,
            arch: Architecture { encoders, hgt, renderer, synth },
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub enum Mode {
    /// Teacher forcing everywhere; dropout driven by the given seed.
    Train { dropout_seed: u64 },
    /// Teacher durations so frames align with targets; no dropout.
    Eval,
    /// Nothing from the targets is used.
    Inference,
}

#[derive(Clone, Debug)]
pub struct SampleOutput {
    pub graph: EcgGraph,
    pub rendered: RenderedFeatures,
    pub acoustic: AcousticPrediction,
    /// Prosody MSE (`1×1`); absent at inference.
    pub prosody_loss: Option<Var>,
    /// Acoustic loss (`1×1`); absent at inference.
    pub fs2: Option<(Var, Fs2Components)>,
}

/// Runs the whole model on one window.
pub fn forward_sample(
    t: &mut Tape<'_>,
    model: &Model,
    schema: &EdgeSchema,
    window: &ContextWindow,
    mode: Mode,
) -> Result<SampleOutput> {
    let a = &model.arch;
    let graph = build_ecg_with(window.history_len(), schema)?;
    let inputs = init_node_features(t, &a.encoders, &graph, window)?;
    let enc = hgt_forward(t, &a.hgt, &graph, &inputs)?;
    let rendered = render(t, &a.renderer, &graph, enc.hidden, inputs.current_text)?;
    let cond = Conditioning {
        emotion: rendered.emotion.feature,
        intensity: rendered.intensity.feature,
        prosody: rendered.prosody,
    };
    let cur = &window.current;
    let (guide, mut drop) = match mode {
        Mode::Train { dropout_seed } => (
            Guidance::Teacher(&cur.targets),
            Dropout::seeded(model.config.dropout, dropout_seed),
        ),
        Mode::Eval => (Guidance::TeacherDurations(&cur.targets.duration), Dropout::disabled()),
        Mode::Inference => (Guidance::Free, Dropout::disabled()),
    };
    let acoustic = synthesize(t, &a.synth, &cur.text_tokens, cur.speaker, cond, guide, &mut drop)?;
    let (prosody_loss, fs2) = match mode {
        Mode::Inference => (None, None),
        _ => (
            Some(prosody_mse(t, rendered.prosody, &cur.targets.prosody)?),
            Some(fs2_loss(t, &acoustic, &cur.targets)?),
        ),
    };
    Ok(SampleOutput { graph, rendered, acoustic, prosody_loss, fs2 })
}
