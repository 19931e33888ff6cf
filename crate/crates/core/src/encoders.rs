//! Initial node features for the conversational graph.
//!
//! Speaker, emotion and intensity nodes read rows of trainable tables. Text
//! nodes go through a pluggable featurizer and audio nodes through a
//! trainable adapter over the corpus feature vector.

use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;

use ndarray::Array2;
use serde::Deserialize;

use crate::config::{ModelConfig, TextFeaturizerConfig};
use crate::corpus::{fnv1a64, ContextWindow, Utterance};
use crate::corpus::oracle::AUDIO_DIM;
use crate::ecg::{EcgGraph, NodeKind};
use crate::error::{EcssError, Result};
use crate::nn::Linear;
use crate::params::{ParamBuilder, ParamId};
use crate::tape::{Tape, Var};

#[derive(Clone, Copy, Debug)]
pub struct EmbeddingTable {
    pub id: ParamId,
    pub n_labels: usize,
}

impl EmbeddingTable {
    pub fn new(pb: &mut ParamBuilder<'_>, name: &str, n_labels: usize, dim: usize) -> Self {
        Self {
            id: pb.uniform(name, n_labels, dim, dim),
            n_labels,
        }
    }
}

/// Reads rows of `table`; gradient reaches only those rows.
pub fn lookup_embedding(t: &mut Tape<'_>, table: EmbeddingTable, labels: &[usize]) -> Result<Var> {
    if let Some(&bad) = labels.iter().find(|&&l| l >= table.n_labels) {
        return Err(EcssError::Lookup(format!(
            "label {bad} out of range for table {} with {} rows",
            t.store().name(table.id),
            table.n_labels
        )));
    }
    let p = t.param(table.id);
    Ok(t.gather_rows(p, labels.to_vec()))
}

/// Precomputed text vectors keyed by `"<conversation id>:<turn>"`.
#[derive(Clone, Debug, Default)]
pub struct ExternalEmbeddings {
    pub dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ExternalRecord {
    utterance_key: String,
    vec: Vec<f64>,
}

impl ExternalEmbeddings {
    pub fn load(path: &Path, dim: usize) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| EcssError::io(path, e))?;
        let mut vectors = HashMap::new();
        for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| EcssError::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: ExternalRecord = serde_json::from_str(&line).map_err(|e| EcssError::Parse {
                line: i + 1,
                field: "vec".into(),
                message: e.to_string(),
            })?;
            if rec.vec.len() != dim || rec.vec.iter().any(|v| !v.is_finite()) {
                return Err(EcssError::Ingestion(format!(
                    "line {}: `{}` needs {dim} finite values, got {}",
                    i + 1,
                    rec.utterance_key,
                    rec.vec.len()
                )));
            }
            vectors.insert(rec.utterance_key, rec.vec);
        }
        Ok(Self { dim, vectors })
    }

    pub fn from_map(dim: usize, vectors: HashMap<String, Vec<f64>>) -> Self {
        Self { dim, vectors }
    }

    pub fn get(&self, key: &str) -> Result<&[f64]> {
        self.vectors
            .get(key)
            .map(Vec::as_slice)
            .ok_or_else(|| EcssError::Ingestion(format!("no external embedding for `{key}`")))
    }
}

#[derive(Clone, Debug)]
pub enum TextFeaturizer {
    /// N-gram counts hashed into `bins`, then projected.
    Hashed { bins: usize, order: usize, proj: Linear },
    External(ExternalEmbeddings),
}

// FNV's low bits barely move between short keys like "1:3" and "1:32", so finish with a
// splitmix64 avalanche before reducing modulo the bin count.
fn spread(h: u64) -> u64 {
    let mut z = h;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Count vector of all n-grams of orders `1..=order`, hashed into `bins`.
pub fn hashed_ngrams(tokens: &[u32], bins: usize, order: usize) -> Vec<f64> {
    let mut v = vec![0.0; bins];
    for n in 1..=order {
        for gram in tokens.windows(n) {
            let key = gram.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(":");
            v[(spread(fnv1a64(format!("{n}:{key}").as_bytes())) % bins as u64) as usize] += 1.0;
        }
    }
    v
}

impl TextFeaturizer {
    /// Features for several utterances at once, one row each.
    pub fn featurize(&self, t: &mut Tape<'_>, utts: &[(&Utterance, String)]) -> Result<Var> {
        match self {
            TextFeaturizer::Hashed { bins, order, proj } => {
                let mut counts = Array2::zeros((utts.len(), *bins));
                for (r, (u, _)) in utts.iter().enumerate() {
                    for (c, v) in hashed_ngrams(&u.text_tokens, *bins, *order).into_iter().enumerate() {
                        counts[[r, c]] = v;
                    }
                }
                let x = t.constant(counts);
                Ok(proj.forward(t, x))
            }
            TextFeaturizer::External(ext) => {
                let mut m = Array2::zeros((utts.len(), ext.dim));
                for (r, (_, key)) in utts.iter().enumerate() {
                    for (c, &v) in ext.get(key)?.iter().enumerate() {
                        m[[r, c]] = v;
                    }
                }
                Ok(t.constant(m))
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct Encoders {
    pub speaker: EmbeddingTable,
    pub emotion: EmbeddingTable,
    pub intensity: EmbeddingTable,
    pub text: TextFeaturizer,
    pub audio: Linear,
}

impl Encoders {
    pub fn new(pb: &mut ParamBuilder<'_>, cfg: &ModelConfig) -> Result<Self> {
        pb.scoped("enc", |pb| {
            let text = match &cfg.text_featurizer {
                TextFeaturizerConfig::HashedNgram { bins, order } => TextFeaturizer::Hashed {
                    bins: *bins,
                    order: *order,
                    proj: Linear::new(pb, "text", *bins, cfg.text_node_dim),
                },
                TextFeaturizerConfig::ExternalFile { path } => {
                    TextFeaturizer::External(ExternalEmbeddings::load(path, cfg.text_node_dim)?)
                }
            };
            Ok(Self {
                speaker: EmbeddingTable::new(pb, "speaker", 2, cfg.node_dim),
                emotion: EmbeddingTable::new(pb, "emotion", 7, cfg.node_dim),
                intensity: EmbeddingTable::new(pb, "intensity", 3, cfg.node_dim),
                text,
                audio: Linear::new(pb, "audio", AUDIO_DIM, cfg.node_dim),
            })
        })
    }
}

/// Initial features of one node kind: graph indices and their stacked rows.
#[derive(Clone, Debug)]
pub struct KindBlock {
    pub kind: NodeKind,
    pub nodes: Vec<usize>,
    pub features: Var,
}

#[derive(Clone, Debug)]
pub struct NodeInputs {
    pub blocks: Vec<KindBlock>,
    /// Raw featurizer output for the current utterance's text (`1 × text dim`).
    pub current_text: Var,
}

impl NodeInputs {
    pub fn block(&self, kind: NodeKind) -> Option<&KindBlock> {
        self.blocks.iter().find(|b| b.kind == kind)
    }

    /// Copies the feature values onto `graph.features`.
    pub fn write_into(&self, t: &Tape<'_>, graph: &mut EcgGraph) {
        for b in &self.blocks {
            let m = t.value(b.features);
            for (r, &i) in b.nodes.iter().enumerate() {
                let node = graph.nodes()[i];
                graph.features.insert(node, m.row(r).to_vec());
            }
        }
    }
}

/// Computes the initial feature of every node in `graph` from `window`.
pub fn init_node_features(
    t: &mut Tape<'_>,
    enc: &Encoders,
    graph: &EcgGraph,
    window: &ContextWindow,
) -> Result<NodeInputs> {
    if graph.history_len() != window.history_len() {
        return Err(EcssError::Validation(format!(
            "graph built for {} history turns but window has {}",
            graph.history_len(),
            window.history_len()
        )));
    }
    let mut blocks = Vec::new();
    let mut current_text = None;
    for kind in NodeKind::ALL {
        let nodes = graph.nodes_of_kind(kind);
        if nodes.is_empty() {
            continue;
        }
        let turns: Vec<usize> = nodes.iter().map(|&i| graph.nodes()[i].turn).collect();
        let utts: Vec<&Utterance> = turns.iter().map(|&j| window.utterance(j)).collect();
        let features = match kind {
            NodeKind::Text => {
                let keyed: Vec<(&Utterance, String)> =
                    turns.iter().map(|&j| (window.utterance(j), window.utterance_key(j))).collect();
                let f = enc.text.featurize(t, &keyed)?;
                if let Some(pos) = turns.iter().position(|&j| j == window.history_len()) {
                    current_text = Some(t.slice_rows(f, pos, pos + 1));
                }
                f
            }
            NodeKind::Audio => {
                let mut m = Array2::zeros((utts.len(), AUDIO_DIM));
                for (r, u) in utts.iter().enumerate() {
                    for (c, &v) in u.audio_feat.iter().enumerate() {
                        m[[r, c]] = v;
                    }
                }
                let x = t.constant(m);
                enc.audio.forward(t, x)
            }
            NodeKind::Speaker => {
                let labels: Vec<usize> = utts.iter().map(|u| u.speaker as usize).collect();
                lookup_embedding(t, enc.speaker, &labels)?
            }
            NodeKind::Emotion => {
                let labels: Vec<usize> = utts.iter().map(|u| u.emotion.code() as usize).collect();
                lookup_embedding(t, enc.emotion, &labels)?
            }
            NodeKind::Intensity => {
                let labels: Vec<usize> = utts.iter().map(|u| u.intensity.code() as usize).collect();
                lookup_embedding(t, enc.intensity, &labels)?
            }
        };
        blocks.push(KindBlock { kind, nodes, features });
    }
    let current_text = current_text
        .ok_or_else(|| EcssError::Validation("graph has no current-turn text node".into()))?;
    Ok(NodeInputs { blocks, current_text })
}
