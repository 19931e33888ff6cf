//! Model dimensions.
//!
//! `paper` reproduces the published component sizes (512-d text nodes,
//! 256-d other nodes, 384-d HGT with 2 heads and 1 layer, 256-d LSTMs,
//! 4-block encoder, 6-block decoder). `lite` keeps the same architecture at
//! widths a single CPU core can train in minutes, with a 2-block decoder and
//! a second HGT layer so the current turn's text reaches the emotion nodes.

use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::oracle::{AUDIO_DIM, MEL_BINS, PROSODY_DIM};
use crate::error::{EcssError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    Lite,
    Paper,
}

impl FromStr for Profile {
    type Err = EcssError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lite" => Ok(Profile::Lite),
            "paper" => Ok(Profile::Paper),
            _ => Err(EcssError::Config(format!("unknown profile `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HgtConfig {
    pub hidden_dim: usize,
    pub heads: usize,
    pub layers: usize,
    /// Row-normalise each layer's output. Off by default.
    pub layer_norm: bool,
}

impl Default for HgtConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 384,
            heads: 2,
            layers: 1,
            layer_norm: false,
        }
    }
}

fn unigram() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum TextFeaturizerConfig {
    /// Hashed n-gram counts (orders `1..=order`) followed by a trainable
    /// projection. Unigrams only by default: bigrams of random filler words
    /// nearly identify an utterance and invite memorisation.
    HashedNgram {
        bins: usize,
        #[serde(default = "unigram")]
        order: usize,
    },
    /// Precomputed per-utterance vectors from a JSON Lines file.
    ExternalFile { path: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub profile: Profile,
    pub vocab_size: usize,
    pub text_featurizer: TextFeaturizerConfig,
    pub text_node_dim: usize,
    pub node_dim: usize,
    pub hgt: HgtConfig,
    pub lstm_hidden: usize,
    pub render_dim: usize,
    pub prosody_heads: usize,
    pub model_dim: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub attention_heads: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::paper()
    }
}

impl ModelConfig {
    pub const AUDIO_DIM: usize = AUDIO_DIM;
    pub const PROSODY_DIM: usize = PROSODY_DIM;
    pub const MEL_BINS: usize = MEL_BINS;

    pub fn paper() -> Self {
        Self {
            profile: Profile::Paper,
            vocab_size: 64,
            text_featurizer: TextFeaturizerConfig::HashedNgram { bins: 1024, order: 1 },
            text_node_dim: 512,
            node_dim: 256,
            hgt: HgtConfig::default(),
            lstm_hidden: 256,
            render_dim: 256,
            prosody_heads: 2,
            model_dim: 256,
            encoder_layers: 4,
            decoder_layers: 6,
            attention_heads: 2,
            ffn_dim: 256,
            dropout: 0.2,
        }
    }

    pub fn lite() -> Self {
        Self {
            profile: Profile::Lite,
            vocab_size: 64,
            text_featurizer: TextFeaturizerConfig::HashedNgram { bins: 1024, order: 1 },
            text_node_dim: 48,
            node_dim: 32,
            hgt: HgtConfig {
                hidden_dim: 32,
                heads: 2,
                layers: 2,
                layer_norm: false,
            },
            lstm_hidden: 24,
            render_dim: 32,
            prosody_heads: 2,
            model_dim: 32,
            encoder_layers: 4,
            decoder_layers: 2,
            attention_heads: 2,
            ffn_dim: 64,
            dropout: 0.2,
        }
    }

    pub fn for_profile(p: Profile) -> Self {
        match p {
            Profile::Lite => Self::lite(),
            Profile::Paper => Self::paper(),
        }
    }

    /// Very small dimensions for finite-difference checks.
    pub fn toy() -> Self {
        Self {
            profile: Profile::Lite,
            vocab_size: 24,
            text_featurizer: TextFeaturizerConfig::HashedNgram { bins: 16, order: 1 },
            text_node_dim: 6,
            node_dim: 4,
            hgt: HgtConfig {
                hidden_dim: 4,
                heads: 2,
                layers: 2,
                layer_norm: false,
            },
            lstm_hidden: 3,
            render_dim: 4,
            prosody_heads: 2,
            model_dim: 4,
            encoder_layers: 1,
            decoder_layers: 1,
            attention_heads: 2,
            ffn_dim: 6,
            dropout: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(EcssError::Config(msg.to_string()))
            }
        };
        check(self.hgt.heads >= 1 && self.hgt.hidden_dim % self.hgt.heads == 0, "hgt hidden_dim must be divisible by heads")?;
        check(self.hgt.layers >= 1, "hgt needs at least one layer")?;
        check(self.model_dim % self.attention_heads == 0, "model_dim must be divisible by attention heads")?;
        check(self.hgt.hidden_dim % self.prosody_heads == 0, "prosody attention width must be divisible by its heads")?;
        check((0.0..1.0).contains(&self.dropout), "dropout must be in [0, 1)")?;
        check(self.vocab_size >= 1, "vocab_size must be positive")?;
        if let TextFeaturizerConfig::HashedNgram { bins, order } = self.text_featurizer {
            check(bins >= 1, "hash bins must be positive")?;
            check(order >= 1, "n-gram order must be at least 1")?;
        }
        Ok(())
    }
}
