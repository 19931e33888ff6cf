//! Conversational data model and the synthetic dialogue generator.
//!
//! A [`Conversation`] is an ordered list of five-tuple [`Utterance`]s
//! (text, speaker, audio features, emotion, intensity) with oracle acoustic
//! targets attached. [`generate_corpus`] draws conversations whose label
//! marginals follow either the annotated DailyTalk counts or a uniform
//! distribution, with first-order Markov persistence on emotion and intensity
//! so that the dialogue history is informative about the next turn.

mod io;
pub mod oracle;
mod vocab;

use std::fmt;
use std::str::FromStr;

use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{EcssError, Result};

pub use io::{load_corpus, read_corpus, save_corpus, write_corpus};
pub use oracle::oracle_acoustics;
pub use vocab::Vocabulary;

/// Annotated DailyTalk emotion counts (happy, sad, angry, disgust, fear, surprise, neutral).
pub const PAPER_EMOTION_COUNTS: [u32; 7] = [3871, 722, 226, 186, 74, 497, 18197];
/// Annotated DailyTalk intensity counts (weak, medium, strong).
pub const PAPER_INTENSITY_COUNTS: [u32; 3] = [19973, 3646, 154];
/// Probability that a turn keeps the previous turn's emotion.
pub const EMOTION_PERSISTENCE: f64 = 0.6;
/// Same for intensity. Redraws come from the marginal, so marginals are kept.
pub const INTENSITY_PERSISTENCE: f64 = 0.6;
pub const MIN_TURNS: usize = 2;
pub const MAX_TURNS: usize = 25;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum EmotionLabel {
    Happy = 0,
    Sad = 1,
    Angry = 2,
    Disgust = 3,
    Fear = 4,
    Surprise = 5,
    Neutral = 6,
}

impl EmotionLabel {
    pub const COUNT: usize = 7;
    pub const ALL: [EmotionLabel; 7] = [
        EmotionLabel::Happy,
        EmotionLabel::Sad,
        EmotionLabel::Angry,
        EmotionLabel::Disgust,
        EmotionLabel::Fear,
        EmotionLabel::Surprise,
        EmotionLabel::Neutral,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Result<Self> {
        Self::ALL
            .get(code as usize)
            .copied()
            .ok_or_else(|| EcssError::Lookup(format!("emotion code {code} out of range 0..7")))
    }

    pub fn name(self) -> &'static str {
        match self {
            EmotionLabel::Happy => "happy",
            EmotionLabel::Sad => "sad",
            EmotionLabel::Angry => "angry",
            EmotionLabel::Disgust => "disgust",
            EmotionLabel::Fear => "fear",
            EmotionLabel::Surprise => "surprise",
            EmotionLabel::Neutral => "neutral",
        }
    }
}

impl From<EmotionLabel> for u8 {
    fn from(e: EmotionLabel) -> u8 {
        e.code()
    }
}

impl TryFrom<u8> for EmotionLabel {
    type Error = EcssError;
    fn try_from(v: u8) -> Result<Self> {
        Self::from_code(v)
    }
}

impl fmt::Display for EmotionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EmotionLabel {
    type Err = EcssError;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| EcssError::Lookup(format!("unknown emotion `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum IntensityLabel {
    Weak = 0,
    Medium = 1,
    Strong = 2,
}

impl IntensityLabel {
    pub const COUNT: usize = 3;
    pub const ALL: [IntensityLabel; 3] = [
        IntensityLabel::Weak,
        IntensityLabel::Medium,
        IntensityLabel::Strong,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Result<Self> {
        Self::ALL
            .get(code as usize)
            .copied()
            .ok_or_else(|| EcssError::Lookup(format!("intensity code {code} out of range 0..3")))
    }

    pub fn name(self) -> &'static str {
        match self {
            IntensityLabel::Weak => "weak",
            IntensityLabel::Medium => "medium",
            IntensityLabel::Strong => "strong",
        }
    }
}

impl From<IntensityLabel> for u8 {
    fn from(e: IntensityLabel) -> u8 {
        e.code()
    }
}

impl TryFrom<u8> for IntensityLabel {
    type Error = EcssError;
    fn try_from(v: u8) -> Result<Self> {
        Self::from_code(v)
    }
}

impl fmt::Display for IntensityLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for IntensityLabel {
    type Err = EcssError;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| EcssError::Lookup(format!("unknown intensity `{s}`")))
    }
}

/// Oracle targets for one utterance. `mel` is frames × 80; pitch, energy and
/// duration are per token.
#[derive(Clone, Debug, PartialEq)]
pub struct AcousticTargets {
    pub mel: Vec<Vec<f64>>,
    pub pitch: Vec<f64>,
    pub energy: Vec<f64>,
    pub duration: Vec<u32>,
    pub prosody: Vec<f64>,
}

impl AcousticTargets {
    pub fn frames(&self) -> usize {
        self.mel.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub text_tokens: Vec<u32>,
    pub speaker: u8,
    pub audio_feat: Vec<f64>,
    pub emotion: EmotionLabel,
    pub intensity: IntensityLabel,
    pub targets: AcousticTargets,
}

impl Utterance {
    pub fn validate(&self) -> Result<()> {
        if self.text_tokens.is_empty() {
            return Err(EcssError::Validation("utterance has no tokens".into()));
        }
        if self.speaker > 1 {
            return Err(EcssError::Validation(format!("speaker {} out of range", self.speaker)));
        }
        if self.audio_feat.len() != oracle::AUDIO_DIM {
            return Err(EcssError::Validation(format!(
                "audio_feat has length {}, expected {}",
                self.audio_feat.len(),
                oracle::AUDIO_DIM
            )));
        }
        let t = &self.targets;
        let n = self.text_tokens.len();
        if t.pitch.len() != n || t.energy.len() != n || t.duration.len() != n {
            return Err(EcssError::Validation(format!(
                "per-token targets must have {n} entries (pitch {}, energy {}, duration {})",
                t.pitch.len(),
                t.energy.len(),
                t.duration.len()
            )));
        }
        if t.duration.iter().any(|&d| d == 0) {
            return Err(EcssError::Validation("duration entries must be >= 1".into()));
        }
        let total: usize = t.duration.iter().map(|&d| d as usize).sum();
        if total != t.mel.len() {
            return Err(EcssError::Validation(format!(
                "duration sum {total} != mel frame count {}",
                t.mel.len()
            )));
        }
        if t.mel.iter().any(|r| r.len() != oracle::MEL_BINS) {
            return Err(EcssError::Validation("mel rows must have 80 bins".into()));
        }
        if t.prosody.len() != oracle::PROSODY_DIM {
            return Err(EcssError::Validation("prosody must have 256 entries".into()));
        }
        let finite = self.audio_feat.iter().all(|x| x.is_finite())
            && t.mel.iter().flatten().all(|x| x.is_finite())
            && t.pitch.iter().chain(&t.energy).chain(&t.prosody).all(|x| x.is_finite());
        if !finite {
            return Err(EcssError::Validation("non-finite value in utterance".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Conversation {
    pub id: String,
    pub turns: Vec<Utterance>,
}

impl Conversation {
    pub fn validate(&self) -> Result<()> {
        if self.turns.len() < MIN_TURNS {
            return Err(EcssError::Validation(format!(
                "conversation {} has {} turns, need at least {MIN_TURNS}",
                self.id,
                self.turns.len()
            )));
        }
        for w in self.turns.windows(2) {
            if w[0].speaker == w[1].speaker {
                return Err(EcssError::Validation(format!(
                    "conversation {}: speakers do not alternate",
                    self.id
                )));
            }
        }
        for u in &self.turns {
            u.validate()?;
        }
        Ok(())
    }

    /// 8:1:1 split bucket, decided by a hash of the id.
    pub fn split(&self) -> Split {
        Split::of_id(&self.id)
    }
}

pub type Corpus = Vec<Conversation>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn of_id(id: &str) -> Split {
        match fnv1a64(id.as_bytes()) % 10 {
            0..=7 => Split::Train,
            8 => Split::Val,
            _ => Split::Test,
        }
    }
}

pub fn split_corpus(corpus: &[Conversation], split: Split) -> Vec<Conversation> {
    corpus.iter().filter(|c| c.split() == split).cloned().collect()
}

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives an independent stream seed from a base seed and a list of indices.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(base), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    PaperSkewed,
    Balanced,
}

impl FromStr for LabelMode {
    type Err = EcssError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper_skewed" => Ok(LabelMode::PaperSkewed),
            "balanced" => Ok(LabelMode::Balanced),
            _ => Err(EcssError::Config(format!("unknown label mode `{s}`"))),
        }
    }
}

impl LabelMode {
    pub fn emotion_probs(self) -> [f64; 7] {
        match self {
            LabelMode::PaperSkewed => normalise(&PAPER_EMOTION_COUNTS),
            LabelMode::Balanced => [1.0 / 7.0; 7],
        }
    }

    pub fn intensity_probs(self) -> [f64; 3] {
        match self {
            LabelMode::PaperSkewed => normalise(&PAPER_INTENSITY_COUNTS),
            LabelMode::Balanced => [1.0 / 3.0; 3],
        }
    }
}

fn normalise<const N: usize>(counts: &[u32; N]) -> [f64; N] {
    let total: u32 = counts.iter().sum();
    let mut out = [0.0; N];
    for (o, &c) in out.iter_mut().zip(counts) {
        *o = c as f64 / total as f64;
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub n_conversations: usize,
    pub mean_turns: f64,
    pub vocab_size: usize,
    pub label_mode: LabelMode,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n_conversations: 100,
            mean_turns: 9.3,
            vocab_size: 64,
            label_mode: LabelMode::PaperSkewed,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_conversations < 1 {
            return Err(EcssError::Config("n_conversations must be >= 1".into()));
        }
        if !(self.mean_turns >= MIN_TURNS as f64) || !self.mean_turns.is_finite() {
            return Err(EcssError::Config(format!(
                "mean_turns must be >= {MIN_TURNS}, got {}",
                self.mean_turns
            )));
        }
        if self.vocab_size < Vocabulary::MIN_SIZE {
            return Err(EcssError::Config(format!(
                "vocab_size must be >= {}, got {}",
                Vocabulary::MIN_SIZE,
                self.vocab_size
            )));
        }
        Ok(())
    }
}

pub fn generate_corpus(config: &GeneratorConfig) -> Result<Corpus> {
    config.validate()?;
    let vocab = Vocabulary::new(config.vocab_size)?;
    (0..config.n_conversations)
        .into_par_iter()
        .map(|i| generate_conversation(config, &vocab, i))
        .collect()
}

fn generate_conversation(config: &GeneratorConfig, vocab: &Vocabulary, index: usize) -> Result<Conversation> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[index as u64]));
    let emo_dist = WeightedIndex::new(config.label_mode.emotion_probs()).expect("valid weights");
    let int_dist = WeightedIndex::new(config.label_mode.intensity_probs()).expect("valid weights");

    let lambda = config.mean_turns - MIN_TURNS as f64;
    let extra = if lambda > 0.0 {
        Poisson::new(lambda).expect("positive rate").sample(&mut rng) as usize
    } else {
        0
    };
    let n_turns = (MIN_TURNS + extra).clamp(MIN_TURNS, MAX_TURNS);
    let first_speaker: u8 = rng.random_range(0..2);

    let mut turns = Vec::with_capacity(n_turns);
    let mut emotion = EmotionLabel::ALL[emo_dist.sample(&mut rng)];
    let mut intensity = IntensityLabel::ALL[int_dist.sample(&mut rng)];
    for t in 0..n_turns {
        if t > 0 && !rng.random_bool(EMOTION_PERSISTENCE) {
            emotion = EmotionLabel::ALL[emo_dist.sample(&mut rng)];
        }
        if t > 0 && !rng.random_bool(INTENSITY_PERSISTENCE) {
            intensity = IntensityLabel::ALL[int_dist.sample(&mut rng)];
        }
        let speaker = (first_speaker + t as u8) % 2;
        let tokens = vocab.sample_utterance(&mut rng, emotion, intensity);
        let oracle_seed = rng.random::<u64>();
        let (audio_feat, targets) = oracle_acoustics(&tokens, speaker, emotion, intensity, oracle_seed)?;
        turns.push(Utterance {
            text_tokens: tokens,
            speaker,
            audio_feat,
            emotion,
            intensity,
            targets,
        });
    }
    Ok(Conversation {
        id: format!("conv{index:06}"),
        turns,
    })
}

/// The `J` most recent history turns plus the turn to synthesise.
#[derive(Clone, Debug, PartialEq)]
pub struct ContextWindow {
    pub conversation_id: String,
    /// Turn index of `current` within its conversation.
    pub current_index: usize,
    pub history: Vec<Utterance>,
    pub current: Utterance,
}

impl ContextWindow {
    pub fn history_len(&self) -> usize {
        self.history.len()
    }

    /// Turn index (within the conversation) of history position `j`.
    pub fn turn_of(&self, j: usize) -> usize {
        self.current_index - self.history.len() + j
    }

    /// Key used by external text-embedding files: `<conversation>:<turn>`.
    pub fn utterance_key(&self, j: usize) -> String {
        format!("{}:{}", self.conversation_id, self.turn_of(j))
    }

    /// Utterance at window position `j` (`j == J` is the current turn).
    pub fn utterance(&self, j: usize) -> &Utterance {
        if j == self.history.len() {
            &self.current
        } else {
            &self.history[j]
        }
    }
}

pub fn slice_context(conversation: &Conversation, current_index: usize, length: usize) -> Result<ContextWindow> {
    if current_index == 0 {
        return Err(EcssError::Validation(
            "current_index 0 has no dialogue history".into(),
        ));
    }
    if current_index >= conversation.turns.len() {
        return Err(EcssError::Validation(format!(
            "current_index {current_index} out of range for {} turns",
            conversation.turns.len()
        )));
    }
    if length < 1 {
        return Err(EcssError::Validation("context length must be >= 1".into()));
    }
    let j = length.min(current_index);
    Ok(ContextWindow {
        conversation_id: conversation.id.clone(),
        current_index,
        history: conversation.turns[current_index - j..current_index].to_vec(),
        current: conversation.turns[current_index].clone(),
    })
}

/// Every (conversation, turn ≥ 1) window of a corpus, in corpus order.
pub fn all_windows(corpus: &[Conversation], length: usize) -> Result<Vec<ContextWindow>> {
    let mut out = Vec::new();
    for c in corpus {
        for i in 1..c.turns.len() {
            out.push(slice_context(c, i, length)?);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CorpusStats {
    pub conversations: usize,
    pub utterances: usize,
    pub emotion: [usize; 7],
    pub intensity: [usize; 3],
    pub speaker: [usize; 2],
    pub mean_turns: f64,
}

impl CorpusStats {
    pub fn emotion_fraction(&self, e: EmotionLabel) -> f64 {
        self.emotion[e.code() as usize] as f64 / self.utterances as f64
    }

    pub fn intensity_fraction(&self, i: IntensityLabel) -> f64 {
        self.intensity[i.code() as usize] as f64 / self.utterances as f64
    }
}

pub fn corpus_stats(corpus: &[Conversation]) -> Result<CorpusStats> {
    if corpus.is_empty() {
        return Err(EcssError::Validation("corpus is empty".into()));
    }
    let mut s = CorpusStats {
        conversations: corpus.len(),
        utterances: 0,
        emotion: [0; 7],
        intensity: [0; 3],
        speaker: [0; 2],
        mean_turns: 0.0,
    };
    for c in corpus {
        for u in &c.turns {
            s.utterances += 1;
            s.emotion[u.emotion.code() as usize] += 1;
            s.intensity[u.intensity.code() as usize] += 1;
            s.speaker[u.speaker as usize] += 1;
        }
    }
    s.mean_turns = s.utterances as f64 / s.conversations as f64;
    Ok(s)
}
