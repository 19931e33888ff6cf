use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{EmotionLabel, IntensityLabel};
use crate::error::{EcssError, Result};

// Two cue words per emotion, in label order.
const EMOTION_WORDS: [&str; 14] = [
    "great", "lovely", "sorry", "miss", "hate", "stop", "gross", "yuck", "scared", "afraid", "wow",
    "really", "okay", "well",
];
const INTENSITY_WORDS: [&str; 6] = ["maybe", "slightly", "quite", "rather", "very", "extremely"];
const FILLER_WORDS: [&str; 44] = [
    "i", "you", "we", "they", "it", "the", "a", "to", "of", "and", "is", "was", "do", "did", "have",
    "go", "get", "see", "know", "think", "want", "time", "day", "home", "work", "today", "now",
    "there", "here", "what", "how", "that", "this", "not", "can", "will", "just", "about", "some",
    "more", "out", "up", "with", "for",
];

/// Fixed whitespace-token vocabulary.
///
/// Ids `0..14` are emotion cue words (two per emotion), `14..20` intensity
/// cue words (two per level), the rest are neutral fillers. Sizes beyond the
/// built-in word list get synthetic `tokNN` entries.
#[derive(Clone, Debug)]
pub struct Vocabulary {
    words: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Vocabulary {
    pub const MIN_SIZE: usize = 24;
    const FIRST_FILLER: u32 = 20;

    pub fn new(size: usize) -> Result<Self> {
        if size < Self::MIN_SIZE {
            return Err(EcssError::Config(format!(
                "vocabulary needs at least {} entries",
                Self::MIN_SIZE
            )));
        }
        let words: Vec<String> = EMOTION_WORDS
            .iter()
            .chain(&INTENSITY_WORDS)
            .chain(&FILLER_WORDS)
            .map(|w| w.to_string())
            .chain((EMOTION_WORDS.len() + INTENSITY_WORDS.len() + FILLER_WORDS.len()..).map(|i| format!("tok{i}")))
            .take(size)
            .collect();
        let ids = words.iter().enumerate().map(|(i, w)| (w.clone(), i as u32)).collect();
        Ok(Self { words, ids })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn word(&self, id: u32) -> Option<&str> {
        self.words.get(id as usize).map(String::as_str)
    }

    pub fn tokenize(&self, text: &str) -> Result<Vec<u32>> {
        text.split_whitespace()
            .map(|w| {
                self.ids
                    .get(w)
                    .copied()
                    .ok_or_else(|| EcssError::Lookup(format!("word `{w}` not in vocabulary")))
            })
            .collect()
    }

    pub fn detokenize(&self, tokens: &[u32]) -> String {
        tokens
            .iter()
            .map(|&t| self.word(t).unwrap_or("<unk>"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// One emotion cue, one intensity cue and 2..=6 fillers, shuffled.
    pub(crate) fn sample_utterance(
        &self,
        rng: &mut ChaCha8Rng,
        emotion: EmotionLabel,
        intensity: IntensityLabel,
    ) -> Vec<u32> {
        let n_fill = rng.random_range(2..=6);
        let mut toks = Vec::with_capacity(n_fill + 2);
        toks.push(emotion.code() as u32 * 2 + rng.random_range(0..2));
        toks.push(14 + intensity.code() as u32 * 2 + rng.random_range(0..2));
        for _ in 0..n_fill {
            toks.push(rng.random_range(Self::FIRST_FILLER..self.words.len() as u32));
        }
        toks.shuffle(rng);
        toks
    }
}
