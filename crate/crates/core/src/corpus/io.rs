//! JSON Lines corpus files: one conversation per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AcousticTargets, Conversation, EmotionLabel, IntensityLabel, Utterance};
use crate::error::{EcssError, Result};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TurnRecord {
    tokens: Vec<u32>,
    speaker: u8,
    audio_feat: Vec<f64>,
    emotion: u8,
    intensity: u8,
    mel: Vec<Vec<f64>>,
    pitch: Vec<f64>,
    energy: Vec<f64>,
    duration: Vec<u32>,
    prosody: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConversationRecord {
    id: String,
    turns: Vec<TurnRecord>,
}

impl From<&Conversation> for ConversationRecord {
    fn from(c: &Conversation) -> Self {
        ConversationRecord {
            id: c.id.clone(),
            turns: c
                .turns
                .iter()
                .map(|u| TurnRecord {
                    tokens: u.text_tokens.clone(),
                    speaker: u.speaker,
                    audio_feat: u.audio_feat.clone(),
                    emotion: u.emotion.code(),
                    intensity: u.intensity.code(),
                    mel: u.targets.mel.clone(),
                    pitch: u.targets.pitch.clone(),
                    energy: u.targets.energy.clone(),
                    duration: u.targets.duration.clone(),
                    prosody: u.targets.prosody.clone(),
                })
                .collect(),
        }
    }
}

fn parse_error(line: usize, err: &serde_json::Error) -> EcssError {
    let msg = err.to_string();
    // serde names the field in backticks, e.g. "missing field `emotion`".
    let field = msg
        .split('`')
        .nth(1)
        .map(str::to_string)
        .unwrap_or_else(|| "<record>".into());
    EcssError::Parse {
        line,
        field,
        message: msg,
    }
}

fn into_conversation(rec: ConversationRecord, line: usize) -> Result<Conversation> {
    let mut turns = Vec::with_capacity(rec.turns.len());
    for (t, r) in rec.turns.into_iter().enumerate() {
        let emotion = EmotionLabel::from_code(r.emotion).map_err(|e| EcssError::Parse {
            line,
            field: "emotion".into(),
            message: format!("turn {t}: {e}"),
        })?;
        let intensity = IntensityLabel::from_code(r.intensity).map_err(|e| EcssError::Parse {
            line,
            field: "intensity".into(),
            message: format!("turn {t}: {e}"),
        })?;
        turns.push(Utterance {
            text_tokens: r.tokens,
            speaker: r.speaker,
            audio_feat: r.audio_feat,
            emotion,
            intensity,
            targets: AcousticTargets {
                mel: r.mel,
                pitch: r.pitch,
                energy: r.energy,
                duration: r.duration,
                prosody: r.prosody,
            },
        });
    }
    let conv = Conversation { id: rec.id, turns };
    conv.validate()
        .map_err(|e| EcssError::Validation(format!("line {line}: {e}")))?;
    Ok(conv)
}

pub fn write_corpus<W: Write>(corpus: &[Conversation], mut w: W) -> Result<()> {
    for c in corpus {
        let line = serde_json::to_string(&ConversationRecord::from(c))?;
        w.write_all(line.as_bytes()).map_err(|e| EcssError::io("<writer>", e))?;
        w.write_all(b"\n").map_err(|e| EcssError::io("<writer>", e))?;
    }
    Ok(())
}

pub fn read_corpus<R: Read>(r: R) -> Result<Vec<Conversation>> {
    let reader = BufReader::new(r);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| EcssError::io("<reader>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ConversationRecord =
            serde_json::from_str(&line).map_err(|e| parse_error(line_no, &e))?;
        out.push(into_conversation(rec, line_no)?);
    }
    Ok(out)
}

pub fn save_corpus(corpus: &[Conversation], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| EcssError::io(path, e))?;
    let mut w = BufWriter::new(f);
    write_corpus(corpus, &mut w)?;
    w.flush().map_err(|e| EcssError::io(path, e))
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<Conversation>> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| EcssError::io(path, e))?;
    read_corpus(f)
}
