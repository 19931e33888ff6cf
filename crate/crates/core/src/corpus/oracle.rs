//! Closed-form acoustic oracle.
//!
//! Stands in for recorded speech: every target is a fixed formula of the
//! token ids, their positions and the utterance labels, so a learned model
//! can be scored against exact ground truth.
//!
//! * `mel[f, b] = A(e)·sin(2πb/80 + φ(tok_f)) + B(i)·f/frames + offset(s)`
//!   with `A(e) = 0.4 + 0.2e`, `φ(tok) = 2π(tok mod 8)/8`, `B(i) = 0.5(i+1)`,
//!   `offset = [-4.0, -3.0]` (log-magnitude levels per speaker).
//! * `pitch[t] = -0.6 + 0.2e + 0.4i + 0.25·cos(πt/(n-1))`
//! * `energy[t] = -0.4 + 0.1e + 0.5i - 0.2t/n`
//! * `duration(tok) = 1 + tok mod 4`
//! * `prosody = (1+i)·u_e` with `u_e` the unit vector on coordinate block `e`.
//! * `audio = (1 + 0.5i)·u_e + 0.5·u_{7+i} + 0.25·u_{10+s} + 0.05·N(0, I)`.
//!
//! Blocks are 16 consecutive coordinates of value 1/4, so the `u_k` are
//! orthonormal.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{AcousticTargets, EmotionLabel, IntensityLabel};
use crate::error::{EcssError, Result};

pub const AUDIO_DIM: usize = 256;
pub const PROSODY_DIM: usize = 256;
pub const MEL_BINS: usize = 80;
pub const NOISE_SCALE: f64 = 0.05;
pub const SPEAKER_OFFSET: [f64; 2] = [-4.0, -3.0];

const BLOCK: usize = 16;

fn add_block(v: &mut [f64], block: usize, scale: f64) {
    for x in &mut v[block * BLOCK..(block + 1) * BLOCK] {
        *x += scale * 0.25;
    }
}

/// Noise-free audio feature centre for a label triple.
pub fn audio_anchor(emotion: EmotionLabel, intensity: IntensityLabel, speaker: u8) -> Vec<f64> {
    let mut v = vec![0.0; AUDIO_DIM];
    let i = intensity.code() as f64;
    add_block(&mut v, emotion.code() as usize, 1.0 + 0.5 * i);
    add_block(&mut v, 7 + intensity.code() as usize, 0.5);
    add_block(&mut v, 10 + speaker as usize, 0.25);
    v
}

pub fn prosody_target(emotion: EmotionLabel, intensity: IntensityLabel) -> Vec<f64> {
    let mut v = vec![0.0; PROSODY_DIM];
    add_block(&mut v, emotion.code() as usize, 1.0 + intensity.code() as f64);
    v
}

pub fn token_duration(token: u32) -> u32 {
    1 + token % 4
}

/// Deterministic audio features and acoustic targets for one utterance.
pub fn oracle_acoustics(
    tokens: &[u32],
    speaker: u8,
    emotion: EmotionLabel,
    intensity: IntensityLabel,
    seed: u64,
) -> Result<(Vec<f64>, AcousticTargets)> {
    if tokens.is_empty() {
        return Err(EcssError::Validation("oracle needs at least one token".into()));
    }
    if speaker > 1 {
        return Err(EcssError::Validation(format!("speaker {speaker} out of range")));
    }
    let e = emotion.code() as f64;
    let i = intensity.code() as f64;
    let n = tokens.len();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut audio = audio_anchor(emotion, intensity, speaker);
    for x in audio.iter_mut() {
        let z: f64 = StandardNormal.sample(&mut rng);
        *x += NOISE_SCALE * z;
    }

    let duration: Vec<u32> = tokens.iter().map(|&t| token_duration(t)).collect();
    let frames: usize = duration.iter().map(|&d| d as usize).sum();
    let amp = 0.4 + 0.2 * e;
    let slope = 0.5 * (i + 1.0);
    let offset = SPEAKER_OFFSET[speaker as usize];
    let mut mel = Vec::with_capacity(frames);
    for (&tok, &d) in tokens.iter().zip(&duration) {
        let phase = 2.0 * PI * (tok % 8) as f64 / 8.0;
        for _ in 0..d {
            let f = mel.len();
            let ramp = slope * f as f64 / frames as f64;
            let row: Vec<f64> = (0..MEL_BINS)
                .map(|b| amp * (2.0 * PI * b as f64 / MEL_BINS as f64 + phase).sin() + ramp + offset)
                .collect();
            mel.push(row);
        }
    }

    let denom = (n.max(2) - 1) as f64;
    let pitch = (0..n)
        .map(|t| -0.6 + 0.2 * e + 0.4 * i + 0.25 * (PI * t as f64 / denom).cos())
        .collect();
    let energy = (0..n)
        .map(|t| -0.4 + 0.1 * e + 0.5 * i - 0.2 * t as f64 / n as f64)
        .collect();

    Ok((
        audio,
        AcousticTargets {
            mel,
            pitch,
            energy,
            duration,
            prosody: prosody_target(emotion, intensity),
        },
    ))
}
