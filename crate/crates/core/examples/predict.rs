//! Renders one held-out turn with an untrained and a briefly trained model
//! and writes the mel matrix with its sidecar.
//!
//! cargo run --release --example predict -- /tmp/prediction.mel

use std::path::PathBuf;

use ecss::config::ModelConfig;
use ecss::corpus::{generate_corpus, slice_context, split_corpus, GeneratorConfig, Split};
use ecss::model::{forward_sample, Mode};
use ecss::renderer::argmax;
use ecss::synthesizer::{read_mel, write_mel, MelSidecar};
use ecss::tape::Tape;
use ecss::train::{TrainConfig, Trainer};

fn main() -> ecss::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "prediction.mel".into()));
    let corpus = generate_corpus(&GeneratorConfig { n_conversations: 60, seed: 3, ..Default::default() })?;
    let mut trainer = Trainer::new(ModelConfig::lite(), TrainConfig::default(), split_corpus(&corpus, Split::Train))?;
    trainer.run_until(100, |_, _| Ok(()))?;

    let test = split_corpus(&corpus, Split::Test);
    let conv = test.iter().find(|c| c.turns.len() > 3).expect("a test conversation with history");
    let window = slice_context(conv, 3, 10)?;
    let mut t = Tape::new(&trainer.model.params);
    let o = forward_sample(&mut t, &trainer.model, &trainer.schema, &window, Mode::Inference)?;

    let mel = t.value(o.acoustic.mel).clone();
    let v = &o.acoustic.variance;
    let sidecar = MelSidecar {
        frames: mel.nrows(),
        bins: mel.ncols(),
        pitch: t.value(v.pitch).iter().copied().collect(),
        energy: t.value(v.energy).iter().copied().collect(),
        duration: v.durations.clone(),
    };
    write_mel(&out, &mel, &sidecar)?;
    let back = read_mel(&out)?;
    let emo: Vec<f64> = t.value(o.rendered.emotion.logits).iter().copied().collect();
    println!(
        "{} frames x {} bins written to {} (reads back as {:?}); predicted emotion {}, reference {}",
        mel.nrows(),
        mel.ncols(),
        out.display(),
        back.dim(),
        ecss::corpus::EmotionLabel::ALL[argmax(&emo)],
        window.current.emotion
    );
    Ok(())
}
