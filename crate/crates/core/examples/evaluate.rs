//! Trains briefly, evaluates on the held-out split and writes the report,
//! confusion matrices and heatmaps.
//!
//! cargo run --release --example evaluate -- /tmp/ecss-eval

use std::path::PathBuf;

use ecss::config::ModelConfig;
use ecss::corpus::{generate_corpus, GeneratorConfig, LabelMode};
use ecss::eval::{confusion_svg, emotion_names, report_csv, train_and_evaluate};
use ecss::train::TrainConfig;

fn main() -> ecss::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "ecss-eval".into()));
    std::fs::create_dir_all(&dir).map_err(|e| ecss::EcssError::io(&dir, e))?;
    let corpus = generate_corpus(&GeneratorConfig { n_conversations: 120, label_mode: LabelMode::Balanced, seed: 5, ..Default::default() })?;
    let cfg = TrainConfig { steps: 200, ..TrainConfig::default() };
    let ev = train_and_evaluate(&corpus, &ModelConfig::lite(), &cfg)?;
    let r = &ev.report;
    print!("{}", report_csv(r));
    println!("emotion accuracy {:.3}, intensity accuracy {:.3}", r.emotion_accuracy, r.intensity_accuracy);
    let svg = confusion_svg(&r.emotion_confusion, &emotion_names(), "emotion confusion");
    let path = dir.join("emotion_confusion.svg");
    std::fs::write(&path, svg).map_err(|e| ecss::EcssError::io(&path, e))?;
    println!("heatmap in {}", path.display());
    Ok(())
}
