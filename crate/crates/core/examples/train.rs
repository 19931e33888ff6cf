//! Trains the lite model for a few hundred steps, saves a checkpoint and the
//! loss log, then reloads the checkpoint and checks the weights round-trip.
//!
//! cargo run --release --example train -- /tmp/ecss-run

use std::path::PathBuf;

use ecss::config::ModelConfig;
use ecss::corpus::{generate_corpus, split_corpus, GeneratorConfig, LabelMode, Split};
use ecss::train::{load_checkpoint, restore_model, save_checkpoint, write_metrics, TrainConfig, Trainer};

fn main() -> ecss::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "ecss-run".into()));
    std::fs::create_dir_all(&dir).map_err(|e| ecss::EcssError::io(&dir, e))?;
    let corpus = generate_corpus(&GeneratorConfig { n_conversations: 80, label_mode: LabelMode::Balanced, seed: 1, ..Default::default() })?;
    let cfg = TrainConfig { steps: 300, ..TrainConfig::default() };
    let mut trainer = Trainer::new(ModelConfig::lite(), cfg, split_corpus(&corpus, Split::Train))?;
    println!("{} parameters", trainer.model.params.num_scalars());

    let mut rows = Vec::new();
    trainer.run_until(300, |step, l| {
        if step % 50 == 0 {
            println!("step {step:>4}  total {:.4}  fs2 {:.4}", l.total, l.l_fs2);
        }
        rows.push((step, *l));
        Ok(())
    })?;
    let ckpt = dir.join("checkpoint.ecss");
    save_checkpoint(&trainer, &ckpt)?;
    write_metrics(&dir.join("metrics.csv"), &rows)?;

    let restored = restore_model(&load_checkpoint(&ckpt)?)?;
    assert_eq!(restored.params.flatten(), trainer.model.params.flatten());
    println!("checkpoint at {} reloads exactly", ckpt.display());
    Ok(())
}
