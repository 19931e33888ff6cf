//! Runs the full model and every single-component ablation with the same
//! seeds and prints the comparison table.
//!
//! cargo run --release --example ablation

use ecss::config::ModelConfig;
use ecss::corpus::{generate_corpus, GeneratorConfig};
use ecss::eval::{ablation_csv, ablation_suite};
use ecss::train::TrainConfig;

fn main() -> ecss::Result<()> {
    let corpus = generate_corpus(&GeneratorConfig { n_conversations: 60, seed: 4, ..Default::default() })?;
    let cfg = TrainConfig { steps: 40, batch_size: 8, ..TrainConfig::default() };
    let rows = ablation_suite(&corpus, &ModelConfig::lite(), &cfg)?;
    print!("{}", ablation_csv(&rows));
    for r in &rows {
        println!("{:<14} graph counts consistent: {}", r.report.label, r.counts_match);
    }
    Ok(())
}
