//! Trains and evaluates once per context length and prints the comparison
//! table as CSV.
//!
//! cargo run --release --example context_sweep

use ecss::config::ModelConfig;
use ecss::corpus::{generate_corpus, GeneratorConfig};
use ecss::eval::{context_sweep, sweep_csv};
use ecss::train::TrainConfig;

fn main() -> ecss::Result<()> {
    let corpus = generate_corpus(&GeneratorConfig { n_conversations: 60, seed: 9, ..Default::default() })?;
    let cfg = TrainConfig { steps: 40, batch_size: 8, ..TrainConfig::default() };
    let res = context_sweep(&corpus, &ModelConfig::lite(), &cfg, &[2, 6, 10])?;
    print!("{}", sweep_csv(&res));
    Ok(())
}
