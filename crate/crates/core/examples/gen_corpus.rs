//! Generates a small balanced corpus, prints its label statistics and writes
//! it as JSON Lines.
//!
//! cargo run --release --example gen_corpus -- /tmp/corpus.jsonl

use ecss::corpus::{corpus_stats, generate_corpus, save_corpus, EmotionLabel, GeneratorConfig, LabelMode};

fn main() -> ecss::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "corpus.jsonl".into());
    let cfg = GeneratorConfig { n_conversations: 50, label_mode: LabelMode::Balanced, seed: 7, ..Default::default() };
    let corpus = generate_corpus(&cfg)?;
    let stats = corpus_stats(&corpus)?;
    println!("{} conversations, {} utterances, {:.2} turns on average", stats.conversations, stats.utterances, stats.mean_turns);
    for e in EmotionLabel::ALL {
        println!("  {:<9} {:.3}", e.name(), stats.emotion_fraction(e));
    }
    save_corpus(&corpus, &out)?;
    println!("wrote {out}");
    Ok(())
}
