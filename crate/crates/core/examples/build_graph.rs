//! Builds the conversation graph of one context window and prints it in DOT
//! format, together with the node and edge counts.
//!
//! cargo run --example build_graph | dot -Tsvg > graph.svg

use ecss::corpus::{generate_corpus, slice_context, GeneratorConfig};
use ecss::ecg::build_ecg;

fn main() -> ecss::Result<()> {
    let corpus = generate_corpus(&GeneratorConfig { n_conversations: 3, seed: 2, ..Default::default() })?;
    let conv = corpus.iter().max_by_key(|c| c.turns.len()).expect("non-empty corpus");
    let window = slice_context(conv, conv.turns.len() - 1, 3)?;
    let graph = build_ecg(&window)?;
    let (nodes, edges) = graph.counts();
    eprintln!("{} history turns: {nodes} nodes, {edges} edges", window.history_len());
    print!("{}", graph.to_dot());
    Ok(())
}
