//! Randomised invariants for corpus generation and graph construction.

use std::collections::HashSet;

use ecss::corpus::{
    all_windows, generate_corpus, read_corpus, write_corpus, GeneratorConfig, LabelMode, MAX_TURNS, MIN_TURNS,
};
use ecss::ecg::{build_ecg_with, expected_counts_with, EdgeSchema, NodeKind, NodeRef, Temporal};
use proptest::prelude::*;

fn label_mode() -> impl Strategy<Value = LabelMode> {
    prop_oneof![Just(LabelMode::PaperSkewed), Just(LabelMode::Balanced)]
}

fn dropped_kinds() -> impl Strategy<Value = Vec<NodeKind>> {
    proptest::sample::subsequence(vec![NodeKind::Speaker, NodeKind::Audio, NodeKind::Emotion, NodeKind::Intensity], 0..=4)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn generated_corpora_are_valid_and_round_trip(
        seed in any::<u64>(),
        n in 1usize..12,
        mean_turns in 2.0f64..14.0,
        mode in label_mode(),
    ) {
        let cfg = GeneratorConfig { n_conversations: n, mean_turns, label_mode: mode, seed, ..Default::default() };
        let corpus = generate_corpus(&cfg).unwrap();
        prop_assert_eq!(corpus.len(), n);
        let ids: HashSet<_> = corpus.iter().map(|c| c.id.clone()).collect();
        prop_assert_eq!(ids.len(), n);
        for c in &corpus {
            c.validate().unwrap();
            prop_assert!((MIN_TURNS..=MAX_TURNS).contains(&c.turns.len()));
            prop_assert!(c.turns.iter().all(|u| u.text_tokens.iter().all(|&t| (t as usize) < cfg.vocab_size)));
        }
        let mut buf = Vec::new();
        write_corpus(&corpus, &mut buf).unwrap();
        prop_assert_eq!(read_corpus(buf.as_slice()).unwrap(), corpus.clone());
        prop_assert_eq!(generate_corpus(&cfg).unwrap(), corpus);
    }

    #[test]
    fn windows_never_reach_past_the_current_turn(seed in any::<u64>(), length in 1usize..16) {
        let corpus = generate_corpus(&GeneratorConfig { n_conversations: 4, seed, ..Default::default() }).unwrap();
        for w in all_windows(&corpus, length).unwrap() {
            prop_assert!(w.history_len() >= 1 && w.history_len() <= length);
            let conv = corpus.iter().find(|c| c.id == w.conversation_id).unwrap();
            prop_assert_eq!(&conv.turns[w.current_index], &w.current);
            prop_assert_eq!(&conv.turns[w.current_index - w.history_len()..w.current_index], w.history.as_slice());
        }
    }

    #[test]
    fn graphs_match_closed_form_counts(j in 1usize..40, dropped in dropped_kinds()) {
        let schema = EdgeSchema::without(&dropped).unwrap();
        let g = build_ecg_with(j, &schema).unwrap();
        prop_assert_eq!(g.counts(), expected_counts_with(j, &schema).unwrap());
        if dropped.is_empty() {
            prop_assert_eq!(g.counts(), (5 * j + 2, 28 * j - 4));
        }
        for n in g.nodes() {
            prop_assert!(!dropped.contains(&n.kind));
            if n.turn == j {
                prop_assert!(matches!(n.kind, NodeKind::Text | NodeKind::Speaker));
            }
        }
    }

    #[test]
    fn every_edge_has_its_reverse(j in 1usize..25, dropped in dropped_kinds()) {
        let g = build_ecg_with(j, &EdgeSchema::without(&dropped).unwrap()).unwrap();
        let edges: HashSet<_> = g.edges().iter().copied().collect();
        prop_assert_eq!(edges.len(), g.edges().len());
        for e in g.edges() {
            let back = match e.direction {
                Temporal::Intra => Temporal::Intra,
                Temporal::PastToFuture => Temporal::FutureToPast,
                Temporal::FutureToPast => Temporal::PastToFuture,
            };
            let mut rev = *e;
            rev.src = e.dst;
            rev.dst = e.src;
            rev.direction = back;
            prop_assert!(edges.contains(&rev), "missing reverse of {:?}", e);
            match e.direction {
                Temporal::Intra => prop_assert_eq!(e.src.turn, e.dst.turn),
                _ => prop_assert_eq!(e.src.turn.abs_diff(e.dst.turn), 1),
            }
        }
    }

    #[test]
    fn node_order_does_not_change_the_graph(j in 1usize..20, shuffle_seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let g = build_ecg_with(j, &EdgeSchema::default()).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(shuffle_seed);
        let mut nodes: Vec<usize> = (0..g.nodes().len()).collect();
        let mut edges: Vec<usize> = (0..g.edges().len()).collect();
        nodes.shuffle(&mut rng);
        edges.shuffle(&mut rng);
        let p = g.permuted(&nodes, &edges).unwrap();
        let probe = NodeRef::new(NodeKind::Text, j);
        prop_assert_eq!(p.neighbors(probe, None).unwrap(), g.neighbors(probe, None).unwrap());
        let set = |x: &ecss::ecg::EcgGraph| x.edges().iter().copied().collect::<HashSet<_>>();
        prop_assert_eq!(set(&p), set(&g));
    }
}
