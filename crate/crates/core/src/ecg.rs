//! Emotional conversational graph construction.
//!
//! Each history turn contributes five typed nodes (text, audio, speaker,
//! emotion, intensity); the current turn contributes only text and speaker.
//! The default schema has 14 relation classes: the 10 cross-kind pairs,
//! instantiated within a turn, and 4 same-kind chains (text, audio,
//! emotion, intensity) linking adjacent turns. Every relation instance is
//! materialised as two directed edges.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::ContextWindow;
use crate::error::{EcssError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Text,
    Audio,
    Speaker,
    Emotion,
    Intensity,
}

impl NodeKind {
    pub const ALL: [NodeKind; 5] = [
        NodeKind::Text,
        NodeKind::Audio,
        NodeKind::Speaker,
        NodeKind::Emotion,
        NodeKind::Intensity,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            NodeKind::Text => "text",
            NodeKind::Audio => "audio",
            NodeKind::Speaker => "speaker",
            NodeKind::Emotion => "emotion",
            NodeKind::Intensity => "intensity",
        }
    }

    fn dot_shape(self) -> &'static str {
        match self {
            NodeKind::Text => "box",
            NodeKind::Audio => "ellipse",
            NodeKind::Speaker => "diamond",
            NodeKind::Emotion => "hexagon",
            NodeKind::Intensity => "triangle",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Temporal {
    Intra,
    PastToFuture,
    FutureToPast,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EdgeKind {
    TextSpeaker,
    TextAudio,
    TextEmotion,
    TextIntensity,
    AudioSpeaker,
    EmotionSpeaker,
    EmotionIntensity,
    EmotionAudio,
    IntensitySpeaker,
    IntensityAudio,
    TextChain,
    AudioChain,
    EmotionChain,
    IntensityChain,
}

impl EdgeKind {
    pub const COUNT: usize = 14;
    pub const ALL: [EdgeKind; 14] = [
        EdgeKind::TextSpeaker,
        EdgeKind::TextAudio,
        EdgeKind::TextEmotion,
        EdgeKind::TextIntensity,
        EdgeKind::AudioSpeaker,
        EdgeKind::EmotionSpeaker,
        EdgeKind::EmotionIntensity,
        EdgeKind::EmotionAudio,
        EdgeKind::IntensitySpeaker,
        EdgeKind::IntensityAudio,
        EdgeKind::TextChain,
        EdgeKind::AudioChain,
        EdgeKind::EmotionChain,
        EdgeKind::IntensityChain,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Endpoint kinds of the relation (unordered for cross-kind relations).
    pub fn endpoints(self) -> (NodeKind, NodeKind) {
        use NodeKind::*;
        match self {
            EdgeKind::TextSpeaker => (Text, Speaker),
            EdgeKind::TextAudio => (Text, Audio),
            EdgeKind::TextEmotion => (Text, Emotion),
            EdgeKind::TextIntensity => (Text, Intensity),
            EdgeKind::AudioSpeaker => (Audio, Speaker),
            EdgeKind::EmotionSpeaker => (Emotion, Speaker),
            EdgeKind::EmotionIntensity => (Emotion, Intensity),
            EdgeKind::EmotionAudio => (Emotion, Audio),
            EdgeKind::IntensitySpeaker => (Intensity, Speaker),
            EdgeKind::IntensityAudio => (Intensity, Audio),
            EdgeKind::TextChain => (Text, Text),
            EdgeKind::AudioChain => (Audio, Audio),
            EdgeKind::EmotionChain => (Emotion, Emotion),
            EdgeKind::IntensityChain => (Intensity, Intensity),
        }
    }

    pub fn is_chain(self) -> bool {
        let (a, b) = self.endpoints();
        a == b
    }

    /// Directions in which instances of this relation are materialised.
    pub fn directions(self) -> &'static [Temporal] {
        if self.is_chain() {
            &[Temporal::PastToFuture, Temporal::FutureToPast]
        } else {
            &[Temporal::Intra]
        }
    }

    /// The kind of the reverse edge. Every relation is its own pair.
    pub fn reverse(self) -> EdgeKind {
        self
    }

    pub fn name(self) -> String {
        let (a, b) = self.endpoints();
        if a == b {
            format!("{}-chain", a.name())
        } else {
            format!("{}-{}", a.name(), b.name())
        }
    }
}

pub fn default_edge_schema() -> Vec<EdgeKind> {
    EdgeKind::ALL.to_vec()
}

/// Which node kinds and relations a graph instantiates. Ablations drop node
/// kinds, which drops every relation touching them.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdgeSchema {
    pub node_kinds: Vec<NodeKind>,
    pub edges: Vec<EdgeKind>,
}

impl Default for EdgeSchema {
    fn default() -> Self {
        Self {
            node_kinds: NodeKind::ALL.to_vec(),
            edges: default_edge_schema(),
        }
    }
}

impl EdgeSchema {
    pub fn without(dropped: &[NodeKind]) -> Result<Self> {
        if dropped.contains(&NodeKind::Text) {
            return Err(EcssError::Config("text nodes cannot be ablated".into()));
        }
        let keep = |k: &NodeKind| !dropped.contains(k);
        let node_kinds: Vec<NodeKind> = NodeKind::ALL.into_iter().filter(keep).collect();
        let edges = default_edge_schema()
            .into_iter()
            .filter(|e| {
                let (a, b) = e.endpoints();
                keep(&a) && keep(&b)
            })
            .collect();
        Ok(Self { node_kinds, edges })
    }

    pub fn has_node(&self, k: NodeKind) -> bool {
        self.node_kinds.contains(&k)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeRef {
    pub kind: NodeKind,
    /// Window position: `0..J` history (oldest first), `J` current.
    pub turn: usize,
}

impl NodeRef {
    pub fn new(kind: NodeKind, turn: usize) -> Self {
        Self { kind, turn }
    }

    fn label(self) -> String {
        format!("{}@{}", self.kind.name(), self.turn)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Edge {
    pub src: NodeRef,
    pub kind: EdgeKind,
    pub dst: NodeRef,
    pub direction: Temporal,
}

#[derive(Clone, Debug)]
pub struct EcgGraph {
    history_len: usize,
    nodes: Vec<NodeRef>,
    edges: Vec<Edge>,
    index: HashMap<NodeRef, usize>,
    /// Initial node features, filled by [`crate::encoders::init_node_features`].
    pub features: HashMap<NodeRef, Vec<f64>>,
}

pub fn build_ecg(window: &ContextWindow) -> Result<EcgGraph> {
    build_ecg_with(window.history_len(), &EdgeSchema::default())
}

/// Builds the graph for a window of `history_len` turns under `schema`.
pub fn build_ecg_with(history_len: usize, schema: &EdgeSchema) -> Result<EcgGraph> {
    if history_len < 1 {
        return Err(EcssError::Validation("graph needs at least one history turn".into()));
    }
    let j = history_len;
    let mut nodes = Vec::new();
    for t in 0..=j {
        for kind in NodeKind::ALL {
            let current_ok = t < j || matches!(kind, NodeKind::Text | NodeKind::Speaker);
            if current_ok && schema.has_node(kind) {
                nodes.push(NodeRef::new(kind, t));
            }
        }
    }
    let present: std::collections::HashSet<NodeRef> = nodes.iter().copied().collect();
    let mut edges = Vec::new();
    for t in 0..=j {
        for &kind in schema.edges.iter().filter(|k| !k.is_chain()) {
            let (a, b) = kind.endpoints();
            let (na, nb) = (NodeRef::new(a, t), NodeRef::new(b, t));
            if present.contains(&na) && present.contains(&nb) {
                edges.push(Edge { src: na, kind, dst: nb, direction: Temporal::Intra });
                edges.push(Edge { src: nb, kind, dst: na, direction: Temporal::Intra });
            }
        }
    }
    for &kind in schema.edges.iter().filter(|k| k.is_chain()) {
        let (a, _) = kind.endpoints();
        for t in 0..j {
            let (past, future) = (NodeRef::new(a, t), NodeRef::new(a, t + 1));
            if present.contains(&past) && present.contains(&future) {
                edges.push(Edge { src: past, kind, dst: future, direction: Temporal::PastToFuture });
                edges.push(Edge { src: future, kind, dst: past, direction: Temporal::FutureToPast });
            }
        }
    }
    EcgGraph::from_parts(j, nodes, edges)
}

impl EcgGraph {
    /// Assembles a graph from explicit parts, checking endpoint consistency.
    pub fn from_parts(history_len: usize, nodes: Vec<NodeRef>, edges: Vec<Edge>) -> Result<Self> {
        let mut index = HashMap::with_capacity(nodes.len());
        for (i, n) in nodes.iter().enumerate() {
            if n.turn > history_len {
                return Err(EcssError::Validation(format!("node {} beyond current turn", n.label())));
            }
            if n.turn == history_len && !matches!(n.kind, NodeKind::Text | NodeKind::Speaker) {
                return Err(EcssError::Validation(format!(
                    "current turn cannot carry a {} node",
                    n.kind.name()
                )));
            }
            if index.insert(*n, i).is_some() {
                return Err(EcssError::Validation(format!("duplicate node {}", n.label())));
            }
        }
        for e in &edges {
            if !index.contains_key(&e.src) || !index.contains_key(&e.dst) {
                return Err(EcssError::Validation("edge with dangling endpoint".into()));
            }
            if e.src == e.dst {
                return Err(EcssError::Validation("self-loop".into()));
            }
            let (a, b) = e.kind.endpoints();
            let ok = (e.src.kind, e.dst.kind) == (a, b) || (e.src.kind, e.dst.kind) == (b, a);
            if !ok {
                return Err(EcssError::Validation(format!(
                    "edge {} does not join {} and {}",
                    e.kind.name(),
                    e.src.label(),
                    e.dst.label()
                )));
            }
        }
        Ok(Self {
            history_len,
            nodes,
            edges,
            index,
            features: HashMap::new(),
        })
    }

    pub fn history_len(&self) -> usize {
        self.history_len
    }

    pub fn nodes(&self) -> &[NodeRef] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn counts(&self) -> (usize, usize) {
        (self.nodes.len(), self.edges.len())
    }

    pub fn index_of(&self, node: NodeRef) -> Result<usize> {
        self.index
            .get(&node)
            .copied()
            .ok_or_else(|| EcssError::Lookup(format!("node {} not in graph", node.label())))
    }

    pub fn contains(&self, node: NodeRef) -> bool {
        self.index.contains_key(&node)
    }

    /// Graph indices of the nodes of one kind, in graph order.
    pub fn nodes_of_kind(&self, kind: NodeKind) -> Vec<usize> {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.kind == kind)
            .map(|(i, _)| i)
            .collect()
    }

    /// Sources of all in-edges of `node`, optionally restricted to one kind,
    /// ordered by (turn, kind).
    pub fn neighbors(&self, node: NodeRef, kind: Option<EdgeKind>) -> Result<Vec<(NodeRef, EdgeKind)>> {
        self.index_of(node)?;
        let mut out: Vec<(NodeRef, EdgeKind)> = self
            .edges
            .iter()
            .filter(|e| e.dst == node && kind.is_none_or(|k| k == e.kind))
            .map(|e| (e.src, e.kind))
            .collect();
        out.sort_by_key(|(n, k)| (n.turn, n.kind, *k));
        Ok(out)
    }

    /// Same graph with nodes and edges listed in a different order.
    pub fn permuted(&self, node_order: &[usize], edge_order: &[usize]) -> Result<Self> {
        let nodes = node_order.iter().map(|&i| self.nodes[i]).collect();
        let edges = edge_order.iter().map(|&i| self.edges[i]).collect();
        let mut g = Self::from_parts(self.history_len, nodes, edges)?;
        g.features = self.features.clone();
        Ok(g)
    }

    /// Graphviz rendering: one node statement per node (shape by kind) and
    /// one labelled edge statement per directed edge, in graph order.
    pub fn to_dot(&self) -> String {
        let mut s = String::from("digraph ecg {\n");
        for n in &self.nodes {
            let _ = writeln!(s, "  \"{}\" [shape={}];", n.label(), n.kind.dot_shape());
        }
        for e in &self.edges {
            let _ = writeln!(
                s,
                "  \"{}\" -> \"{}\" [label=\"{}\"];",
                e.src.label(),
                e.dst.label(),
                e.kind.name()
            );
        }
        s.push_str("}\n");
        s
    }
}

/// Closed-form node/edge counts under the default schema: `(5J+2, 28J-4)`.
pub fn expected_counts(history_len: usize) -> Result<(usize, usize)> {
    expected_counts_with(history_len, &EdgeSchema::default())
}

/// Closed-form counts for any schema.
pub fn expected_counts_with(history_len: usize, schema: &EdgeSchema) -> Result<(usize, usize)> {
    if history_len < 1 {
        return Err(EcssError::Validation("history length must be >= 1".into()));
    }
    let j = history_len;
    let per_turn = schema.node_kinds.len();
    let current = [NodeKind::Text, NodeKind::Speaker]
        .iter()
        .filter(|k| schema.has_node(**k))
        .count();
    let mut edges = 0;
    for &k in &schema.edges {
        let (a, b) = k.endpoints();
        if !schema.has_node(a) || !schema.has_node(b) {
            continue;
        }
        if k.is_chain() {
            // The text chain reaches the current turn.
            edges += 2 * if a == NodeKind::Text { j } else { j - 1 };
        } else {
            edges += 2 * j;
            if k == EdgeKind::TextSpeaker {
                edges += 2;
            }
        }
    }
    Ok((per_turn * j + current, edges))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    /// Independent enumeration of the five-tuple structure: lists every
    /// (turn, kind) node and every unordered related pair, then doubles.
    fn brute_force_counts(j: usize) -> (usize, usize) {
        let mut nodes = Vec::new();
        for t in 0..j {
            for k in 0..5 {
                nodes.push((t, k));
            }
        }
        nodes.push((j, 0));
        nodes.push((j, 2));
        // kinds: 0 text, 1 audio, 2 speaker, 3 emotion, 4 intensity
        let cross: [(usize, usize); 10] =
            [(0, 2), (0, 1), (0, 3), (0, 4), (1, 2), (3, 2), (3, 4), (3, 1), (4, 2), (4, 1)];
        let mut pairs = 0;
        for a in &nodes {
            for b in &nodes {
                if a >= b {
                    continue;
                }
                let same_turn = a.0 == b.0;
                let related = if same_turn {
                    cross.contains(&(a.1, b.1)) || cross.contains(&(b.1, a.1))
                } else {
                    a.1 == b.1 && a.0.abs_diff(b.0) == 1 && a.1 != 2
                };
                pairs += related as usize;
            }
        }
        (nodes.len(), 2 * pairs)
    }

    #[test]
    fn default_schema_has_fourteen_relations() {
        let s = default_edge_schema();
        assert_eq!(s.len(), 14);
        let cross: Vec<_> = s.iter().filter(|k| !k.is_chain()).collect();
        assert_eq!(cross.len(), 10);
        let mut seen = HashSet::new();
        for k in &cross {
            let (a, b) = k.endpoints();
            assert!(seen.insert((a.min(b), a.max(b))), "duplicate pair {a:?}-{b:?}");
        }
        use NodeKind::*;
        for (a, b) in [
            (Text, Speaker),
            (Text, Audio),
            (Text, Emotion),
            (Text, Intensity),
            (Audio, Speaker),
            (Emotion, Speaker),
            (Emotion, Intensity),
            (Emotion, Audio),
            (Intensity, Speaker),
            (Intensity, Audio),
        ] {
            assert!(seen.contains(&(a.min(b), a.max(b))));
        }
        let chains: HashSet<_> = s.iter().filter(|k| k.is_chain()).map(|k| k.endpoints().0).collect();
        assert_eq!(chains, HashSet::from([Text, Audio, Emotion, Intensity]));
    }

    #[test]
    fn counts_match_enumeration_for_all_lengths() {
        for j in 1..=14 {
            let g = build_ecg_with(j, &EdgeSchema::default()).unwrap();
            assert_eq!(g.counts(), expected_counts(j).unwrap());
            assert_eq!(g.counts(), brute_force_counts(j));
            assert_eq!(g.counts(), (5 * j + 2, 28 * j - 4));
        }
        assert_eq!(expected_counts(10).unwrap(), (52, 276));
        assert_eq!(expected_counts(1).unwrap(), (7, 24));
        assert_eq!(expected_counts(4).unwrap(), (22, 108));
        assert!(expected_counts(0).is_err());
    }

    #[test]
    fn edges_are_symmetric_and_unique() {
        let g = build_ecg_with(5, &EdgeSchema::default()).unwrap();
        let set: HashSet<_> = g.edges().iter().map(|e| (e.src, e.kind, e.dst)).collect();
        assert_eq!(set.len(), g.edges().len());
        for e in g.edges() {
            assert!(set.contains(&(e.dst, e.kind.reverse(), e.src)));
            assert_ne!(e.src, e.dst);
        }
        for n in g.nodes().iter().filter(|n| n.turn == 5) {
            assert!(matches!(n.kind, NodeKind::Text | NodeKind::Speaker));
        }
    }

    #[test]
    fn one_turn_graph_links_history_text_to_current() {
        let g = build_ecg_with(1, &EdgeSchema::default()).unwrap();
        let cur = NodeRef::new(NodeKind::Text, 1);
        let hist = NodeRef::new(NodeKind::Text, 0);
        let chain: Vec<_> = g.edges().iter().filter(|e| e.kind == EdgeKind::TextChain).collect();
        assert_eq!(chain.len(), 2);
        assert!(chain.iter().any(|e| e.src == hist && e.dst == cur));
        let nb = g.neighbors(cur, None).unwrap();
        assert_eq!(
            nb,
            vec![
                (hist, EdgeKind::TextChain),
                (NodeRef::new(NodeKind::Speaker, 1), EdgeKind::TextSpeaker)
            ]
        );
        let emo = NodeRef::new(NodeKind::Emotion, 0);
        let nb = g.neighbors(emo, None).unwrap();
        assert_eq!(nb.len(), 4);
        assert!(nb.iter().all(|(n, _)| n.turn == 0));
        assert!(g.neighbors(emo, Some(EdgeKind::EmotionChain)).unwrap().is_empty());
        assert!(g.neighbors(NodeRef::new(NodeKind::Emotion, 1), None).is_err());
    }

    #[test]
    fn ablated_schemas_shrink_counts() {
        for j in 1..=14 {
            let schema = EdgeSchema::without(&[NodeKind::Audio]).unwrap();
            let g = build_ecg_with(j, &schema).unwrap();
            assert_eq!(g.counts().0, 4 * j + 2);
            assert_eq!(g.counts(), expected_counts_with(j, &schema).unwrap());
            assert_eq!(g.counts().1, 18 * j - 2);

            let schema = EdgeSchema::without(&[NodeKind::Speaker]).unwrap();
            let g = build_ecg_with(j, &schema).unwrap();
            assert_eq!(g.counts(), (4 * j + 1, expected_counts_with(j, &schema).unwrap().1));
            assert_eq!(g.counts(), expected_counts_with(j, &schema).unwrap());
        }
        assert!(EdgeSchema::without(&[NodeKind::Text]).is_err());
    }

    #[test]
    fn from_parts_rejects_bad_graphs() {
        let t0 = NodeRef::new(NodeKind::Text, 0);
        let s0 = NodeRef::new(NodeKind::Speaker, 0);
        let bad = Edge { src: t0, kind: EdgeKind::TextAudio, dst: s0, direction: Temporal::Intra };
        assert!(EcgGraph::from_parts(1, vec![t0, s0], vec![bad]).is_err());
        assert!(EcgGraph::from_parts(1, vec![NodeRef::new(NodeKind::Emotion, 1)], vec![]).is_err());
        assert!(EcgGraph::from_parts(1, vec![t0, t0], vec![]).is_err());
    }

    #[test]
    fn dot_export_is_stable() {
        let g = build_ecg_with(1, &EdgeSchema::without(&[NodeKind::Audio, NodeKind::Emotion, NodeKind::Intensity]).unwrap()).unwrap();
        let expected = "digraph ecg {
  \"text@0\" [shape=box];
  \"speaker@0\" [shape=diamond];
  \"text@1\" [shape=box];
  \"speaker@1\" [shape=diamond];
  \"text@0\" -> \"speaker@0\" [label=\"text-speaker\"];
  \"speaker@0\" -> \"text@0\" [label=\"text-speaker\"];
  \"text@1\" -> \"speaker@1\" [label=\"text-speaker\"];
  \"speaker@1\" -> \"text@1\" [label=\"text-speaker\"];
  \"text@0\" -> \"text@1\" [label=\"text-chain\"];
  \"text@1\" -> \"text@0\" [label=\"text-chain\"];
}
";
        assert_eq!(g.to_dot(), expected);
    }
}
