//! Heterogeneous graph transformer over the conversational graph.
//!
//! Each layer scores every in-edge with a relation-specific bilinear form
//! between the source key and the target query, normalises the scores per
//! target and head, and sums relation-specific messages weighted by those
//! scores. The aggregate goes through a per-kind output map and GELU and is
//! added to the node's incoming representation. Nodes without in-edges keep
//! their incoming representation unchanged.

use std::collections::HashMap;

use ndarray::Array2;

use crate::config::HgtConfig;
use crate::ecg::{EcgGraph, EdgeKind, NodeKind, NodeRef};
use crate::encoders::NodeInputs;
use crate::error::{EcssError, Result};
use crate::nn::Linear;
use crate::params::{InitScheme, ParamBuilder, ParamId};
use crate::tape::{Tape, Var};

#[derive(Clone, Debug)]
pub struct HgtLayer {
    pub query: Vec<Linear>,
    pub key: Vec<Linear>,
    pub value: Vec<Linear>,
    pub out: Vec<Linear>,
    /// One stacked `heads·dh × dh` block per edge kind.
    pub w_att: Vec<ParamId>,
    pub w_msg: Vec<ParamId>,
    /// Per-edge-kind `1×1` score prior.
    pub mu: Vec<ParamId>,
}

#[derive(Clone, Debug)]
pub struct Hgt {
    pub input: Vec<Linear>,
    pub layers: Vec<HgtLayer>,
    pub hidden: usize,
    pub heads: usize,
    pub layer_norm: bool,
}

fn per_kind(pb: &mut ParamBuilder<'_>, name: &str, dim_of: impl Fn(NodeKind) -> usize, out: usize) -> Vec<Linear> {
    pb.scoped(name, |pb| {
        NodeKind::ALL
            .iter()
            .map(|&k| Linear::new(pb, k.name(), dim_of(k), out))
            .collect()
    })
}

impl Hgt {
    pub fn new(pb: &mut ParamBuilder<'_>, cfg: &HgtConfig, text_dim: usize, node_dim: usize) -> Result<Self> {
        if cfg.heads == 0 || cfg.hidden_dim % cfg.heads != 0 {
            return Err(EcssError::Config("hgt hidden_dim must be divisible by heads".into()));
        }
        let hidden = cfg.hidden_dim;
        let dh = hidden / cfg.heads;
        pb.scoped_with("hgt", InitScheme::He, |pb| {
            let input = per_kind(
                pb,
                "in",
                |k| if k == NodeKind::Text { text_dim } else { node_dim },
                hidden,
            );
            let layers = (0..cfg.layers)
                .map(|l| {
                    pb.scoped(&format!("l{l}"), |pb| {
                        let mut rel = |name: &str| -> Vec<ParamId> {
                            pb.scoped(name, |pb| {
                                EdgeKind::ALL
                                    .iter()
                                    .map(|k| pb.weight(&k.name(), cfg.heads * dh, dh, dh))
                                    .collect()
                            })
                        };
                        let w_att = rel("att");
                        let w_msg = rel("msg");
                        let mu = pb.scoped("mu", |pb| {
                            EdgeKind::ALL.iter().map(|k| pb.constant(&k.name(), 1, 1, 1.0)).collect()
                        });
                        HgtLayer {
                            query: per_kind(pb, "q", |_| hidden, hidden),
                            key: per_kind(pb, "k", |_| hidden, hidden),
                            value: per_kind(pb, "v", |_| hidden, hidden),
                            out: per_kind(pb, "o", |_| hidden, hidden),
                            w_att,
                            w_msg,
                            mu,
                        }
                    })
                })
                .collect();
            Ok(Self {
                input,
                layers,
                hidden,
                heads: cfg.heads,
                layer_norm: cfg.layer_norm,
            })
        })
    }

    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }
}

/// What one layer computed for each edge, in processing order.
#[derive(Clone, Debug)]
pub struct LayerTrace {
    /// Graph edge indices in the row order of `attention` and `messages`.
    pub edges: Vec<usize>,
    /// `E × heads` normalised scores.
    pub attention: Option<Var>,
    /// `E × hidden` relation-transformed values.
    pub messages: Option<Var>,
}

#[derive(Clone, Debug)]
pub struct HgtOutput {
    /// `n × hidden`, row `i` belongs to graph node `i`.
    pub hidden: Var,
    pub layers: Vec<LayerTrace>,
}

/// Encoded node vectors keyed by node identity.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedGraph {
    pub vectors: HashMap<NodeRef, Vec<f64>>,
}

impl EncodedGraph {
    pub fn get(&self, node: NodeRef) -> Option<&[f64]> {
        self.vectors.get(&node).map(Vec::as_slice)
    }
}

/// Stacks per-kind blocks and reorders rows so row `i` is node `i`.
fn assemble(t: &mut Tape<'_>, parts: &[(&[usize], Var)], n: usize) -> Var {
    let mut pos = vec![usize::MAX; n];
    let mut offset = 0;
    for (nodes, _) in parts {
        for (r, &i) in nodes.iter().enumerate() {
            pos[i] = offset + r;
        }
        offset += nodes.len();
    }
    debug_assert!(pos.iter().all(|&p| p != usize::MAX));
    let vars: Vec<Var> = parts.iter().map(|p| p.1).collect();
    let cat = if vars.len() == 1 { vars[0] } else { t.concat_rows(&vars) };
    t.gather_rows(cat, pos)
}

fn kinds_present(graph: &EcgGraph) -> Vec<(NodeKind, Vec<usize>)> {
    NodeKind::ALL
        .iter()
        .map(|&k| (k, graph.nodes_of_kind(k)))
        .filter(|(_, v)| !v.is_empty())
        .collect()
}

/// Per-kind projection of the initial features to the hidden width.
pub fn project_inputs(t: &mut Tape<'_>, hgt: &Hgt, graph: &EcgGraph, inputs: &NodeInputs) -> Result<Var> {
    let mut parts = Vec::with_capacity(inputs.blocks.len());
    for b in &inputs.blocks {
        let lin = hgt.input[b.kind.index()];
        if t.shape(b.features).1 != lin.fan_in {
            return Err(EcssError::Config(format!(
                "{} features are {}-dim but the input projection expects {}",
                b.kind.name(),
                t.shape(b.features).1,
                lin.fan_in
            )));
        }
        parts.push((b.nodes.as_slice(), lin.forward(t, b.features)));
    }
    if parts.iter().map(|p| p.0.len()).sum::<usize>() != graph.nodes().len() {
        return Err(EcssError::Validation("node inputs do not cover the graph".into()));
    }
    Ok(assemble(t, &parts, graph.nodes().len()))
}

/// One attention, message and aggregation round.
pub fn eka_aggregate(t: &mut Tape<'_>, hgt: &Hgt, layer: &HgtLayer, graph: &EcgGraph, h: Var) -> (Var, LayerTrace) {
    let n = graph.nodes().len();
    let heads = hgt.heads;
    let kinds = kinds_present(graph);
    let mut qs = Vec::new();
    let mut ks = Vec::new();
    let mut vs = Vec::new();
    for (kind, nodes) in &kinds {
        let x = t.gather_rows(h, nodes.clone());
        let i = kind.index();
        qs.push((nodes.as_slice(), layer.query[i].forward(t, x)));
        ks.push((nodes.as_slice(), layer.key[i].forward(t, x)));
        vs.push((nodes.as_slice(), layer.value[i].forward(t, x)));
    }
    let q = assemble(t, &qs, n);
    let k = assemble(t, &ks, n);
    let v = assemble(t, &vs, n);

    let index: HashMap<NodeRef, usize> = graph.nodes().iter().enumerate().map(|(i, &r)| (r, i)).collect();
    let inv_sqrt = 1.0 / (hgt.head_dim() as f64).sqrt();
    let mut order = Vec::new();
    let mut dsts = Vec::new();
    let mut scores = Vec::new();
    let mut msgs = Vec::new();
    for ek in EdgeKind::ALL {
        let ids: Vec<usize> = graph
            .edges()
            .iter()
            .enumerate()
            .filter(|(_, e)| e.kind == ek)
            .map(|(i, _)| i)
            .collect();
        if ids.is_empty() {
            continue;
        }
        let src: Vec<usize> = ids.iter().map(|&i| index[&graph.edges()[i].src]).collect();
        let dst: Vec<usize> = ids.iter().map(|&i| index[&graph.edges()[i].dst]).collect();
        let ki = t.gather_rows(k, src.clone());
        let watt = t.param(layer.w_att[ek.index()]);
        let ka = t.block_diag_matmul(ki, watt, heads);
        let qt = t.gather_rows(q, dst.clone());
        let s = t.head_dot(ka, qt, heads);
        let mu = t.param(layer.mu[ek.index()]);
        let s = t.mul_scalar(s, mu);
        scores.push(t.scale(s, inv_sqrt));
        let vi = t.gather_rows(v, src);
        let wmsg = t.param(layer.w_msg[ek.index()]);
        msgs.push(t.block_diag_matmul(vi, wmsg, heads));
        order.extend(ids);
        dsts.extend(dst);
    }
    if order.is_empty() {
        let trace = LayerTrace { edges: order, attention: None, messages: None };
        return (h, trace);
    }
    let scores = t.concat_rows(&scores);
    let msgs = t.concat_rows(&msgs);
    let att = t.segment_softmax(scores, dsts.clone(), n);
    let weighted = t.head_scale(msgs, att, heads);
    let agg = t.scatter_add_rows(weighted, dsts.clone(), n);

    let mut outs = Vec::new();
    for (kind, nodes) in &kinds {
        let a = t.gather_rows(agg, nodes.clone());
        let o = layer.out[kind.index()].forward(t, a);
        outs.push((nodes.as_slice(), t.gelu(o)));
    }
    let o = assemble(t, &outs, n);
    let mut mask = Array2::zeros((n, 1));
    for &d in &dsts {
        mask[[d, 0]] = 1.0;
    }
    let mask = t.constant(mask);
    let o = t.mul_col(o, mask);
    let mut next = t.add(o, h);
    if hgt.layer_norm {
        next = t.layer_norm(next);
    }
    let trace = LayerTrace { edges: order, attention: Some(att), messages: Some(msgs) };
    (next, trace)
}

pub fn hgt_forward(t: &mut Tape<'_>, hgt: &Hgt, graph: &EcgGraph, inputs: &NodeInputs) -> Result<HgtOutput> {
    let mut h = project_inputs(t, hgt, graph, inputs)?;
    let mut traces = Vec::with_capacity(hgt.layers.len());
    for layer in &hgt.layers {
        let (next, trace) = eka_aggregate(t, hgt, layer, graph, h);
        h = next;
        traces.push(trace);
    }
    Ok(HgtOutput { hidden: h, layers: traces })
}

pub fn encoded_graph(t: &Tape<'_>, graph: &EcgGraph, out: &HgtOutput) -> EncodedGraph {
    let m = t.value(out.hidden);
    let vectors = graph
        .nodes()
        .iter()
        .enumerate()
        .map(|(i, &n)| (n, m.row(i).to_vec()))
        .collect();
    EncodedGraph { vectors }
}

fn in_edge_rows(graph: &EcgGraph, trace: &LayerTrace, target: NodeRef) -> Result<Vec<(usize, NodeRef, EdgeKind)>> {
    graph.index_of(target)?;
    Ok(trace
        .edges
        .iter()
        .enumerate()
        .filter(|(_, &e)| graph.edges()[e].dst == target)
        .map(|(r, &e)| (r, graph.edges()[e].src, graph.edges()[e].kind))
        .collect())
}

/// Per-head attention of `target` over its in-neighbours at `layer`.
/// Empty for isolated targets.
pub fn hma_attention(
    t: &Tape<'_>,
    graph: &EcgGraph,
    out: &HgtOutput,
    layer: usize,
    target: NodeRef,
) -> Result<Vec<(NodeRef, EdgeKind, Vec<f64>)>> {
    let trace = &out.layers[layer];
    let rows = in_edge_rows(graph, trace, target)?;
    let Some(att) = trace.attention else { return Ok(Vec::new()) };
    let m = t.value(att);
    Ok(rows.into_iter().map(|(r, s, k)| (s, k, m.row(r).to_vec())).collect())
}

/// Message vectors sent to `target` at `layer`.
pub fn hmp_messages(
    t: &Tape<'_>,
    graph: &EcgGraph,
    out: &HgtOutput,
    layer: usize,
    target: NodeRef,
) -> Result<Vec<(NodeRef, EdgeKind, Vec<f64>)>> {
    let trace = &out.layers[layer];
    let rows = in_edge_rows(graph, trace, target)?;
    let Some(msg) = trace.messages else { return Ok(Vec::new()) };
    let m = t.value(msg);
    Ok(rows.into_iter().map(|(r, s, k)| (s, k, m.row(r).to_vec())).collect())
}
