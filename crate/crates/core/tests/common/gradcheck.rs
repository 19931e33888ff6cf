//! Central finite-difference checks of every trainable operation on a toy
//! configuration. Each check panics on the first entry outside tolerance and
//! otherwise returns the worst relative error it saw.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ecss::config::ModelConfig;
use ecss::corpus::{generate_corpus, oracle_acoustics, slice_context, EmotionLabel, GeneratorConfig, IntensityLabel, LabelMode};
use ecss::ecg::{build_ecg_with, EdgeSchema};
use ecss::encoders::{init_node_features, lookup_embedding, EmbeddingTable, Encoders};
use ecss::hgt::{eka_aggregate, hgt_forward, Hgt};
use ecss::model::{Ablation, Model};
use ecss::nn::Dropout;
use ecss::params::{ParamBuilder, ParamId, ParamStore};
use ecss::renderer::{predict_emotion, predict_intensity, predict_prosody, Renderer};
use ecss::synthesizer::{
    aggregate_features, decode_mel, encode_text, variance_adapt, Aggregator, Guidance, MelDecoder, TextEncoder,
    VarianceAdaptor,
};
use ecss::tape::{Tape, Var};
use ecss::train::{batch_gradients, TrainConfig};

const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
/// Entries checked per parameter tensor; small tensors are checked in full.
const PER_TENSOR: usize = 24;
/// Full-model checks cover every tensor but fewer entries of each.
const PER_TENSOR_FULL: usize = 4;

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3)
}

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-scale..scale))
}

fn entries(shape: (usize, usize), per_tensor: usize, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let n = shape.0 * shape.1;
    if n <= per_tensor {
        return (0..n).map(|k| (k / shape.1, k % shape.1)).collect();
    }
    (0..per_tensor)
        .map(|_| (rng.random_range(0..shape.0), rng.random_range(0..shape.1)))
        .collect()
}

/// Compares analytic gradients of `loss` with central differences for every
/// parameter in `ids` and returns the worst relative error.
fn check_with(
    store: &mut ParamStore,
    ids: &[ParamId],
    per_tensor: usize,
    loss: impl Fn(&ParamStore) -> (f64, ecss::params::Grads),
) -> f64 {
    let (_, grads) = loss(store);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst = 0.0f64;
    for &id in ids {
        let analytic = grads.dense(store, id);
        for (r, c) in entries(store.get(id).dim(), per_tensor, &mut rng) {
            let orig = store.get(id)[[r, c]];
            store.get_mut(id)[[r, c]] = orig + STEP;
            let up = loss(store).0;
            store.get_mut(id)[[r, c]] = orig - STEP;
            let down = loss(store).0;
            store.get_mut(id)[[r, c]] = orig;
            let numeric = (up - down) / (2.0 * STEP);
            let e = rel_err(analytic[[r, c]], numeric);
            assert!(
                e <= TOLERANCE,
                "{}[{r},{c}]: analytic {} numeric {numeric} (rel {e:e})",
                store.name(id),
                analytic[[r, c]]
            );
            worst = worst.max(e);
        }
    }
    worst
}

/// Checks a tape computation whose outputs are reduced by fixed random weights.
fn check_tape(store: &mut ParamStore, f: impl Fn(&mut Tape<'_>) -> Vec<Var>) -> f64 {
    let ids: Vec<ParamId> = store.ids().collect();
    let loss = |s: &ParamStore| {
        let mut t = Tape::new(s);
        let outs = f(&mut t);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut terms = Vec::new();
        for o in outs {
            let (r, c) = t.shape(o);
            let w = t.constant(random(&mut rng, r, c, 1.0));
            let p = t.mul(o, w);
            terms.push(t.sum_all(p));
        }
        let mut total = terms[0];
        for &x in &terms[1..] {
            total = t.add(total, x);
        }
        (t.scalar(total), t.backward(total))
    };
    check_with(store, &ids, PER_TENSOR, loss)
}

fn toy() -> ModelConfig {
    ModelConfig::toy()
}

fn toy_window(j: usize) -> ecss::corpus::ContextWindow {
    let corpus = generate_corpus(&GeneratorConfig {
        n_conversations: 6,
        mean_turns: 6.0,
        vocab_size: 24,
        label_mode: LabelMode::Balanced,
        seed: 4,
    })
    .unwrap();
    let conv = corpus.iter().find(|c| c.turns.len() > j).unwrap();
    slice_context(conv, j, j).unwrap()
}

pub fn embedding_lookup() -> f64 {
    let mut worst = 0.0f64;
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let table = EmbeddingTable::new(&mut ParamBuilder::new(&mut store, &mut rng), "emb", 5, 3);
    let e = check_tape(&mut store, |t| vec![lookup_embedding(t, table, &[4, 0, 4, 2]).unwrap()]);
    println!("embedding lookup: max rel err {e:e}");
    worst = worst.max(e);
    worst
}

pub fn hgt_layer_and_stack() -> f64 {
    let mut worst = 0.0f64;
    let cfg = toy();
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let hgt = Hgt::new(&mut ParamBuilder::new(&mut store, &mut rng), &cfg.hgt, cfg.text_node_dim, cfg.node_dim).unwrap();
    for schema in [EdgeSchema::default(), "emotion".parse::<Ablation>().unwrap().schema().unwrap()] {
        let graph = build_ecg_with(2, &schema).unwrap();
        let mut s = store.clone();
        let h = s.add("input.h", random(&mut rng, graph.nodes().len(), cfg.hgt.hidden_dim, 1.0));
        let layer = &hgt.layers[0];
        let e = check_tape(&mut s, |t| {
            let hv = t.param(h);
            vec![eka_aggregate(t, &hgt, layer, &graph, hv).0]
        });
        println!("hgt layer: max rel err {e:e}");
        worst = worst.max(e);
    }
    // The whole encoder stack, fed by the node encoders.
    let mut store = ParamStore::new();
    let mut pb = ParamBuilder::new(&mut store, &mut rng);
    let enc = Encoders::new(&mut pb, &cfg).unwrap();
    let hgt = Hgt::new(&mut pb, &cfg.hgt, cfg.text_node_dim, cfg.node_dim).unwrap();
    let window = toy_window(2);
    let graph = build_ecg_with(2, &EdgeSchema::default()).unwrap();
    let e = check_tape(&mut store, |t| {
        let inputs = init_node_features(t, &enc, &graph, &window).unwrap();
        vec![hgt_forward(t, &hgt, &graph, &inputs).unwrap().hidden]
    });
    println!("hgt stack: max rel err {e:e}");
    worst = worst.max(e);
    worst
}

pub fn predictors_and_prosody_attention() -> f64 {
    let mut worst = 0.0f64;
    let cfg = toy();
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let r = Renderer::new(&mut ParamBuilder::new(&mut store, &mut rng), &cfg);
    let graph = build_ecg_with(3, &EdgeSchema::default()).unwrap();
    let enc = store.add("input.encoded", random(&mut rng, graph.nodes().len(), cfg.hgt.hidden_dim, 1.0));
    let cur = store.add("input.current", random(&mut rng, 1, cfg.text_node_dim, 1.0));
    let e = check_tape(&mut store, |t| {
        let x = t.param(enc);
        let p = predict_emotion(t, &r, &graph, x);
        vec![p.feature, p.logits]
    });
    println!("emotion predictor: max rel err {e:e}");
    worst = worst.max(e);
    let e = check_tape(&mut store, |t| {
        let x = t.param(enc);
        let p = predict_intensity(t, &r, &graph, x);
        vec![p.feature, p.logits]
    });
    println!("intensity predictor: max rel err {e:e}");
    worst = worst.max(e);
    let e = check_tape(&mut store, |t| {
        let x = t.param(enc);
        let c = t.param(cur);
        vec![predict_prosody(t, &r, &graph, x, c).unwrap().0]
    });
    println!("prosody attention: max rel err {e:e}");
    worst = worst.max(e);
    worst
}

pub fn text_encoder_and_aggregator() -> f64 {
    let mut worst = 0.0f64;
    let cfg = toy();
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut pb = ParamBuilder::new(&mut store, &mut rng);
    let te = TextEncoder::new(&mut pb, &cfg);
    let e = check_tape(&mut store, |t| {
        let (seq, pooled) = encode_text(t, &te, &[3, 7, 3, 21, 0], &mut Dropout::disabled()).unwrap();
        vec![seq, pooled]
    });
    println!("text encoder: max rel err {e:e}");
    worst = worst.max(e);

    let mut store = ParamStore::new();
    let agg = Aggregator::new(&mut ParamBuilder::new(&mut store, &mut rng), &cfg);
    // Move the mixing weights off their uniform start.
    *store.get_mut(agg.weights) = random(&mut rng, 1, 5, 1.0);
    let widths = [cfg.model_dim, cfg.model_dim, cfg.render_dim, cfg.render_dim, ecss::corpus::oracle::PROSODY_DIM];
    let streams: Vec<ParamId> = widths
        .iter()
        .enumerate()
        .map(|(i, &w)| store.add(format!("input.s{i}"), random(&mut rng, 1, w, 1.0)))
        .collect();
    let e = check_tape(&mut store, |t| {
        let s: Vec<Var> = streams.iter().map(|&id| t.param(id)).collect();
        vec![aggregate_features(t, &agg, [s[0], s[1], s[2], s[3], s[4]])]
    });
    println!("aggregator: max rel err {e:e}");
    worst = worst.max(e);
    worst
}

pub fn variance_adaptor_and_decoder() -> f64 {
    let mut worst = 0.0f64;
    let cfg = toy();
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut pb = ParamBuilder::new(&mut store, &mut rng);
    let va = VarianceAdaptor::new(&mut pb, &cfg);
    let dec = MelDecoder::new(&mut pb, &cfg);
    let x = store.add("input.x", random(&mut rng, 4, cfg.model_dim, 1.0));
    let tokens = [5u32, 9, 2, 14];
    let (_, targets) = oracle_acoustics(&tokens, 1, EmotionLabel::Angry, IntensityLabel::Strong, 8).unwrap();
    let e = check_tape(&mut store, |t| {
        let xv = t.param(x);
        let out = variance_adapt(t, &va, xv, Guidance::Teacher(&targets)).unwrap();
        vec![out.log_duration, out.pitch, out.energy, out.frames]
    });
    println!("variance adaptor (teacher): max rel err {e:e}");
    worst = worst.max(e);
    let e = check_tape(&mut store, |t| {
        let xv = t.param(x);
        let out = variance_adapt(t, &va, xv, Guidance::TeacherDurations(&[2, 1, 3, 1])).unwrap();
        vec![out.log_duration, out.pitch, out.energy, out.frames]
    });
    println!("variance adaptor (predicted pitch): max rel err {e:e}");
    worst = worst.max(e);
    let frames = store.add("input.frames", random(&mut rng, 7, cfg.model_dim, 1.0));
    let e = check_tape(&mut store, |t| {
        let f = t.param(frames);
        vec![decode_mel(t, &dec, f).unwrap()]
    });
    println!("mel decoder: max rel err {e:e}");
    worst = worst.max(e);
    worst
}

fn full_model_check(ablation: Ablation) -> f64 {
    let cfg = toy();
    let mut model = Model::new(cfg, 8).unwrap();
    let corpus = generate_corpus(&GeneratorConfig {
        n_conversations: 40,
        mean_turns: 6.0,
        vocab_size: 24,
        label_mode: LabelMode::Balanced,
        seed: 12,
    })
    .unwrap();
    // Four windows of two history turns whose labels give both contrastive
    // terms a same-label pair and a different-label row; with only two rows
    // the contrastive loss is identically zero.
    let pool: Vec<_> = corpus
        .iter()
        .filter(|c| c.turns.len() > 2)
        .flat_map(|c| (2..c.turns.len()).map(move |i| slice_context(c, i, 2).unwrap()))
        .collect();
    let a = &pool[0];
    let same = pool[1..]
        .iter()
        .find(|w| w.current.emotion == a.current.emotion && w.current.intensity == a.current.intensity)
        .expect("a window sharing both labels");
    let others: Vec<_> = pool[1..]
        .iter()
        .filter(|w| w.current.emotion != a.current.emotion && w.current.intensity != a.current.intensity)
        .take(2)
        .collect();
    let windows = vec![a.clone(), same.clone(), others[0].clone(), others[1].clone()];
    let tc = TrainConfig { batch_size: 4, context_length: 2, ablation: ablation.clone(), ..TrainConfig::default() };
    let schema = ablation.schema().unwrap();
    // The classification heads are trained as detached readouts in the
    // contrastive setting: their gradient comes from the readout loss alone
    // and that loss sends nothing back into the features.
    let heads = [&model.arch.renderer.emotion.head, &model.arch.renderer.intensity.head];
    let is_head = |id: ParamId| heads.iter().any(|h| h.w == id || h.b == id);
    let readout_split = !ablation.cross_entropy;
    let (head_ids, body_ids): (Vec<ParamId>, Vec<ParamId>) =
        model.params.ids().partition(|&id| readout_split && is_head(id));
    let arch = model.arch.clone();
    let config = model.config.clone();
    let run = |store: &ParamStore| {
        let m = Model { config: config.clone(), params: store.clone(), arch: arch.clone() };
        batch_gradients(&m, &schema, &tc, &windows, 1).unwrap()
    };
    let mut e = check_with(&mut model.params, &body_ids, PER_TENSOR_FULL, |s| {
        let (l, g) = run(s);
        assert!(ablation.cross_entropy || (l.l_cl_emo > 0.0 && l.l_cl_int > 0.0));
        (l.total, g)
    });
    e = e.max(check_with(&mut model.params, &head_ids, PER_TENSOR_FULL, |s| {
        let (l, g) = run(s);
        (l.l_readout, g)
    }));
    println!("full model ({}): max rel err {e:e}", ablation.label());
    e
}

pub fn full_model_contrastive() -> f64 {
    full_model_check(Ablation::none())
}

pub fn full_model_cross_entropy() -> f64 {
    full_model_check("supcon".parse().unwrap())
}

/// Every check in order, with its worst relative error.
pub fn suite() -> Vec<(&'static str, f64)> {
    vec![
        ("embedding lookup", embedding_lookup()),
        ("hgt layer and stack", hgt_layer_and_stack()),
        ("predictors and prosody attention", predictors_and_prosody_attention()),
        ("text encoder and aggregator", text_encoder_and_aggregator()),
        ("variance adaptor and decoder", variance_adaptor_and_decoder()),
        ("full model, contrastive", full_model_contrastive()),
        ("full model, cross-entropy", full_model_cross_entropy()),
    ]
}
