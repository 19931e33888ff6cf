//! Loss assembly, Adam, the training loop and checkpoints.
//!
//! Each batch item is run forward on its own tape, in parallel. The
//! contrastive (or cross-entropy) terms couple the batch, so they are
//! evaluated centrally on the gathered feature rows, and their row
//! gradients are fed back into each tape as backward seeds together with
//! that item's share of the prosody and acoustic losses. Per-item gradients
//! are summed in batch order, so results do not depend on the thread count.

use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::corpus::{derive_seed, slice_context, split_corpus, ContextWindow, Conversation, Split};
use crate::ecg::EdgeSchema;
use crate::error::{EcssError, Result};
use crate::model::{forward_sample, Ablation, Mode, Model};
use crate::params::{Grads, ParamStore};
use crate::renderer::{cross_entropy, supcon_loss, BatchLoss, DEFAULT_TEMPERATURE};
use crate::synthesizer::Fs2Components;
use crate::tape::Tape;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub steps: usize,
    pub context_length: usize,
    pub seed: u64,
    pub ablation: Ablation,
    pub temperature: f64,
    /// Linear learning-rate warmup length; 0 disables it.
    pub warmup_steps: usize,
    /// Worker threads; 0 lets the runtime decide. Never affects results.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
            steps: 2000,
            context_length: 10,
            seed: 1,
            ablation: Ablation::none(),
            temperature: DEFAULT_TEMPERATURE,
            warmup_steps: 0,
            threads: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(EcssError::Config("batch_size must be at least 2".into()));
        }
        if self.context_length < 1 {
            return Err(EcssError::Config("context_length must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.temperature > 0.0) {
            return Err(EcssError::Config("learning rate and temperature must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(EcssError::Config("Adam betas must be in [0, 1)".into()));
        }
        self.ablation.schema()?;
        Ok(())
    }

    fn lr_at(&self, step: usize) -> f64 {
        if self.warmup_steps == 0 {
            self.learning_rate
        } else {
            self.learning_rate * (step as f64 / self.warmup_steps as f64).min(1.0)
        }
    }
}

/// Batch-mean loss terms. With the cross-entropy ablation the two
/// contrastive slots hold cross-entropy values.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_cl_emo: f64,
    pub l_cl_int: f64,
    pub l_mse_pro: f64,
    pub l_fs2: f64,
    pub fs2: Fs2Components,
    pub total: f64,
    /// Cross-entropy of the classification heads when they are trained as
    /// detached readouts; not part of `total`.
    #[serde(default)]
    pub l_readout: f64,
}

impl LossBreakdown {
    /// Unweighted sum of the four terms.
    pub fn new(l_cl_emo: f64, l_cl_int: f64, l_mse_pro: f64, fs2: Fs2Components) -> Self {
        let l_fs2 = fs2.total();
        Self {
            l_cl_emo,
            l_cl_int,
            l_mse_pro,
            l_fs2,
            fs2,
            total: l_cl_emo + l_cl_int + l_mse_pro + l_fs2,
            l_readout: 0.0,
        }
    }

    pub const CSV_HEADER: &'static str = "step,l_cl_emo,l_cl_int,l_mse_pro,l_fs2,total";

    pub fn csv_row(&self, step: usize) -> String {
        format!(
            "{step},{},{},{},{},{}",
            self.l_cl_emo, self.l_cl_int, self.l_mse_pro, self.l_fs2, self.total
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<Array2<f64>>,
    pub v: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(store: &ParamStore, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros: Vec<Array2<f64>> = store.iter().map(|(_, _, p)| Array2::zeros(p.dim())).collect();
        Self { beta1, beta2, eps, t: 0, m: zeros.clone(), v: zeros }
    }

    /// Bias-corrected update. Parameters without a gradient see a zero one.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Grads, lr: f64) -> Result<()> {
        if grads.len() != store.len() || self.m.len() != store.len() {
            return Err(EcssError::Shape("optimizer state does not match the parameter set".into()));
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let i = id.0;
            let p = store.get_mut(id);
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            match grads.get(id) {
                Some(g) => {
                    if g.dim() != p.dim() {
                        return Err(EcssError::Shape(format!("gradient shape {:?} vs {:?}", g.dim(), p.dim())));
                    }
                    ndarray::Zip::from(&mut *m).and(&mut *v).and(g).for_each(|m, v, &g| {
                        *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                        *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                    });
                }
                None => {
                    m.mapv_inplace(|x| self.beta1 * x);
                    v.mapv_inplace(|x| self.beta2 * x);
                }
            }
            let eps = self.eps;
            ndarray::Zip::from(p).and(&*m).and(&*v).for_each(|p, &m, &v| {
                *p -= lr * (m / c1) / ((v / c2).sqrt() + eps);
            });
        }
        Ok(())
    }
}

/// Windows for one step, drawn only from `(seed, step)`: conversations
/// come from back-to-back permutations of the pool, so a batch repeats a
/// conversation only when the pool is smaller than the batch; each slot then
/// picks a random current turn (never the first).
pub fn sample_batch(pool: &[Conversation], batch: usize, context: usize, seed: u64, step: usize) -> Result<Vec<ContextWindow>> {
    if pool.is_empty() {
        return Err(EcssError::Validation("no training conversations".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0xba7c4, step as u64]));
    let mut order = Vec::with_capacity(batch + pool.len());
    while order.len() < batch {
        let mut perm: Vec<usize> = (0..pool.len()).collect();
        perm.shuffle(&mut rng);
        order.extend(perm);
    }
    order
        .into_iter()
        .take(batch)
        .map(|c| {
            let conv = &pool[c];
            let idx = rng.random_range(1..conv.turns.len());
            slice_context(conv, idx, context)
        })
        .collect()
}

fn stack_rows(t_rows: &[Array2<f64>]) -> Array2<f64> {
    let views: Vec<_> = t_rows.iter().map(|r| r.view()).collect();
    ndarray::concatenate(ndarray::Axis(0), &views).expect("equal widths")
}

/// Loss and gradient of one batch at the current parameters.
pub fn batch_gradients(
    model: &Model,
    schema: &EdgeSchema,
    cfg: &TrainConfig,
    windows: &[ContextWindow],
    step: usize,
) -> Result<(LossBreakdown, Grads)> {
    let b = windows.len();
    let store = &model.params;
    let forwards: Vec<Result<(Tape<'_>, crate::model::SampleOutput)>> = windows
        .par_iter()
        .enumerate()
        .map(|(i, w)| {
            let mut t = Tape::new(store);
            let seed = derive_seed(cfg.seed, &[0xd70b, step as u64, i as u64]);
            let out = forward_sample(&mut t, model, schema, w, Mode::Train { dropout_seed: seed })?;
            Ok((t, out))
        })
        .collect();
    let forwards: Vec<_> = forwards.into_iter().collect::<Result<_>>()?;

    let emo_labels: Vec<usize> = windows.iter().map(|w| w.current.emotion.code() as usize).collect();
    let int_labels: Vec<usize> = windows.iter().map(|w| w.current.intensity.code() as usize).collect();
    let pick = |f: &dyn Fn(&crate::model::SampleOutput) -> crate::tape::Var| -> Array2<f64> {
        stack_rows(&forwards.iter().map(|(t, o)| t.value(f(o)).clone()).collect::<Vec<_>>())
    };
    let (emo_var, int_var): (
        Box<dyn Fn(&crate::model::SampleOutput) -> crate::tape::Var + Sync>,
        Box<dyn Fn(&crate::model::SampleOutput) -> crate::tape::Var + Sync>,
    ) = if cfg.ablation.cross_entropy {
        (Box::new(|o| o.rendered.emotion.logits), Box::new(|o| o.rendered.intensity.logits))
    } else {
        (Box::new(|o| o.rendered.emotion.feature), Box::new(|o| o.rendered.intensity.feature))
    };
    let emo_in = pick(&*emo_var);
    let int_in = pick(&*int_var);
    let (emo, int): (BatchLoss, BatchLoss) = if cfg.ablation.cross_entropy {
        (cross_entropy(&emo_in, &emo_labels)?, cross_entropy(&int_in, &int_labels)?)
    } else {
        (
            supcon_loss(&emo_in, &emo_labels, cfg.temperature)?,
            supcon_loss(&int_in, &int_labels, cfg.temperature)?,
        )
    };

    let inv_b = 1.0 / b as f64;
    let mut pro = 0.0;
    let mut fs2 = Fs2Components::default();
    for (t, o) in &forwards {
        pro += t.scalar(o.prosody_loss.expect("training forward")) * inv_b;
        let c = o.fs2.expect("training forward").1;
        fs2.mel += c.mel * inv_b;
        fs2.pitch += c.pitch * inv_b;
        fs2.energy += c.energy * inv_b;
        fs2.duration += c.duration * inv_b;
    }
    let mut losses = LossBreakdown::new(emo.loss, int.loss, pro, fs2);
    let readouts = if cfg.ablation.cross_entropy {
        Vec::new()
    } else {
        let heads = [
            (&model.arch.renderer.emotion.head, &emo_labels, true),
            (&model.arch.renderer.intensity.head, &int_labels, false),
        ];
        let mut out = Vec::new();
        for (head, labels, is_emotion) in heads {
            let live: Vec<usize> = (0..b)
                .filter(|&i| {
                    let r = &forwards[i].1.rendered;
                    !(if is_emotion { r.emotion.fallback } else { r.intensity.fallback })
                })
                .collect();
            if live.is_empty() {
                continue;
            }
            let feats = stack_rows(
                &live
                    .iter()
                    .map(|&i| {
                        let (t, o) = &forwards[i];
                        let v = if is_emotion { o.rendered.emotion.feature } else { o.rendered.intensity.feature };
                        t.value(v).clone()
                    })
                    .collect::<Vec<_>>(),
            );
            let logits = stack_rows(
                &live
                    .iter()
                    .map(|&i| {
                        let (t, o) = &forwards[i];
                        let v = if is_emotion { o.rendered.emotion.logits } else { o.rendered.intensity.logits };
                        t.value(v).clone()
                    })
                    .collect::<Vec<_>>(),
            );
            let sub: Vec<usize> = live.iter().map(|&i| labels[i]).collect();
            let ce = cross_entropy(&logits, &sub)?;
            losses.l_readout += ce.loss;
            out.push((*head, feats, ce.grad));
        }
        out
    };
    if !losses.total.is_finite() {
        return Err(EcssError::NonFinite { step, what: format!("total loss {}", losses.total) });
    }

    let per_item: Vec<Grads> = forwards
        .par_iter()
        .enumerate()
        .map(|(i, (t, o))| {
            let row = |g: &Array2<f64>| g.slice(ndarray::s![i..i + 1, ..]).to_owned();
            let unit = Array2::from_elem((1, 1), inv_b);
            let seeds = vec![
                (emo_var(o), row(&emo.grad)),
                (int_var(o), row(&int.grad)),
                (o.prosody_loss.expect("training forward"), unit.clone()),
                (o.fs2.expect("training forward").0, unit),
            ];
            t.backward_seeded(&seeds)
        })
        .collect();
    let mut grads = Grads::for_store(store);
    for g in &per_item {
        grads.add_assign(g);
    }
    // The heads read the features without sending gradient back into them.
    for (head, feats, g) in readouts {
        grads.accumulate_owned(head.w, feats.t().dot(&g));
        grads.accumulate_owned(head.b, g.sum_axis(ndarray::Axis(0)).insert_axis(ndarray::Axis(0)));
    }
    Ok((losses, grads))
}

/// Model, optimizer and sampler state of a training run.
pub struct Trainer {
    pub model: Model,
    pub adam: Adam,
    pub config: TrainConfig,
    pub schema: EdgeSchema,
    /// Number of completed updates.
    pub step: usize,
    pool: Vec<Conversation>,
    threads: rayon::ThreadPool,
}

fn thread_pool(n: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map_err(|e| EcssError::Config(format!("cannot start worker threads: {e}")))
}

impl Trainer {
    /// Fresh model trained on exactly `pool`.
    pub fn new(model_config: ModelConfig, config: TrainConfig, pool: Vec<Conversation>) -> Result<Self> {
        config.validate()?;
        if pool.is_empty() {
            return Err(EcssError::Validation("no training conversations".into()));
        }
        let model = Model::new(model_config, derive_seed(config.seed, &[0x1a17]))?;
        let adam = Adam::new(&model.params, config.beta1, config.beta2, config.eps);
        let schema = config.ablation.schema()?;
        let threads = thread_pool(config.threads)?;
        Ok(Self { model, adam, config, schema, step: 0, pool, threads })
    }

    pub fn pool(&self) -> &[Conversation] {
        &self.pool
    }

    pub fn set_threads(&mut self, n: usize) -> Result<()> {
        self.threads = thread_pool(n)?;
        self.config.threads = n;
        Ok(())
    }

    /// One update; returns the losses measured before it.
    pub fn step_once(&mut self) -> Result<LossBreakdown> {
        let step = self.step + 1;
        let windows = sample_batch(&self.pool, self.config.batch_size, self.config.context_length, self.config.seed, step)?;
        let (losses, grads) = {
            let (model, schema, cfg) = (&self.model, &self.schema, &self.config);
            self.threads.install(|| batch_gradients(model, schema, cfg, &windows, step))?
        };
        grads.check_finite(&self.model.params, step)?;
        let lr = self.config.lr_at(step);
        self.adam.step(&mut self.model.params, &grads, lr)?;
        self.step = step;
        Ok(losses)
    }

    /// Trains until `self.step == until`, calling `on_step` after each update.
    pub fn run_until(&mut self, until: usize, mut on_step: impl FnMut(usize, &LossBreakdown) -> Result<()>) -> Result<()> {
        while self.step < until {
            let l = self.step_once()?;
            if self.step % 100 == 0 || self.step == until {
                log::info!(
                    "step {} total {:.4} (cl_emo {:.4} cl_int {:.4} pro {:.4} fs2 {:.4})",
                    self.step,
                    l.total,
                    l.l_cl_emo,
                    l.l_cl_int,
                    l.l_mse_pro,
                    l.l_fs2
                );
            }
            on_step(self.step, &l)?;
        }
        Ok(())
    }

    pub fn install<R: Send>(&self, f: impl FnOnce() -> R + Send) -> R {
        self.threads.install(f)
    }
}

/// Trains on the training split of `corpus` for `config.steps` updates and
/// returns the trainer with the per-step loss history.
pub fn train_loop(corpus: &[Conversation], model_config: ModelConfig, config: TrainConfig) -> Result<(Trainer, Vec<LossBreakdown>)> {
    let pool = split_corpus(corpus, Split::Train);
    let steps = config.steps;
    let mut trainer = Trainer::new(model_config, config, pool)?;
    let mut history = Vec::with_capacity(steps);
    trainer.run_until(steps, |_, l| {
        history.push(*l);
        Ok(())
    })?;
    Ok((trainer, history))
}

pub fn write_metrics(path: &Path, rows: &[(usize, LossBreakdown)]) -> Result<()> {
    let mut s = String::from(LossBreakdown::CSV_HEADER);
    s.push('\n');
    for (step, l) in rows {
        s.push_str(&l.csv_row(*step));
        s.push('\n');
    }
    std::fs::write(path, s).map_err(|e| EcssError::io(path, e))
}

const MAGIC: &[u8; 4] = b"ECSS";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct CheckpointHeader {
    model: ModelConfig,
    train: TrainConfig,
    step: usize,
    adam_t: u64,
}

/// Everything needed to continue a run.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    pub step: usize,
    pub adam_t: u64,
    pub tensors: Vec<(String, Array2<f64>)>,
}

fn put_u32(buf: &mut Vec<u8>, v: u32) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn fnv_bytes(bytes: &[u8]) -> u64 {
    crate::corpus::fnv1a64(bytes)
}

impl Checkpoint {
    pub fn capture(tr: &Trainer) -> Self {
        let mut tensors: Vec<(String, Array2<f64>)> =
            tr.model.params.iter().map(|(_, n, v)| (n.to_string(), v.clone())).collect();
        for (i, (_, n, _)) in tr.model.params.iter().enumerate() {
            tensors.push((format!("adam.m.{n}"), tr.adam.m[i].clone()));
        }
        for (i, (_, n, _)) in tr.model.params.iter().enumerate() {
            tensors.push((format!("adam.v.{n}"), tr.adam.v[i].clone()));
        }
        Self {
            model_config: tr.model.config.clone(),
            train_config: tr.config.clone(),
            step: tr.step,
            adam_t: tr.adam.t,
            tensors,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&CheckpointHeader {
            model: self.model_config.clone(),
            train: self.train_config.clone(),
            step: self.step,
            adam_t: self.adam_t,
        })?;
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        put_u32(&mut buf, CHECKPOINT_VERSION);
        put_u32(&mut buf, header.len() as u32);
        buf.extend_from_slice(&header);
        put_u32(&mut buf, self.tensors.len() as u32);
        for (name, t) in &self.tensors {
            put_u32(&mut buf, name.len() as u32);
            buf.extend_from_slice(name.as_bytes());
            put_u32(&mut buf, 2);
            put_u32(&mut buf, t.nrows() as u32);
            put_u32(&mut buf, t.ncols() as u32);
            for v in t.iter() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let sum = fnv_bytes(&buf);
        buf.extend_from_slice(&sum.to_le_bytes());
        Ok(buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| EcssError::Checkpoint(m.to_string());
        if bytes.len() < 4 + 4 + 8 || &bytes[..4] != MAGIC {
            return Err(bad("not a checkpoint (bad magic)"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(EcssError::Checkpoint(format!(
                "format version {version}, this build reads {CHECKPOINT_VERSION}"
            )));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 8);
        if fnv_bytes(body) != u64::from_le_bytes(tail.try_into().expect("8 bytes")) {
            return Err(bad("checksum mismatch (truncated or corrupted file)"));
        }
        let mut pos = 8;
        let mut take = |n: usize| -> Result<&[u8]> {
            if pos + n > body.len() {
                return Err(bad("unexpected end of data"));
            }
            let s = &body[pos..pos + n];
            pos += n;
            Ok(s)
        };
        let u32_at = |s: &[u8]| u32::from_le_bytes(s.try_into().expect("4 bytes")) as usize;
        let hlen = u32_at(take(4)?);
        let header: CheckpointHeader = serde_json::from_slice(take(hlen)?)?;
        let n = u32_at(take(4)?);
        let mut tensors = Vec::with_capacity(n);
        for _ in 0..n {
            let nl = u32_at(take(4)?);
            let name = String::from_utf8(take(nl)?.to_vec()).map_err(|_| bad("tensor name is not UTF-8"))?;
            let nd = u32_at(take(4)?);
            if nd != 2 {
                return Err(bad("only 2-d tensors are supported"));
            }
            let r = u32_at(take(4)?);
            let c = u32_at(take(4)?);
            let raw = take(8 * r * c)?;
            let vals = raw
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
                .collect();
            tensors.push((name, Array2::from_shape_vec((r, c), vals).expect("sized")));
        }
        if pos != body.len() {
            return Err(bad("trailing bytes after tensors"));
        }
        Ok(Self {
            model_config: header.model,
            train_config: header.train,
            step: header.step,
            adam_t: header.adam_t,
            tensors,
        })
    }
}

pub fn save_checkpoint(tr: &Trainer, path: &Path) -> Result<()> {
    let bytes = Checkpoint::capture(tr).to_bytes()?;
    std::fs::write(path, bytes).map_err(|e| EcssError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| EcssError::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

/// Fields that must agree for a checkpoint to continue a run.
fn compatible(a: &TrainConfig, b: &TrainConfig) -> bool {
    a.ablation == b.ablation
        && a.batch_size == b.batch_size
        && a.context_length == b.context_length
        && a.seed == b.seed
        && a.temperature == b.temperature
        && a.learning_rate == b.learning_rate
        && (a.beta1, a.beta2, a.eps) == (b.beta1, b.beta2, b.eps)
        && a.warmup_steps == b.warmup_steps
}

impl Trainer {
    /// Rebuilds a trainer from a checkpoint. `expected`, when given, must
    /// describe the same model and ablation as the saved run; `steps` and
    /// `threads` are taken from it.
    pub fn resume(ckpt: &Checkpoint, expected: Option<(&ModelConfig, &TrainConfig)>, pool: Vec<Conversation>) -> Result<Self> {
        let mut config = ckpt.train_config.clone();
        if let Some((mc, tc)) = expected {
            if *mc != ckpt.model_config || !compatible(tc, &ckpt.train_config) {
                return Err(EcssError::Checkpoint(format!(
                    "checkpoint was written by a different configuration (saved ablation: {}, requested: {})",
                    ckpt.train_config.ablation.label(),
                    tc.ablation.label()
                )));
            }
            config.steps = tc.steps;
            config.threads = tc.threads;
        }
        let mut tr = Trainer::new(ckpt.model_config.clone(), config, pool)?;
        let by_name: std::collections::HashMap<&str, &Array2<f64>> =
            ckpt.tensors.iter().map(|(n, t)| (n.as_str(), t)).collect();
        if by_name.len() != 3 * tr.model.params.len() {
            return Err(EcssError::Checkpoint(format!(
                "expected {} tensors, found {}",
                3 * tr.model.params.len(),
                by_name.len()
            )));
        }
        let names: Vec<String> = tr.model.params.iter().map(|(_, n, _)| n.to_string()).collect();
        for (i, n) in names.iter().enumerate() {
            let get = |key: &str| {
                by_name
                    .get(key)
                    .map(|t| (*t).clone())
                    .ok_or_else(|| EcssError::Checkpoint(format!("missing tensor `{key}`")))
            };
            tr.model.params.set(n, get(n)?).map_err(|e| EcssError::Checkpoint(e.to_string()))?;
            let m = get(&format!("adam.m.{n}"))?;
            let v = get(&format!("adam.v.{n}"))?;
            if m.dim() != tr.adam.m[i].dim() || v.dim() != tr.adam.v[i].dim() {
                return Err(EcssError::Checkpoint(format!("optimizer state for `{n}` has the wrong shape")));
            }
            tr.adam.m[i] = m;
            tr.adam.v[i] = v;
        }
        tr.adam.t = ckpt.adam_t;
        tr.step = ckpt.step;
        Ok(tr)
    }
}

/// Just the model weights from a checkpoint, for evaluation or inference.
pub fn restore_model(ckpt: &Checkpoint) -> Result<Model> {
    let mut model = Model::new(ckpt.model_config.clone(), 0)?;
    let names: Vec<String> = model.params.iter().map(|(_, n, _)| n.to_string()).collect();
    let by_name: std::collections::HashMap<&str, &Array2<f64>> =
        ckpt.tensors.iter().map(|(n, t)| (n.as_str(), t)).collect();
    for n in &names {
        let t = by_name
            .get(n.as_str())
            .ok_or_else(|| EcssError::Checkpoint(format!("missing tensor `{n}`")))?;
        model.params.set(n, (*t).clone()).map_err(|e| EcssError::Checkpoint(e.to_string()))?;
    }
    Ok(model)
}

/// Writes `contents` to `path`, creating parent directories.
pub(crate) fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| EcssError::io(dir, e))?;
    }
    let mut f = std::fs::File::create(path).map_err(|e| EcssError::io(path, e))?;
    f.write_all(contents).map_err(|e| EcssError::io(path, e))
}
