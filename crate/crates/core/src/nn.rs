//! Layers shared by the encoders, renderer and synthesizer.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::params::{ParamBuilder, ParamId};
use crate::tape::{Tape, Var};

#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new(pb: &mut ParamBuilder<'_>, name: &str, fan_in: usize, fan_out: usize) -> Self {
        pb.scoped(name, |pb| Linear {
            w: pb.weight("w", fan_in, fan_out, fan_in),
            b: pb.bias("b", fan_out, fan_in),
            fan_in,
            fan_out,
        })
    }

    pub fn forward(&self, t: &mut Tape<'_>, x: Var) -> Var {
        t.linear(x, self.w, self.b)
    }
}

/// Kernel-3 convolution over rows with zero "same" padding.
#[derive(Clone, Copy, Debug)]
pub struct Conv3 {
    pub lin: Linear,
}

impl Conv3 {
    pub fn new(pb: &mut ParamBuilder<'_>, name: &str, in_ch: usize, out_ch: usize) -> Self {
        Conv3 {
            lin: Linear::new(pb, name, 3 * in_ch, out_ch),
        }
    }

    pub fn forward(&self, t: &mut Tape<'_>, x: Var) -> Var {
        let u = t.unfold3(x);
        self.lin.forward(t, u)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(pb: &mut ParamBuilder<'_>, name: &str, dim: usize) -> Self {
        pb.scoped(name, |pb| LayerNorm {
            gain: pb.constant("gain", 1, dim, 1.0),
            bias: pb.constant("bias", 1, dim, 0.0),
        })
    }

    pub fn forward(&self, t: &mut Tape<'_>, x: Var) -> Var {
        let n = t.layer_norm(x);
        let g = t.param(self.gain);
        let b = t.param(self.bias);
        let y = t.mul_row(n, g);
        t.add_row(y, b)
    }
}

/// Inverted dropout driven by a seeded stream; a `None` stream is identity.
pub struct Dropout {
    pub rate: f64,
    rng: Option<ChaCha8Rng>,
}

impl Dropout {
    pub fn disabled() -> Self {
        Self { rate: 0.0, rng: None }
    }

    pub fn seeded(rate: f64, seed: u64) -> Self {
        Self {
            rate,
            rng: (rate > 0.0).then(|| ChaCha8Rng::seed_from_u64(seed)),
        }
    }

    pub fn apply(&mut self, t: &mut Tape<'_>, x: Var) -> Var {
        let Some(rng) = self.rng.as_mut() else { return x };
        let keep = 1.0 - self.rate;
        let (r, c) = t.shape(x);
        let mask = Array2::from_shape_fn((r, c), |_| {
            if rng.random::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        });
        let m = t.constant(mask);
        t.mul(x, m)
    }
}

/// Multi-head scaled dot-product attention with separate query and
/// key/value inputs.
#[derive(Clone, Copy, Debug)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new(
        pb: &mut ParamBuilder<'_>,
        name: &str,
        query_dim: usize,
        kv_dim: usize,
        inner: usize,
        out_dim: usize,
        heads: usize,
    ) -> Self {
        pb.scoped(name, |pb| MultiHeadAttention {
            q: Linear::new(pb, "q", query_dim, inner),
            k: Linear::new(pb, "k", kv_dim, inner),
            v: Linear::new(pb, "v", kv_dim, inner),
            o: Linear::new(pb, "o", inner, out_dim),
            heads,
        })
    }

    /// Returns the output and the per-head attention matrices (`n×m`).
    pub fn forward(&self, t: &mut Tape<'_>, query: Var, kv: Var) -> (Var, Vec<Var>) {
        let q = self.q.forward(t, query);
        let k = self.k.forward(t, kv);
        let v = self.v.forward(t, kv);
        let inner = self.q.fan_out;
        let dh = inner / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        let mut atts = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = t.slice_cols(q, h * dh, (h + 1) * dh);
            let kh = t.slice_cols(k, h * dh, (h + 1) * dh);
            let vh = t.slice_cols(v, h * dh, (h + 1) * dh);
            let kt = t.transpose(kh);
            let s = t.matmul(qh, kt);
            let s = t.scale(s, scale);
            let a = t.softmax_rows(s);
            atts.push(a);
            outs.push(t.matmul(a, vh));
        }
        let cat = if outs.len() == 1 { outs[0] } else { t.concat_cols(&outs) };
        (self.o.forward(t, cat), atts)
    }
}

/// Post-norm transformer block: self-attention and a position-wise
/// feed-forward layer, each with residual and layer norm.
#[derive(Clone, Copy, Debug)]
pub struct FftBlock {
    pub attn: MultiHeadAttention,
    pub ln1: LayerNorm,
    pub ff1: Linear,
    pub ff2: Linear,
    pub ln2: LayerNorm,
}

impl FftBlock {
    pub fn new(pb: &mut ParamBuilder<'_>, name: &str, dim: usize, ffn: usize, heads: usize) -> Self {
        pb.scoped(name, |pb| FftBlock {
            attn: MultiHeadAttention::new(pb, "attn", dim, dim, dim, dim, heads),
            ln1: LayerNorm::new(pb, "ln1", dim),
            ff1: Linear::new(pb, "ff1", dim, ffn),
            ff2: Linear::new(pb, "ff2", ffn, dim),
            ln2: LayerNorm::new(pb, "ln2", dim),
        })
    }

    pub fn forward(&self, t: &mut Tape<'_>, x: Var, drop: &mut Dropout) -> Var {
        let (a, _) = self.attn.forward(t, x, x);
        let a = drop.apply(t, a);
        let x = t.add(x, a);
        let x = self.ln1.forward(t, x);
        let f = self.ff1.forward(t, x);
        let f = t.gelu(f);
        let f = self.ff2.forward(t, f);
        let f = drop.apply(t, f);
        let x2 = t.add(x, f);
        self.ln2.forward(t, x2)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Lstm {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b: ParamId,
    pub hidden: usize,
}

impl Lstm {
    pub fn new(pb: &mut ParamBuilder<'_>, name: &str, input: usize, hidden: usize) -> Self {
        pb.scoped(name, |pb| Lstm {
            w_ih: pb.weight("w_ih", input, 4 * hidden, hidden),
            w_hh: pb.weight("w_hh", hidden, 4 * hidden, hidden),
            b: pb.bias("b", 4 * hidden, hidden),
            hidden,
        })
    }

    /// Runs over the rows of `x` in the given order; returns one hidden
    /// state per visited row, in visiting order. Gates are `[i, f, g, o]`.
    fn run(&self, t: &mut Tape<'_>, x: Var, order: &[usize]) -> Vec<Var> {
        let h_dim = self.hidden;
        let wih = t.param(self.w_ih);
        let whh = t.param(self.w_hh);
        let b = t.param(self.b);
        let xw = t.matmul(x, wih);
        let xw = t.add_row(xw, b);
        let mut h: Option<Var> = None;
        let mut c: Option<Var> = None;
        let mut outs = Vec::with_capacity(order.len());
        for &r in order {
            let mut z = t.slice_rows(xw, r, r + 1);
            if let Some(hp) = h {
                let rec = t.matmul(hp, whh);
                z = t.add(z, rec);
            }
            let ig = t.slice_cols(z, 0, h_dim);
            let fg = t.slice_cols(z, h_dim, 2 * h_dim);
            let gg = t.slice_cols(z, 2 * h_dim, 3 * h_dim);
            let og = t.slice_cols(z, 3 * h_dim, 4 * h_dim);
            let i = t.sigmoid(ig);
            let f = t.sigmoid(fg);
            let g = t.tanh(gg);
            let o = t.sigmoid(og);
            let ig_ = t.mul(i, g);
            let c_new = match c {
                Some(cp) => {
                    let keep = t.mul(f, cp);
                    t.add(keep, ig_)
                }
                None => ig_,
            };
            let tc = t.tanh(c_new);
            let h_new = t.mul(o, tc);
            outs.push(h_new);
            h = Some(h_new);
            c = Some(c_new);
        }
        outs
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BiLstm {
    pub fwd: Lstm,
    pub bwd: Lstm,
}

pub struct BiLstmOutput {
    /// `T × 2h`, row `t` is `[forward_t, backward_t]`.
    pub sequence: Var,
    /// `1 × 2h`: last forward state and last backward state.
    pub summary: Var,
}

impl BiLstm {
    pub fn new(pb: &mut ParamBuilder<'_>, name: &str, input: usize, hidden: usize) -> Self {
        pb.scoped(name, |pb| BiLstm {
            fwd: Lstm::new(pb, "fwd", input, hidden),
            bwd: Lstm::new(pb, "bwd", input, hidden),
        })
    }

    pub fn forward(&self, t: &mut Tape<'_>, x: Var) -> BiLstmOutput {
        let n = t.shape(x).0;
        let order: Vec<usize> = (0..n).collect();
        let rev: Vec<usize> = (0..n).rev().collect();
        let f = self.fwd.run(t, x, &order);
        let mut b = self.bwd.run(t, x, &rev);
        let b_last = *b.last().expect("non-empty sequence");
        b.reverse();
        let rows: Vec<Var> = f.iter().zip(&b).map(|(&fi, &bi)| t.concat_cols(&[fi, bi])).collect();
        let sequence = t.concat_rows(&rows);
        let summary = t.concat_cols(&[f[n - 1], b_last]);
        BiLstmOutput { sequence, summary }
    }
}

/// Standard sinusoidal position table (`n × dim`).
pub fn sinusoidal_positions(n: usize, dim: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, dim), |(pos, i)| {
        let pair = (i / 2) as f64;
        let angle = pos as f64 / 10000f64.powf(2.0 * pair / dim as f64);
        if i % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}
