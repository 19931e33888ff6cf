//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records every operation of one forward pass. Values are
//! `Array2<f64>`; vectors are `1×d` rows and scalars are `1×1`. Parameter
//! leaves borrow from the [`ParamStore`] instead of copying it, so a tape
//! per batch item is cheap. [`Tape::backward`] walks the record in reverse
//! and returns gradients for the parameters that were read.
//!
//! Besides the usual dense ops, the tape carries the handful of indexed
//! kernels that graph attention needs (row gather/scatter, per-segment
//! softmax, per-head block products) so a whole heterogeneous layer stays
//! at a few hundred nodes.

use std::collections::HashMap;

use ndarray::{s, Array2, Axis};

use crate::params::{Grads, ParamId, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    MulScalar(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Abs(Var),
    SoftmaxRows(Var),
    LayerNorm(Var),
    Transpose(Var),
    GatherRows(Var, Vec<usize>),
    ScatterAddRows(Var, Vec<usize>),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize, usize),
    SliceCols(Var, usize, usize),
    SumAll(Var),
    MeanAll(Var),
    MeanRows(Var),
    SegmentSoftmax(Var, Vec<usize>),
    BlockDiagMatMul(Var, Var, usize),
    HeadDot(Var, Var, usize),
    HeadScale(Var, Var, usize),
    RepeatRows(Var, Vec<usize>),
    Unfold3(Var),
    AvgPool2(Var),
}

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub struct Tape<'a> {
    store: &'a ParamStore,
    values: Vec<Array2<f64>>,
    ops: Vec<Op>,
    param_vars: HashMap<ParamId, Var>,
}

impl<'a> Tape<'a> {
    pub fn new(store: &'a ParamStore) -> Self {
        Self {
            store,
            values: Vec::with_capacity(1024),
            ops: Vec::with_capacity(1024),
            param_vars: HashMap::new(),
        }
    }

    pub fn store(&self) -> &'a ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.values.push(value);
        self.ops.push(op);
        Var(self.ops.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        match &self.ops[v.0] {
            Op::Param(id) => self.store.get(*id),
            _ => &self.values[v.0],
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).dim()
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let x = self.value(v);
        debug_assert_eq!(x.dim(), (1, 1));
        x[[0, 0]]
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn row(&mut self, values: &[f64]) -> Var {
        let a = Array2::from_shape_vec((1, values.len()), values.to_vec()).expect("row shape");
        self.constant(a)
    }

    /// Parameter leaf; repeated reads share one node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars.get(&id) {
            return *v;
        }
        let v = self.push(Array2::zeros((0, 0)), Op::Param(id));
        self.param_vars.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).dot(self.value(b));
        self.push(out, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) + self.value(b);
        self.push(out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) - self.value(b);
        self.push(out, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a) * self.value(b);
        self.push(out, Op::Mul(a, b))
    }

    /// `a[n×d] + row[1×d]` broadcast over rows.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let r = self.value(row);
        assert_eq!(r.nrows(), 1, "add_row expects a 1×d row");
        let out = self.value(a) + r;
        self.push(out, Op::AddRow(a, row))
    }

    /// `a[n×d] * row[1×d]` broadcast over rows.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let r = self.value(row);
        assert_eq!(r.nrows(), 1, "mul_row expects a 1×d row");
        let out = self.value(a) * r;
        self.push(out, Op::MulRow(a, row))
    }

    /// `a[n×d] * col[n×1]` broadcast over columns.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Var {
        let c = self.value(col);
        assert_eq!(c.ncols(), 1, "mul_col expects an n×1 column");
        let out = self.value(a) * c;
        self.push(out, Op::MulCol(a, col))
    }

    /// `a * s` where `s` is a `1×1` variable.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Var {
        let k = self.scalar(s);
        let out = self.value(a) * k;
        self.push(out, Op::MulScalar(a, s))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a) * k;
        self.push(out, Op::Scale(a, k))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(gelu);
        self.push(out, Op::Gelu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(f64::abs);
        self.push(out, Op::Abs(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for mut row in out.rows_mut() {
            let m = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            row.mapv_inplace(|x| (x - m).exp());
            let z = row.sum();
            row.mapv_inplace(|x| x / z);
        }
        self.push(out, Op::SoftmaxRows(a))
    }

    /// Row-wise standardisation without affine terms.
    pub fn layer_norm(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for mut row in out.rows_mut() {
            let n = row.len() as f64;
            let mean = row.sum() / n;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            row.mapv_inplace(|x| (x - mean) * inv);
        }
        self.push(out, Op::LayerNorm(a))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).t().to_owned();
        self.push(out, Op::Transpose(a))
    }

    pub fn gather_rows(&mut self, a: Var, idx: Vec<usize>) -> Var {
        let src = self.value(a);
        let out = src.select(Axis(0), &idx);
        self.push(out, Op::GatherRows(a, idx))
    }

    /// `out[idx[e]] += a[e]` into `n` rows.
    pub fn scatter_add_rows(&mut self, a: Var, idx: Vec<usize>, n: usize) -> Var {
        let src = self.value(a);
        let mut out = Array2::zeros((n, src.ncols()));
        for (e, &t) in idx.iter().enumerate() {
            let mut row = out.row_mut(t);
            row += &src.row(e);
        }
        self.push(out, Op::ScatterAddRows(a, idx))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let out = ndarray::concatenate(Axis(0), &views).expect("concat_rows widths differ");
        self.push(out, Op::ConcatRows(parts.to_vec()))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let out = ndarray::concatenate(Axis(1), &views).expect("concat_cols heights differ");
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        let out = self.value(a).slice(s![start..end, ..]).to_owned();
        self.push(out, Op::SliceRows(a, start, end))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let out = self.value(a).slice(s![.., start..end]).to_owned();
        self.push(out, Op::SliceCols(a, start, end))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let out = Array2::from_elem((1, 1), self.value(a).sum());
        self.push(out, Op::SumAll(a))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let out = Array2::from_elem((1, 1), x.sum() / x.len() as f64);
        self.push(out, Op::MeanAll(a))
    }

    /// Mean over rows, giving `1×d`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let out = x.mean_axis(Axis(0)).expect("mean of empty").insert_axis(Axis(0));
        self.push(out, Op::MeanRows(a))
    }

    /// Softmax down each column, independently within each group of rows
    /// sharing a segment id.
    pub fn segment_softmax(&mut self, a: Var, seg: Vec<usize>, n_seg: usize) -> Var {
        let x = self.value(a);
        let cols = x.ncols();
        let mut max = Array2::from_elem((n_seg, cols), f64::NEG_INFINITY);
        for (e, &g) in seg.iter().enumerate() {
            for c in 0..cols {
                max[[g, c]] = max[[g, c]].max(x[[e, c]]);
            }
        }
        let mut out = Array2::zeros(x.dim());
        let mut z = Array2::<f64>::zeros((n_seg, cols));
        for (e, &g) in seg.iter().enumerate() {
            for c in 0..cols {
                let v = (x[[e, c]] - max[[g, c]]).exp();
                out[[e, c]] = v;
                z[[g, c]] += v;
            }
        }
        for (e, &g) in seg.iter().enumerate() {
            for c in 0..cols {
                out[[e, c]] /= z[[g, c]];
            }
        }
        self.push(out, Op::SegmentSoftmax(a, seg))
    }

    /// Per-head product: `y[:, h] = x[:, h] · w[h]` where `w` stacks one
    /// `dh×dh` block per head (`heads·dh × dh`).
    pub fn block_diag_matmul(&mut self, x: Var, w: Var, heads: usize) -> Var {
        let xv = self.value(x);
        let wv = self.value(w);
        let dh = wv.ncols();
        assert_eq!(wv.nrows(), heads * dh);
        assert_eq!(xv.ncols(), heads * dh);
        let mut out = Array2::zeros(xv.dim());
        for h in 0..heads {
            let r = h * dh..(h + 1) * dh;
            let y = xv.slice(s![.., r.clone()]).dot(&wv.slice(s![r.clone(), ..]));
            out.slice_mut(s![.., r]).assign(&y);
        }
        self.push(out, Op::BlockDiagMatMul(x, w, heads))
    }

    /// Row-wise dot product per head block, giving `n×heads`.
    pub fn head_dot(&mut self, a: Var, b: Var, heads: usize) -> Var {
        let av = self.value(a);
        let bv = self.value(b);
        let dh = av.ncols() / heads;
        let mut out = Array2::zeros((av.nrows(), heads));
        for e in 0..av.nrows() {
            for h in 0..heads {
                let mut acc = 0.0;
                for j in h * dh..(h + 1) * dh {
                    acc += av[[e, j]] * bv[[e, j]];
                }
                out[[e, h]] = acc;
            }
        }
        self.push(out, Op::HeadDot(a, b, heads))
    }

    /// Scales each head block of `m[n×heads·dh]` by `w[n×heads]`.
    pub fn head_scale(&mut self, m: Var, w: Var, heads: usize) -> Var {
        let mv = self.value(m);
        let wv = self.value(w);
        let dh = mv.ncols() / heads;
        let mut out = mv.clone();
        for e in 0..mv.nrows() {
            for j in 0..mv.ncols() {
                out[[e, j]] *= wv[[e, j / dh]];
            }
        }
        self.push(out, Op::HeadScale(m, w, heads))
    }

    /// Length regulation: row `i` is repeated `counts[i]` times.
    pub fn repeat_rows(&mut self, a: Var, counts: Vec<usize>) -> Var {
        let x = self.value(a);
        assert_eq!(x.nrows(), counts.len());
        let idx: Vec<usize> = counts
            .iter()
            .enumerate()
            .flat_map(|(i, &c)| std::iter::repeat_n(i, c))
            .collect();
        let out = x.select(Axis(0), &idx);
        self.push(out, Op::RepeatRows(a, counts))
    }

    /// `[T×C] -> [T×3C]` rows `[x[t-1], x[t], x[t+1]]` with zero padding.
    pub fn unfold3(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let (t, c) = x.dim();
        let mut out = Array2::zeros((t, 3 * c));
        for i in 0..t {
            if i > 0 {
                out.slice_mut(s![i, 0..c]).assign(&x.row(i - 1));
            }
            out.slice_mut(s![i, c..2 * c]).assign(&x.row(i));
            if i + 1 < t {
                out.slice_mut(s![i, 2 * c..3 * c]).assign(&x.row(i + 1));
            }
        }
        self.push(out, Op::Unfold3(a))
    }

    /// Kernel-2, stride-1 average pooling over rows; a single row passes through.
    pub fn avg_pool2(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let t = x.nrows();
        let out = if t == 1 {
            x.clone()
        } else {
            let top = x.slice(s![0..t - 1, ..]);
            let bot = x.slice(s![1..t, ..]);
            (&top + &bot) * 0.5
        };
        self.push(out, Op::AvgPool2(a))
    }

    /// Convenience: `x·w + b`.
    pub fn linear(&mut self, x: Var, w: ParamId, b: ParamId) -> Var {
        let wv = self.param(w);
        let bv = self.param(b);
        let y = self.matmul(x, wv);
        self.add_row(y, bv)
    }

    /// Backpropagates from `root` (a `1×1` scalar) with unit seed.
    pub fn backward(&self, root: Var) -> Grads {
        let seed = Array2::from_elem(self.shape(root), 1.0);
        self.backward_seeded(&[(root, seed)])
    }

    /// Backpropagates arbitrary upstream gradients into parameter gradients.
    pub fn backward_seeded(&self, seeds: &[(Var, Array2<f64>)]) -> Grads {
        let n = self.ops.len();
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; n];
        for (v, g) in seeds {
            assert_eq!(self.shape(*v), g.dim(), "seed shape mismatch");
            acc(&mut grads, *v, g.clone());
        }
        let mut out = Grads::for_store(self.store);
        for i in (0..n).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, g, &mut grads, &mut out);
        }
        out
    }

    fn propagate(&self, i: usize, g: Array2<f64>, grads: &mut [Option<Array2<f64>>], out: &mut Grads) {
        let y = &self.values[i];
        match &self.ops[i] {
            Op::Leaf => {}
            Op::Param(id) => out.accumulate_owned(*id, g),
            Op::MatMul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let ga = g.dot(&bv.t());
                let gb = av.t().dot(&g);
                acc(grads, *a, ga);
                acc(grads, *b, gb);
            }
            Op::Add(a, b) => {
                acc(grads, *a, g.clone());
                acc(grads, *b, g);
            }
            Op::Sub(a, b) => {
                acc(grads, *b, -&g);
                acc(grads, *a, g);
            }
            Op::Mul(a, b) => {
                let ga = &g * self.value(*b);
                let gb = &g * self.value(*a);
                acc(grads, *a, ga);
                acc(grads, *b, gb);
            }
            Op::AddRow(a, r) => {
                let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                acc(grads, *r, gr);
                acc(grads, *a, g);
            }
            Op::MulRow(a, r) => {
                let gr = (&g * self.value(*a)).sum_axis(Axis(0)).insert_axis(Axis(0));
                let ga = &g * self.value(*r);
                acc(grads, *r, gr);
                acc(grads, *a, ga);
            }
            Op::MulCol(a, c) => {
                let av = self.value(*a);
                let gc = (&g * av).sum_axis(Axis(1)).insert_axis(Axis(1));
                let ga = &g * self.value(*c);
                acc(grads, *c, gc);
                acc(grads, *a, ga);
            }
            Op::MulScalar(a, s) => {
                let k = self.scalar(*s);
                let gs = (&g * self.value(*a)).sum();
                acc(grads, *s, Array2::from_elem((1, 1), gs));
                acc(grads, *a, g * k);
            }
            Op::Scale(a, k) => acc(grads, *a, g * *k),
            Op::Gelu(a) => {
                let x = self.value(*a);
                let mut ga = g;
                ga.zip_mut_with(x, |gi, &xi| *gi *= gelu_grad(xi));
                acc(grads, *a, ga);
            }
            Op::Tanh(a) => {
                let mut ga = g;
                ga.zip_mut_with(y, |gi, &yi| *gi *= 1.0 - yi * yi);
                acc(grads, *a, ga);
            }
            Op::Sigmoid(a) => {
                let mut ga = g;
                ga.zip_mut_with(y, |gi, &yi| *gi *= yi * (1.0 - yi));
                acc(grads, *a, ga);
            }
            Op::Abs(a) => {
                let x = self.value(*a);
                let mut ga = g;
                ga.zip_mut_with(x, |gi, &xi| {
                    *gi *= if xi > 0.0 {
                        1.0
                    } else if xi < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                });
                acc(grads, *a, ga);
            }
            Op::SoftmaxRows(a) => {
                let mut ga = g;
                for (mut gr, yr) in ga.rows_mut().into_iter().zip(y.rows()) {
                    let dot: f64 = gr.iter().zip(yr.iter()).map(|(a, b)| a * b).sum();
                    gr.zip_mut_with(&yr, |gi, &yi| *gi = yi * (*gi - dot));
                }
                acc(grads, *a, ga);
            }
            Op::LayerNorm(a) => {
                let x = self.value(*a);
                let mut ga = g;
                for ((mut gr, yr), xr) in ga.rows_mut().into_iter().zip(y.rows()).zip(x.rows()) {
                    let n = xr.len() as f64;
                    let mean = xr.sum() / n;
                    let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                    let inv = 1.0 / (var + LN_EPS).sqrt();
                    let gm = gr.sum() / n;
                    let gy = gr.iter().zip(yr.iter()).map(|(a, b)| a * b).sum::<f64>() / n;
                    gr.zip_mut_with(&yr, |gi, &yi| *gi = inv * (*gi - gm - yi * gy));
                }
                acc(grads, *a, ga);
            }
            Op::Transpose(a) => acc(grads, *a, g.t().to_owned()),
            Op::GatherRows(a, idx) => {
                let mut ga = Array2::zeros(self.shape(*a));
                for (e, &r) in idx.iter().enumerate() {
                    let mut row = ga.row_mut(r);
                    row += &g.row(e);
                }
                acc(grads, *a, ga);
            }
            Op::ScatterAddRows(a, idx) => {
                let ga = g.select(Axis(0), idx);
                acc(grads, *a, ga);
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let r = self.shape(*p).0;
                    acc(grads, *p, g.slice(s![off..off + r, ..]).to_owned());
                    off += r;
                }
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for p in parts {
                    let c = self.shape(*p).1;
                    acc(grads, *p, g.slice(s![.., off..off + c]).to_owned());
                    off += c;
                }
            }
            Op::SliceRows(a, st, en) => {
                let mut ga = Array2::zeros(self.shape(*a));
                ga.slice_mut(s![*st..*en, ..]).assign(&g);
                acc(grads, *a, ga);
            }
            Op::SliceCols(a, st, en) => {
                let mut ga = Array2::zeros(self.shape(*a));
                ga.slice_mut(s![.., *st..*en]).assign(&g);
                acc(grads, *a, ga);
            }
            Op::SumAll(a) => {
                let ga = Array2::from_elem(self.shape(*a), g[[0, 0]]);
                acc(grads, *a, ga);
            }
            Op::MeanAll(a) => {
                let sh = self.shape(*a);
                let ga = Array2::from_elem(sh, g[[0, 0]] / (sh.0 * sh.1) as f64);
                acc(grads, *a, ga);
            }
            Op::MeanRows(a) => {
                let sh = self.shape(*a);
                let row = g.row(0).mapv(|v| v / sh.0 as f64);
                let ga = row.broadcast(sh).expect("broadcast").to_owned();
                acc(grads, *a, ga);
            }
            Op::SegmentSoftmax(a, seg) => {
                let cols = y.ncols();
                let n_seg = seg.iter().copied().max().map_or(0, |m| m + 1);
                let mut dots = Array2::<f64>::zeros((n_seg, cols));
                for (e, &sg) in seg.iter().enumerate() {
                    for c in 0..cols {
                        dots[[sg, c]] += g[[e, c]] * y[[e, c]];
                    }
                }
                let mut ga = Array2::zeros(y.dim());
                for (e, &sg) in seg.iter().enumerate() {
                    for c in 0..cols {
                        ga[[e, c]] = y[[e, c]] * (g[[e, c]] - dots[[sg, c]]);
                    }
                }
                acc(grads, *a, ga);
            }
            Op::BlockDiagMatMul(x, w, heads) => {
                let xv = self.value(*x);
                let wv = self.value(*w);
                let dh = wv.ncols();
                let mut gx = Array2::zeros(xv.dim());
                let mut gw = Array2::zeros(wv.dim());
                for h in 0..*heads {
                    let r = h * dh..(h + 1) * dh;
                    let gh = g.slice(s![.., r.clone()]);
                    let wh = wv.slice(s![r.clone(), ..]);
                    let xh = xv.slice(s![.., r.clone()]);
                    gx.slice_mut(s![.., r.clone()]).assign(&gh.dot(&wh.t()));
                    gw.slice_mut(s![r, ..]).assign(&xh.t().dot(&gh));
                }
                acc(grads, *x, gx);
                acc(grads, *w, gw);
            }
            Op::HeadDot(a, b, heads) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let dh = av.ncols() / heads;
                let mut ga = Array2::zeros(av.dim());
                let mut gb = Array2::zeros(bv.dim());
                for e in 0..av.nrows() {
                    for j in 0..av.ncols() {
                        let ge = g[[e, j / dh]];
                        ga[[e, j]] = ge * bv[[e, j]];
                        gb[[e, j]] = ge * av[[e, j]];
                    }
                }
                acc(grads, *a, ga);
                acc(grads, *b, gb);
            }
            Op::HeadScale(m, w, heads) => {
                let mv = self.value(*m);
                let wv = self.value(*w);
                let dh = mv.ncols() / heads;
                let mut gm = Array2::zeros(mv.dim());
                let mut gw = Array2::zeros(wv.dim());
                for e in 0..mv.nrows() {
                    for j in 0..mv.ncols() {
                        gm[[e, j]] = g[[e, j]] * wv[[e, j / dh]];
                        gw[[e, j / dh]] += g[[e, j]] * mv[[e, j]];
                    }
                }
                acc(grads, *m, gm);
                acc(grads, *w, gw);
            }
            Op::RepeatRows(a, counts) => {
                let mut ga = Array2::zeros(self.shape(*a));
                let mut f = 0;
                for (i, &c) in counts.iter().enumerate() {
                    for _ in 0..c {
                        let mut row = ga.row_mut(i);
                        row += &g.row(f);
                        f += 1;
                    }
                }
                acc(grads, *a, ga);
            }
            Op::Unfold3(a) => {
                let (t, c) = self.shape(*a);
                let mut ga = Array2::zeros((t, c));
                for i in 0..t {
                    if i > 0 {
                        let mut r = ga.row_mut(i - 1);
                        r += &g.slice(s![i, 0..c]);
                    }
                    {
                        let mut r = ga.row_mut(i);
                        r += &g.slice(s![i, c..2 * c]);
                    }
                    if i + 1 < t {
                        let mut r = ga.row_mut(i + 1);
                        r += &g.slice(s![i, 2 * c..3 * c]);
                    }
                }
                acc(grads, *a, ga);
            }
            Op::AvgPool2(a) => {
                let (t, c) = self.shape(*a);
                if t == 1 {
                    acc(grads, *a, g);
                } else {
                    let mut ga = Array2::zeros((t, c));
                    for i in 0..t - 1 {
                        let half = g.row(i).mapv(|v| 0.5 * v);
                        {
                            let mut r = ga.row_mut(i);
                            r += &half;
                        }
                        let mut r = ga.row_mut(i + 1);
                        r += &half;
                    }
                    acc(grads, *a, ga);
                }
            }
        }
    }
}

fn acc(grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
    match &mut grads[v.0] {
        Some(x) => *x += &g,
        slot @ None => *slot = Some(g),
    }
}
