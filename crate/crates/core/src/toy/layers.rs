//! Dense building blocks with explicit forward caches and backward passes.
//!
//! Every `backward` adds parameter gradients into a structurally identical
//! gradient value and returns the gradient w.r.t. its input(s). Activations
//! are row-major `(positions, features)`.

use ndarray::{s, Array1, Array2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Normal};

const LN_EPS: f64 = 1e-5;

/// Flat access to every parameter tensor, in a fixed order.
pub(crate) trait Tensors {
    fn tensors<'a>(&'a self, out: &mut Vec<&'a [f64]>);
    fn tensors_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>);
}

impl Tensors for Array2<f64> {
    fn tensors<'a>(&'a self, out: &mut Vec<&'a [f64]>) {
        out.push(self.as_slice().expect("standard layout"));
    }
    fn tensors_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        out.push(self.as_slice_mut().expect("standard layout"));
    }
}

impl Tensors for Array1<f64> {
    fn tensors<'a>(&'a self, out: &mut Vec<&'a [f64]>) {
        out.push(self.as_slice().expect("standard layout"));
    }
    fn tensors_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        out.push(self.as_slice_mut().expect("standard layout"));
    }
}

pub(crate) fn normal_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize, std: f64) -> Array2<f64> {
    let dist = Normal::new(0.0, std).expect("finite std");
    Array2::from_shape_simple_fn((rows, cols), || dist.sample(rng))
}

#[derive(Debug, Clone)]
pub struct Linear {
    /// `(in, out)`
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Linear {
    pub fn init<R: Rng>(rng: &mut R, input: usize, output: usize) -> Self {
        Self { w: normal_matrix(rng, input, output, (1.0 / input as f64).sqrt()), b: Array1::zeros(output) }
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.w) + &self.b
    }

    pub fn backward(&self, x: &Array2<f64>, dy: &Array2<f64>, grad: &mut Linear) -> Array2<f64> {
        grad.w += &x.t().dot(dy);
        grad.b += &dy.sum_axis(Axis(0));
        dy.dot(&self.w.t())
    }
}

impl Tensors for Linear {
    fn tensors<'a>(&'a self, out: &mut Vec<&'a [f64]>) {
        self.w.tensors(out);
        self.b.tensors(out);
    }
    fn tensors_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        self.w.tensors_mut(out);
        self.b.tensors_mut(out);
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: Array1<f64>,
    pub bias: Array1<f64>,
}

pub struct LnCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        Self { gain: Array1::ones(dim), bias: Array1::zeros(dim) }
    }

    pub fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, LnCache) {
        let n = x.ncols() as f64;
        let mut xhat = x.clone();
        let mut inv_std = Array1::zeros(x.nrows());
        for (mut row, is) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
            let mean = row.sum() / n;
            row.mapv_inplace(|v| v - mean);
            let var = row.iter().map(|v| v * v).sum::<f64>() / n;
            *is = 1.0 / (var + LN_EPS).sqrt();
            let k = *is;
            row.mapv_inplace(|v| v * k);
        }
        let y = &xhat * &self.gain + &self.bias;
        (y, LnCache { xhat, inv_std })
    }

    pub fn backward(&self, cache: &LnCache, dy: &Array2<f64>, grad: &mut LayerNorm) -> Array2<f64> {
        grad.gain += &(dy * &cache.xhat).sum_axis(Axis(0));
        grad.bias += &dy.sum_axis(Axis(0));
        let n = dy.ncols() as f64;
        let mut dx = dy * &self.gain;
        for ((mut row, xh), &is) in dx.rows_mut().into_iter().zip(cache.xhat.rows()).zip(&cache.inv_std) {
            let sum = row.sum();
            let dot = row.dot(&xh);
            Zip::from(&mut row).and(&xh).for_each(|d, &h| {
                *d = is / n * (n * *d - sum - h * dot);
            });
        }
        dx
    }
}

impl Tensors for LayerNorm {
    fn tensors<'a>(&'a self, out: &mut Vec<&'a [f64]>) {
        self.gain.tensors(out);
        self.bias.tensors(out);
    }
    fn tensors_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        self.gain.tensors_mut(out);
        self.bias.tensors_mut(out);
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

#[derive(Debug, Clone)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

pub struct FfnCache {
    x: Array2<f64>,
    pre: Array2<f64>,
    act: Array2<f64>,
}

impl FeedForward {
    pub fn init<R: Rng>(rng: &mut R, dim: usize, hidden: usize) -> Self {
        Self { up: Linear::init(rng, dim, hidden), down: Linear::init(rng, hidden, dim) }
    }

    pub fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, FfnCache) {
        let pre = self.up.forward(x);
        let act = pre.mapv(gelu);
        let y = self.down.forward(&act);
        (y, FfnCache { x: x.clone(), pre, act })
    }

    pub fn backward(&self, cache: &FfnCache, dy: &Array2<f64>, grad: &mut FeedForward) -> Array2<f64> {
        let dact = self.down.backward(&cache.act, dy, &mut grad.down);
        let dpre = dact * &cache.pre.mapv(gelu_grad);
        self.up.backward(&cache.x, &dpre, &mut grad.up)
    }
}

impl Tensors for FeedForward {
    fn tensors<'a>(&'a self, out: &mut Vec<&'a [f64]>) {
        self.up.tensors(out);
        self.down.tensors(out);
    }
    fn tensors_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        self.up.tensors_mut(out);
        self.down.tensors_mut(out);
    }
}

/// Multi-head scaled dot-product attention.
#[derive(Debug, Clone)]
pub struct Attention {
    pub heads: usize,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
}

pub struct AttnCache {
    xq: Array2<f64>,
    xkv: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    /// Attention probabilities per head, `(queries, keys)`.
    pub probs: Vec<Array2<f64>>,
    ctx: Array2<f64>,
}

fn softmax_rows(m: &mut Array2<f64>) {
    for mut row in m.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let z = row.sum();
        row.mapv_inplace(|v| v / z);
    }
}

impl Attention {
    pub fn init<R: Rng>(rng: &mut R, dim: usize, heads: usize) -> Self {
        Self {
            heads,
            q: Linear::init(rng, dim, dim),
            k: Linear::init(rng, dim, dim),
            v: Linear::init(rng, dim, dim),
            o: Linear::init(rng, dim, dim),
        }
    }

    pub fn forward(&self, xq: &Array2<f64>, xkv: &Array2<f64>, causal: bool) -> (Array2<f64>, AttnCache) {
        let q = self.q.forward(xq);
        let k = self.k.forward(xkv);
        let v = self.v.forward(xkv);
        let dim = q.ncols();
        let dh = dim / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut ctx = Array2::zeros((q.nrows(), dim));
        let mut probs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let mut scores = q.slice(cols).dot(&k.slice(cols).t()) * scale;
            if causal {
                for ((i, j), sc) in scores.indexed_iter_mut() {
                    if j > i {
                        *sc = f64::NEG_INFINITY;
                    }
                }
            }
            softmax_rows(&mut scores);
            ctx.slice_mut(cols).assign(&scores.dot(&v.slice(cols)));
            probs.push(scores);
        }
        let y = self.o.forward(&ctx);
        (y, AttnCache { xq: xq.clone(), xkv: xkv.clone(), q, k, v, probs, ctx })
    }

    /// Returns `(d xq, d xkv)`.
    pub fn backward(&self, cache: &AttnCache, dy: &Array2<f64>, grad: &mut Attention) -> (Array2<f64>, Array2<f64>) {
        let dctx = self.o.backward(&cache.ctx, dy, &mut grad.o);
        let dim = cache.q.ncols();
        let dh = dim / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut dq = Array2::zeros(cache.q.raw_dim());
        let mut dk = Array2::zeros(cache.k.raw_dim());
        let mut dv = Array2::zeros(cache.v.raw_dim());
        for (h, p) in cache.probs.iter().enumerate() {
            let cols = s![.., h * dh..(h + 1) * dh];
            let dctx_h = dctx.slice(cols);
            let dp = dctx_h.dot(&cache.v.slice(cols).t());
            dv.slice_mut(cols).assign(&p.t().dot(&dctx_h));
            let mut ds = dp;
            for (mut drow, prow) in ds.rows_mut().into_iter().zip(p.rows()) {
                let dot = drow.dot(&prow);
                Zip::from(&mut drow).and(&prow).for_each(|d, &pv| *d = pv * (*d - dot) * scale);
            }
            dq.slice_mut(cols).assign(&ds.dot(&cache.k.slice(cols)));
            dk.slice_mut(cols).assign(&ds.t().dot(&cache.q.slice(cols)));
        }
        let dxq = self.q.backward(&cache.xq, &dq, &mut grad.q);
        let dxkv = self.k.backward(&cache.xkv, &dk, &mut grad.k) + self.v.backward(&cache.xkv, &dv, &mut grad.v);
        (dxq, dxkv)
    }
}

impl Tensors for Attention {
    fn tensors<'a>(&'a self, out: &mut Vec<&'a [f64]>) {
        for l in [&self.q, &self.k, &self.v, &self.o] {
            l.tensors(out);
        }
    }
    fn tensors_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        for l in [&mut self.q, &mut self.k, &mut self.v, &mut self.o] {
            l.tensors_mut(out);
        }
    }
}
