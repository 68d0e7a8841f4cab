use ndarray::{s, Array1, Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::layers::{normal_matrix, AttnCache, Attention, FeedForward, FfnCache, LayerNorm, Linear, LnCache, Tensors};
use crate::backend::{pool_attention, Attentive, Backend, Differentiable, Mode};
use crate::distribution::TokenDistribution;
use crate::document::{Document, Prefix};
use crate::error::{Error, Result};
use crate::vocab::{TokenId, Vocab};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ToyModelConfig {
    pub layers: usize,
    pub heads: usize,
    pub embed_dim: usize,
    pub ffn_dim: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for ToyModelConfig {
    fn default() -> Self {
        Self { layers: 2, heads: 2, embed_dim: 64, ffn_dim: 128, max_len: 128, seed: 0 }
    }
}

impl ToyModelConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [self.layers, self.heads, self.embed_dim, self.ffn_dim, self.max_len];
        if counts.contains(&0) {
            return Err(Error::Config("model dimensions must all be at least 1".into()));
        }
        if self.embed_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "embed_dim {} not divisible by {} heads",
                self.embed_dim, self.heads
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct EncBlock {
    ln_attn: LayerNorm,
    attn: Attention,
    ln_ffn: LayerNorm,
    ffn: FeedForward,
}

#[derive(Debug, Clone)]
struct CrossBlock {
    ln: LayerNorm,
    attn: Attention,
}

#[derive(Debug, Clone)]
struct DecBlock {
    ln_self: LayerNorm,
    self_attn: Attention,
    cross: Option<CrossBlock>,
    ln_ffn: LayerNorm,
    ffn: FeedForward,
}

/// All trainable tensors. Gradients use the same type.
#[derive(Debug, Clone)]
pub(crate) struct Params {
    tok: Array2<f64>,
    pos: Array2<f64>,
    enc: Vec<EncBlock>,
    enc_norm: LayerNorm,
    dec: Vec<DecBlock>,
    dec_norm: LayerNorm,
    head: Linear,
}

impl Tensors for Params {
    fn tensors<'a>(&'a self, out: &mut Vec<&'a [f64]>) {
        self.tok.tensors(out);
        self.pos.tensors(out);
        for b in &self.enc {
            b.ln_attn.tensors(out);
            b.attn.tensors(out);
            b.ln_ffn.tensors(out);
            b.ffn.tensors(out);
        }
        self.enc_norm.tensors(out);
        for b in &self.dec {
            b.ln_self.tensors(out);
            b.self_attn.tensors(out);
            if let Some(c) = &b.cross {
                c.ln.tensors(out);
                c.attn.tensors(out);
            }
            b.ln_ffn.tensors(out);
            b.ffn.tensors(out);
        }
        self.dec_norm.tensors(out);
        self.head.tensors(out);
    }

    fn tensors_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        self.tok.tensors_mut(out);
        self.pos.tensors_mut(out);
        for b in &mut self.enc {
            b.ln_attn.tensors_mut(out);
            b.attn.tensors_mut(out);
            b.ln_ffn.tensors_mut(out);
            b.ffn.tensors_mut(out);
        }
        self.enc_norm.tensors_mut(out);
        for b in &mut self.dec {
            b.ln_self.tensors_mut(out);
            b.self_attn.tensors_mut(out);
            if let Some(c) = &mut b.cross {
                c.ln.tensors_mut(out);
                c.attn.tensors_mut(out);
            }
            b.ln_ffn.tensors_mut(out);
            b.ffn.tensors_mut(out);
        }
        self.dec_norm.tensors_mut(out);
        self.head.tensors_mut(out);
    }
}

impl Params {
    fn init(cfg: &ToyModelConfig, vocab_size: usize, lm_only: bool) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let d = cfg.embed_dim;
        let emb_std = (1.0 / d as f64).sqrt();
        let tok = normal_matrix(&mut rng, vocab_size, d, emb_std);
        let pos = normal_matrix(&mut rng, cfg.max_len, d, emb_std);
        let enc_layers = if lm_only { 0 } else { cfg.layers };
        let enc = (0..enc_layers)
            .map(|_| EncBlock {
                ln_attn: LayerNorm::new(d),
                attn: Attention::init(&mut rng, d, cfg.heads),
                ln_ffn: LayerNorm::new(d),
                ffn: FeedForward::init(&mut rng, d, cfg.ffn_dim),
            })
            .collect();
        let dec = (0..cfg.layers)
            .map(|_| DecBlock {
                ln_self: LayerNorm::new(d),
                self_attn: Attention::init(&mut rng, d, cfg.heads),
                cross: (!lm_only).then(|| CrossBlock { ln: LayerNorm::new(d), attn: Attention::init(&mut rng, d, cfg.heads) }),
                ln_ffn: LayerNorm::new(d),
                ffn: FeedForward::init(&mut rng, d, cfg.ffn_dim),
            })
            .collect();
        let head = Linear::init(&mut rng, d, vocab_size);
        Self { tok, pos, enc, enc_norm: LayerNorm::new(d), dec, dec_norm: LayerNorm::new(d), head }
    }

    pub(crate) fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        let mut ts = Vec::new();
        z.tensors_mut(&mut ts);
        ts.into_iter().for_each(|t| t.fill(0.0));
        z
    }

    pub(crate) fn flat(&self) -> Vec<&[f64]> {
        let mut ts = Vec::new();
        self.tensors(&mut ts);
        ts
    }

    pub(crate) fn flat_mut(&mut self) -> Vec<&mut [f64]> {
        let mut ts = Vec::new();
        self.tensors_mut(&mut ts);
        ts
    }

    fn len(&self) -> usize {
        self.flat().iter().map(|t| t.len()).sum()
    }
}

struct EncTrace {
    ln_attn: LnCache,
    attn: AttnCache,
    ln_ffn: LnCache,
    ffn: FfnCache,
}

struct DecTrace {
    ln_self: LnCache,
    self_attn: AttnCache,
    cross: Option<(LnCache, AttnCache)>,
    ln_ffn: LnCache,
    ffn: FfnCache,
}

/// Everything the backward pass needs from one forward pass.
pub(crate) struct Trace {
    src_len: usize,
    enc: Vec<EncTrace>,
    enc_norm: Option<LnCache>,
    memory: Option<Array2<f64>>,
    tgt: Vec<TokenId>,
    dec: Vec<DecTrace>,
    dec_norm: LnCache,
    normed: Array2<f64>,
    pub(crate) logits: Array2<f64>,
}

/// Encoder-decoder transformer small enough to train on a laptop CPU, with
/// hand-written gradients for every layer. With `lm_only` the encoder and
/// all cross-attention are absent and the source is never read.
#[derive(Debug, Clone)]
pub struct ToyTransformer {
    config: ToyModelConfig,
    lm_only: bool,
    vocab: Vocab,
    pub(crate) params: Params,
}

impl ToyTransformer {
    pub fn new(config: ToyModelConfig, vocab: Vocab, lm_only: bool) -> Result<Self> {
        config.validate()?;
        let params = Params::init(&config, vocab.len(), lm_only);
        Ok(Self { config, lm_only, vocab, params })
    }

    pub(crate) fn from_params(config: ToyModelConfig, vocab: Vocab, lm_only: bool, flat: &[f64]) -> Result<Self> {
        let mut model = Self::new(config, vocab, lm_only)?;
        if flat.len() != model.param_count() {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {} parameters, model expects {}",
                flat.len(),
                model.param_count()
            )));
        }
        let mut offset = 0;
        for t in model.params.flat_mut() {
            t.copy_from_slice(&flat[offset..offset + t.len()]);
            offset += t.len();
        }
        Ok(model)
    }

    pub fn config(&self) -> &ToyModelConfig {
        &self.config
    }

    pub fn is_lm_only(&self) -> bool {
        self.lm_only
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Parameters flattened in a fixed order.
    pub fn flat_params(&self) -> Vec<f64> {
        self.params.flat().concat()
    }

    /// SOS, the given piece embeddings, EOS.
    fn source_matrix(&self, pieces: ArrayView2<f64>) -> Array2<f64> {
        let d = self.config.embed_dim;
        let mut m = Array2::zeros((pieces.nrows() + 2, d));
        m.row_mut(0).assign(&self.params.tok.row(self.vocab.sos()));
        m.slice_mut(s![1..pieces.nrows() + 1, ..]).assign(&pieces);
        m.row_mut(pieces.nrows() + 1).assign(&self.params.tok.row(self.vocab.eos()));
        m
    }

    fn token_rows(&self, ids: &[TokenId]) -> Array2<f64> {
        let mut m = Array2::zeros((ids.len(), self.config.embed_dim));
        for (mut row, &id) in m.rows_mut().into_iter().zip(ids) {
            row.assign(&self.params.tok.row(id));
        }
        m
    }

    fn check_ids(&self, ids: &[TokenId]) -> Result<()> {
        match ids.iter().find(|&&i| i >= self.vocab.len()) {
            Some(&bad) => Err(Error::Index { index: bad, len: self.vocab.len() }),
            None => Ok(()),
        }
    }

    /// Forward pass. `src` holds token embeddings including SOS/EOS rows and
    /// is ignored by language-model-only models.
    pub(crate) fn forward(&self, src: Option<&Array2<f64>>, tgt: &[TokenId]) -> Result<Trace> {
        let p = &self.params;
        let max = self.config.max_len;
        self.check_ids(tgt)?;
        if tgt.is_empty() || tgt.len() > max {
            return Err(Error::Config(format!("decoder length {} outside 1..={max}", tgt.len())));
        }
        let mut enc_traces = Vec::new();
        let mut enc_norm = None;
        let mut memory = None;
        let mut src_len = 0;
        if let (false, Some(src)) = (self.lm_only, src) {
            src_len = src.nrows();
            if src_len > max {
                return Err(Error::Config(format!("source length {src_len} exceeds max_len {max}")));
            }
            let mut x = src + &p.pos.slice(s![..src_len, ..]);
            for b in &p.enc {
                let (a, ln_attn) = b.ln_attn.forward(&x);
                let (att, attn) = b.attn.forward(&a, &a, false);
                x += &att;
                let (f, ln_ffn) = b.ln_ffn.forward(&x);
                let (ff, ffn) = b.ffn.forward(&f);
                x += &ff;
                enc_traces.push(EncTrace { ln_attn, attn, ln_ffn, ffn });
            }
            let (m, c) = p.enc_norm.forward(&x);
            enc_norm = Some(c);
            memory = Some(m);
        }
        let mut y = self.token_rows(tgt) + &p.pos.slice(s![..tgt.len(), ..]);
        let mut dec_traces = Vec::with_capacity(p.dec.len());
        for b in &p.dec {
            let (a, ln_self) = b.ln_self.forward(&y);
            let (sa, self_attn) = b.self_attn.forward(&a, &a, true);
            y += &sa;
            let cross = match (&b.cross, &memory) {
                (Some(cb), Some(mem)) => {
                    let (c, lnc) = cb.ln.forward(&y);
                    let (ca, ac) = cb.attn.forward(&c, mem, false);
                    y += &ca;
                    Some((lnc, ac))
                }
                _ => None,
            };
            let (f, ln_ffn) = b.ln_ffn.forward(&y);
            let (ff, ffn) = b.ffn.forward(&f);
            y += &ff;
            dec_traces.push(DecTrace { ln_self, self_attn, cross, ln_ffn, ffn });
        }
        let (normed, dec_norm) = p.dec_norm.forward(&y);
        let logits = p.head.forward(&normed);
        Ok(Trace {
            src_len,
            enc: enc_traces,
            enc_norm,
            memory,
            tgt: tgt.to_vec(),
            dec: dec_traces,
            dec_norm,
            normed,
            logits,
        })
    }

    /// Backpropagate `dlogits` through a trace, accumulating parameter
    /// gradients into `grad`. Returns the gradient w.r.t. the source
    /// embedding rows (SOS/EOS included) when an encoder ran.
    pub(crate) fn backward(&self, trace: &Trace, dlogits: &Array2<f64>, grad: &mut Params) -> Option<Array2<f64>> {
        let p = &self.params;
        let dnormed = p.head.backward(&trace.normed, dlogits, &mut grad.head);
        let mut dy = p.dec_norm.backward(&trace.dec_norm, &dnormed, &mut grad.dec_norm);
        let mut dmem = trace.memory.as_ref().map(|m| Array2::<f64>::zeros(m.raw_dim()));
        for ((b, t), g) in p.dec.iter().zip(&trace.dec).zip(grad.dec.iter_mut()).rev() {
            let dff = b.ffn.backward(&t.ffn, &dy, &mut g.ffn);
            dy += &b.ln_ffn.backward(&t.ln_ffn, &dff, &mut g.ln_ffn);
            if let (Some(cb), Some((lnc, ac)), Some(gc), Some(dm)) = (&b.cross, &t.cross, g.cross.as_mut(), dmem.as_mut()) {
                let (dc, dkv) = cb.attn.backward(ac, &dy, &mut gc.attn);
                *dm += &dkv;
                dy += &cb.ln.backward(lnc, &dc, &mut gc.ln);
            }
            let (dq, dkv) = b.self_attn.backward(&t.self_attn, &dy, &mut g.self_attn);
            dy += &b.ln_self.backward(&t.ln_self, &(dq + dkv), &mut g.ln_self);
        }
        for (row, &id) in dy.rows().into_iter().zip(&trace.tgt) {
            let mut gr = grad.tok.row_mut(id);
            gr += &row;
        }
        {
            let mut gp = grad.pos.slice_mut(s![..trace.tgt.len(), ..]);
            gp += &dy;
        }
        let dm = dmem?;
        let mut dx = p.enc_norm.backward(trace.enc_norm.as_ref()?, &dm, &mut grad.enc_norm);
        for ((b, t), g) in p.enc.iter().zip(&trace.enc).zip(grad.enc.iter_mut()).rev() {
            let dff = b.ffn.backward(&t.ffn, &dx, &mut g.ffn);
            dx += &b.ln_ffn.backward(&t.ln_ffn, &dff, &mut g.ln_ffn);
            let (dq, dkv) = b.attn.backward(&t.attn, &dx, &mut g.attn);
            dx += &b.ln_attn.backward(&t.ln_attn, &(dq + dkv), &mut g.ln_attn);
        }
        {
            let mut gp = grad.pos.slice_mut(s![..trace.src_len, ..]);
            gp += &dx;
        }
        Some(dx)
    }

    fn source_rows(&self, source: &Document) -> Result<Option<Array2<f64>>> {
        if self.lm_only {
            return Ok(None);
        }
        self.check_ids(source.pieces())?;
        Ok(Some(self.source_matrix(self.token_rows(source.pieces()).view())))
    }

    /// Next-token logits at the last prefix position.
    pub fn next_logits(&self, source: &Document, prefix: &Prefix) -> Result<Array1<f64>> {
        let src = self.source_rows(source)?;
        let trace = self.forward(src.as_ref(), prefix.as_slice())?;
        Ok(trace.logits.row(trace.logits.nrows() - 1).to_owned())
    }

    /// Summed cross-entropy of `targets` under teacher forcing on `inputs`,
    /// with parameter gradients accumulated into `grad`.
    pub(crate) fn loss_and_grad(&self, source: &[TokenId], inputs: &[TokenId], targets: &[TokenId], grad: &mut Params) -> Result<f64> {
        self.check_ids(source)?;
        self.check_ids(targets)?;
        let src = (!self.lm_only).then(|| self.source_matrix(self.token_rows(source).view()));
        let trace = self.forward(src.as_ref(), inputs)?;
        let mut dlogits = trace.logits.clone();
        let mut loss = 0.0;
        for (mut row, &t) in dlogits.rows_mut().into_iter().zip(targets) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|v| (v - max).exp());
            let z = row.sum();
            row.mapv_inplace(|v| v / z);
            loss -= row[t].max(1e-300).ln();
            row[t] -= 1.0;
        }
        if let Some(dsrc) = self.backward(&trace, &dlogits, grad) {
            let ids = std::iter::once(self.vocab.sos()).chain(source.iter().copied()).chain(std::iter::once(self.vocab.eos()));
            for (row, id) in dsrc.rows().into_iter().zip(ids) {
                let mut gr = grad.tok.row_mut(id);
                gr += &row;
            }
        }
        Ok(loss)
    }
}

fn log_softmax_at(logits: ndarray::ArrayView1<f64>, target: TokenId) -> (f64, Array1<f64>) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|l| (l - max).exp()).sum();
    let probs = logits.mapv(|l| (l - max).exp() / z);
    (logits[target] - max - z.ln(), probs)
}

impl Backend for ToyTransformer {
    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn predict(&self, _mode: Mode, source: &Document, prefix: &Prefix) -> Result<TokenDistribution> {
        let logits = self.next_logits(source, prefix)?;
        TokenDistribution::softmax(logits.as_slice().expect("contiguous"))
    }

    fn predict_batch(&self, mode: Mode, sources: &[Document], prefix: &Prefix) -> Result<Vec<TokenDistribution>> {
        sources.par_iter().map(|s| self.predict(mode, s, prefix)).collect()
    }

    fn differentiable(&self) -> Option<&dyn Differentiable> {
        Some(self)
    }

    fn attentive(&self) -> Option<&dyn Attentive> {
        if self.lm_only {
            None
        } else {
            Some(self)
        }
    }
}

impl Differentiable for ToyTransformer {
    fn embed_dim(&self) -> usize {
        self.config.embed_dim
    }

    fn source_embeddings(&self, source: &Document) -> Array2<f64> {
        self.token_rows(source.pieces())
    }

    fn mask_embedding(&self) -> Array1<f64> {
        self.params.tok.row(self.vocab.mask()).to_owned()
    }

    /// `log P(target)` at the last prefix position.
    fn objective_grad(&self, embeddings: ArrayView2<f64>, prefix: &Prefix, target: TokenId) -> Result<(f64, Array2<f64>)> {
        self.check_ids(&[target])?;
        if self.lm_only {
            let f = self.objective(embeddings, prefix, target)?;
            return Ok((f, Array2::zeros(embeddings.raw_dim())));
        }
        let src = self.source_matrix(embeddings);
        let trace = self.forward(Some(&src), prefix.as_slice())?;
        let last = trace.logits.nrows() - 1;
        let (f, probs) = log_softmax_at(trace.logits.row(last), target);
        let mut dlogits = Array2::zeros(trace.logits.raw_dim());
        {
            let mut row = dlogits.row_mut(last);
            row -= &probs;
            row[target] += 1.0;
        }
        // Parameter gradients are discarded; only the source rows matter here.
        let mut scratch = self.params.zeros_like();
        let dsrc = self.backward(&trace, &dlogits, &mut scratch).expect("encoder ran");
        Ok((f, dsrc.slice(s![1..dsrc.nrows() - 1, ..]).to_owned()))
    }

    fn objective(&self, embeddings: ArrayView2<f64>, prefix: &Prefix, target: TokenId) -> Result<f64> {
        self.check_ids(&[target])?;
        let src = (!self.lm_only).then(|| self.source_matrix(embeddings));
        let trace = self.forward(src.as_ref(), prefix.as_slice())?;
        let last = trace.logits.nrows() - 1;
        Ok(log_softmax_at(trace.logits.row(last), target).0)
    }
}

impl Attentive for ToyTransformer {
    fn source_attention(&self, source: &Document, prefix: &Prefix) -> Result<Vec<f64>> {
        let src = self.source_rows(source)?.ok_or(Error::UnsupportedCapability("attention"))?;
        let trace = self.forward(Some(&src), prefix.as_slice())?;
        let last_block = trace.dec.last().and_then(|t| t.cross.as_ref()).ok_or(Error::UnsupportedCapability("attention"))?;
        let q = prefix.len() - 1;
        let rows: Vec<Vec<f64>> = last_block.1.probs.iter().map(|p| p.row(q).to_vec()).collect();
        let mut special = vec![false; src.nrows()];
        special[0] = true;
        special[src.nrows() - 1] = true;
        Ok(pool_attention(&rows, &special))
    }
}
