use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{Params, ToyModelConfig, ToyTransformer};
use crate::corpus::{check_corpus, Example};
use crate::document::Document;
use crate::error::Result;
use crate::vocab::{TokenId, Vocab};

/// Source perturbations applied to summarizer training examples so the
/// model has seen empty, partial and masked inputs before it is probed with
/// them. Probabilities are per example and mutually exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Augmentation {
    pub empty_source: f64,
    pub sentence_subset: f64,
    pub piece_subset: f64,
    /// Keep rate for `piece_subset`.
    pub piece_keep: f64,
    pub token_mask: f64,
    /// Per-piece masking rate for `token_mask`.
    pub mask_rate: f64,
}

impl Default for Augmentation {
    fn default() -> Self {
        Self { empty_source: 0.15, sentence_subset: 0.25, piece_subset: 0.15, piece_keep: 0.5, token_mask: 0.1, mask_rate: 0.15 }
    }
}

impl Augmentation {
    pub fn none() -> Self {
        Self { empty_source: 0.0, sentence_subset: 0.0, piece_subset: 0.0, piece_keep: 1.0, token_mask: 0.0, mask_rate: 0.0 }
    }

    fn apply<R: Rng>(&self, doc: &Document, mask: TokenId, rng: &mut R) -> Document {
        let u: f64 = rng.gen();
        let mut edge = self.empty_source;
        if u < edge {
            return doc.emptied();
        }
        edge += self.sentence_subset;
        if u < edge {
            let mut keep: BTreeSet<usize> = (0..doc.n_sentences()).filter(|_| rng.gen_bool(0.5)).collect();
            if keep.is_empty() {
                keep.insert(rng.gen_range(0..doc.n_sentences()));
            }
            return doc.keep_sentences(&keep);
        }
        edge += self.piece_subset;
        if u < edge {
            let keep = (0..doc.len()).filter(|_| rng.gen_bool(self.piece_keep)).collect();
            return doc.select(&keep);
        }
        edge += self.token_mask;
        if u < edge {
            let hide = (0..doc.len()).filter(|_| rng.gen_bool(self.mask_rate)).collect();
            return doc.masked(&hide, mask);
        }
        doc.clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub clip_norm: f64,
    pub augment: Augmentation,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self { epochs: 20, batch_size: 16, learning_rate: 2e-3, clip_norm: 1.0, augment: Augmentation::default() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean per-token cross-entropy of each epoch.
    pub epoch_losses: Vec<f64>,
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: i32,
    lr: f64,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.98;
    const EPS: f64 = 1e-9;

    fn new(params: &Params, lr: f64) -> Self {
        let shapes: Vec<usize> = params.flat().iter().map(|t| t.len()).collect();
        Self {
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
            lr,
        }
    }

    fn update(&mut self, params: &mut Params, grad: &Params, scale: f64) {
        self.step += 1;
        let c1 = 1.0 - Self::B1.powi(self.step);
        let c2 = 1.0 - Self::B2.powi(self.step);
        for (((p, g), m), v) in params.flat_mut().into_iter().zip(grad.flat()).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.len() {
                let gi = g[i] * scale;
                m[i] = Self::B1 * m[i] + (1.0 - Self::B1) * gi;
                v[i] = Self::B2 * v[i] + (1.0 - Self::B2) * gi * gi;
                p[i] -= self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + Self::EPS);
            }
        }
    }
}

/// Train a toy model with teacher forcing. With `lm_only` the model is a
/// decoder-only language model over the summaries. Deterministic given
/// `cfg.seed`; single-threaded.
pub fn train_toy(
    corpus: &[Example],
    vocab: &Vocab,
    cfg: ToyModelConfig,
    lm_only: bool,
    opts: &TrainOptions,
) -> Result<(ToyTransformer, TrainReport)> {
    check_corpus(corpus, vocab)?;
    let mut model = ToyTransformer::new(cfg, vocab.clone(), lm_only)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x9e37_79b9));
    let mut adam = Adam::new(&model.params, opts.learning_rate);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut report = TrainReport::default();
    let batch = opts.batch_size.max(1);
    for epoch in 0..opts.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_tokens = 0usize;
        for chunk in order.chunks(batch) {
            let mut grad = model.params.zeros_like();
            let mut tokens = 0usize;
            for &i in chunk {
                let ex = &corpus[i];
                let source = if lm_only { ex.doc.emptied() } else { opts.augment.apply(&ex.doc, vocab.mask(), &mut rng) };
                let (inputs, targets) = ex.teacher_forcing(vocab);
                epoch_loss += model.loss_and_grad(source.pieces(), &inputs, &targets, &mut grad)?;
                tokens += targets.len();
            }
            let scale = 1.0 / tokens as f64;
            let norm = grad.flat().iter().flat_map(|t| t.iter()).map(|g| (g * scale).powi(2)).sum::<f64>().sqrt();
            let clip = if opts.clip_norm > 0.0 && norm > opts.clip_norm { opts.clip_norm / norm } else { 1.0 };
            adam.update(&mut model.params, &grad, scale * clip);
            epoch_tokens += tokens;
        }
        let mean = epoch_loss / epoch_tokens.max(1) as f64;
        log::debug!("epoch {epoch}: loss {mean:.4}");
        report.epoch_losses.push(mean);
    }
    Ok((model, report))
}
