use ndarray::{Array1, Array2, ArrayView2};

use super::{Backend, Differentiable, Mode};
use crate::distribution::TokenDistribution;
use crate::document::{Document, Prefix};
use crate::error::{Error, Result};
use crate::vocab::{TokenId, Vocab};

/// Frozen linear read-out `F(x) = Σ_i w_i · x_i` over the source piece
/// embeddings, with `w_i` chosen per source position.
///
/// The objective is linear, so gradient methods have closed-form answers:
/// the gradient for piece `i` is `w_i` regardless of the input. Next-token
/// prediction is a two-way softmax over `[F(x), 0]` onto `target` and EOS.
#[derive(Debug, Clone)]
pub struct LinearReadout {
    vocab: Vocab,
    target: TokenId,
    embeddings: Array2<f64>,
    mask_embedding: Array1<f64>,
    weights: Array2<f64>,
}

impl LinearReadout {
    /// `embeddings` has one row per vocabulary entry; `weights` one row per
    /// source position.
    pub fn new(
        vocab: Vocab,
        target: TokenId,
        embeddings: Array2<f64>,
        weights: Array2<f64>,
    ) -> Result<Self> {
        if embeddings.nrows() != vocab.len() {
            return Err(Error::Shape { expected: vocab.len(), got: embeddings.nrows() });
        }
        if weights.ncols() != embeddings.ncols() {
            return Err(Error::Shape { expected: embeddings.ncols(), got: weights.ncols() });
        }
        let mask_embedding = embeddings.row(vocab.mask()).to_owned();
        Ok(Self { vocab, target, embeddings, mask_embedding, weights })
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    fn score(&self, embeddings: ArrayView2<f64>) -> Result<f64> {
        if embeddings.nrows() > self.weights.nrows() {
            return Err(Error::Shape { expected: self.weights.nrows(), got: embeddings.nrows() });
        }
        Ok(embeddings
            .rows()
            .into_iter()
            .zip(self.weights.rows())
            .map(|(x, w)| x.dot(&w))
            .sum())
    }
}

impl Backend for LinearReadout {
    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn predict(&self, _mode: Mode, source: &Document, _prefix: &Prefix) -> Result<TokenDistribution> {
        let f = self.score(self.source_embeddings(source).view())?;
        let mut logits = vec![f64::NEG_INFINITY; self.vocab.len()];
        logits[self.target] = f;
        logits[self.vocab.eos()] = 0.0;
        TokenDistribution::softmax(&logits)
    }

    fn differentiable(&self) -> Option<&dyn Differentiable> {
        Some(self)
    }
}

impl Differentiable for LinearReadout {
    fn embed_dim(&self) -> usize {
        self.embeddings.ncols()
    }

    fn source_embeddings(&self, source: &Document) -> Array2<f64> {
        let mut out = Array2::zeros((source.len(), self.embed_dim()));
        for (mut row, &tok) in out.rows_mut().into_iter().zip(source.pieces()) {
            row.assign(&self.embeddings.row(tok));
        }
        out
    }

    fn mask_embedding(&self) -> Array1<f64> {
        self.mask_embedding.clone()
    }

    fn objective_grad(&self, embeddings: ArrayView2<f64>, _prefix: &Prefix, _target: TokenId) -> Result<(f64, Array2<f64>)> {
        let f = self.score(embeddings)?;
        let grad = self.weights.slice(ndarray::s![..embeddings.nrows(), ..]).to_owned();
        Ok((f, grad))
    }
}
