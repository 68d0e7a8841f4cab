//! Next-token predictors and the four ablation configurations.
//!
//! A [`Backend`] predicts the next token from a source [`Document`] and a
//! decoder [`Prefix`]. Ablations are expressed by handing the backend a
//! derived document (a selection, a masked copy, or an empty source), so
//! every backend supports every configuration. Gradient and attention access
//! are optional capabilities exposed through [`Backend::differentiable`] and
//! [`Backend::attentive`].

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicUsize, Ordering};

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::distribution::TokenDistribution;
use crate::document::{Document, Prefix};
use crate::error::{Error, Result};
use crate::vocab::{TokenId, Vocab};

pub mod linear;
pub mod remote;
pub mod scripted;

pub use linear::LinearReadout;
pub use remote::RemoteBackend;
pub use scripted::{Condition, OracleSpec, RuleSpec, ScriptedOracle};

/// Which model sees how much of the source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Mode {
    /// Generic language model, decoder prefix only.
    LmEmpty,
    /// Summarizer with an empty source.
    SEmpty,
    /// Summarizer with a subset of the source.
    SPart,
    /// Summarizer with the whole source.
    SFull,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::LmEmpty => "LM_EMPTY",
            Mode::SEmpty => "S_EMPTY",
            Mode::SPart => "S_PART",
            Mode::SFull => "S_FULL",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AblationConfig {
    pub mode: Mode,
    /// Source piece indices, required iff `mode` is `SPart`.
    pub visible: Option<BTreeSet<usize>>,
}

impl AblationConfig {
    pub fn lm_empty() -> Self {
        Self { mode: Mode::LmEmpty, visible: None }
    }

    pub fn s_empty() -> Self {
        Self { mode: Mode::SEmpty, visible: None }
    }

    pub fn s_full() -> Self {
        Self { mode: Mode::SFull, visible: None }
    }

    pub fn s_part(visible: BTreeSet<usize>) -> Self {
        Self { mode: Mode::SPart, visible: Some(visible) }
    }

    /// The source document this configuration exposes.
    pub fn apply(&self, doc: &Document) -> Result<Document> {
        match (self.mode, &self.visible) {
            (Mode::LmEmpty | Mode::SEmpty, None) => Ok(doc.emptied()),
            (Mode::SFull, None) => Ok(doc.clone()),
            (Mode::SPart, Some(visible)) => {
                if let Some(&bad) = visible.iter().find(|&&p| p >= doc.len()) {
                    return Err(Error::Config(format!(
                        "visible piece {bad} outside document of {} pieces",
                        doc.len()
                    )));
                }
                Ok(doc.select(visible))
            }
            (Mode::SPart, None) => Err(Error::Config("S_PART requires visible pieces".into())),
            (mode, Some(_)) => Err(Error::Config(format!("{} takes no visible set", mode.as_str()))),
        }
    }
}

/// A next-token predictor. Implementations are read-only after construction.
pub trait Backend: Send + Sync {
    fn vocab(&self) -> &Vocab;

    /// Distribution over the next token given an (already ablated) source.
    fn predict(&self, mode: Mode, source: &Document, prefix: &Prefix) -> Result<TokenDistribution>;

    /// Predictions for several sources sharing one prefix. Each element must
    /// equal the corresponding single `predict` call exactly.
    fn predict_batch(&self, mode: Mode, sources: &[Document], prefix: &Prefix) -> Result<Vec<TokenDistribution>> {
        sources.iter().map(|s| self.predict(mode, s, prefix)).collect()
    }

    fn differentiable(&self) -> Option<&dyn Differentiable> {
        None
    }

    fn attentive(&self) -> Option<&dyn Attentive> {
        None
    }
}

/// Gradient access w.r.t. source token embeddings.
pub trait Differentiable: Sync {
    fn embed_dim(&self) -> usize;

    /// Token embeddings of the source pieces, one row per piece (special
    /// tokens excluded).
    fn source_embeddings(&self, source: &Document) -> Array2<f64>;

    fn mask_embedding(&self) -> Array1<f64>;

    /// Objective (log-probability of `target` for probabilistic models) and
    /// its gradient w.r.t. each row of `embeddings`.
    fn objective_grad(&self, embeddings: ArrayView2<f64>, prefix: &Prefix, target: TokenId) -> Result<(f64, Array2<f64>)>;

    fn objective(&self, embeddings: ArrayView2<f64>, prefix: &Prefix, target: TokenId) -> Result<f64> {
        self.objective_grad(embeddings, prefix, target).map(|(f, _)| f)
    }
}

/// Cross-attention access.
pub trait Attentive: Sync {
    /// Per-source-piece weights from the final cross-attention layer at the
    /// last prefix position, averaged over heads, special tokens excluded.
    fn source_attention(&self, source: &Document, prefix: &Prefix) -> Result<Vec<f64>>;
}

/// Gradients of the target objective w.r.t. each source piece's embedding,
/// alongside the embeddings themselves.
#[derive(Debug, Clone)]
pub struct GradientPack {
    pub objective: f64,
    pub gradients: Array2<f64>,
    pub embeddings: Array2<f64>,
}

pub fn predict_next(
    backend: &dyn Backend,
    config: &AblationConfig,
    doc: &Document,
    prefix: &Prefix,
) -> Result<TokenDistribution> {
    let source = config.apply(doc)?;
    backend.predict(config.mode, &source, prefix)
}

pub fn input_gradients(backend: &dyn Backend, doc: &Document, prefix: &Prefix, target: TokenId) -> Result<GradientPack> {
    let diff = backend.differentiable().ok_or(Error::UnsupportedCapability("gradients"))?;
    check_target(backend, target)?;
    let embeddings = diff.source_embeddings(doc);
    let (objective, gradients) = diff.objective_grad(embeddings.view(), prefix, target)?;
    Ok(GradientPack { objective, gradients, embeddings })
}

pub fn attention_weights(backend: &dyn Backend, doc: &Document, prefix: &Prefix) -> Result<Vec<f64>> {
    backend
        .attentive()
        .ok_or(Error::UnsupportedCapability("attention"))?
        .source_attention(doc, prefix)
}

pub(crate) fn check_target(backend: &dyn Backend, target: TokenId) -> Result<()> {
    if target >= backend.vocab().len() {
        return Err(Error::Index { index: target, len: backend.vocab().len() });
    }
    Ok(())
}

/// Average per-head attention rows, drop positions flagged `special`, and
/// renormalize the rest.
pub fn pool_attention(head_rows: &[Vec<f64>], special: &[bool]) -> Vec<f64> {
    let width = special.len();
    let mut mean = vec![0.0; width];
    for row in head_rows {
        for (m, &a) in mean.iter_mut().zip(row) {
            *m += a / head_rows.len() as f64;
        }
    }
    let kept: Vec<f64> = mean.iter().zip(special).filter(|(_, &s)| !s).map(|(&m, _)| m).collect();
    let total: f64 = kept.iter().sum();
    if total > 0.0 {
        kept.iter().map(|k| k / total).collect()
    } else {
        vec![1.0 / kept.len().max(1) as f64; kept.len()]
    }
}

/// Counts every source evaluation made through it (batched items count
/// individually).
pub struct CountingBackend<'a> {
    inner: &'a dyn Backend,
    calls: AtomicUsize,
}

impl<'a> CountingBackend<'a> {
    pub fn new(inner: &'a dyn Backend) -> Self {
        Self { inner, calls: AtomicUsize::new(0) }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.calls.store(0, Ordering::Relaxed);
    }
}

impl Backend for CountingBackend<'_> {
    fn vocab(&self) -> &Vocab {
        self.inner.vocab()
    }

    fn predict(&self, mode: Mode, source: &Document, prefix: &Prefix) -> Result<TokenDistribution> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.predict(mode, source, prefix)
    }

    fn predict_batch(&self, mode: Mode, sources: &[Document], prefix: &Prefix) -> Result<Vec<TokenDistribution>> {
        self.calls.fetch_add(sources.len(), Ordering::Relaxed);
        self.inner.predict_batch(mode, sources, prefix)
    }

    fn differentiable(&self) -> Option<&dyn Differentiable> {
        self.inner.differentiable()
    }

    fn attentive(&self) -> Option<&dyn Attentive> {
        self.inner.attentive()
    }
}
