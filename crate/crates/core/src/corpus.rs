use serde::{Deserialize, Serialize};

use crate::document::{tokenize, Document, Prefix};
use crate::error::{Error, Result};
use crate::vocab::{TokenId, Vocab};

/// A source document paired with a (decoded or reference) summary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub doc: Document,
    pub summary: Vec<TokenId>,
}

/// One decoder step to analyze: the summary prefix and the token produced next.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    /// Index of the example in its corpus.
    pub example: usize,
    pub doc_id: String,
    pub step: usize,
    pub prefix: Prefix,
    pub target: TokenId,
}

impl Example {
    pub fn from_text(id: &str, text: &str, summary: &str, vocab: &Vocab) -> Result<Self> {
        let doc = tokenize(id, text, vocab)?;
        let summary = if summary.trim().is_empty() {
            Vec::new()
        } else {
            tokenize(id, summary, vocab)?.pieces().to_vec()
        };
        Ok(Self { doc, summary })
    }

    /// One decision per summary piece.
    pub fn decisions(&self, index: usize, vocab: &Vocab) -> Vec<Decision> {
        let mut prefix = Prefix::start(vocab.sos());
        let mut out = Vec::with_capacity(self.summary.len());
        for (step, &target) in self.summary.iter().enumerate() {
            out.push(Decision { example: index, doc_id: self.doc.id.clone(), step, prefix: prefix.clone(), target });
            prefix = prefix.extended(target);
        }
        out
    }

    /// Decoder inputs (SOS + summary) and targets (summary + EOS).
    pub fn teacher_forcing(&self, vocab: &Vocab) -> (Vec<TokenId>, Vec<TokenId>) {
        let mut inputs = vec![vocab.sos()];
        inputs.extend(&self.summary);
        let mut targets = self.summary.clone();
        targets.push(vocab.eos());
        (inputs, targets)
    }
}

pub fn corpus_decisions(corpus: &[Example], vocab: &Vocab) -> Vec<Decision> {
    corpus.iter().enumerate().flat_map(|(i, e)| e.decisions(i, vocab)).collect()
}

/// Every piece id must fall inside `vocab`.
pub fn check_corpus(corpus: &[Example], vocab: &Vocab) -> Result<()> {
    if corpus.is_empty() {
        return Err(Error::Vocab("empty training corpus".into()));
    }
    for e in corpus {
        if let Some(&bad) = e.doc.pieces().iter().chain(&e.summary).find(|&&id| id >= vocab.len()) {
            return Err(Error::Vocab(format!("document {} uses id {bad} outside vocabulary of {}", e.doc.id, vocab.len())));
        }
    }
    Ok(())
}
