use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::Example;
use crate::error::{Error, Result};
use crate::map::{DecisionRecord, Region};
use crate::vocab::Vocab;

/// Unigram and bigram counts of one token stream collection.
#[derive(Debug, Clone, Default)]
pub struct BigramCounts {
    unigrams: HashMap<String, u64>,
    bigrams: HashMap<(String, String), u64>,
}

impl BigramCounts {
    pub fn new() -> Self {
        Self::default()
    }

    /// Count one stream. Bigrams do not cross stream boundaries; the last
    /// token still counts as a unigram.
    pub fn add_stream<S: AsRef<str>>(&mut self, tokens: &[S]) {
        for t in tokens {
            *self.unigrams.entry(t.as_ref().to_string()).or_default() += 1;
        }
        for w in tokens.windows(2) {
            *self.bigrams.entry((w[0].as_ref().to_string(), w[1].as_ref().to_string())).or_default() += 1;
        }
    }

    pub fn from_text(text: &str) -> Self {
        let mut c = Self::new();
        for line in text.lines() {
            let toks: Vec<&str> = line.split_whitespace().collect();
            c.add_stream(&toks);
        }
        c
    }

    /// `#(a, b) / #a`, and whether `a` was never seen.
    pub fn frequency(&self, a: &str, b: &str) -> (f64, bool) {
        let denom = self.unigrams.get(a).copied().unwrap_or(0);
        if denom == 0 {
            return (0.0, true);
        }
        let num = self.bigrams.get(&(a.to_string(), b.to_string())).copied().unwrap_or(0);
        (num as f64 / denom as f64, false)
    }

    pub fn successors<'a>(&'a self, a: &'a str) -> impl Iterator<Item = (&'a str, u64)> + 'a {
        self.bigrams.iter().filter(move |((x, _), _)| x == a).map(|((_, y), &c)| (y.as_str(), c))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BigramStat {
    pub bigram: (String, String),
    /// One entry per corpus.
    pub frequencies: Vec<f64>,
    pub zero_denominator: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BigramReport {
    pub corpora: Vec<String>,
    pub stats: Vec<BigramStat>,
    /// Mean frequency per corpus over all bigrams.
    pub mean: Vec<f64>,
}

pub fn bigram_stats(bigrams: &[(String, String)], corpora: &[(String, BigramCounts)]) -> Result<BigramReport> {
    if corpora.len() < 2 {
        return Err(Error::Config("bigram comparison needs at least two corpora".into()));
    }
    let stats: Vec<BigramStat> = bigrams
        .iter()
        .map(|(a, b)| {
            let (frequencies, zero_denominator) = corpora.iter().map(|(_, c)| c.frequency(a, b)).unzip();
            BigramStat { bigram: (a.clone(), b.clone()), frequencies, zero_denominator }
        })
        .collect();
    let mean = (0..corpora.len())
        .map(|k| if stats.is_empty() { 0.0 } else { stats.iter().map(|s| s.frequencies[k]).sum::<f64>() / stats.len() as f64 })
        .collect();
    Ok(BigramReport { corpora: corpora.iter().map(|(n, _)| n.clone()).collect(), stats, mean })
}

/// `(previous summary token, predicted token)` of every FT decision after
/// the first step, deduplicated in first-seen order.
pub fn ft_bigrams(records: &[DecisionRecord], corpus: &[Example], vocab: &Vocab) -> Result<Vec<(String, String)>> {
    let by_id: HashMap<&str, &Example> = corpus.iter().map(|e| (e.doc.id.as_str(), e)).collect();
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for r in records.iter().filter(|r| r.region == Region::Ft && r.step > 0) {
        let ex = by_id.get(r.doc_id.as_str()).ok_or_else(|| Error::Data(format!("unknown document {}", r.doc_id)))?;
        let prev = *ex.summary.get(r.step - 1).ok_or_else(|| Error::Data(format!("{} has no step {}", r.doc_id, r.step)))?;
        let tok = |id| vocab.token(id).map(str::to_string).ok_or(Error::Index { index: id, len: vocab.len() });
        let pair = (tok(prev)?, tok(r.target)?);
        if seen.insert(pair.clone()) {
            out.push(pair);
        }
    }
    Ok(out)
}
