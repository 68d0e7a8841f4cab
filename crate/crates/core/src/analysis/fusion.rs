use std::collections::{BTreeSet, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::{Backend, Mode};
use crate::corpus::{corpus_decisions, Example};
use crate::document::{Document, Prefix};
use crate::error::{Error, Result};
use crate::map::{DecisionRecord, Region};
use crate::vocab::TokenId;

pub const DEFAULT_GAIN: f64 = 0.5;
/// Decisions qualify only when no single sentence reaches this probability.
pub const SINGLE_SENTENCE_CEILING: f64 = 0.5;
const EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BestSingle {
    pub sentence: usize,
    pub prob: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BestPair {
    pub i: usize,
    pub j: usize,
    pub prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionRecord {
    pub doc_id: String,
    pub step: usize,
    pub target: TokenId,
    pub best_single: BestSingle,
    pub best_pair: BestPair,
    pub is_fusion: bool,
}

/// Search every sentence pair for one that lifts `target` by at least `gain`
/// over the best single sentence. Pairs are shown in document order.
pub fn find_fusion(
    backend: &dyn Backend,
    doc: &Document,
    prefix: &Prefix,
    target: TokenId,
    p_sent: &[f64],
    gain: f64,
) -> Result<FusionRecord> {
    let m = doc.n_sentences();
    if p_sent.len() != m {
        return Err(Error::Shape { expected: m, got: p_sent.len() });
    }
    if m < 2 {
        return Err(Error::NotApplicable(format!("{} has a single sentence", doc.id)));
    }
    let (best_s, best_p) = p_sent
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, p)| if p > acc.1 { (i, p) } else { acc });
    if best_p >= SINGLE_SENTENCE_CEILING {
        return Err(Error::NotApplicable(format!("sentence {best_s} alone gives {best_p:.3}")));
    }
    let pairs: Vec<(usize, usize)> = (0..m).flat_map(|i| (i + 1..m).map(move |j| (i, j))).collect();
    let sources: Vec<Document> = pairs.iter().map(|&(i, j)| doc.keep_sentences(&BTreeSet::from([i, j]))).collect();
    let dists = backend.predict_batch(Mode::SPart, &sources, prefix)?;
    let mut best = BestPair { i: 0, j: 1, prob: f64::NEG_INFINITY };
    for (&(i, j), d) in pairs.iter().zip(&dists) {
        let p = d.prob(target);
        if p > best.prob {
            best = BestPair { i, j, prob: p };
        }
    }
    Ok(FusionRecord {
        doc_id: doc.id.clone(),
        step: prefix.len() - 1,
        target,
        best_single: BestSingle { sentence: best_s, prob: best_p },
        is_fusion: best.prob - best_p >= gain - EPS,
        best_pair: best,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionSummary {
    pub eligible: usize,
    pub fused: usize,
    pub rate: f64,
    pub records: Vec<FusionRecord>,
}

/// Fusion search over mapped CTX decisions with `max_psent` below the
/// single-sentence ceiling.
pub fn fusion_rate(backend: &dyn Backend, corpus: &[Example], records: &[DecisionRecord], gain: f64) -> Result<FusionSummary> {
    let decisions = corpus_decisions(corpus, backend.vocab());
    let lookup: HashMap<(&str, usize), usize> =
        decisions.iter().enumerate().map(|(i, d)| ((d.doc_id.as_str(), d.step), i)).collect();
    let eligible: Vec<(&DecisionRecord, usize)> = records
        .iter()
        .filter(|r| r.region == Region::Ctx && r.max_psent < SINGLE_SENTENCE_CEILING && r.p_sent.len() >= 2)
        .map(|r| {
            lookup
                .get(&(r.doc_id.as_str(), r.step))
                .map(|&i| (r, i))
                .ok_or_else(|| Error::Data(format!("no decision {} step {} in corpus", r.doc_id, r.step)))
        })
        .collect::<Result<_>>()?;
    let out = eligible
        .par_iter()
        .map(|&(r, i)| {
            let d = &decisions[i];
            find_fusion(backend, &corpus[d.example].doc, &d.prefix, r.target, &r.p_sent, gain)
        })
        .collect::<Result<Vec<_>>>()?;
    let fused = out.iter().filter(|r| r.is_fusion).count();
    let rate = if out.is_empty() { 0.0 } else { fused as f64 / out.len() as f64 };
    Ok(FusionSummary { eligible: out.len(), fused, rate, records: out })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{Condition, OracleSpec, ScriptedOracle};
    use crate::document::tokenize;
    use crate::map::{corpus_map, probe_sentences, MapBackends, MapSettings};
    use crate::vocab::Vocab;
    use proptest::prelude::*;

    const TEXT: &str = "a . b . c . d . e . f .";

    fn pair_oracle(pair_prob: f64) -> (Vocab, Document, ScriptedOracle, TokenId) {
        let v = Vocab::build([TEXT, "target other"]).unwrap();
        let d = tokenize("doc", TEXT, &v).unwrap();
        let spec = OracleSpec::default()
            .with_default("target", 0.1)
            .rule(Condition::all(vec![Condition::sentence(2), Condition::sentence(5)]), "target", pair_prob);
        let o = ScriptedOracle::new(v.clone(), &spec).unwrap();
        let t = v.id("target").unwrap();
        (v, d, o, t)
    }

    #[test]
    fn planted_pair_is_found() {
        let (v, d, o, t) = pair_oracle(0.9);
        let pre = Prefix::start(v.sos());
        let p = probe_sentences(&o, &d, &pre, t).unwrap();
        let r = find_fusion(&o, &d, &pre, t, &p, DEFAULT_GAIN).unwrap();
        assert!(r.is_fusion);
        assert_eq!((r.best_pair.i, r.best_pair.j), (2, 5));
        assert!((r.best_pair.prob - 0.9).abs() < 1e-12);
    }

    #[test]
    fn gain_boundary() {
        let (v, d, o, t) = pair_oracle(0.6);
        let pre = Prefix::start(v.sos());
        let p = probe_sentences(&o, &d, &pre, t).unwrap();
        assert!(find_fusion(&o, &d, &pre, t, &p, 0.5).unwrap().is_fusion);
        let (_, _, o, _) = pair_oracle(0.59);
        assert!(!find_fusion(&o, &d, &pre, t, &p, 0.5).unwrap().is_fusion);
        let (_, _, o, _) = pair_oracle(0.5);
        assert!(!find_fusion(&o, &d, &pre, t, &p, 0.5).unwrap().is_fusion);
    }

    #[test]
    fn strong_single_sentence_is_not_applicable() {
        let v = Vocab::build([TEXT, "target"]).unwrap();
        let d = tokenize("doc", TEXT, &v).unwrap();
        let spec = OracleSpec::default().with_default("target", 0.1).rule(Condition::sentence(0), "target", 0.6);
        let o = ScriptedOracle::new(v.clone(), &spec).unwrap();
        let pre = Prefix::start(v.sos());
        let t = v.id("target").unwrap();
        let p = probe_sentences(&o, &d, &pre, t).unwrap();
        assert!(matches!(find_fusion(&o, &d, &pre, t, &p, 0.5), Err(Error::NotApplicable(_))));
        let one = tokenize("doc", "a .", &v).unwrap();
        assert!(matches!(find_fusion(&o, &one, &pre, t, &[0.1], 0.5), Err(Error::NotApplicable(_))));
    }

    #[test]
    fn rate_over_a_mapped_corpus() {
        let (v, d, o, t) = pair_oracle(0.9);
        let lm = ScriptedOracle::new(v.clone(), &OracleSpec::default().with_default("other", 1.0)).unwrap();
        let empty = ScriptedOracle::new(v.clone(), &OracleSpec::default().with_default("other", 1.0)).unwrap();
        let corpus = vec![Example { doc: d, summary: vec![t] }];
        // s_full sees the whole document, so the pair rule fires
        let backends = MapBackends { lm: &lm, s_empty: &empty, s_full: &o };
        let map = corpus_map(backends, &corpus, &MapSettings::default()).unwrap();
        assert_eq!(map.records[0].region, Region::Ctx);
        let s = fusion_rate(&o, &corpus, &map.records, DEFAULT_GAIN).unwrap();
        assert_eq!((s.eligible, s.fused, s.rate), (1, 1, 1.0));
        let none = fusion_rate(&o, &corpus, &[], DEFAULT_GAIN).unwrap();
        assert_eq!((none.eligible, none.rate), (0, 0.0));
    }

    proptest! {
        #[test]
        fn result_ignores_probe_permutation(i in 0usize..6, j in 0usize..6) {
            prop_assume!(i != j);
            let v = Vocab::build([TEXT, "target"]).unwrap();
            let d = tokenize("doc", TEXT, &v).unwrap();
            let spec = OracleSpec::default()
                .with_default("target", 0.1)
                .rule(Condition::all(vec![Condition::sentence(i), Condition::sentence(j)]), "target", 0.8);
            let o = ScriptedOracle::new(v.clone(), &spec).unwrap();
            let pre = Prefix::start(v.sos());
            let t = v.id("target").unwrap();
            let p = probe_sentences(&o, &d, &pre, t).unwrap();
            let r = find_fusion(&o, &d, &pre, t, &p, DEFAULT_GAIN).unwrap();
            prop_assert_eq!((r.best_pair.i, r.best_pair.j), (i.min(j), i.max(j)));
            prop_assert!(r.is_fusion);
        }
    }
}
