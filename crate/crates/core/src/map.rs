//! Two-axis map of decoder decisions.
//!
//! Each decision gets `x = L1(P_lm∅, P_full)` and `y = L1(P_s∅, P_full)`,
//! a region label from a list of boxes, and a sentence-presence probe: the
//! probability of the predicted token when the summarizer sees one source
//! sentence at a time.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::{predict_next, AblationConfig, Backend};
use crate::corpus::{corpus_decisions, Example};
use crate::distribution::TokenDistribution;
use crate::document::{Document, Prefix};
use crate::error::{Error, Result};
use crate::vocab::TokenId;

/// Upper end of the L1 distance between two distributions.
pub const MAX_DISTANCE: f64 = 2.0;

pub fn l1_distance(p: &TokenDistribution, q: &TokenDistribution) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Vocab(format!("distributions over {} and {} tokens", p.len(), q.len())));
    }
    let d: f64 = p.probs().iter().zip(q.probs()).map(|(a, b)| (a - b).abs()).sum();
    Ok(d.min(MAX_DISTANCE))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Region {
    #[serde(rename = "LM")]
    Lm,
    #[serde(rename = "CTX")]
    Ctx,
    #[serde(rename = "PT")]
    Pt,
    #[serde(rename = "FT")]
    Ft,
    #[serde(rename = "OTHER")]
    Other,
}

impl Region {
    pub const ALL: [Region; 5] = [Region::Lm, Region::Ctx, Region::Pt, Region::Ft, Region::Other];

    pub fn as_str(self) -> &'static str {
        match self {
            Region::Lm => "LM",
            Region::Ctx => "CTX",
            Region::Pt => "PT",
            Region::Ft => "FT",
            Region::Other => "OTHER",
        }
    }
}

impl std::str::FromStr for Region {
    type Err = Error;

    /// Case-insensitive region label.
    fn from_str(s: &str) -> Result<Self> {
        Region::ALL
            .into_iter()
            .find(|r| r.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown region {s:?}")))
    }
}

/// Axis-aligned box, closed on its lower edges and open on its upper edges
/// except where the upper edge is the end of the axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionBox {
    pub label: Region,
    pub lower: (f64, f64),
    pub upper: (f64, f64),
}

impl RegionBox {
    pub fn new(label: Region, lower: (f64, f64), upper: (f64, f64)) -> Result<Self> {
        let in_range = |v: f64| (0.0..=MAX_DISTANCE).contains(&v);
        if !(in_range(lower.0) && in_range(lower.1) && in_range(upper.0) && in_range(upper.1)) {
            return Err(Error::Config(format!("{} box corners outside [0, 2]", label.as_str())));
        }
        if lower.0 > upper.0 || lower.1 > upper.1 {
            return Err(Error::Config(format!("{} box has inverted corners", label.as_str())));
        }
        Ok(Self { label, lower, upper })
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let within = |v: f64, lo: f64, hi: f64| v >= lo && (v < hi || (hi >= MAX_DISTANCE && v <= hi));
        within(x, self.lower.0, self.upper.0) && within(y, self.lower.1, self.upper.1)
    }
}

/// FT, PT, LM, CTX in that priority order.
pub fn default_boxes() -> Vec<RegionBox> {
    vec![
        RegionBox { label: Region::Ft, lower: (1.5, 0.0), upper: (2.0, 0.5) },
        RegionBox { label: Region::Pt, lower: (0.0, 1.5), upper: (0.5, 2.0) },
        RegionBox { label: Region::Lm, lower: (0.0, 0.0), upper: (0.5, 0.5) },
        RegionBox { label: Region::Ctx, lower: (0.5, 0.5), upper: (2.0, 2.0) },
    ]
}

/// Label of the first box containing the point, or `Other`.
pub fn classify_region(x: f64, y: f64, boxes: &[RegionBox]) -> Result<Region> {
    let ok = |v: f64| (0.0..=MAX_DISTANCE).contains(&v);
    if !(ok(x) && ok(y)) {
        return Err(Error::Range { x, y });
    }
    Ok(boxes.iter().find(|b| b.contains(x, y)).map_or(Region::Other, |b| b.label))
}

/// `P_part(target)` with only sentence `i` visible, for every sentence.
pub fn probe_sentences(backend: &dyn Backend, doc: &Document, prefix: &Prefix, target: TokenId) -> Result<Vec<f64>> {
    let sources: Vec<Document> = (0..doc.n_sentences()).map(|s| doc.keep_sentences(&BTreeSet::from([s]))).collect();
    let dists = backend.predict_batch(crate::backend::Mode::SPart, &sources, prefix)?;
    Ok(dists.iter().map(|d| d.prob(target)).collect())
}

#[derive(Clone, Copy)]
pub struct MapBackends<'a> {
    pub lm: &'a dyn Backend,
    pub s_empty: &'a dyn Backend,
    pub s_full: &'a dyn Backend,
}

impl<'a> MapBackends<'a> {
    /// Language model plus one summarizer used for both S∅ and S_full.
    pub fn new(lm: &'a dyn Backend, summarizer: &'a dyn Backend) -> Self {
        Self { lm, s_empty: summarizer, s_full: summarizer }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapSettings {
    pub boxes: Vec<RegionBox>,
    pub ctx_hd_threshold: f64,
}

impl Default for MapSettings {
    fn default() -> Self {
        Self { boxes: default_boxes(), ctx_hd_threshold: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub doc_id: String,
    pub step: usize,
    pub target: TokenId,
    pub x: f64,
    pub y: f64,
    pub p_sent: Vec<f64>,
    pub max_psent: f64,
    pub region: Region,
    pub ctx_hard: bool,
    /// The target is not the S_full argmax.
    #[serde(default)]
    pub target_mismatch: bool,
    /// The S_full argmax was tied; the lowest id was taken.
    #[serde(default)]
    pub argmax_tie: bool,
    /// Largest residual (truncated) mass among the compared distributions.
    #[serde(default)]
    pub residual: f64,
}

pub fn map_decision(
    backends: MapBackends<'_>,
    doc: &Document,
    prefix: &Prefix,
    target: TokenId,
    settings: &MapSettings,
) -> Result<DecisionRecord> {
    let full = predict_next(backends.s_full, &AblationConfig::s_full(), doc, prefix)?;
    let lm = predict_next(backends.lm, &AblationConfig::lm_empty(), doc, prefix)?;
    let empty = predict_next(backends.s_empty, &AblationConfig::s_empty(), doc, prefix)?;
    let (argmax, argmax_tie) = full.argmax();
    let target_mismatch = argmax != target;
    if target_mismatch {
        log::debug!("{} step {}: target {target} is not the full-model argmax {argmax}", doc.id, prefix.len() - 1);
    }
    let x = l1_distance(&lm, &full)?;
    let y = l1_distance(&empty, &full)?;
    let p_sent = probe_sentences(backends.s_full, doc, prefix, target)?;
    let max_psent = p_sent.iter().copied().fold(0.0, f64::max);
    let region = classify_region(x, y, &settings.boxes)?;
    let ctx_hard = region == Region::Ctx && max_psent < settings.ctx_hd_threshold;
    Ok(DecisionRecord {
        doc_id: doc.id.clone(),
        step: prefix.len() - 1,
        target,
        x,
        y,
        p_sent,
        max_psent,
        region,
        ctx_hard,
        target_mismatch,
        argmax_tie,
        residual: full.residual().max(lm.residual()).max(empty.residual()),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapSummary {
    pub decisions: usize,
    pub counts: BTreeMap<Region, usize>,
    /// Percentages; they sum to 100 when there is at least one decision.
    pub frequencies: BTreeMap<Region, f64>,
    /// First, second and third quartile of `max_psent`.
    pub max_psent_quartiles: Option<[f64; 3]>,
    pub ctx_hard: usize,
    pub target_mismatches: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusMap {
    pub records: Vec<DecisionRecord>,
    pub summary: MapSummary,
}

/// Map every summary decision in `corpus`. Records come back ordered by
/// (example, step) regardless of how the work was scheduled.
pub fn corpus_map(backends: MapBackends<'_>, corpus: &[Example], settings: &MapSettings) -> Result<CorpusMap> {
    if corpus.is_empty() {
        return Err(Error::Data("cannot map an empty corpus".into()));
    }
    let decisions = corpus_decisions(corpus, backends.s_full.vocab());
    let records = decisions
        .par_iter()
        .map(|d| map_decision(backends, &corpus[d.example].doc, &d.prefix, d.target, settings))
        .collect::<Result<Vec<_>>>()?;
    let summary = summarize(&records);
    Ok(CorpusMap { records, summary })
}

pub fn summarize(records: &[DecisionRecord]) -> MapSummary {
    let mut counts: BTreeMap<Region, usize> = Region::ALL.iter().map(|&r| (r, 0)).collect();
    for r in records {
        *counts.entry(r.region).or_default() += 1;
    }
    let total = records.len();
    let frequencies = counts
        .iter()
        .map(|(&r, &c)| (r, if total == 0 { 0.0 } else { 100.0 * c as f64 / total as f64 }))
        .collect();
    let maxes: Vec<f64> = records.iter().map(|r| r.max_psent).collect();
    MapSummary {
        decisions: total,
        counts,
        frequencies,
        max_psent_quartiles: quartiles(&maxes),
        ctx_hard: records.iter().filter(|r| r.ctx_hard).count(),
        target_mismatches: records.iter().filter(|r| r.target_mismatch).count(),
    }
}

/// Quantile by linear interpolation between order statistics (`h = (n-1)p`).
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn quartiles(values: &[f64]) -> Option<[f64; 3]> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    Some([quantile(&v, 0.25), quantile(&v, 0.5), quantile(&v, 0.75)])
}

/// Fraction of corpus decisions where both backends, run under the same
/// configuration, have the same most probable token.
pub fn top1_agreement(a: &dyn Backend, b: &dyn Backend, corpus: &[Example], config: &AblationConfig) -> Result<f64> {
    if a.vocab().len() != b.vocab().len() || a.vocab().hash() != b.vocab().hash() {
        return Err(Error::Vocab("backends use different vocabularies".into()));
    }
    let decisions = corpus_decisions(corpus, a.vocab());
    if decisions.is_empty() {
        return Err(Error::Data("no decisions to compare".into()));
    }
    let agree = decisions
        .par_iter()
        .map(|d| {
            let doc = &corpus[d.example].doc;
            let pa = predict_next(a, config, doc, &d.prefix)?;
            let pb = predict_next(b, config, doc, &d.prefix)?;
            Ok((pa.argmax().0 == pb.argmax().0) as usize)
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .sum::<usize>();
    Ok(agree as f64 / decisions.len() as f64)
}
