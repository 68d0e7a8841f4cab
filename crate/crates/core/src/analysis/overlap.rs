//! Word n-gram overlap between reference summaries and a document dump.

use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::hash::{Hash, Hasher};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_N: usize = 7;
pub const DEFAULT_MIN_MATCHES: usize = 3;
const SAMPLES: usize = 3;
/// Documents handed to the worker pool at once.
const SHARD: usize = 512;

/// Lower-case, split on whitespace, trim punctuation from both ends of each
/// word and drop words that were only punctuation.
pub fn normalize_words(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .filter(|w| !w.is_empty())
        .collect()
}

fn distinct_ngrams(words: &[String], n: usize) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for g in words.windows(n) {
        let s = g.join(" ");
        if seen.insert(s.clone()) {
            out.push(s);
        }
    }
    out
}

fn hash_str(s: &str) -> u64 {
    let mut h = DefaultHasher::new();
    s.hash(&mut h);
    h.finish()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverlapHit {
    pub example_id: String,
    pub doc_id: String,
    /// Distinct shared n-grams.
    pub count: usize,
    pub samples: Vec<String>,
}

/// Inverted index from n-gram hash to the summaries containing it.
pub struct OverlapIndex {
    n: usize,
    ids: Vec<String>,
    grams: Vec<Vec<String>>,
    postings: HashMap<u64, Vec<(u32, u32)>>,
}

impl OverlapIndex {
    pub fn new<'a, I>(summaries: I, n: usize) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        if n < 1 {
            return Err(Error::Config("n-gram length must be at least 1".into()));
        }
        let mut ids = Vec::new();
        let mut grams = Vec::new();
        let mut postings: HashMap<u64, Vec<(u32, u32)>> = HashMap::new();
        for (s, (id, text)) in summaries.into_iter().enumerate() {
            let g = distinct_ngrams(&normalize_words(text), n);
            for (k, gram) in g.iter().enumerate() {
                postings.entry(hash_str(gram)).or_default().push((s as u32, k as u32));
            }
            ids.push(id.to_string());
            grams.push(g);
        }
        Ok(Self { n, ids, grams, postings })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Hits for one document, ordered by summary.
    pub fn scan_doc(&self, doc_id: &str, text: &str, min_matches: usize) -> Vec<OverlapHit> {
        let mut shared: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
        for gram in distinct_ngrams(&normalize_words(text), self.n) {
            if let Some(post) = self.postings.get(&hash_str(&gram)) {
                for &(s, k) in post {
                    if self.grams[s as usize][k as usize] == gram {
                        shared.entry(s).or_default().push(k);
                    }
                }
            }
        }
        shared
            .into_iter()
            .filter(|(_, ks)| ks.len() > min_matches)
            .map(|(s, mut ks)| {
                ks.sort_unstable();
                OverlapHit {
                    example_id: self.ids[s as usize].clone(),
                    doc_id: doc_id.to_string(),
                    count: ks.len(),
                    samples: ks.iter().take(SAMPLES).map(|&k| self.grams[s as usize][k as usize].clone()).collect(),
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapReport {
    pub hits: Vec<OverlapHit>,
    pub docs_scanned: usize,
    pub examples: usize,
    pub examples_flagged: usize,
    pub fraction: f64,
}

/// Stream `(doc_id, text)` pairs against the summaries. A hit needs more
/// than `min_matches` distinct shared n-grams.
pub fn overlap_scan<I>(docs: I, summaries: &[(String, String)], n: usize, min_matches: usize) -> Result<OverlapReport>
where
    I: IntoIterator<Item = Result<(String, String)>>,
{
    let index = OverlapIndex::new(summaries.iter().map(|(a, b)| (a.as_str(), b.as_str())), n)?;
    let mut hits = Vec::new();
    let mut docs_scanned = 0;
    let mut shard = Vec::with_capacity(SHARD);
    let flush = |shard: &mut Vec<(String, String)>, hits: &mut Vec<OverlapHit>| {
        let found: Vec<Vec<OverlapHit>> = shard.par_iter().map(|(id, text)| index.scan_doc(id, text, min_matches)).collect();
        hits.extend(found.into_iter().flatten());
        shard.clear();
    };
    for doc in docs {
        shard.push(doc?);
        docs_scanned += 1;
        if shard.len() == SHARD {
            flush(&mut shard, &mut hits);
        }
    }
    flush(&mut shard, &mut hits);
    Ok(report(hits, docs_scanned, summaries.len()))
}

fn report(hits: Vec<OverlapHit>, docs_scanned: usize, examples: usize) -> OverlapReport {
    let flagged: HashSet<&str> = hits.iter().map(|h| h.example_id.as_str()).collect();
    let examples_flagged = flagged.len();
    let fraction = if examples == 0 { 0.0 } else { examples_flagged as f64 / examples as f64 };
    OverlapReport { hits, docs_scanned, examples, examples_flagged, fraction }
}

/// Reference implementation: every document against every summary with
/// plain string sets.
pub fn naive_scan(docs: &[(String, String)], summaries: &[(String, String)], n: usize, min_matches: usize) -> Result<OverlapReport> {
    if n < 1 {
        return Err(Error::Config("n-gram length must be at least 1".into()));
    }
    let sums: Vec<Vec<String>> = summaries.iter().map(|(_, t)| distinct_ngrams(&normalize_words(t), n)).collect();
    let mut hits = Vec::new();
    for (doc_id, text) in docs {
        let grams: HashSet<String> = distinct_ngrams(&normalize_words(text), n).into_iter().collect();
        for ((ex_id, _), sg) in summaries.iter().zip(&sums) {
            let shared: Vec<&String> = sg.iter().filter(|g| grams.contains(*g)).collect();
            if shared.len() > min_matches {
                hits.push(OverlapHit {
                    example_id: ex_id.clone(),
                    doc_id: doc_id.clone(),
                    count: shared.len(),
                    samples: shared.iter().take(SAMPLES).map(|g| g.to_string()).collect(),
                });
            }
        }
    }
    Ok(report(hits, docs.len(), summaries.len()))
}
