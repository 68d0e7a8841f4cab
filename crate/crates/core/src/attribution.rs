//! Per-piece attribution for a single (prefix, target) decision.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backend::{attention_weights, check_target, input_gradients, Backend, Mode};
use crate::document::{Document, Prefix};
use crate::error::{Error, Result};
use crate::map::probe_sentences;
use crate::vocab::TokenId;

/// Masked variants sent to the backend per batch.
pub const OCCLUSION_BATCH: usize = 100;
pub const DEFAULT_IG_STEPS: usize = 50;
pub const DEFAULT_TOP_K: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Random,
    Lead,
    Occlusion,
    Attention,
    #[serde(rename = "inpgrad")]
    InpGrad,
    #[serde(rename = "intgrad")]
    IntGrad,
}

impl Method {
    pub const ALL: [Method; 6] =
        [Method::Random, Method::Lead, Method::Occlusion, Method::Attention, Method::InpGrad, Method::IntGrad];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Random => "random",
            Method::Lead => "lead",
            Method::Occlusion => "occlusion",
            Method::Attention => "attention",
            Method::InpGrad => "inpgrad",
            Method::IntGrad => "intgrad",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown attribution method {s:?}")))
    }
}

/// JSON cannot carry infinities; they travel as `null`.
mod scores_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(scores: &[f64], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(scores.iter().map(|v| v.is_finite().then_some(*v)))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let raw: Vec<Option<f64>> = Vec::deserialize(d)?;
        Ok(raw.into_iter().map(|v| v.unwrap_or(f64::NEG_INFINITY)).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionVector {
    pub doc_id: String,
    pub step: usize,
    pub target: TokenId,
    pub method: Method,
    /// One score per source piece. Pieces excluded by sentence
    /// pre-selection score `-inf`.
    #[serde(with = "scores_serde")]
    pub scores: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preselected_sentences: Option<Vec<usize>>,
}

impl AttributionVector {
    fn new(method: Method, doc: &Document, prefix: &Prefix, target: TokenId, scores: Vec<f64>) -> Self {
        Self { doc_id: doc.id.clone(), step: prefix.len() - 1, target, method, scores, preselected_sentences: None }
    }

    /// Piece indices by descending score, lower index first on ties.
    pub fn ranking(&self) -> Vec<usize> {
        rank_desc(&self.scores)
    }
}

pub(crate) fn rank_desc(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceAttribution {
    pub doc_id: String,
    pub step: usize,
    pub target: TokenId,
    pub method: Method,
    #[serde(with = "scores_serde")]
    pub scores: Vec<f64>,
}

impl SentenceAttribution {
    pub fn ranking(&self) -> Vec<usize> {
        rank_desc(&self.scores)
    }
}

fn mode_for(source: &Document) -> Mode {
    if source.is_empty() {
        Mode::SEmpty
    } else {
        Mode::SPart
    }
}

fn occlusion_scores(
    backend: &dyn Backend,
    doc: &Document,
    prefix: &Prefix,
    target: TokenId,
    reference: f64,
) -> Result<Vec<f64>> {
    let mask = backend.vocab().mask();
    let mut scores = Vec::with_capacity(doc.len());
    let idx: Vec<usize> = (0..doc.len()).collect();
    for chunk in idx.chunks(OCCLUSION_BATCH) {
        let variants: Vec<Document> = chunk.iter().map(|&i| doc.masked(&BTreeSet::from([i]), mask)).collect();
        let dists = backend.predict_batch(Mode::SPart, &variants, prefix)?;
        scores.extend(dists.iter().map(|d| reference - d.prob(target)));
    }
    Ok(scores)
}

/// `α_i = P(target | doc) − P(target | doc with piece i masked)`.
pub fn occlusion_token(backend: &dyn Backend, doc: &Document, prefix: &Prefix, target: TokenId) -> Result<AttributionVector> {
    check_target(backend, target)?;
    let reference = backend.predict(Mode::SFull, doc, prefix)?.prob(target);
    let scores = occlusion_scores(backend, doc, prefix, target, reference)?;
    Ok(AttributionVector::new(Method::Occlusion, doc, prefix, target, scores))
}

/// Sentence `i` scores `P(target | doc) − P(target | doc without sentence i)`.
/// The sentence's pieces are deleted, not masked.
pub fn occlusion_sentence(backend: &dyn Backend, doc: &Document, prefix: &Prefix, target: TokenId) -> Result<SentenceAttribution> {
    check_target(backend, target)?;
    if doc.n_sentences() == 0 {
        return Err(Error::EmptyDocument);
    }
    let reference = backend.predict(Mode::SFull, doc, prefix)?.prob(target);
    let mut scores = Vec::with_capacity(doc.n_sentences());
    for s in 0..doc.n_sentences() {
        let rest = doc.remove_sentences(&BTreeSet::from([s]));
        scores.push(reference - backend.predict(mode_for(&rest), &rest, prefix)?.prob(target));
    }
    Ok(SentenceAttribution { doc_id: doc.id.clone(), step: prefix.len() - 1, target, method: Method::Occlusion, scores })
}

/// Pooled final-layer cross-attention; the target plays no part.
pub fn attention_attr(backend: &dyn Backend, doc: &Document, prefix: &Prefix, target: TokenId) -> Result<AttributionVector> {
    let scores = attention_weights(backend, doc, prefix)?;
    if scores.len() != doc.len() {
        return Err(Error::Shape { expected: doc.len(), got: scores.len() });
    }
    Ok(AttributionVector::new(Method::Attention, doc, prefix, target, scores))
}

fn row_dots(a: &Array2<f64>, b: &Array2<f64>) -> Vec<f64> {
    (a * b).sum_axis(Axis(1)).to_vec()
}

/// Gradient times input, summed over embedding dimensions.
pub fn input_gradient_attr(backend: &dyn Backend, doc: &Document, prefix: &Prefix, target: TokenId) -> Result<AttributionVector> {
    let pack = input_gradients(backend, doc, prefix, target)?;
    Ok(AttributionVector::new(Method::InpGrad, doc, prefix, target, row_dots(&pack.gradients, &pack.embeddings)))
}

/// Integrated gradients with an `r`-step right-point Riemann sum. The default
/// baseline puts the MASK embedding at every source position.
pub fn integrated_gradients(
    backend: &dyn Backend,
    doc: &Document,
    prefix: &Prefix,
    target: TokenId,
    steps: usize,
    baseline: Option<&Array2<f64>>,
) -> Result<AttributionVector> {
    let diff = backend.differentiable().ok_or(Error::UnsupportedCapability("gradients"))?;
    if steps < 1 {
        return Err(Error::Config("integrated gradients needs at least one step".into()));
    }
    check_target(backend, target)?;
    let x = diff.source_embeddings(doc);
    let b = match baseline {
        Some(b) if b.raw_dim() != x.raw_dim() => return Err(Error::Shape { expected: x.len(), got: b.len() }),
        Some(b) => b.clone(),
        None => mask_baseline(&diff.mask_embedding(), x.nrows()),
    };
    let delta = &x - &b;
    let grads = (1..=steps)
        .into_par_iter()
        .map(|k| {
            let point = &b + &(&delta * (k as f64 / steps as f64));
            diff.objective_grad(point.view(), prefix, target).map(|(_, g)| g)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut mean = Array2::zeros(x.raw_dim());
    for g in &grads {
        mean += g;
    }
    mean /= steps as f64;
    Ok(AttributionVector::new(Method::IntGrad, doc, prefix, target, row_dots(&delta, &mean)))
}

pub fn mask_baseline(mask: &Array1<f64>, rows: usize) -> Array2<f64> {
    let mut b = Array2::zeros((rows, mask.len()));
    for mut row in b.rows_mut() {
        row.assign(mask);
    }
    b
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum BaselineKind {
    Random,
    Lead,
}

/// RANDOM: scores from a seeded permutation. LEAD: `n − i`.
pub fn baseline_scores(kind: BaselineKind, n: usize, seed: u64) -> Vec<f64> {
    match kind {
        BaselineKind::Lead => (0..n).map(|i| (n - i) as f64).collect(),
        BaselineKind::Random => {
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let mut scores = vec![0.0; n];
            for (rank, &piece) in perm.iter().enumerate() {
                scores[piece] = (n - rank) as f64;
            }
            scores
        }
    }
}

pub fn baseline_attr(kind: BaselineKind, doc: &Document, prefix: &Prefix, target: TokenId, seed: u64) -> AttributionVector {
    let method = match kind {
        BaselineKind::Random => Method::Random,
        BaselineKind::Lead => Method::Lead,
    };
    AttributionVector::new(method, doc, prefix, target, baseline_scores(kind, doc.len(), seed))
}

/// Seed for one decision, stable across runs and platforms.
pub fn decision_seed(seed: u64, doc_id: &str, step: usize) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(doc_id.as_bytes());
    h.update((step as u64).to_le_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}

/// Mean piece score of every sentence.
pub fn aggregate_to_sentences(attr: &AttributionVector, doc: &Document) -> Result<SentenceAttribution> {
    if attr.scores.len() != doc.len() {
        return Err(Error::Shape { expected: doc.len(), got: attr.scores.len() });
    }
    let scores = (0..doc.n_sentences())
        .map(|s| {
            let r = doc.sentence_pieces(s);
            let d = r.len() as f64;
            attr.scores[r].iter().sum::<f64>() / d
        })
        .collect();
    Ok(SentenceAttribution { doc_id: attr.doc_id.clone(), step: attr.step, target: attr.target, method: attr.method, scores })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributionOptions {
    pub ig_steps: usize,
    /// Base seed for RANDOM; mixed with the decision key.
    pub seed: u64,
}

impl Default for AttributionOptions {
    fn default() -> Self {
        Self { ig_steps: DEFAULT_IG_STEPS, seed: 0 }
    }
}

pub fn attribute(
    backend: &dyn Backend,
    doc: &Document,
    prefix: &Prefix,
    target: TokenId,
    method: Method,
    opts: &AttributionOptions,
) -> Result<AttributionVector> {
    match method {
        Method::Random => {
            let seed = decision_seed(opts.seed, &doc.id, prefix.len() - 1);
            Ok(baseline_attr(BaselineKind::Random, doc, prefix, target, seed))
        }
        Method::Lead => Ok(baseline_attr(BaselineKind::Lead, doc, prefix, target, 0)),
        Method::Occlusion => occlusion_token(backend, doc, prefix, target),
        Method::Attention => attention_attr(backend, doc, prefix, target),
        Method::InpGrad => input_gradient_attr(backend, doc, prefix, target),
        Method::IntGrad => integrated_gradients(backend, doc, prefix, target, opts.ig_steps, None),
    }
}

/// Sentence probing picks the `k` sentences with the highest `P_part`; the
/// method then runs on each of them as a stand-alone source. Pieces of other
/// sentences score `-inf`.
pub fn two_stage(
    backend: &dyn Backend,
    doc: &Document,
    prefix: &Prefix,
    target: TokenId,
    method: Method,
    k: usize,
    opts: &AttributionOptions,
) -> Result<AttributionVector> {
    if k < 1 {
        return Err(Error::Config("two-stage selection needs k >= 1".into()));
    }
    check_target(backend, target)?;
    let m = doc.n_sentences();
    if m == 0 {
        return Err(Error::EmptyDocument);
    }
    let k = if k > m {
        log::warn!("{}: k = {k} exceeds {m} sentences, using {m}", doc.id);
        m
    } else {
        k
    };
    let probe = probe_sentences(backend, doc, prefix, target)?;
    let chosen: Vec<usize> = rank_desc(&probe).into_iter().take(k).collect();
    let mut scores = vec![f64::NEG_INFINITY; doc.len()];
    for &s in &chosen {
        let sub = doc.keep_sentences(&BTreeSet::from([s]));
        let local = match method {
            Method::Occlusion => occlusion_scores(backend, &sub, prefix, target, probe[s])?,
            _ => attribute(backend, &sub, prefix, target, method, opts)?.scores,
        };
        for (piece, v) in doc.sentence_pieces(s).zip(local) {
            scores[piece] = v;
        }
    }
    let mut out = AttributionVector::new(method, doc, prefix, target, scores);
    out.preselected_sentences = Some(chosen);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{
        predict_next, AblationConfig, Attentive, Condition, CountingBackend, Differentiable, LinearReadout, OracleSpec, ScriptedOracle,
    };
    use crate::distribution::TokenDistribution;
    use crate::document::tokenize;
    use crate::toy::{ToyModelConfig, ToyTransformer};
    use crate::vocab::Vocab;
    use ndarray::array;
    use proptest::prelude::*;

    fn key_fixture() -> (Vocab, Document, ScriptedOracle, TokenId) {
        let v = Vocab::build(["a key b . c d . e f .", "target"]).unwrap();
        let d = tokenize("doc", "a key b . c d . e f .", &v).unwrap();
        let spec = OracleSpec::default().with_default("target", 0.1).rule(Condition::token("key"), "target", 0.9);
        let o = ScriptedOracle::new(v.clone(), &spec).unwrap();
        let t = v.id("target").unwrap();
        (v, d, o, t)
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn method_names_round_trip() {
        let names: Vec<_> = Method::ALL.iter().map(|m| m.as_str()).collect();
        assert_eq!(names, ["random", "lead", "occlusion", "attention", "inpgrad", "intgrad"]);
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{m}\""));
        }
        assert!("lime".parse::<Method>().is_err());
    }

    #[test]
    fn occlusion_finds_the_key_piece() {
        let (v, d, o, t) = key_fixture();
        let a = occlusion_token(&o, &d, &Prefix::start(v.sos()), t).unwrap();
        let mut expect = vec![0.0; d.len()];
        expect[1] = 0.8;
        assert!(close(&a.scores, &expect, 1e-12), "{:?}", a.scores);
        assert_eq!(a.ranking()[0], 1);
    }

    #[test]
    fn occlusion_of_single_piece() {
        let v = Vocab::build(["key", "target"]).unwrap();
        let d = tokenize("doc", "key", &v).unwrap();
        let spec = OracleSpec::default().with_default("target", 0.1).rule(Condition::token("key"), "target", 0.9);
        let o = ScriptedOracle::new(v.clone(), &spec).unwrap();
        let t = v.id("target").unwrap();
        let pre = Prefix::start(v.sos());
        let a = occlusion_token(&o, &d, &pre, t).unwrap();
        let all_masked = o.predict(Mode::SPart, &d.masked(&d.all_pieces(), v.mask()), &pre).unwrap().prob(t);
        assert_eq!(a.scores, vec![0.9 - all_masked]);
    }

    #[test]
    fn occlusion_batches_in_hundreds() {
        let words: Vec<String> = (0..250).map(|i| format!("w{i}")).collect();
        let text = words.join(" ");
        let v = Vocab::build([text.as_str(), "target"]).unwrap();
        let d = tokenize("doc", &text, &v).unwrap();
        let o = ScriptedOracle::new(v.clone(), &OracleSpec::default().with_default("target", 0.5)).unwrap();
        let counter = CountingBackend::new(&o);
        occlusion_token(&counter, &d, &Prefix::start(v.sos()), v.id("target").unwrap()).unwrap();
        assert_eq!(counter.calls(), 251);
    }

    #[test]
    fn sentence_occlusion() {
        let (v, d, _, t) = key_fixture();
        let spec = OracleSpec::default().with_default("target", 0.1).rule(Condition::sentence(1), "target", 0.9);
        let o = ScriptedOracle::new(v.clone(), &spec).unwrap();
        let s = occlusion_sentence(&o, &d, &Prefix::start(v.sos()), t).unwrap();
        assert!(close(&s.scores, &[0.0, 0.8, 0.0], 1e-9), "{:?}", s.scores);
    }

    #[test]
    fn sentence_occlusion_single_sentence() {
        let (v, _, o, t) = key_fixture();
        let d = tokenize("doc", "a key b .", &v).unwrap();
        let pre = Prefix::start(v.sos());
        let s = occlusion_sentence(&o, &d, &pre, t).unwrap();
        let empty = predict_next(&o, &AblationConfig::s_empty(), &d, &pre).unwrap().prob(t);
        assert!(close(&s.scores, &[0.9 - empty], 1e-12));
    }

    struct Uniform(Vocab);

    impl Backend for Uniform {
        fn vocab(&self) -> &Vocab {
            &self.0
        }
        fn predict(&self, _: Mode, _: &Document, _: &Prefix) -> Result<TokenDistribution> {
            Ok(TokenDistribution::uniform(self.0.len()))
        }
        fn attentive(&self) -> Option<&dyn Attentive> {
            Some(self)
        }
    }

    impl Attentive for Uniform {
        fn source_attention(&self, source: &Document, _: &Prefix) -> Result<Vec<f64>> {
            let mut logits = vec![0.0; source.len() + 2];
            logits[0] = 5.0;
            let p = TokenDistribution::softmax(&logits)?;
            let mut special = vec![false; logits.len()];
            special[0] = true;
            special[logits.len() - 1] = true;
            Ok(crate::backend::pool_attention(&[p.probs().to_vec()], &special))
        }
    }

    #[test]
    fn attention_scores() {
        let v = Vocab::build(["a b c d"]).unwrap();
        let d = tokenize("doc", "a b c d", &v).unwrap();
        let a = attention_attr(&Uniform(v.clone()), &d, &Prefix::start(v.sos()), 0).unwrap();
        assert!(close(&a.scores, &[0.25; 4], 1e-12));
        let (_, d, o, t) = key_fixture();
        assert!(matches!(attention_attr(&o, &d, &Prefix::start(v.sos()), t), Err(Error::UnsupportedCapability(_))));
    }

    fn linear() -> (Vocab, Document, LinearReadout, Array2<f64>) {
        let v = Vocab::build(["a b c", "target"]).unwrap();
        let d = tokenize("doc", "a b c", &v).unwrap();
        let mut emb = Array2::zeros((v.len(), 2));
        emb.row_mut(v.id("a").unwrap()).assign(&array![1.0, 2.0]);
        emb.row_mut(v.id("b").unwrap()).assign(&array![-1.0, 0.5]);
        emb.row_mut(v.id("c").unwrap()).assign(&array![0.0, 0.0]);
        emb.row_mut(v.mask()).assign(&array![0.3, -0.2]);
        let w = array![[0.5, -1.0], [2.0, 1.0], [3.0, 3.0]];
        let m = LinearReadout::new(v.clone(), v.id("target").unwrap(), emb.clone(), w.clone()).unwrap();
        (v, d, m, w)
    }

    #[test]
    fn gradient_times_input_on_linear_model() {
        let (v, d, m, _) = linear();
        let a = input_gradient_attr(&m, &d, &Prefix::start(v.sos()), v.id("target").unwrap()).unwrap();
        // w_i · x_i by hand: 0.5 - 2 = -1.5; -2 + 0.5 = -1.5; 0
        assert!(close(&a.scores, &[-1.5, -1.5, 0.0], 1e-12), "{:?}", a.scores);
    }

    #[test]
    fn integrated_gradients_on_linear_model() {
        let (v, d, m, _) = linear();
        let t = v.id("target").unwrap();
        let pre = Prefix::start(v.sos());
        // w_i · (x_i − mask): (0.5, -1)·(0.7, 2.2) = -1.85; (2, 1)·(-1.3, 0.7) = -1.9; (3, 3)·(-0.3, 0.2) = -0.3
        for r in [1, 3, 50] {
            let a = integrated_gradients(&m, &d, &pre, t, r, None).unwrap();
            assert!(close(&a.scores, &[-1.85, -1.9, -0.3], 1e-12), "{:?}", a.scores);
        }
        let x = m.source_embeddings(&d);
        let same = integrated_gradients(&m, &d, &pre, t, 10, Some(&x)).unwrap();
        assert_eq!(same.scores, vec![0.0; 3]);
        assert!(matches!(integrated_gradients(&m, &d, &pre, t, 0, None), Err(Error::Config(_))));
    }

    #[test]
    fn gradient_methods_need_capability() {
        let (v, d, o, t) = key_fixture();
        let pre = Prefix::start(v.sos());
        assert!(matches!(input_gradient_attr(&o, &d, &pre, t), Err(Error::UnsupportedCapability(_))));
        assert!(matches!(integrated_gradients(&o, &d, &pre, t, 4, None), Err(Error::UnsupportedCapability(_))));
    }

    #[test]
    fn lead_and_random_baselines() {
        assert_eq!(rank_desc(&baseline_scores(BaselineKind::Lead, 3, 0)), [0, 1, 2]);
        assert_eq!(baseline_scores(BaselineKind::Random, 9, 4), baseline_scores(BaselineKind::Random, 9, 4));
        let n = 8;
        let trials = 10_000;
        let mut rank_sum = vec![0.0; n];
        for seed in 0..trials {
            for (rank, piece) in rank_desc(&baseline_scores(BaselineKind::Random, n, seed)).into_iter().enumerate() {
                rank_sum[piece] += rank as f64;
            }
        }
        let expect = (n - 1) as f64 / 2.0;
        for s in rank_sum {
            let mean = s / trials as f64;
            assert!((mean - expect).abs() <= 0.05 * expect, "mean rank {mean}");
        }
    }

    #[test]
    fn sentence_aggregation() {
        let v = Vocab::build(["a b . c d .", "e"]).unwrap();
        let d = Document::from_words("d", &[&[&["a"], &["b"]], &[&["c"], &["d"]]], &v).unwrap();
        let mk = |s: Vec<f64>| AttributionVector {
            doc_id: "d".into(),
            step: 0,
            target: 0,
            method: Method::Lead,
            scores: s,
            preselected_sentences: None,
        };
        assert_eq!(aggregate_to_sentences(&mk(vec![1.0, 1.0, 0.0, 0.0]), &d).unwrap().scores, [1.0, 0.0]);
        assert_eq!(aggregate_to_sentences(&mk(vec![0.5; 4]), &d).unwrap().scores, [0.5, 0.5]);
        let d3 = Document::from_words("d", &[&[&["a"]], &[&["b"], &["c"]]], &v).unwrap();
        assert_eq!(aggregate_to_sentences(&mk(vec![3.0, 0.0, 0.0]), &d3).unwrap().scores, [3.0, 0.0]);
        assert!(matches!(aggregate_to_sentences(&mk(vec![1.0]), &d), Err(Error::Shape { .. })));
    }

    #[test]
    fn ranking_breaks_ties_by_index() {
        assert_eq!(rank_desc(&[1.0, 3.0, 3.0, f64::NEG_INFINITY, 1.0]), [1, 2, 0, 4, 3]);
    }

    #[test]
    fn infinite_scores_survive_json() {
        let a = AttributionVector {
            doc_id: "d".into(),
            step: 1,
            target: 5,
            method: Method::Occlusion,
            scores: vec![0.5, f64::NEG_INFINITY],
            preselected_sentences: Some(vec![0]),
        };
        let s = serde_json::to_string(&a).unwrap();
        assert!(s.contains("[0.5,null]"), "{s}");
        assert_eq!(serde_json::from_str::<AttributionVector>(&s).unwrap(), a);
    }

    #[test]
    fn two_stage_keeps_the_top_piece() {
        let (v, d, o, t) = key_fixture();
        let pre = Prefix::start(v.sos());
        let full = occlusion_token(&o, &d, &pre, t).unwrap();
        let ts = two_stage(&o, &d, &pre, t, Method::Occlusion, 1, &AttributionOptions::default()).unwrap();
        assert_eq!(ts.ranking()[0], full.ranking()[0]);
        assert_eq!(ts.preselected_sentences, Some(vec![0]));
        assert!(ts.scores[4..].iter().all(|s| *s == f64::NEG_INFINITY));
    }

    #[test]
    fn two_stage_call_budget() {
        let (v, d, o, t) = key_fixture();
        let counter = CountingBackend::new(&o);
        two_stage(&counter, &d, &Prefix::start(v.sos()), t, Method::Occlusion, 2, &AttributionOptions::default()).unwrap();
        // three probes plus the pieces of the first two sentences
        assert_eq!(counter.calls(), 3 + 4 + 3);
    }

    #[test]
    fn two_stage_clips_k() {
        let (v, d, o, t) = key_fixture();
        let ts = two_stage(&o, &d, &Prefix::start(v.sos()), t, Method::Lead, 9, &AttributionOptions::default()).unwrap();
        assert_eq!(ts.preselected_sentences.unwrap().len(), 3);
        assert!(ts.scores.iter().all(|s| s.is_finite()));
        assert!(two_stage(&o, &d, &Prefix::start(v.sos()), t, Method::Lead, 0, &AttributionOptions::default()).is_err());
    }

    fn tiny_toy() -> (ToyTransformer, Vocab) {
        let v = Vocab::build(["a b c d e f g h . target"]).unwrap();
        let cfg = ToyModelConfig { layers: 1, heads: 2, embed_dim: 8, ffn_dim: 8, max_len: 32, seed: 3 };
        (ToyTransformer::new(cfg, v.clone(), false).unwrap(), v)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn batched_occlusion_equals_naive_loop(words in prop::collection::vec(0usize..8, 1..12)) {
            let (m, v) = tiny_toy();
            let names = ["a", "b", "c", "d", "e", "f", "g", "h"];
            let text: Vec<&str> = words.iter().map(|&w| names[w]).collect();
            let d = tokenize("doc", &text.join(" "), &v).unwrap();
            let pre = Prefix::start(v.sos());
            let t = v.id("target").unwrap();
            let fast = occlusion_token(&m, &d, &pre, t).unwrap();
            let full = m.predict(Mode::SFull, &d, &pre).unwrap().prob(t);
            let naive: Vec<f64> = (0..d.len())
                .map(|i| full - m.predict(Mode::SPart, &d.masked(&BTreeSet::from([i]), v.mask()), &pre).unwrap().prob(t))
                .collect();
            prop_assert_eq!(fast.scores, naive);
        }

        #[test]
        fn piece_constant_scores_aggregate_to_constants(c in -5.0f64..5.0, n in 1usize..6) {
            let v = Vocab::build(["a ."]).unwrap();
            let d = tokenize("d", &vec!["a ."; n].join(" "), &v).unwrap();
            let attr = baseline_attr(BaselineKind::Lead, &d, &Prefix::start(v.sos()), 0, 0);
            let flat = AttributionVector { scores: vec![c; d.len()], ..attr };
            let s = aggregate_to_sentences(&flat, &d).unwrap();
            prop_assert!(s.scores.iter().all(|x| (x - c).abs() < 1e-12));
        }
    }
}
