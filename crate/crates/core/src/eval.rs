//! Counterfactual evaluation: show only, or take away, the top-ranked part
//! of the source and measure how well the model still predicts its token.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attribution::{aggregate_to_sentences, AttributionVector, Method};
use crate::backend::{Backend, Mode};
use crate::distribution::TokenDistribution;
use crate::document::{Document, Prefix, CONTINUATION};
use crate::error::{Error, Result};
use crate::vocab::{TokenId, Vocab};

pub const NLL_FLOOR: f64 = 1e-12;
pub const TOKEN_BUDGETS: [usize; 5] = [1, 2, 4, 8, 16];
pub const SENTENCE_BUDGETS: [usize; 4] = [1, 2, 3, 4];
pub const DEFAULT_WINDOW: usize = 1;

pub fn nll(dist: &TokenDistribution, target: TokenId) -> f64 {
    -dist.prob(target).max(NLL_FLOOR).ln()
}

/// Mean of the budget evaluations minus the no-budget baseline.
pub fn delta(baseline: f64, evals: &[f64]) -> f64 {
    if evals.is_empty() {
        return 0.0;
    }
    evals.iter().sum::<f64>() / evals.len() as f64 - baseline
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SettingKind {
    DispTok,
    RmTok,
    DispSent,
    RmSent,
}

impl SettingKind {
    pub const ALL: [SettingKind; 4] = [SettingKind::DispTok, SettingKind::RmTok, SettingKind::DispSent, SettingKind::RmSent];

    pub fn is_token(self) -> bool {
        matches!(self, SettingKind::DispTok | SettingKind::RmTok)
    }

    pub fn is_disp(self) -> bool {
        matches!(self, SettingKind::DispTok | SettingKind::DispSent)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SettingKind::DispTok => "DispTok",
            SettingKind::RmTok => "RmTok",
            SettingKind::DispSent => "DispSent",
            SettingKind::RmSent => "RmSent",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let norm: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_lowercase();
        SettingKind::ALL
            .into_iter()
            .find(|k| k.as_str().to_ascii_lowercase() == norm)
            .ok_or_else(|| Error::Config(format!("unknown evaluation setting {s:?}")))
    }
}

impl fmt::Display for SettingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalSetting {
    pub kind: SettingKind,
    pub budgets: Vec<usize>,
    /// Neighbouring pieces added around each selected piece (token settings).
    pub context_window: usize,
}

impl EvalSetting {
    pub fn new(kind: SettingKind, budgets: Vec<usize>, context_window: usize) -> Result<Self> {
        if budgets.is_empty() || budgets[0] < 1 || budgets.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!("budgets must be positive and strictly increasing, got {budgets:?}")));
        }
        Ok(Self { kind, budgets, context_window })
    }

    pub fn standard(kind: SettingKind) -> Self {
        let budgets = if kind.is_token() { TOKEN_BUDGETS.to_vec() } else { SENTENCE_BUDGETS.to_vec() };
        Self { kind, budgets, context_window: DEFAULT_WINDOW }
    }
}

/// Visible (Disp) or hidden (Rm) pieces for a budget of `n` ranked pieces.
///
/// The ranking is walked from the top. Each ranked piece not yet covered is
/// added together with the rest of its word, then its neighbours up to
/// `window` pieces away (nearest first, left before right) until `n` pieces
/// have been taken. A word is never split.
pub fn budget_fill(ranked: &[usize], doc: &Document, n: usize, window: usize) -> Result<BTreeSet<usize>> {
    let mut out = BTreeSet::new();
    for &seed in ranked {
        if out.len() >= n {
            break;
        }
        if seed >= doc.len() {
            return Err(Error::Index { index: seed, len: doc.len() });
        }
        if out.contains(&seed) {
            continue;
        }
        out.insert(seed);
        out.extend(doc.word_pieces(doc.word_of_piece(seed)));
        for d in 1..=window {
            for p in [seed.checked_sub(d), Some(seed + d).filter(|&p| p < doc.len())].into_iter().flatten() {
                if out.len() >= n {
                    break;
                }
                out.insert(p);
            }
        }
    }
    Ok(out)
}

/// Top `n` sentences of a sentence ranking.
pub fn sentence_fill(ranked: &[usize], n: usize) -> BTreeSet<usize> {
    ranked.iter().copied().take(n).collect()
}

/// Ablated source for a setting. `selection` holds piece indices for token
/// settings and sentence indices for sentence settings.
pub fn make_input(kind: SettingKind, doc: &Document, selection: &BTreeSet<usize>, mask: TokenId) -> Result<Document> {
    let out = match kind {
        SettingKind::DispTok => doc.select(selection),
        SettingKind::RmTok => doc.masked(selection, mask),
        SettingKind::DispSent => doc.keep_sentences(selection),
        SettingKind::RmSent => doc.remove_sentences(selection),
    };
    if out.is_empty() && !selection.is_empty() && kind == SettingKind::RmSent {
        return Err(Error::EmptySource);
    }
    Ok(out)
}

/// Human-readable input for a token setting, e.g. `⟨sos⟩Burberry, on new⟨eos⟩`.
/// Displayed runs of consecutive pieces are separated by commas; masked
/// pieces print as `#`.
pub fn render_input(kind: SettingKind, doc: &Document, selection: &BTreeSet<usize>, vocab: &Vocab) -> String {
    let text = |i: usize, word_start: bool| {
        let t = vocab.token(doc.pieces()[i]).unwrap_or("<unk>");
        if word_start {
            t.to_string()
        } else {
            t.strip_prefix(CONTINUATION).unwrap_or(t).to_string()
        }
    };
    let starts: BTreeSet<usize> = doc.word_spans().iter().map(|w| w.0).collect();
    let mut body = String::new();
    match kind {
        SettingKind::DispTok | SettingKind::DispSent => {
            let shown: Vec<usize> = if kind == SettingKind::DispTok {
                selection.iter().copied().filter(|&p| p < doc.len()).collect()
            } else {
                selection.iter().filter(|&&s| s < doc.n_sentences()).flat_map(|&s| doc.sentence_pieces(s)).collect()
            };
            let mut prev: Option<usize> = None;
            for &p in &shown {
                match prev {
                    Some(q) if q + 1 == p && starts.contains(&p) => body.push(' '),
                    Some(q) if q + 1 != p => body.push_str(", "),
                    _ => {}
                }
                body.push_str(&text(p, prev.map_or(true, |q| q + 1 != p) || starts.contains(&p)));
                prev = Some(p);
            }
        }
        SettingKind::RmTok | SettingKind::RmSent => {
            let hidden: BTreeSet<usize> = if kind == SettingKind::RmTok {
                selection.clone()
            } else {
                selection.iter().filter(|&&s| s < doc.n_sentences()).flat_map(|&s| doc.sentence_pieces(s)).collect()
            };
            for p in 0..doc.len() {
                if hidden.contains(&p) {
                    body.push('#');
                } else {
                    if starts.contains(&p) && !body.is_empty() {
                        body.push(' ');
                    }
                    body.push_str(&text(p, starts.contains(&p)));
                }
            }
        }
    }
    format!("⟨sos⟩{body}⟨eos⟩")
}

/// One decision to evaluate and its attribution, if any.
#[derive(Debug, Clone, Copy)]
pub struct EvalItem<'a> {
    pub doc: &'a Document,
    pub prefix: &'a Prefix,
    pub target: TokenId,
    pub attribution: Option<&'a AttributionVector>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub budget: usize,
    pub mean_nll: f64,
    pub n_decisions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalCurve {
    pub method: Method,
    pub setting: SettingKind,
    pub context_window: usize,
    /// Budget 0 first; budgets no decision could support are left out.
    pub points: Vec<CurvePoint>,
    pub delta: f64,
    /// Decisions without an attribution.
    pub skipped: usize,
}

impl EvalCurve {
    pub fn baseline(&self) -> f64 {
        self.points[0].mean_nll
    }

    pub fn at(&self, budget: usize) -> Option<f64> {
        self.points.iter().find(|p| p.budget == budget).map(|p| p.mean_nll)
    }
}

fn eval_one(backend: &dyn Backend, item: &EvalItem<'_>, attr: &AttributionVector, setting: &EvalSetting) -> Result<Vec<Option<f64>>> {
    let doc = item.doc;
    if attr.scores.len() != doc.len() {
        return Err(Error::Shape { expected: doc.len(), got: attr.scores.len() });
    }
    let mask = backend.vocab().mask();
    let base_mode = if setting.kind.is_disp() { Mode::SEmpty } else { Mode::SFull };
    let base_src = if setting.kind.is_disp() { doc.emptied() } else { doc.clone() };
    let mut out = vec![Some(nll(&backend.predict(base_mode, &base_src, item.prefix)?, item.target))];
    let ranking = if setting.kind.is_token() { attr.ranking() } else { aggregate_to_sentences(attr, doc)?.ranking() };
    let mut sources = Vec::new();
    let mut slots = Vec::new();
    for (i, &n) in setting.budgets.iter().enumerate() {
        let selection = if setting.kind.is_token() {
            budget_fill(&ranking, doc, n, setting.context_window)?
        } else {
            let m = doc.n_sentences();
            let feasible = if setting.kind == SettingKind::RmSent { n < m } else { n <= m };
            if !feasible {
                continue;
            }
            sentence_fill(&ranking, n)
        };
        sources.push(make_input(setting.kind, doc, &selection, mask)?);
        slots.push(i);
    }
    let dists = backend.predict_batch(Mode::SPart, &sources, item.prefix)?;
    out.extend(std::iter::repeat(None).take(setting.budgets.len()));
    for (slot, d) in slots.into_iter().zip(dists) {
        out[slot + 1] = Some(nll(&d, item.target));
    }
    Ok(out)
}

/// Mean NLL per budget over `items`, plus the budget-0 baseline (empty
/// source for Disp settings, full source for Rm settings) and Δ.
pub fn evaluate(backend: &dyn Backend, items: &[EvalItem<'_>], setting: &EvalSetting, method: Method) -> Result<EvalCurve> {
    let with_attr: Vec<(&EvalItem<'_>, &AttributionVector)> =
        items.iter().filter_map(|it| it.attribution.map(|a| (it, a))).collect();
    let skipped = items.len() - with_attr.len();
    if skipped > 0 {
        log::warn!("{skipped} decisions have no {method} attribution and were skipped");
    }
    if with_attr.is_empty() {
        return Err(Error::Data(format!("no {method} attributions to evaluate")));
    }
    let rows = with_attr
        .par_iter()
        .map(|(it, a)| eval_one(backend, it, a, setting))
        .collect::<Result<Vec<_>>>()?;
    let budgets: Vec<usize> = std::iter::once(0).chain(setting.budgets.iter().copied()).collect();
    let mut points = Vec::new();
    for (col, &budget) in budgets.iter().enumerate() {
        let vals: Vec<f64> = rows.iter().filter_map(|r| r[col]).collect();
        if !vals.is_empty() {
            points.push(CurvePoint { budget, mean_nll: vals.iter().sum::<f64>() / vals.len() as f64, n_decisions: vals.len() });
        }
    }
    let evals: Vec<f64> = points[1..].iter().map(|p| p.mean_nll).collect();
    let delta = delta(points[0].mean_nll, &evals);
    Ok(EvalCurve { method, setting: setting.kind, context_window: setting.context_window, points, delta, skipped })
}

/// `method,setting,budget,mean_nll,n_decisions` rows.
pub fn curves_csv(curves: &[EvalCurve]) -> String {
    let mut s = String::from("method,setting,budget,mean_nll,n_decisions\n");
    for c in curves {
        for p in &c.points {
            let _ = writeln!(s, "{},{},{},{:.6},{}", c.method, c.setting, p.budget, p.mean_nll, p.n_decisions);
        }
    }
    s
}

/// Plain-text table per setting: one row per method, one column per budget,
/// then Δ.
pub fn delta_table(curves: &[EvalCurve]) -> String {
    let mut by_setting: BTreeMap<SettingKind, Vec<&EvalCurve>> = BTreeMap::new();
    for c in curves {
        by_setting.entry(c.setting).or_default().push(c);
    }
    let mut s = String::new();
    for (kind, cs) in by_setting {
        let budgets: BTreeSet<usize> = cs.iter().flat_map(|c| c.points.iter().map(|p| p.budget)).collect();
        let _ = write!(s, "{:<10}", kind.as_str());
        for b in &budgets {
            let _ = write!(s, " {:>7}", b);
        }
        let _ = writeln!(s, " {:>7}", "Δ");
        for c in cs {
            let _ = write!(s, "{:<10}", c.method.as_str());
            for b in &budgets {
                match c.at(*b) {
                    Some(v) => {
                        let _ = write!(s, " {:>7.2}", v);
                    }
                    None => {
                        let _ = write!(s, " {:>7}", "-");
                    }
                }
            }
            let _ = writeln!(s, " {:>7.2}", c.delta);
        }
        s.push('\n');
    }
    s
}
