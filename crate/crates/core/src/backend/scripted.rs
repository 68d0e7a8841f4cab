//! Deterministic rule-driven backend with exactly known answers.
//!
//! Each rule pins the probability of one target token when its condition
//! holds on the visible source (and optionally the prefix). The first
//! matching rule for a target wins. Unpinned tokens share the remaining
//! mass in proportion to the default distribution.
//!
//! A piece is *visible* when it is present in the source handed to the
//! backend and has not been replaced by MASK. Conditions refer to pieces
//! and sentences by their position in the original document.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use super::{Backend, Mode};
use crate::distribution::TokenDistribution;
use crate::document::{Document, Prefix};
use crate::error::{Error, Result};
use crate::vocab::{TokenId, Vocab};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Condition {
    Always,
    /// Some visible piece carries this token.
    TokenVisible { token: String },
    /// Every listed original piece index is visible.
    PiecesVisible { pieces: Vec<usize> },
    /// At least one piece of the original sentence is visible.
    SentenceVisible { sentence: usize },
    /// The source contains no visible piece.
    SourceEmpty,
    /// Number of prefix tokens, SOS included.
    PrefixLen { len: usize },
    PrefixEndsWith { token: String },
    All { of: Vec<Condition> },
    Any { of: Vec<Condition> },
    Not { cond: Box<Condition> },
}

impl Condition {
    pub fn token(token: &str) -> Self {
        Condition::TokenVisible { token: token.into() }
    }

    pub fn sentence(sentence: usize) -> Self {
        Condition::SentenceVisible { sentence }
    }

    pub fn all(of: Vec<Condition>) -> Self {
        Condition::All { of }
    }

    pub fn not(cond: Condition) -> Self {
        Condition::Not { cond: Box::new(cond) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleSpec {
    pub when: Condition,
    pub target: String,
    pub prob: f64,
}

/// Serializable oracle description.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OracleSpec {
    /// Token probabilities when no rule fires; unlisted tokens share the
    /// rest of the mass uniformly.
    #[serde(default)]
    pub default: BTreeMap<String, f64>,
    #[serde(default)]
    pub rules: Vec<RuleSpec>,
}

impl OracleSpec {
    pub fn with_default(mut self, token: &str, prob: f64) -> Self {
        self.default.insert(token.into(), prob);
        self
    }

    pub fn rule(mut self, when: Condition, target: &str, prob: f64) -> Self {
        self.rules.push(RuleSpec { when, target: target.into(), prob });
        self
    }
}

#[derive(Debug, Clone)]
enum Cond {
    Always,
    Token(TokenId),
    Pieces(Vec<usize>),
    Sentence(usize),
    SourceEmpty,
    PrefixLen(usize),
    PrefixEndsWith(TokenId),
    All(Vec<Cond>),
    Any(Vec<Cond>),
    Not(Box<Cond>),
}

struct View<'a> {
    tokens: HashSet<TokenId>,
    pieces: HashSet<usize>,
    sentences: HashSet<usize>,
    prefix: &'a Prefix,
}

impl Cond {
    fn holds(&self, v: &View<'_>) -> bool {
        match self {
            Cond::Always => true,
            Cond::Token(t) => v.tokens.contains(t),
            Cond::Pieces(ps) => ps.iter().all(|p| v.pieces.contains(p)),
            Cond::Sentence(s) => v.sentences.contains(s),
            Cond::SourceEmpty => v.pieces.is_empty(),
            Cond::PrefixLen(n) => v.prefix.len() == *n,
            Cond::PrefixEndsWith(t) => v.prefix.last() == *t,
            Cond::All(cs) => cs.iter().all(|c| c.holds(v)),
            Cond::Any(cs) => cs.iter().any(|c| c.holds(v)),
            Cond::Not(c) => !c.holds(v),
        }
    }
}

#[derive(Debug, Clone)]
struct Rule {
    when: Cond,
    target: TokenId,
    prob: f64,
}

#[derive(Debug, Clone)]
pub struct ScriptedOracle {
    vocab: Vocab,
    default: Vec<f64>,
    rules: Vec<Rule>,
}

impl ScriptedOracle {
    pub fn new(vocab: Vocab, spec: &OracleSpec) -> Result<Self> {
        let resolve = |t: &str| vocab.id(t).ok_or_else(|| Error::Vocab(format!("oracle token {t:?} not in vocabulary")));
        let mut default = vec![0.0; vocab.len()];
        let mut is_listed = vec![false; vocab.len()];
        let mut listed = 0.0;
        for (tok, &p) in &spec.default {
            check_prob(p)?;
            let id = resolve(tok)?;
            default[id] = p;
            is_listed[id] = true;
            listed += p;
        }
        if listed > 1.0 + 1e-12 {
            return Err(Error::Config(format!("default probabilities sum to {listed}")));
        }
        let unlisted: Vec<usize> = (0..vocab.len()).filter(|&i| !is_listed[i]).collect();
        let rest = (1.0 - listed).max(0.0);
        if !unlisted.is_empty() {
            for &i in &unlisted {
                default[i] = rest / unlisted.len() as f64;
            }
        } else if listed <= 0.0 {
            return Err(Error::Config("default distribution has no mass".into()));
        }
        let rules = spec
            .rules
            .iter()
            .map(|r| {
                check_prob(r.prob)?;
                Ok(Rule { when: compile(&r.when, &resolve)?, target: resolve(&r.target)?, prob: r.prob })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { vocab, default, rules })
    }

    fn distribution(&self, source: &Document, prefix: &Prefix) -> Result<TokenDistribution> {
        let mask = self.vocab.mask();
        let mut view = View { tokens: HashSet::new(), pieces: HashSet::new(), sentences: HashSet::new(), prefix };
        for (&tok, origin) in source.pieces().iter().zip(source.origins()) {
            if tok != mask {
                view.tokens.insert(tok);
                view.pieces.insert(origin.piece);
                view.sentences.insert(origin.sentence);
            }
        }
        let mut pinned: BTreeMap<TokenId, f64> = BTreeMap::new();
        for rule in &self.rules {
            if !pinned.contains_key(&rule.target) && rule.when.holds(&view) {
                pinned.insert(rule.target, rule.prob);
            }
        }
        let fixed: f64 = pinned.values().sum();
        let mut probs = self.default.clone();
        if fixed >= 1.0 {
            probs.iter_mut().for_each(|p| *p = 0.0);
            for (&t, &p) in &pinned {
                probs[t] = p / fixed;
            }
            return TokenDistribution::new(probs);
        }
        let free_mass: f64 = probs.iter().enumerate().filter(|(i, _)| !pinned.contains_key(i)).map(|(_, p)| p).sum();
        let free_count = probs.len() - pinned.len();
        for (i, p) in probs.iter_mut().enumerate() {
            *p = match pinned.get(&i) {
                Some(&q) => q,
                None if free_mass > 0.0 => *p / free_mass * (1.0 - fixed),
                None => (1.0 - fixed) / free_count as f64,
            };
        }
        let total: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= total);
        TokenDistribution::new(probs)
    }
}

fn check_prob(p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::Config(format!("oracle probability {p} outside [0, 1]")))
    }
}

fn compile(c: &Condition, resolve: &dyn Fn(&str) -> Result<TokenId>) -> Result<Cond> {
    Ok(match c {
        Condition::Always => Cond::Always,
        Condition::TokenVisible { token } => Cond::Token(resolve(token)?),
        Condition::PiecesVisible { pieces } => Cond::Pieces(pieces.clone()),
        Condition::SentenceVisible { sentence } => Cond::Sentence(*sentence),
        Condition::SourceEmpty => Cond::SourceEmpty,
        Condition::PrefixLen { len } => Cond::PrefixLen(*len),
        Condition::PrefixEndsWith { token } => Cond::PrefixEndsWith(resolve(token)?),
        Condition::All { of } => Cond::All(of.iter().map(|c| compile(c, resolve)).collect::<Result<_>>()?),
        Condition::Any { of } => Cond::Any(of.iter().map(|c| compile(c, resolve)).collect::<Result<_>>()?),
        Condition::Not { cond } => Cond::Not(Box::new(compile(cond, resolve)?)),
    })
}

impl Backend for ScriptedOracle {
    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn predict(&self, _mode: Mode, source: &Document, prefix: &Prefix) -> Result<TokenDistribution> {
        self.distribution(source, prefix)
    }
}
