//! Templated copy corpus with known generation modes.
//!
//! Every source has a handful of sentences of random content words; exactly
//! one of them starts with the marker word `key`. The summary is a fixed
//! template wrapped around the words that follow the marker:
//!
//! ```text
//! source:  lotus amber frost heron . key cedar otter mango . jade pearl flint coral .
//! summary: the story is about cedar otter mango .
//! ```
//!
//! Template tokens are predictable from the summary prefix alone; copied
//! tokens require the marked sentence.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Example;
use crate::error::Result;
use crate::vocab::Vocab;

pub const MARKER: &str = "key";
pub const TEMPLATE: [&str; 4] = ["the", "story", "is", "about"];

const CONTENT: [&str; 24] = [
    "apple", "river", "stone", "cloud", "bread", "tiger", "maple", "lemon", "cedar", "otter", "pearl", "frost",
    "amber", "coral", "delta", "ember", "flint", "grove", "heron", "ivory", "jade", "koala", "lotus", "mango",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenRole {
    Template,
    Copy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub train: usize,
    pub dev: usize,
    pub min_sentences: usize,
    pub max_sentences: usize,
    pub words_per_sentence: usize,
    pub content_words: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self { train: 1500, dev: 100, min_sentences: 3, max_sentences: 5, words_per_sentence: 4, content_words: 24, seed: 7 }
    }
}

/// Raw text form of one example, as written to JSONL.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextExample {
    pub id: String,
    pub text: String,
    pub summary: String,
    pub roles: Vec<TokenRole>,
}

pub struct SyntheticCorpus {
    pub vocab: Vocab,
    pub train: Vec<Example>,
    /// Summary-style text for the generic language model, drawn independently
    /// of `train`.
    pub lm_train: Vec<Example>,
    pub dev: Vec<Example>,
    /// Role of every dev summary piece.
    pub dev_roles: Vec<Vec<TokenRole>>,
    pub raw_dev: Vec<TextExample>,
}

fn sample_text<R: Rng>(cfg: &SyntheticConfig, id: String, rng: &mut R) -> TextExample {
    let words = &CONTENT[..cfg.content_words.clamp(4, CONTENT.len())];
    let m = rng.gen_range(cfg.min_sentences.max(1)..=cfg.max_sentences.max(cfg.min_sentences.max(1)));
    let marked = rng.gen_range(0..m);
    let copy_len = cfg.words_per_sentence.saturating_sub(1).max(1);
    let mut sentences = Vec::with_capacity(m);
    let mut copied = Vec::new();
    for s in 0..m {
        let mut sent: Vec<&str> = Vec::new();
        if s == marked {
            sent.push(MARKER);
            for _ in 0..copy_len {
                let w = *words.choose(rng).expect("non-empty");
                copied.push(w);
                sent.push(w);
            }
        } else {
            for _ in 0..cfg.words_per_sentence {
                sent.push(words.choose(rng).expect("non-empty"));
            }
        }
        sent.push(".");
        sentences.push(sent.join(" "));
    }
    let mut summary: Vec<&str> = TEMPLATE.to_vec();
    summary.extend(&copied);
    summary.push(".");
    let mut roles = vec![TokenRole::Template; TEMPLATE.len()];
    roles.extend(std::iter::repeat(TokenRole::Copy).take(copied.len()));
    roles.push(TokenRole::Template);
    TextExample { id, text: sentences.join(" "), summary: summary.join(" "), roles }
}

pub fn vocabulary() -> Result<Vocab> {
    let mut words: Vec<&str> = TEMPLATE.to_vec();
    words.push(MARKER);
    words.push(".");
    words.extend(CONTENT);
    Vocab::with_specials(words)
}

pub fn generate(cfg: &SyntheticConfig) -> Result<SyntheticCorpus> {
    let vocab = vocabulary()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut build = |prefix: &str, n: usize| -> Result<Vec<(Example, TextExample)>> {
        (0..n)
            .map(|i| {
                let t = sample_text(cfg, format!("{prefix}-{i}"), &mut rng);
                Ok((Example::from_text(&t.id, &t.text, &t.summary, &vocab)?, t))
            })
            .collect()
    };
    let train = build("train", cfg.train)?.into_iter().map(|(e, _)| e).collect();
    let lm_train = build("lm", cfg.train)?.into_iter().map(|(e, _)| e).collect();
    let dev_pairs = build("dev", cfg.dev)?;
    let dev_roles = dev_pairs.iter().map(|(_, t)| t.roles.clone()).collect();
    let (dev, raw_dev) = dev_pairs.into_iter().unzip();
    Ok(SyntheticCorpus { vocab, train, lm_train, dev, dev_roles, raw_dev })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summaries_copy_the_marked_sentence() {
        let c = generate(&SyntheticConfig { train: 5, dev: 5, ..Default::default() }).unwrap();
        for (ex, roles) in c.dev.iter().zip(&c.dev_roles) {
            assert_eq!(ex.summary.len(), roles.len());
            let key = c.vocab.id(MARKER).unwrap();
            let pos = ex.doc.pieces().iter().position(|&p| p == key).unwrap();
            let copied: Vec<_> = ex.summary.iter().zip(roles).filter(|(_, r)| **r == TokenRole::Copy).map(|(t, _)| *t).collect();
            assert_eq!(&ex.doc.pieces()[pos + 1..pos + 1 + copied.len()], &copied[..]);
        }
    }

    #[test]
    fn generation_is_seeded() {
        let cfg = SyntheticConfig { train: 3, dev: 3, ..Default::default() };
        assert_eq!(generate(&cfg).unwrap().raw_dev, generate(&cfg).unwrap().raw_dev);
    }
}
