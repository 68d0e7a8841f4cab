//! Fixtures shared by the benchmarks.

use sumlens_core::{tokenize, Document, Prefix, Result, ToyModelConfig, ToyTransformer, Vocab};

const WORDS: [&str; 10] = ["amber", "basil", "cobalt", "dune", "ember", "fjord", "garnet", "heron", "indigo", "jasper"];

pub struct Fixture {
    pub model: ToyTransformer,
    pub doc: Document,
    pub prefix: Prefix,
    pub target: usize,
}

/// An untrained toy summarizer and a document of `sentences` sentences of
/// `words` words each.
pub fn fixture(sentences: usize, words: usize) -> Result<Fixture> {
    let vocab = Vocab::with_specials(WORDS.iter().copied().chain(["."]))?;
    let text: Vec<String> = (0..sentences)
        .map(|s| {
            let mut w: Vec<&str> = (0..words).map(|i| WORDS[(s * 7 + i * 3) % WORDS.len()]).collect();
            w.push(".");
            w.join(" ")
        })
        .collect();
    let doc = tokenize("bench", &text.join(" "), &vocab)?;
    let max_len = doc.len() + 8;
    let cfg = ToyModelConfig { layers: 2, heads: 2, embed_dim: 16, ffn_dim: 32, max_len, seed: 11 };
    let model = ToyTransformer::new(cfg, vocab.clone(), false)?;
    let first = vocab.id(WORDS[0]).expect("fixture word");
    let prefix = Prefix::start(vocab.sos()).extended(first);
    let target = vocab.id(WORDS[1]).expect("fixture word");
    Ok(Fixture { model, doc, prefix, target })
}
