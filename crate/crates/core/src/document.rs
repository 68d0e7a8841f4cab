//! Subword documents with word and sentence structure.
//!
//! A [`Document`] keeps, for every piece, the position it had in the document
//! it was derived from. Ablated inputs (selections, masks, sentence removals)
//! are ordinary documents whose origins still point into the original, which
//! lets scripted backends reason about which parts of the source survived.

use std::collections::BTreeSet;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vocab::{TokenId, Vocab};

/// Words longer than this many characters are split into two pieces.
pub const SPLIT_ABOVE: usize = 6;
/// Length (in characters) of the leading piece of a split word.
pub const HEAD_CHARS: usize = 3;
/// Marker prefixed to continuation pieces.
pub const CONTINUATION: char = '#';

/// Toy subword rule: a word of more than [`SPLIT_ABOVE`] characters becomes
/// `head` + `#tail`, everything else stays whole.
pub fn split_word(word: &str) -> Vec<String> {
    let n = word.chars().count();
    if n <= SPLIT_ABOVE {
        return vec![word.to_string()];
    }
    let cut = word.char_indices().nth(HEAD_CHARS).map(|(i, _)| i).unwrap_or(word.len());
    vec![word[..cut].to_string(), format!("{CONTINUATION}{}", &word[cut..])]
}

fn ends_sentence(word: &str) -> bool {
    matches!(word.chars().last(), Some('.' | '?' | '!'))
}

/// Where a piece came from in the undisturbed document.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Origin {
    pub piece: usize,
    pub sentence: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pieces: Vec<TokenId>,
    origins: Vec<Origin>,
    /// Piece ranges, one per word.
    word_spans: Vec<(usize, usize)>,
    /// Word ranges, one per sentence.
    sentence_spans: Vec<(usize, usize)>,
    source_text: String,
}

/// Split `text` into whitespace words, sentences ending on `.`, `?` or `!`,
/// and subword pieces. Whole words present in `vocab` are kept as a single
/// piece; unknown long words go through [`split_word`]; unknown pieces map to UNK.
pub fn tokenize(id: impl Into<String>, text: &str, vocab: &Vocab) -> Result<Document> {
    let words: Vec<&str> = text.split_whitespace().collect();
    if words.is_empty() {
        return Err(Error::EmptyDocument);
    }
    let mut pieces = Vec::new();
    let mut word_spans = Vec::with_capacity(words.len());
    let mut sentence_spans = Vec::new();
    let mut sent_start = 0;
    for (w, word) in words.iter().enumerate() {
        let start = pieces.len();
        match vocab.id(word) {
            Some(id) => pieces.push(id),
            None => pieces.extend(split_word(word).iter().map(|p| vocab.id_or_unk(p))),
        }
        word_spans.push((start, pieces.len()));
        if ends_sentence(word) {
            sentence_spans.push((sent_start, w + 1));
            sent_start = w + 1;
        }
    }
    if sent_start < words.len() {
        sentence_spans.push((sent_start, words.len()));
    }
    Document::from_parts(id.into(), pieces, word_spans, sentence_spans, words.join(" "))
}

impl Document {
    /// Build a document from explicit structure. Spans must tile the pieces
    /// (resp. words) contiguously and in order.
    pub fn from_parts(
        id: String,
        pieces: Vec<TokenId>,
        word_spans: Vec<(usize, usize)>,
        sentence_spans: Vec<(usize, usize)>,
        source_text: String,
    ) -> Result<Self> {
        check_tiling(&word_spans, pieces.len(), "word")?;
        check_tiling(&sentence_spans, word_spans.len(), "sentence")?;
        let mut origins = Vec::with_capacity(pieces.len());
        for (s, &(w0, w1)) in sentence_spans.iter().enumerate() {
            for &(p0, p1) in &word_spans[w0..w1] {
                origins.extend((p0..p1).map(|piece| Origin { piece, sentence: s }));
            }
        }
        Ok(Self { id, pieces, origins, word_spans, sentence_spans, source_text })
    }

    /// Convenience constructor from piece strings grouped into words and sentences.
    pub fn from_words(id: &str, sentences: &[&[&[&str]]], vocab: &Vocab) -> Result<Self> {
        let mut pieces = Vec::new();
        let mut word_spans = Vec::new();
        let mut sentence_spans = Vec::new();
        for sent in sentences {
            let w0 = word_spans.len();
            for word in *sent {
                let p0 = pieces.len();
                for p in *word {
                    pieces.push(vocab.id(p).ok_or_else(|| Error::Vocab(format!("unknown piece {p:?}")))?);
                }
                word_spans.push((p0, pieces.len()));
            }
            sentence_spans.push((w0, word_spans.len()));
        }
        let text = detokenize_ids(&pieces, &word_spans, vocab);
        Self::from_parts(id.to_string(), pieces, word_spans, sentence_spans, text)
    }

    pub fn pieces(&self) -> &[TokenId] {
        &self.pieces
    }

    pub fn origins(&self) -> &[Origin] {
        &self.origins
    }

    pub fn word_spans(&self) -> &[(usize, usize)] {
        &self.word_spans
    }

    pub fn sentence_spans(&self) -> &[(usize, usize)] {
        &self.sentence_spans
    }

    pub fn source_text(&self) -> &str {
        &self.source_text
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn n_words(&self) -> usize {
        self.word_spans.len()
    }

    pub fn n_sentences(&self) -> usize {
        self.sentence_spans.len()
    }

    pub fn word_pieces(&self, word: usize) -> Range<usize> {
        let (a, b) = self.word_spans[word];
        a..b
    }

    pub fn sentence_pieces(&self, sentence: usize) -> Range<usize> {
        let (w0, w1) = self.sentence_spans[sentence];
        if w0 == w1 {
            return 0..0;
        }
        self.word_spans[w0].0..self.word_spans[w1 - 1].1
    }

    pub fn word_of_piece(&self, piece: usize) -> usize {
        self.word_spans.partition_point(|&(_, end)| end <= piece)
    }

    pub fn sentence_of_piece(&self, piece: usize) -> usize {
        let w = self.word_of_piece(piece);
        self.sentence_spans.partition_point(|&(_, end)| end <= w)
    }

    /// Keep only the listed pieces (indices into `self`), in document order.
    /// Words and sentences left without pieces disappear.
    pub fn select(&self, keep: &BTreeSet<usize>) -> Document {
        let mut pieces = Vec::with_capacity(keep.len());
        let mut origins = Vec::with_capacity(keep.len());
        let mut word_spans = Vec::new();
        let mut sentence_spans = Vec::new();
        for &(w0, w1) in &self.sentence_spans {
            let sw = word_spans.len();
            for &(p0, p1) in &self.word_spans[w0..w1] {
                let start = pieces.len();
                for p in (p0..p1).filter(|p| keep.contains(p)) {
                    pieces.push(self.pieces[p]);
                    origins.push(self.origins[p]);
                }
                if pieces.len() > start {
                    word_spans.push((start, pieces.len()));
                }
            }
            if word_spans.len() > sw {
                sentence_spans.push((sw, word_spans.len()));
            }
        }
        Document {
            id: self.id.clone(),
            pieces,
            origins,
            word_spans,
            sentence_spans,
            source_text: self.source_text.clone(),
        }
    }

    /// Replace the listed pieces by `mask`, keeping structure intact.
    pub fn masked(&self, targets: &BTreeSet<usize>, mask: TokenId) -> Document {
        let mut out = self.clone();
        for &p in targets {
            if p < out.pieces.len() {
                out.pieces[p] = mask;
            }
        }
        out
    }

    pub fn keep_sentences(&self, sentences: &BTreeSet<usize>) -> Document {
        let keep = sentences
            .iter()
            .filter(|&&s| s < self.n_sentences())
            .flat_map(|&s| self.sentence_pieces(s))
            .collect();
        self.select(&keep)
    }

    pub fn remove_sentences(&self, sentences: &BTreeSet<usize>) -> Document {
        let keep = (0..self.n_sentences()).filter(|s| !sentences.contains(s)).collect();
        self.keep_sentences(&keep)
    }

    /// A document with no source pieces (the empty-source configuration).
    pub fn emptied(&self) -> Document {
        self.select(&BTreeSet::new())
    }

    pub fn all_pieces(&self) -> BTreeSet<usize> {
        (0..self.len()).collect()
    }

    /// Pieces joined back into whitespace-normalized text.
    pub fn detokenize(&self, vocab: &Vocab) -> String {
        detokenize_ids(&self.pieces, &self.word_spans, vocab)
    }
}

fn check_tiling(spans: &[(usize, usize)], total: usize, what: &str) -> Result<()> {
    let mut expect = 0;
    for &(a, b) in spans {
        if a != expect || b <= a {
            return Err(Error::Data(format!("{what} spans must tile contiguously, got ({a}, {b})")));
        }
        expect = b;
    }
    if expect != total {
        return Err(Error::Data(format!("{what} spans cover {expect} of {total} items")));
    }
    Ok(())
}

fn detokenize_ids(pieces: &[TokenId], word_spans: &[(usize, usize)], vocab: &Vocab) -> String {
    word_spans
        .iter()
        .map(|&(a, b)| {
            pieces[a..b]
                .iter()
                .enumerate()
                .map(|(i, &id)| {
                    let t = vocab.token(id).unwrap_or("<unk>");
                    if i > 0 {
                        t.strip_prefix(CONTINUATION).unwrap_or(t)
                    } else {
                        t
                    }
                })
                .collect::<String>()
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// The seed piece plus every piece within `window` positions of it, clipped
/// to the document.
pub fn group_subwords(doc: &Document, piece: usize, window: usize) -> Result<BTreeSet<usize>> {
    if piece >= doc.len() {
        return Err(Error::Index { index: piece, len: doc.len() });
    }
    let lo = piece.saturating_sub(window);
    let hi = (piece + window).min(doc.len() - 1);
    Ok((lo..=hi).collect())
}

/// Decoder prefix `y_<t`, always starting with SOS.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Prefix(Vec<TokenId>);

impl Prefix {
    pub fn new(pieces: Vec<TokenId>, sos: TokenId) -> Result<Self> {
        match pieces.first() {
            Some(&first) if first == sos => Ok(Self(pieces)),
            Some(_) => Err(Error::Config("prefix must start with SOS".into())),
            None => Err(Error::Config("prefix must not be empty".into())),
        }
    }

    pub fn start(sos: TokenId) -> Self {
        Self(vec![sos])
    }

    pub fn extended(&self, next: TokenId) -> Self {
        let mut v = self.0.clone();
        v.push(next);
        Self(v)
    }

    pub fn as_slice(&self) -> &[TokenId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn last(&self) -> TokenId {
        *self.0.last().expect("prefix is never empty")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocab {
        Vocab::build(["Cats sleep. Dogs run. Burberry bets on new branding"]).unwrap()
    }

    #[test]
    fn sentences_and_words() {
        let v = vocab();
        let d = tokenize("d", "Cats sleep. Dogs run.", &v).unwrap();
        assert_eq!(d.n_sentences(), 2);
        assert_eq!(d.n_words(), 4);
        assert_eq!(d.detokenize(&v), "Cats sleep. Dogs run.");
    }

    #[test]
    fn long_unknown_word_is_split() {
        let v = vocab();
        let d = tokenize("d", "Burberry bets", &v).unwrap();
        assert_eq!(d.word_pieces(0).len(), 2);
        let toks: Vec<&str> = d.pieces().iter().map(|&p| v.token(p).unwrap()).collect();
        assert_eq!(toks, ["Bur", "#berry", "bets"]);
        assert_eq!(d.detokenize(&v), "Burberry bets");
    }

    #[test]
    fn known_long_word_stays_whole() {
        let v = Vocab::with_specials(["branding"]).unwrap();
        let d = tokenize("d", "branding", &v).unwrap();
        assert_eq!(d.len(), 1);
    }

    #[test]
    fn empty_is_rejected() {
        assert!(matches!(tokenize("d", "", &vocab()), Err(Error::EmptyDocument)));
        assert!(matches!(tokenize("d", "  \n\t ", &vocab()), Err(Error::EmptyDocument)));
    }

    #[test]
    fn unterminated_tail_forms_a_sentence() {
        let d = tokenize("d", "Cats sleep. Dogs run", &vocab()).unwrap();
        assert_eq!(d.n_sentences(), 2);
        assert_eq!(d.sentence_pieces(1), 2..4);
    }

    #[test]
    fn grouping_windows() {
        let v = vocab();
        let d = tokenize("d", "Burberry bets on new branding", &v).unwrap();
        assert_eq!(group_subwords(&d, 0, 0).unwrap(), BTreeSet::from([0]));
        assert_eq!(group_subwords(&d, 4, 1).unwrap(), BTreeSet::from([3, 4, 5]));
        let small = tokenize("d", "Cats sleep. Dogs", &v).unwrap();
        assert_eq!(group_subwords(&small, 1, 5).unwrap(), BTreeSet::from([0, 1, 2]));
        assert!(matches!(group_subwords(&small, 3, 0), Err(Error::Index { .. })));
    }

    #[test]
    fn selection_keeps_origins() {
        let v = vocab();
        let d = tokenize("d", "Cats sleep. Dogs run.", &v).unwrap();
        let s = d.keep_sentences(&BTreeSet::from([1]));
        assert_eq!(s.len(), 2);
        assert_eq!(s.origins()[0], Origin { piece: 2, sentence: 1 });
        assert_eq!(s.n_sentences(), 1);
        assert!(d.remove_sentences(&BTreeSet::from([0, 1])).is_empty());
        let m = d.masked(&BTreeSet::from([0]), v.mask());
        assert_eq!(m.pieces()[0], v.mask());
        assert_eq!(m.origins(), d.origins());
    }

    #[test]
    fn prefix_validation() {
        assert!(Prefix::new(vec![], 1).is_err());
        assert!(Prefix::new(vec![2, 1], 1).is_err());
        assert_eq!(Prefix::start(1).extended(7).as_slice(), &[1, 7]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn word() -> impl Strategy<Value = String> {
            "[a-z]{1,10}[.?!]?"
        }

        proptest! {
            #[test]
            fn structure_tiles(words in prop::collection::vec(word(), 1..30)) {
                let text = words.join(" ");
                let v = Vocab::build([text.as_str()]).unwrap();
                let d = tokenize("p", &text, &v).unwrap();
                prop_assert_eq!(d.detokenize(&v), text);
                let words_in_sents: usize = d.sentence_spans().iter().map(|(a, b)| b - a).sum();
                prop_assert_eq!(words_in_sents, d.n_words());
                let pieces_in_words: usize = d.word_spans().iter().map(|(a, b)| b - a).sum();
                prop_assert_eq!(pieces_in_words, d.len());
                for p in 0..d.len() {
                    prop_assert!(d.word_pieces(d.word_of_piece(p)).contains(&p));
                    prop_assert!(d.sentence_pieces(d.sentence_of_piece(p)).contains(&p));
                }
            }

            #[test]
            fn grouping_contains_seed(n in 1usize..40, seed in 0usize..40, window in 0usize..6) {
                let text = vec!["ab"; n].join(" ");
                let v = Vocab::build([text.as_str()]).unwrap();
                let d = tokenize("p", &text, &v).unwrap();
                let seed = seed % n;
                let g = group_subwords(&d, seed, window).unwrap();
                prop_assert!(g.contains(&seed));
                let lo = *g.iter().next().unwrap();
                let hi = *g.iter().last().unwrap();
                prop_assert_eq!(g.len(), hi - lo + 1);
            }
        }
    }
}
