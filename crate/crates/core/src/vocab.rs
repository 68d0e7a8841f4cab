//! Closed-world vocabulary shared by every backend.
//!
//! File format: a header block of `#` lines declaring the special tokens,
//! terminated by `#end`, followed by one token per line. The id of a token
//! is its 0-based line number after the header.
//!
//! ```text
//! #sumlens-vocab v1
//! #special pad=<pad> sos=<sos> eos=<eos> mask=<mask> unk=<unk>
//! #end
//! <pad>
//! <sos>
//! ...
//! ```

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::document::split_word;
use crate::error::{Error, Result};

pub type TokenId = usize;

const HEADER: &str = "#sumlens-vocab v1";

/// Ids of the reserved tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Specials {
    pub pad: TokenId,
    pub sos: TokenId,
    pub eos: TokenId,
    pub mask: TokenId,
    pub unk: TokenId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
    specials: Specials,
}

impl Vocab {
    pub fn new(tokens: Vec<String>, specials: Specials) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Vocab(format!("duplicate token {t:?}")));
            }
        }
        let ids = [specials.pad, specials.sos, specials.eos, specials.mask, specials.unk];
        for (i, a) in ids.iter().enumerate() {
            if *a >= tokens.len() {
                return Err(Error::Vocab(format!("special id {a} out of range")));
            }
            if ids[i + 1..].contains(a) {
                return Err(Error::Vocab(format!("special id {a} used twice")));
            }
        }
        Ok(Self { tokens, index, specials })
    }

    /// Specials occupy ids 0..5 (`<pad> <sos> <eos> <mask> <unk>`), followed
    /// by `regular` in order with duplicates dropped.
    pub fn with_specials<I, S>(regular: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut tokens: Vec<String> = ["<pad>", "<sos>", "<eos>", "<mask>", "<unk>"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let mut seen: std::collections::HashSet<String> = tokens.iter().cloned().collect();
        for t in regular {
            let t = t.into();
            if seen.insert(t.clone()) {
                tokens.push(t);
            }
        }
        Self::new(tokens, Specials { pad: 0, sos: 1, eos: 2, mask: 3, unk: 4 })
    }

    /// Collect every subword piece produced by the toy splitting rule over `texts`.
    pub fn build<'a, I>(texts: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut pieces = Vec::new();
        for text in texts {
            for word in text.split_whitespace() {
                pieces.extend(split_word(word));
            }
        }
        if pieces.is_empty() {
            return Err(Error::Vocab("cannot build a vocabulary from an empty corpus".into()));
        }
        Self::with_specials(pieces)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn specials(&self) -> Specials {
        self.specials
    }

    pub fn sos(&self) -> TokenId {
        self.specials.sos
    }

    pub fn eos(&self) -> TokenId {
        self.specials.eos
    }

    pub fn mask(&self) -> TokenId {
        self.specials.mask
    }

    pub fn unk(&self) -> TokenId {
        self.specials.unk
    }

    pub fn is_special(&self, id: TokenId) -> bool {
        let s = self.specials;
        id == s.pad || id == s.sos || id == s.eos || id == s.mask || id == s.unk
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn id_or_unk(&self, token: &str) -> TokenId {
        self.id(token).unwrap_or(self.specials.unk)
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Hex SHA-256 over specials and tokens; used to pair checkpoints with vocabularies.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        let s = self.specials;
        h.update(format!("{} {} {} {} {}\n", s.pad, s.sos, s.eos, s.mask, s.unk));
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update(b"\n");
        }
        hex(&h.finalize())
    }

    pub fn to_file_string(&self) -> String {
        let s = self.specials;
        let mut out = String::new();
        let _ = writeln!(out, "{HEADER}");
        let _ = writeln!(
            out,
            "#special pad={} sos={} eos={} mask={} unk={}",
            self.tokens[s.pad], self.tokens[s.sos], self.tokens[s.eos], self.tokens[s.mask], self.tokens[s.unk]
        );
        out.push_str("#end\n");
        for t in &self.tokens {
            out.push_str(t);
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(HEADER) {
            return Err(Error::Vocab("missing vocabulary header".into()));
        }
        let mut declared: HashMap<String, String> = HashMap::new();
        loop {
            match lines.next() {
                Some("#end") => break,
                Some(line) if line.starts_with("#special") => {
                    for kv in line["#special".len()..].split_whitespace() {
                        let (k, v) = kv
                            .split_once('=')
                            .ok_or_else(|| Error::Vocab(format!("bad special declaration {kv:?}")))?;
                        declared.insert(k.to_string(), v.to_string());
                    }
                }
                Some(line) if line.starts_with('#') => {}
                _ => return Err(Error::Vocab("unterminated header block".into())),
            }
        }
        let tokens: Vec<String> = lines.map(str::to_string).collect();
        let find = |name: &str| -> Result<TokenId> {
            let tok = declared
                .get(name)
                .ok_or_else(|| Error::Vocab(format!("special `{name}` not declared")))?;
            tokens
                .iter()
                .position(|t| t == tok)
                .ok_or_else(|| Error::Vocab(format!("special token {tok:?} missing from body")))
        };
        let specials = Specials {
            pad: find("pad")?,
            sos: find("sos")?,
            eos: find("eos")?,
            mask: find("mask")?,
            unk: find("unk")?,
        };
        Self::new(tokens, specials)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_file_string())?;
        Ok(())
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        let _ = write!(s, "{b:02x}");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_round_trip() {
        let v = Vocab::with_specials(["cats", "sleep.", "Bur", "#berry"]).unwrap();
        let back = Vocab::parse(&v.to_file_string()).unwrap();
        assert_eq!(v, back);
        assert_eq!(v.hash(), back.hash());
    }

    #[test]
    fn duplicate_tokens_rejected() {
        let toks = vec!["a".to_string(), "a".to_string(), "b".into(), "c".into(), "d".into()];
        let s = Specials { pad: 0, sos: 2, eos: 3, mask: 4, unk: 1 };
        assert!(matches!(Vocab::new(toks, s), Err(Error::Vocab(_))));
    }

    #[test]
    fn specials_must_be_distinct() {
        let toks: Vec<String> = ["a", "b", "c", "d", "e"].iter().map(|s| s.to_string()).collect();
        let s = Specials { pad: 0, sos: 1, eos: 1, mask: 3, unk: 4 };
        assert!(Vocab::new(toks, s).is_err());
    }

    #[test]
    fn build_splits_long_words() {
        let v = Vocab::build(["Burberry bets"]).unwrap();
        assert!(v.id("Bur").is_some());
        assert!(v.id("#berry").is_some());
        assert!(v.id("Burberry").is_none());
        assert!(Vocab::build(Vec::<&str>::new()).is_err());
    }
}
