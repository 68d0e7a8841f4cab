//! JSON-over-HTTP client for externally hosted models.
//!
//! Request (`POST {endpoint}/predict`):
//!
//! ```json
//! {"version": 1, "config": "S_PART", "pieces": [12, 3, 40], "visible": [0, 4, 5], "prefix": [1, 17]}
//! ```
//!
//! `pieces` are the token ids the model should encode (MASK ids included
//! where pieces were masked); `visible` gives the original document position
//! of each of them. Response:
//!
//! ```json
//! {"version": 1, "probs": [{"id": 17, "p": 0.6}, {"id": 4, "p": 0.3}], "residual": 0.1}
//! ```
//!
//! A server may truncate to its top-K tokens and report the remaining mass
//! in `residual`, which is spread uniformly over the unlisted ids.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{Backend, Mode};
use crate::distribution::{TokenDistribution, MASS_TOLERANCE};
use crate::document::{Document, Prefix};
use crate::error::{Error, Result};
use crate::vocab::{TokenId, Vocab};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictRequest {
    pub version: u32,
    pub config: Mode,
    pub pieces: Vec<TokenId>,
    pub visible: Vec<usize>,
    pub prefix: Vec<TokenId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbEntry {
    pub id: TokenId,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictResponse {
    #[serde(default)]
    pub version: Option<u32>,
    pub probs: Vec<ProbEntry>,
    #[serde(default)]
    pub residual: f64,
}

impl PredictRequest {
    pub fn new(mode: Mode, source: &Document, prefix: &Prefix) -> Self {
        Self {
            version: PROTOCOL_VERSION,
            config: mode,
            pieces: source.pieces().to_vec(),
            visible: source.origins().iter().map(|o| o.piece).collect(),
            prefix: prefix.as_slice().to_vec(),
        }
    }
}

impl PredictResponse {
    /// Expand a possibly truncated response into a full distribution.
    pub fn into_distribution(self, vocab_size: usize) -> Result<TokenDistribution> {
        if let Some(v) = self.version {
            if v != PROTOCOL_VERSION {
                return Err(Error::Protocol(format!("server speaks version {v}, expected {PROTOCOL_VERSION}")));
            }
        }
        if !(self.residual.is_finite() && self.residual >= 0.0) {
            return Err(Error::Protocol(format!("invalid residual {}", self.residual)));
        }
        let mut probs = vec![0.0; vocab_size];
        let mut listed = vec![false; vocab_size];
        for e in &self.probs {
            if e.id >= vocab_size {
                return Err(Error::Protocol(format!("token id {} outside vocabulary of {vocab_size}", e.id)));
            }
            if listed[e.id] {
                return Err(Error::Protocol(format!("token id {} listed twice", e.id)));
            }
            if !(e.p.is_finite() && e.p >= 0.0) {
                return Err(Error::Protocol(format!("invalid probability {}", e.p)));
            }
            listed[e.id] = true;
            probs[e.id] = e.p;
        }
        let total = probs.iter().sum::<f64>() + self.residual;
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::Protocol(format!("response mass {total} != 1")));
        }
        let unlisted = listed.iter().filter(|l| !**l).count();
        if self.residual > 0.0 {
            if unlisted == 0 {
                return Err(Error::Protocol("residual mass with every token listed".into()));
            }
            let share = self.residual / unlisted as f64;
            for (p, _) in probs.iter_mut().zip(&listed).filter(|(_, l)| !**l) {
                *p = share;
            }
        }
        TokenDistribution::with_residual(probs, self.residual).map_err(|e| Error::Protocol(e.to_string()))
    }
}

pub struct RemoteBackend {
    endpoint: String,
    vocab: Vocab,
    agent: ureq::Agent,
}

impl RemoteBackend {
    pub fn new(endpoint: impl Into<String>, vocab: Vocab, timeout: Duration) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(timeout).build();
        let endpoint = endpoint.into().trim_end_matches('/').to_string();
        Self { endpoint, vocab, agent }
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }
}

/// One request/response round trip against `endpoint`.
pub fn remote_predict(
    backend: &RemoteBackend,
    mode: Mode,
    source: &Document,
    prefix: &Prefix,
) -> Result<TokenDistribution> {
    let req = PredictRequest::new(mode, source, prefix);
    let url = format!("{}/predict", backend.endpoint);
    let resp = backend.agent.post(&url).send_json(&req).map_err(|e| match e {
        ureq::Error::Status(code, _) => Error::BackendUnavailable(format!("{url} answered HTTP {code}")),
        ureq::Error::Transport(t) => Error::BackendUnavailable(t.to_string()),
    })?;
    let body = resp.into_string().map_err(|e| Error::BackendUnavailable(e.to_string()))?;
    let parsed: PredictResponse = serde_json::from_str(&body).map_err(|e| Error::Protocol(e.to_string()))?;
    parsed.into_distribution(backend.vocab.len())
}

impl Backend for RemoteBackend {
    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn predict(&self, mode: Mode, source: &Document, prefix: &Prefix) -> Result<TokenDistribution> {
        remote_predict(self, mode, source, prefix)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truncated_response_spreads_residual() {
        let r = PredictResponse {
            version: Some(1),
            probs: vec![ProbEntry { id: 0, p: 0.6 }, ProbEntry { id: 1, p: 0.3 }],
            residual: 0.1,
        };
        let d = r.into_distribution(4).unwrap();
        assert!(d.is_truncated());
        let expect = [0.6, 0.3, 0.05, 0.05];
        for (a, b) in d.probs().iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn malformed_responses_are_protocol_errors() {
        let dup = PredictResponse { version: None, probs: vec![ProbEntry { id: 0, p: 0.5 }, ProbEntry { id: 0, p: 0.5 }], residual: 0.0 };
        assert!(matches!(dup.into_distribution(2), Err(Error::Protocol(_))));
        let mass = PredictResponse { version: None, probs: vec![ProbEntry { id: 0, p: 0.5 }], residual: 0.0 };
        assert!(matches!(mass.into_distribution(2), Err(Error::Protocol(_))));
        let ver = PredictResponse { version: Some(9), probs: vec![ProbEntry { id: 0, p: 1.0 }], residual: 0.0 };
        assert!(matches!(ver.into_distribution(2), Err(Error::Protocol(_))));
        let range = PredictResponse { version: None, probs: vec![ProbEntry { id: 5, p: 1.0 }], residual: 0.0 };
        assert!(matches!(range.into_distribution(2), Err(Error::Protocol(_))));
    }

    #[test]
    fn request_uses_wire_names() {
        let v = Vocab::with_specials(["a", "b"]).unwrap();
        let d = crate::document::tokenize("x", "a b", &v).unwrap();
        let req = PredictRequest::new(Mode::SEmpty, &d.emptied(), &Prefix::start(v.sos()));
        let json = serde_json::to_value(&req).unwrap();
        assert_eq!(json["config"], "S_EMPTY");
        assert_eq!(json["pieces"], serde_json::json!([]));
        assert_eq!(json["prefix"], serde_json::json!([1]));
    }
}
