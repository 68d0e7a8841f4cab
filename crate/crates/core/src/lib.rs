//! Dissecting step-wise decisions of conditional sequence generators.

pub mod analysis;
pub mod attribution;
pub mod backend;
pub mod corpus;
pub mod distribution;
pub mod document;
pub mod error;
pub mod eval;
pub mod io;
pub mod map;
pub mod svg;
pub mod synthetic;
pub mod toy;
pub mod vocab;

pub use attribution::{AttributionVector, Method, SentenceAttribution};
pub use backend::{AblationConfig, Backend, GradientPack, Mode};
pub use corpus::{Decision, Example};
pub use distribution::TokenDistribution;
pub use document::{tokenize, Document, Prefix};
pub use error::{Error, Result};
pub use eval::{EvalCurve, EvalSetting, SettingKind};
pub use map::{DecisionRecord, Region, RegionBox};
pub use toy::{ToyModelConfig, ToyTransformer};
pub use vocab::{TokenId, Vocab};
