//! Run configuration: one JSON document, overridden by command-line flags.
//!
//! Relative paths inside a config file resolve against the file's directory;
//! paths given as flags resolve against the working directory.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sumlens_core::backend::{OracleSpec, RemoteBackend, ScriptedOracle};
use sumlens_core::io::read_documents;
use sumlens_core::map::{default_boxes, MapSettings};
use sumlens_core::synthetic::SyntheticConfig;
use sumlens_core::toy::{checkpoint, TrainOptions};
use sumlens_core::{Backend, Example, RegionBox, SettingKind, ToyModelConfig, Vocab};

use crate::failure::Failure;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToySpec {
    pub vocab: PathBuf,
    pub summarizer: PathBuf,
    pub lm: PathBuf,
}

impl ToySpec {
    /// The three files `train-toy` writes into one directory.
    pub fn in_dir(dir: &Path) -> Self {
        Self { vocab: dir.join("vocab.txt"), summarizer: dir.join("summarizer.ckpt"), lm: dir.join("lm.ckpt") }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedSpec {
    pub oracle: PathBuf,
    /// Built from the corpus and the oracle's tokens when absent.
    #[serde(default)]
    pub vocab: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemoteSpec {
    pub vocab: PathBuf,
    pub summarizer: String,
    /// Endpoint of the generic language model; the summarizer when absent.
    #[serde(default)]
    pub lm: Option<String>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
}

fn default_timeout_ms() -> u64 {
    30_000
}

/// Oracle file: the summarizer's rules and, optionally, separate rules for
/// the language model.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleFile {
    pub summarizer: OracleSpec,
    #[serde(default)]
    pub lm: Option<OracleSpec>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendSpec {
    pub toy: Option<ToySpec>,
    pub scripted: Option<ScriptedSpec>,
    pub remote: Option<RemoteSpec>,
}

impl BackendSpec {
    fn families(&self) -> Vec<&'static str> {
        let mut f = Vec::new();
        if self.toy.is_some() {
            f.push("toy");
        }
        if self.scripted.is_some() {
            f.push("scripted");
        }
        if self.remote.is_some() {
            f.push("remote");
        }
        f
    }

    pub fn check(&self) -> Result<(), Failure> {
        let f = self.families();
        if f.len() > 1 {
            return Err(Failure::Config(format!("exactly one backend family allowed, got {}", f.join(" and "))));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub backend: BackendSpec,
    /// JSONL with `id`, `text` and `summary`.
    pub corpus: Option<PathBuf>,
    /// Summary-style text for the language model in `train-toy`.
    pub lm_corpus: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub boxes: Vec<RegionBox>,
    pub ctx_hd_threshold: f64,
    pub fusion_gain: f64,
    pub settings: Vec<SettingKind>,
    pub token_budgets: Vec<usize>,
    pub sentence_budgets: Vec<usize>,
    pub context_window: usize,
    pub seed: u64,
    pub ig_steps: usize,
    pub overlap_n: usize,
    pub overlap_min_matches: usize,
    pub svg: bool,
    pub model: ToyModelConfig,
    pub train: TrainOptions,
    pub synthetic: SyntheticConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            backend: BackendSpec::default(),
            corpus: None,
            lm_corpus: None,
            out_dir: PathBuf::from("out"),
            boxes: default_boxes(),
            ctx_hd_threshold: 0.5,
            fusion_gain: sumlens_core::analysis::fusion::DEFAULT_GAIN,
            settings: SettingKind::ALL.to_vec(),
            token_budgets: sumlens_core::eval::TOKEN_BUDGETS.to_vec(),
            sentence_budgets: sumlens_core::eval::SENTENCE_BUDGETS.to_vec(),
            context_window: sumlens_core::eval::DEFAULT_WINDOW,
            seed: 0,
            ig_steps: sumlens_core::attribution::DEFAULT_IG_STEPS,
            overlap_n: sumlens_core::analysis::overlap::DEFAULT_N,
            overlap_min_matches: sumlens_core::analysis::overlap::DEFAULT_MIN_MATCHES,
            svg: false,
            model: ToyModelConfig::default(),
            train: TrainOptions::default(),
            synthetic: SyntheticConfig::default(),
        }
    }
}

fn rebase(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: RunConfig = serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.rebase(&base);
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        if let Some(t) = &mut self.backend.toy {
            rebase(base, &mut t.vocab);
            rebase(base, &mut t.summarizer);
            rebase(base, &mut t.lm);
        }
        if let Some(s) = &mut self.backend.scripted {
            rebase(base, &mut s.oracle);
            if let Some(v) = &mut s.vocab {
                rebase(base, v);
            }
        }
        if let Some(r) = &mut self.backend.remote {
            rebase(base, &mut r.vocab);
        }
        for p in [&mut self.corpus, &mut self.lm_corpus].into_iter().flatten() {
            rebase(base, p);
        }
        rebase(base, &mut self.out_dir);
    }

    pub fn validate(&self) -> Result<(), Failure> {
        self.backend.check()?;
        for b in &self.boxes {
            RegionBox::new(b.label, b.lower, b.upper).map_err(Failure::from)?;
        }
        if !(0.0..=1.0).contains(&self.ctx_hd_threshold) {
            return Err(Failure::Config(format!("ctx_hd_threshold {} outside [0, 1]", self.ctx_hd_threshold)));
        }
        if self.ig_steps < 1 {
            return Err(Failure::Config("ig_steps must be at least 1".into()));
        }
        if self.overlap_n < 1 {
            return Err(Failure::Config("overlap_n must be at least 1".into()));
        }
        self.model.validate().map_err(Failure::from)?;
        for p in self.input_paths() {
            if !p.exists() {
                return Err(Failure::Config(format!("{} does not exist", p.display())));
            }
        }
        Ok(())
    }

    fn input_paths(&self) -> Vec<&Path> {
        let mut out: Vec<&Path> = Vec::new();
        if let Some(t) = &self.backend.toy {
            out.extend([t.vocab.as_path(), t.summarizer.as_path(), t.lm.as_path()]);
        }
        if let Some(s) = &self.backend.scripted {
            out.push(&s.oracle);
            out.extend(s.vocab.as_deref());
        }
        if let Some(r) = &self.backend.remote {
            out.push(&r.vocab);
        }
        out.extend(self.corpus.as_deref());
        out.extend(self.lm_corpus.as_deref());
        out
    }

    pub fn map_settings(&self) -> MapSettings {
        MapSettings { boxes: self.boxes.clone(), ctx_hd_threshold: self.ctx_hd_threshold }
    }

    pub fn corpus_path(&self) -> Result<&Path, Failure> {
        self.corpus.as_deref().ok_or_else(|| Failure::Config("no corpus given (set `corpus` or pass --corpus)".into()))
    }

    pub fn budgets(&self, kind: SettingKind) -> Vec<usize> {
        if kind.is_token() {
            self.token_budgets.clone()
        } else {
            self.sentence_budgets.clone()
        }
    }
}

/// Summarizer and language model of the selected family.
pub struct Backends {
    pub vocab: Vocab,
    pub summarizer: Box<dyn Backend>,
    pub lm: Box<dyn Backend>,
}

/// Vocabulary of the selected backend family. Scripted oracles without a
/// vocabulary file get one built from the corpus and the oracle's tokens.
pub fn load_vocab(cfg: &RunConfig) -> Result<Vocab, Failure> {
    let spec = &cfg.backend;
    if let Some(t) = &spec.toy {
        return Vocab::load(&t.vocab).map_err(Failure::from);
    }
    if let Some(r) = &spec.remote {
        return Vocab::load(&r.vocab).map_err(Failure::from);
    }
    if let Some(s) = &spec.scripted {
        if let Some(v) = &s.vocab {
            return Vocab::load(v).map_err(Failure::from);
        }
        let oracle = read_oracle(&s.oracle)?;
        let mut texts: Vec<String> = Vec::new();
        if let Some(c) = &cfg.corpus {
            for r in read_documents(c).map_err(Failure::data)? {
                texts.push(r.text);
                texts.extend(r.summary);
            }
        }
        for spec in std::iter::once(&oracle.summarizer).chain(oracle.lm.as_ref()) {
            texts.extend(spec.default.keys().cloned());
            texts.extend(spec.rules.iter().map(|r| r.target.clone()));
        }
        return Vocab::build(texts.iter().map(String::as_str)).map_err(Failure::from);
    }
    Err(Failure::Config("no backend selected (configure `backend` or pass --toy-dir, --oracle or --endpoint)".into()))
}

fn read_oracle(path: &Path) -> Result<OracleFile, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

pub fn load_backends(cfg: &RunConfig) -> Result<Backends, Failure> {
    let vocab = load_vocab(cfg)?;
    let spec = &cfg.backend;
    if let Some(t) = &spec.toy {
        let summarizer = checkpoint::load(&t.summarizer, vocab.clone()).map_err(Failure::backend)?;
        let lm = checkpoint::load(&t.lm, vocab.clone()).map_err(Failure::backend)?;
        return Ok(Backends { vocab, summarizer: Box::new(summarizer), lm: Box::new(lm) });
    }
    if let Some(s) = &spec.scripted {
        let oracle = read_oracle(&s.oracle)?;
        let summarizer = ScriptedOracle::new(vocab.clone(), &oracle.summarizer).map_err(Failure::backend)?;
        let lm = ScriptedOracle::new(vocab.clone(), oracle.lm.as_ref().unwrap_or(&oracle.summarizer)).map_err(Failure::backend)?;
        return Ok(Backends { vocab, summarizer: Box::new(summarizer), lm: Box::new(lm) });
    }
    let r = spec.remote.as_ref().expect("load_vocab checked the family");
    let timeout = Duration::from_millis(r.timeout_ms);
    let summarizer = RemoteBackend::new(&r.summarizer, vocab.clone(), timeout);
    let lm = RemoteBackend::new(r.lm.as_deref().unwrap_or(&r.summarizer), vocab.clone(), timeout);
    Ok(Backends { vocab, summarizer: Box::new(summarizer), lm: Box::new(lm) })
}

/// Corpus records paired with their tokenized examples. Every record needs
/// a summary.
pub fn load_corpus(cfg: &RunConfig, vocab: &Vocab) -> Result<Vec<Example>, Failure> {
    let path = cfg.corpus_path()?;
    read_documents(path)
        .map_err(Failure::data)?
        .into_iter()
        .map(|r| {
            let summary = r.summary.ok_or_else(|| Failure::Data(format!("{}: record {} has no summary", path.display(), r.id)))?;
            Example::from_text(&r.id, &r.text, &summary, vocab).map_err(Failure::data)
        })
        .collect()
}
