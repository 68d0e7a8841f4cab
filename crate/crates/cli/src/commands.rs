use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};
use sumlens_core::analysis::{bigram_stats, ft_bigrams, fusion_rate, overlap_scan, BigramCounts};
use sumlens_core::attribution::{attribute, two_stage, AttributionOptions};
use sumlens_core::corpus::corpus_decisions;
use sumlens_core::eval::{curves_csv, delta_table, evaluate, EvalItem};
use sumlens_core::io::{config_hash, read_documents, read_jsonl, stream_documents, write_jsonl_file, Header, VERSION};
use sumlens_core::map::{corpus_map, MapBackends};
use sumlens_core::svg::{curves_svg, scatter_svg};
use sumlens_core::synthetic::generate;
use sumlens_core::toy::{checkpoint, train_toy, TrainReport};
use sumlens_core::{AttributionVector, DecisionRecord, EvalSetting, Example, Method, Region, SettingKind, Vocab};

use crate::config::{load_backends, load_corpus, load_vocab, RunConfig, ToySpec};
use crate::failure::Failure;

/// Output directory and provenance shared by every file of one command.
pub struct Run<'a> {
    pub cfg: &'a RunConfig,
    kind: &'static str,
    hash: String,
}

impl<'a> Run<'a> {
    pub fn new(cfg: &'a RunConfig, kind: &'static str, args: Value) -> Result<Self, Failure> {
        let hash = config_hash(&json!({ "command": kind, "config": cfg, "args": args })).map_err(Failure::from)?;
        fs::create_dir_all(&cfg.out_dir)
            .map_err(|e| Failure::Config(format!("cannot create output directory {}: {e}", cfg.out_dir.display())))?;
        Ok(Self { cfg, kind, hash })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.cfg.out_dir.join(name)
    }

    fn header(&self) -> Header {
        Header::new(self.kind, &self.hash)
    }

    fn jsonl<R: Serialize, S: Serialize>(&self, name: &str, records: &[R], summary: Option<&S>) -> Result<PathBuf, Failure> {
        let p = self.path(name);
        write_jsonl_file(&p, &self.header(), records, summary).map_err(|e| Failure::Config(format!("{}: {e}", p.display())))?;
        Ok(p)
    }

    /// Plain-text file whose first line is a `#` provenance comment.
    fn text(&self, name: &str, body: &str) -> Result<PathBuf, Failure> {
        let p = self.path(name);
        let content = format!("# {} {} config {}\n{body}", sumlens_core::io::TOOL, VERSION, self.hash);
        fs::write(&p, content).map_err(|e| Failure::Config(format!("{}: {e}", p.display())))?;
        Ok(p)
    }

    fn raw(&self, name: &str, body: &str) -> Result<PathBuf, Failure> {
        let p = self.path(name);
        fs::write(&p, body).map_err(|e| Failure::Config(format!("{}: {e}", p.display())))?;
        Ok(p)
    }
}

#[derive(Serialize)]
struct TrainRecord<'a> {
    model: &'a str,
    lm_only: bool,
    param_count: usize,
    report: &'a TrainReport,
}

pub fn cmd_train_toy(run: &Run<'_>) -> Result<Vec<PathBuf>, Failure> {
    let cfg = run.cfg;
    let mut written = Vec::new();
    let (vocab, train, lm_train) = match &cfg.corpus {
        Some(path) => {
            let records = read_documents(path).map_err(Failure::data)?;
            let lm_records = match &cfg.lm_corpus {
                Some(p) => read_documents(p).map_err(Failure::data)?,
                None => records.clone(),
            };
            let mut texts: Vec<&str> = Vec::new();
            for r in records.iter().chain(&lm_records) {
                texts.push(&r.text);
                texts.extend(r.summary.as_deref());
            }
            let vocab = Vocab::build(texts).map_err(Failure::from)?;
            let to_examples = |rs: &[sumlens_core::io::TextRecord], lm: bool| -> Result<Vec<Example>, Failure> {
                rs.iter()
                    .map(|r| {
                        let summary = match (&r.summary, lm) {
                            (Some(s), _) => s.as_str(),
                            // A plain line of text is itself language-model data.
                            (None, true) => r.text.as_str(),
                            (None, false) => return Err(Failure::Data(format!("record {} has no summary", r.id))),
                        };
                        Example::from_text(&r.id, &r.text, summary, &vocab).map_err(Failure::data)
                    })
                    .collect()
            };
            let train = to_examples(&records, false)?;
            let lm_train = to_examples(&lm_records, true)?;
            (vocab, train, lm_train)
        }
        None => {
            let corpus = generate(&cfg.synthetic).map_err(Failure::from)?;
            written.push(run.jsonl("synthetic_dev.jsonl", &corpus.raw_dev, None::<&()>)?);
            (corpus.vocab, corpus.train, corpus.lm_train)
        }
    };
    let vocab_path = run.path("vocab.txt");
    vocab.save(&vocab_path).map_err(|e| Failure::Config(format!("{}: {e}", vocab_path.display())))?;
    written.push(vocab_path);

    let mut reports = Vec::new();
    for (name, corpus, lm_only) in [("summarizer", &train, false), ("lm", &lm_train, true)] {
        log::info!("training {name} on {} examples", corpus.len());
        let (model, report) = train_toy(corpus, &vocab, cfg.model, lm_only, &cfg.train).map_err(Failure::from)?;
        let p = run.path(&format!("{name}.ckpt"));
        checkpoint::save(&model, &p).map_err(|e| Failure::Config(format!("{}: {e}", p.display())))?;
        written.push(p);
        reports.push((name, lm_only, model.param_count(), report));
    }
    let records: Vec<TrainRecord<'_>> =
        reports.iter().map(|(model, lm_only, param_count, report)| TrainRecord { model, lm_only: *lm_only, param_count: *param_count, report }).collect();
    written.push(run.jsonl("train.jsonl", &records, None::<&()>)?);
    Ok(written)
}

pub fn cmd_map(run: &Run<'_>) -> Result<Vec<PathBuf>, Failure> {
    let b = load_backends(run.cfg)?;
    let corpus = load_corpus(run.cfg, &b.vocab)?;
    let settings = run.cfg.map_settings();
    let map = corpus_map(MapBackends::new(b.lm.as_ref(), b.summarizer.as_ref()), &corpus, &settings).map_err(Failure::from)?;
    if map.summary.target_mismatches > 0 {
        log::warn!(
            "{} of {} reference tokens are not the summarizer's top prediction",
            map.summary.target_mismatches,
            map.summary.decisions
        );
    }
    let mut written = vec![run.jsonl("map.jsonl", &map.records, Some(&map.summary))?];
    if run.cfg.svg {
        written.push(run.raw("map.svg", &scatter_svg(&map.records, &settings.boxes))?);
    }
    Ok(written)
}

/// Decision keys `(doc_id, step)` of a map file whose region is in `regions`.
fn region_filter(map: &Path, regions: &[Region]) -> Result<std::collections::HashSet<(String, usize)>, Failure> {
    let records: Vec<DecisionRecord> = read_jsonl(map).map_err(Failure::data)?;
    Ok(records.into_iter().filter(|r| regions.contains(&r.region)).map(|r| (r.doc_id, r.step)).collect())
}

pub struct AttributeArgs {
    pub method: Method,
    pub two_stage: Option<usize>,
    pub map: Option<PathBuf>,
    pub regions: Vec<Region>,
}

pub fn attribution_file_name(method: Method, two_stage: Option<usize>) -> String {
    match two_stage {
        Some(k) => format!("attributions-{method}-s{k}.jsonl"),
        None => format!("attributions-{method}.jsonl"),
    }
}

pub fn cmd_attribute(run: &Run<'_>, args: &AttributeArgs) -> Result<Vec<PathBuf>, Failure> {
    let b = load_backends(run.cfg)?;
    let corpus = load_corpus(run.cfg, &b.vocab)?;
    let mut decisions = corpus_decisions(&corpus, &b.vocab);
    if let Some(map) = &args.map {
        let keep = region_filter(map, &args.regions)?;
        decisions.retain(|d| keep.contains(&(d.doc_id.clone(), d.step)));
    } else if !args.regions.is_empty() {
        return Err(Failure::Config("--region needs --map".into()));
    }
    let opts = AttributionOptions { ig_steps: run.cfg.ig_steps, seed: run.cfg.seed };
    let sum = b.summarizer.as_ref();
    let attrs = decisions
        .par_iter()
        .map(|d| {
            let doc = &corpus[d.example].doc;
            match args.two_stage {
                Some(k) => two_stage(sum, doc, &d.prefix, d.target, args.method, k, &opts),
                None => attribute(sum, doc, &d.prefix, d.target, args.method, &opts),
            }
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(Failure::from)?;
    let summary = json!({ "method": args.method, "decisions": attrs.len(), "two_stage_k": args.two_stage });
    Ok(vec![run.jsonl(&attribution_file_name(args.method, args.two_stage), &attrs, Some(&summary))?])
}

pub struct EvaluateArgs {
    pub attributions: Vec<PathBuf>,
}

pub fn cmd_evaluate(run: &Run<'_>, args: &EvaluateArgs) -> Result<Vec<PathBuf>, Failure> {
    let cfg = run.cfg;
    let mut by_method: BTreeMap<Method, HashMap<(String, usize), AttributionVector>> = BTreeMap::new();
    for p in &args.attributions {
        let attrs: Vec<AttributionVector> = read_jsonl(p).map_err(Failure::data)?;
        for a in attrs {
            by_method.entry(a.method).or_default().insert((a.doc_id.clone(), a.step), a);
        }
    }
    if by_method.is_empty() {
        return Err(Failure::Data("no attribution records to evaluate".into()));
    }
    let b = load_backends(cfg)?;
    let corpus = load_corpus(cfg, &b.vocab)?;
    let decisions = corpus_decisions(&corpus, &b.vocab);
    let mut curves = Vec::new();
    for (method, attrs) in &by_method {
        let mut items = Vec::with_capacity(decisions.len());
        for d in &decisions {
            let a = attrs.get(&(d.doc_id.clone(), d.step));
            if let Some(a) = a {
                if a.target != d.target || a.scores.len() != corpus[d.example].doc.len() {
                    return Err(Failure::Data(format!("{method} attribution for {} step {} does not match the corpus", d.doc_id, d.step)));
                }
            }
            items.push(EvalItem { doc: &corpus[d.example].doc, prefix: &d.prefix, target: d.target, attribution: a });
        }
        if items.iter().all(|i| i.attribution.is_none()) {
            return Err(Failure::Data(format!("no {method} attribution matches a corpus decision")));
        }
        for &kind in &cfg.settings {
            let setting = EvalSetting::new(kind, cfg.budgets(kind), cfg.context_window).map_err(Failure::from)?;
            curves.push(evaluate(b.summarizer.as_ref(), &items, &setting, *method).map_err(Failure::from)?);
        }
    }
    let mut written = vec![
        run.jsonl("curves.jsonl", &curves, None::<&()>)?,
        run.text("curves.csv", &curves_csv(&curves))?,
        run.text("delta.txt", &delta_table(&curves))?,
    ];
    if cfg.svg {
        written.push(run.raw("curves.svg", &curves_svg(&curves))?);
    }
    Ok(written)
}

fn map_records(run: &Run<'_>, map: Option<&Path>, b: &crate::config::Backends, corpus: &[Example]) -> Result<Vec<DecisionRecord>, Failure> {
    match map {
        Some(p) => read_jsonl(p).map_err(Failure::data),
        None => corpus_map(MapBackends::new(b.lm.as_ref(), b.summarizer.as_ref()), corpus, &run.cfg.map_settings())
            .map(|m| m.records)
            .map_err(Failure::from),
    }
}

pub fn cmd_fuse(run: &Run<'_>, map: Option<&Path>) -> Result<Vec<PathBuf>, Failure> {
    let b = load_backends(run.cfg)?;
    let corpus = load_corpus(run.cfg, &b.vocab)?;
    let records = map_records(run, map, &b, &corpus)?;
    let s = fusion_rate(b.summarizer.as_ref(), &corpus, &records, run.cfg.fusion_gain).map_err(Failure::from)?;
    let summary = json!({ "eligible": s.eligible, "fused": s.fused, "rate": s.rate, "gain": run.cfg.fusion_gain });
    Ok(vec![run.jsonl("fusion.jsonl", &s.records, Some(&summary))?])
}

pub struct OverlapArgs {
    pub docs: PathBuf,
    pub summaries: Option<PathBuf>,
}

pub fn cmd_scan_overlap(run: &Run<'_>, args: &OverlapArgs) -> Result<Vec<PathBuf>, Failure> {
    let path = match &args.summaries {
        Some(p) => p.as_path(),
        None => run.cfg.corpus_path()?,
    };
    let summaries: Vec<(String, String)> = read_documents(path)
        .map_err(Failure::data)?
        .into_iter()
        .filter_map(|r| r.summary.map(|s| (r.id, s)))
        .collect();
    let docs = stream_documents(&args.docs).map_err(Failure::data)?.map(|r| r.map(|r| (r.id, r.text)));
    let report = overlap_scan(docs, &summaries, run.cfg.overlap_n, run.cfg.overlap_min_matches).map_err(Failure::from)?;
    let summary = json!({
        "n": run.cfg.overlap_n,
        "min_matches": run.cfg.overlap_min_matches,
        "docs_scanned": report.docs_scanned,
        "examples": report.examples,
        "examples_flagged": report.examples_flagged,
        "fraction": report.fraction,
    });
    Ok(vec![run.jsonl("overlap.jsonl", &report.hits, Some(&summary))?])
}

pub struct BigramArgs {
    /// `name=path` text corpora, one token stream per line.
    pub counts: Vec<(String, PathBuf)>,
    /// Explicit `a b` pairs, one per line; FT decisions of the map otherwise.
    pub pairs: Option<PathBuf>,
    pub map: Option<PathBuf>,
}

pub fn cmd_bigrams(run: &Run<'_>, args: &BigramArgs) -> Result<Vec<PathBuf>, Failure> {
    let pairs: Vec<(String, String)> = match (&args.pairs, &args.map) {
        (Some(p), _) => {
            let text = fs::read_to_string(p).map_err(|e| Failure::io(&p.display().to_string(), e))?;
            text.lines()
                .filter(|l| !l.trim().is_empty())
                .map(|l| {
                    let mut it = l.split_whitespace();
                    match (it.next(), it.next(), it.next()) {
                        (Some(a), Some(b), None) => Ok((a.to_string(), b.to_string())),
                        _ => Err(Failure::Data(format!("{}: expected two tokens per line, got {l:?}", p.display()))),
                    }
                })
                .collect::<Result<_, _>>()?
        }
        (None, Some(map)) => {
            let vocab = load_vocab(run.cfg)?;
            let corpus = load_corpus(run.cfg, &vocab)?;
            let records: Vec<DecisionRecord> = read_jsonl(map).map_err(Failure::data)?;
            ft_bigrams(&records, &corpus, &vocab).map_err(Failure::from)?
        }
        (None, None) => return Err(Failure::Config("bigrams needs --pairs or --map".into())),
    };
    let corpora = args
        .counts
        .iter()
        .map(|(name, p)| {
            let text = fs::read_to_string(p).map_err(|e| Failure::io(&p.display().to_string(), e))?;
            Ok((name.clone(), BigramCounts::from_text(&text)))
        })
        .collect::<Result<Vec<_>, Failure>>()?;
    let report = bigram_stats(&pairs, &corpora).map_err(Failure::from)?;
    let summary = json!({ "corpora": report.corpora, "mean": report.mean });
    Ok(vec![run.jsonl("bigrams.jsonl", &report.stats, Some(&summary))?])
}

pub fn toy_spec(dir: &Path) -> ToySpec {
    ToySpec::in_dir(dir)
}

pub fn parse_settings(list: &str) -> Result<Vec<SettingKind>, Failure> {
    list.split(',').map(|s| SettingKind::parse(s.trim()).map_err(Failure::from)).collect()
}
