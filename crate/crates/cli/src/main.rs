//! `sumlens`: decision maps, attributions and counterfactual evaluation of
//! summarization models from the command line.
//!
//! Settings come from built-in defaults, then the `--config` JSON file, then
//! flags; later sources win. A backend flag (`--toy-dir`, `--oracle`,
//! `--endpoint`) replaces the whole `backend` section of the file.

mod commands;
mod config;
mod failure;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use sumlens_core::{Method, Region};

use commands::{AttributeArgs, BigramArgs, EvaluateArgs, OverlapArgs, Run};
use config::{BackendSpec, RemoteSpec, RunConfig, ScriptedSpec};
use failure::Failure;

#[derive(Parser, Debug)]
#[command(name = "sumlens", version, about = "Dissect the step-wise decisions of summarization models")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct GlobalArgs {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// JSONL corpus with `id`, `text` and `summary`.
    #[arg(long, global = true)]
    corpus: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, global = true, env = "SUMLENS_JOBS")]
    jobs: Option<usize>,
    /// Also write SVG plots.
    #[arg(long, global = true)]
    svg: bool,
    /// Directory holding vocab.txt, summarizer.ckpt and lm.ckpt.
    #[arg(long, global = true)]
    toy_dir: Option<PathBuf>,
    /// Scripted oracle rules (JSON).
    #[arg(long, global = true)]
    oracle: Option<PathBuf>,
    /// Remote model server base URL.
    #[arg(long, global = true)]
    endpoint: Option<String>,
    /// Vocabulary file for --oracle or --endpoint.
    #[arg(long, global = true)]
    vocab: Option<PathBuf>,
    #[arg(short, long, global = true)]
    verbose: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train the toy summarizer and language model.
    TrainToy {
        #[arg(long)]
        epochs: Option<usize>,
        /// Text for the language model; the corpus summaries otherwise.
        #[arg(long)]
        lm_corpus: Option<PathBuf>,
    },
    /// Place every decision of the corpus on the ablation map.
    Map,
    /// Attribute each decision to source pieces.
    Attribute {
        #[arg(long)]
        method: Method,
        /// Probe sentences first and attribute only inside the top K.
        #[arg(long, value_name = "K")]
        two_stage: Option<usize>,
        #[arg(long)]
        ig_steps: Option<usize>,
        /// Map file used with --region.
        #[arg(long)]
        map: Option<PathBuf>,
        /// Only decisions mapped to these regions.
        #[arg(long = "region")]
        regions: Vec<Region>,
    },
    /// Counterfactual curves and Δ for attribution files.
    Evaluate {
        #[arg(long, num_args = 1.., required = true)]
        attributions: Vec<PathBuf>,
        /// Comma-separated subset of DispTok,RmTok,DispSent,RmSent.
        #[arg(long)]
        settings: Option<String>,
        #[arg(long)]
        window: Option<usize>,
    },
    /// Search sentence pairs that jointly explain hard CTX decisions.
    Fuse {
        /// Reuse an existing map instead of recomputing it.
        #[arg(long)]
        map: Option<PathBuf>,
        #[arg(long)]
        gain: Option<f64>,
    },
    /// Find summaries whose n-grams occur in a document collection.
    ScanOverlap {
        /// Documents to scan (JSONL or one document per line).
        #[arg(long)]
        docs: PathBuf,
        /// Summaries to look for; the corpus otherwise.
        #[arg(long)]
        summaries: Option<PathBuf>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        min_matches: Option<usize>,
    },
    /// Compare bigram frequencies across text corpora.
    Bigrams {
        /// NAME=PATH, at least two.
        #[arg(long = "counts", value_parser = parse_named_path, required = true)]
        counts: Vec<(String, PathBuf)>,
        #[arg(long)]
        pairs: Option<PathBuf>,
        #[arg(long)]
        map: Option<PathBuf>,
    },
}

fn parse_named_path(s: &str) -> Result<(String, PathBuf), String> {
    match s.split_once('=') {
        Some((name, path)) if !name.is_empty() && !path.is_empty() => Ok((name.to_string(), PathBuf::from(path))),
        _ => Err(format!("expected NAME=PATH, got {s:?}")),
    }
}

fn build_config(g: &GlobalArgs, command: &Command) -> Result<RunConfig, Failure> {
    let mut cfg = match &g.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let flagged = [g.toy_dir.is_some(), g.oracle.is_some(), g.endpoint.is_some()].iter().filter(|b| **b).count();
    if flagged > 1 {
        return Err(Failure::Config("pass only one of --toy-dir, --oracle and --endpoint".into()));
    }
    if let Some(dir) = &g.toy_dir {
        cfg.backend = BackendSpec { toy: Some(commands::toy_spec(dir)), ..Default::default() };
    }
    if let Some(oracle) = &g.oracle {
        cfg.backend = BackendSpec { scripted: Some(ScriptedSpec { oracle: oracle.clone(), vocab: g.vocab.clone() }), ..Default::default() };
    }
    if let Some(url) = &g.endpoint {
        let vocab = g.vocab.clone().ok_or_else(|| Failure::Config("--endpoint needs --vocab".into()))?;
        cfg.backend = BackendSpec {
            remote: Some(RemoteSpec { vocab, summarizer: url.clone(), lm: None, timeout_ms: 30_000 }),
            ..Default::default()
        };
    }
    if g.vocab.is_some() && g.oracle.is_none() && g.endpoint.is_none() {
        return Err(Failure::Config("--vocab applies to --oracle or --endpoint".into()));
    }
    if let Some(p) = &g.out {
        cfg.out_dir = p.clone();
    }
    if let Some(p) = &g.corpus {
        cfg.corpus = Some(p.clone());
    }
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    cfg.svg |= g.svg;
    match command {
        Command::TrainToy { epochs, lm_corpus } => {
            if let Some(e) = epochs {
                cfg.train.epochs = *e;
            }
            if let Some(p) = lm_corpus {
                cfg.lm_corpus = Some(p.clone());
            }
        }
        Command::Attribute { ig_steps: Some(r), .. } => cfg.ig_steps = *r,
        Command::Evaluate { settings, window, .. } => {
            if let Some(s) = settings {
                cfg.settings = commands::parse_settings(s)?;
            }
            if let Some(w) = window {
                cfg.context_window = *w;
            }
        }
        Command::Fuse { gain: Some(g), .. } => cfg.fusion_gain = *g,
        Command::ScanOverlap { n, min_matches, .. } => {
            if let Some(n) = n {
                cfg.overlap_n = *n;
            }
            if let Some(m) = min_matches {
                cfg.overlap_min_matches = *m;
            }
        }
        _ => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<Vec<PathBuf>, Failure> {
    let cfg = build_config(&cli.global, &cli.command)?;
    if let Some(j) = cli.global.jobs {
        if j == 0 {
            return Err(Failure::Config("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
            .map_err(|e| Failure::Config(format!("worker pool: {e}")))?;
    }
    match &cli.command {
        Command::TrainToy { .. } => commands::cmd_train_toy(&Run::new(&cfg, "train-toy", json!({}))?),
        Command::Map => commands::cmd_map(&Run::new(&cfg, "map", json!({}))?),
        Command::Attribute { method, two_stage, map, regions, .. } => {
            let run = Run::new(&cfg, "attribute", json!({ "method": method, "two_stage": two_stage, "map": map, "regions": regions }))?;
            let args = AttributeArgs { method: *method, two_stage: *two_stage, map: map.clone(), regions: regions.clone() };
            commands::cmd_attribute(&run, &args)
        }
        Command::Evaluate { attributions, .. } => {
            let run = Run::new(&cfg, "evaluate", json!({ "attributions": attributions }))?;
            commands::cmd_evaluate(&run, &EvaluateArgs { attributions: attributions.clone() })
        }
        Command::Fuse { map, .. } => commands::cmd_fuse(&Run::new(&cfg, "fuse", json!({ "map": map }))?, map.as_deref()),
        Command::ScanOverlap { docs, summaries, .. } => {
            let run = Run::new(&cfg, "scan-overlap", json!({ "docs": docs, "summaries": summaries }))?;
            commands::cmd_scan_overlap(&run, &OverlapArgs { docs: docs.clone(), summaries: summaries.clone() })
        }
        Command::Bigrams { counts, pairs, map } => {
            let run = Run::new(&cfg, "bigrams", json!({ "counts": counts, "pairs": pairs, "map": map }))?;
            commands::cmd_bigrams(&run, &BigramArgs { counts: counts.clone(), pairs: pairs.clone(), map: map.clone() })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.global.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("sumlens: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
