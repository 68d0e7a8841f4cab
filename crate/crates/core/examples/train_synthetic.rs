//! Train the toy summarizer and language model on the synthetic copy corpus
//! and report held-out accuracy by token role.

use std::time::Instant;

use sumlens_core::backend::{predict_next, AblationConfig};
use sumlens_core::synthetic::{generate, SyntheticConfig, TokenRole};
use sumlens_core::toy::{train_toy, ToyModelConfig, TrainOptions};

fn main() -> sumlens_core::Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).map(|a| a.parse().expect("integer")).collect();
    let dim = args.first().copied().unwrap_or(32);
    let epochs = args.get(1).copied().unwrap_or(10);
    let n = args.get(2).copied().unwrap_or(1500);
    let corpus = generate(&SyntheticConfig { train: n, ..Default::default() })?;
    let cfg = ToyModelConfig { embed_dim: dim, ffn_dim: 2 * dim, max_len: 64, ..Default::default() };
    let opts = TrainOptions { epochs, ..Default::default() };
    let t = Instant::now();
    let (sum, rep) = train_toy(&corpus.train, &corpus.vocab, cfg, false, &opts)?;
    println!("summarizer: {:?} in {:.1?}", rep.epoch_losses, t.elapsed());
    let t = Instant::now();
    let (lm, rep) = train_toy(&corpus.lm_train, &corpus.vocab, cfg, true, &opts)?;
    println!("lm: {:?} in {:.1?}", rep.epoch_losses, t.elapsed());
    let mut hits = [(0, 0); 2];
    for (ex, roles) in corpus.dev.iter().zip(&corpus.dev_roles) {
        for (d, role) in ex.decisions(0, &corpus.vocab).iter().zip(roles) {
            let full = predict_next(&sum, &AblationConfig::s_full(), &ex.doc, &d.prefix)?;
            let _ = &lm;
            let k = (*role == TokenRole::Copy) as usize;
            hits[k].1 += 1;
            if full.argmax().0 == d.target {
                hits[k].0 += 1;
            }
        }
    }
    println!("template acc {}/{}  copy acc {}/{}", hits[0].0, hits[0].1, hits[1].0, hits[1].1);
    Ok(())
}
