//! Versioned binary checkpoints.
//!
//! Layout: the 8-byte magic `SUMLENS\0`, a little-endian `u32` format
//! version, a little-endian `u64` header length, a JSON header, then every
//! parameter as a little-endian `f64` in the model's fixed tensor order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{ToyModelConfig, ToyTransformer};
use crate::backend::Backend;
use crate::error::{Error, Result};
use crate::vocab::Vocab;

const MAGIC: &[u8; 8] = b"SUMLENS\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub config: ToyModelConfig,
    pub vocab_hash: String,
    pub seed: u64,
    pub lm_only: bool,
    pub param_count: usize,
}

pub fn write_checkpoint<W: Write>(model: &ToyTransformer, mut out: W) -> Result<()> {
    let header = CheckpointHeader {
        config: *model.config(),
        vocab_hash: model.vocab().hash(),
        seed: model.config().seed,
        lm_only: model.is_lm_only(),
        param_count: model.param_count(),
    };
    let json = serde_json::to_vec(&header)?;
    out.write_all(MAGIC)?;
    out.write_all(&FORMAT_VERSION.to_le_bytes())?;
    out.write_all(&(json.len() as u64).to_le_bytes())?;
    out.write_all(&json)?;
    let mut buf = Vec::with_capacity(model.param_count() * 8);
    for p in model.flat_params() {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut input: R, vocab: Vocab) -> Result<ToyTransformer> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("not a sumlens checkpoint".into()));
    }
    let mut v = [0u8; 4];
    input.read_exact(&mut v)?;
    let version = u32::from_le_bytes(v);
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let mut len = [0u8; 8];
    input.read_exact(&mut len)?;
    let mut json = vec![0u8; u64::from_le_bytes(len) as usize];
    input.read_exact(&mut json)?;
    let header: CheckpointHeader = serde_json::from_slice(&json)?;
    if header.vocab_hash != vocab.hash() {
        return Err(Error::Vocab("checkpoint was trained with a different vocabulary".into()));
    }
    let mut raw = Vec::new();
    input.read_to_end(&mut raw)?;
    if raw.len() != header.param_count * 8 {
        return Err(Error::Checkpoint(format!("expected {} parameter bytes, found {}", header.param_count * 8, raw.len())));
    }
    let flat: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    ToyTransformer::from_params(header.config, vocab, header.lm_only, &flat)
}

pub fn save(model: &ToyTransformer, path: impl AsRef<Path>) -> Result<()> {
    let f = std::fs::File::create(path)?;
    write_checkpoint(model, std::io::BufWriter::new(f))
}

pub fn load(path: impl AsRef<Path>, vocab: Vocab) -> Result<ToyTransformer> {
    let f = std::fs::File::open(path)?;
    read_checkpoint(std::io::BufReader::new(f), vocab)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> ToyTransformer {
        let vocab = Vocab::with_specials(["a", "b", "c"]).unwrap();
        let cfg = ToyModelConfig { layers: 1, heads: 1, embed_dim: 4, ffn_dim: 4, max_len: 8, seed: 5 };
        ToyTransformer::new(cfg, vocab, false).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let m = model();
        let mut buf = Vec::new();
        write_checkpoint(&m, &mut buf).unwrap();
        let back = read_checkpoint(&buf[..], m.vocab().clone()).unwrap();
        assert_eq!(back.flat_params(), m.flat_params());
        assert_eq!(back.config(), m.config());
    }

    #[test]
    fn vocabulary_mismatch_is_rejected() {
        let m = model();
        let mut buf = Vec::new();
        write_checkpoint(&m, &mut buf).unwrap();
        let other = Vocab::with_specials(["a", "b", "d"]).unwrap();
        assert!(matches!(read_checkpoint(&buf[..], other), Err(Error::Vocab(_))));
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let m = model();
        let mut buf = Vec::new();
        write_checkpoint(&m, &mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(read_checkpoint(&buf[..], m.vocab().clone()).is_err());
        assert!(read_checkpoint(&b"garbage!"[..], m.vocab().clone()).is_err());
    }
}
