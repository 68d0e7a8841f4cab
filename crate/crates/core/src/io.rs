//! JSONL files with a provenance header, and document ingestion.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::vocab::hex;

pub const TOOL: &str = "sumlens";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// First record of every output file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Header {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub kind: String,
}

impl Header {
    pub fn new(kind: &str, config_hash: &str) -> Self {
        Self { tool: TOOL.into(), version: VERSION.into(), config_hash: config_hash.into(), kind: kind.into() }
    }
}

/// SHA-256 of the compact JSON encoding.
pub fn config_hash<T: Serialize>(config: &T) -> Result<String> {
    Ok(hex(&Sha256::digest(serde_json::to_vec(config)?)))
}

#[derive(Serialize)]
struct Wrapped<'a, T> {
    #[serde(skip_serializing_if = "Option::is_none")]
    header: Option<&'a Header>,
    #[serde(skip_serializing_if = "Option::is_none")]
    summary: Option<&'a T>,
}

/// `{"header": …}`, one line per record, then `{"summary": …}` if given.
pub fn write_jsonl<W, R, S>(mut out: W, header: &Header, records: &[R], summary: Option<&S>) -> Result<()>
where
    W: Write,
    R: Serialize,
    S: Serialize,
{
    serde_json::to_writer(&mut out, &Wrapped::<()> { header: Some(header), summary: None })?;
    out.write_all(b"\n")?;
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    if let Some(s) = summary {
        serde_json::to_writer(&mut out, &Wrapped { header: None, summary: Some(s) })?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_jsonl_file<R: Serialize, S: Serialize>(path: impl AsRef<Path>, header: &Header, records: &[R], summary: Option<&S>) -> Result<()> {
    let f = File::create(path)?;
    write_jsonl(std::io::BufWriter::new(f), header, records, summary)
}

fn is_wrapper(v: &Value) -> bool {
    matches!(v, Value::Object(m) if m.len() == 1 && (m.contains_key("header") || m.contains_key("summary")))
}

/// Records of a JSONL file, skipping header and summary lines and blanks.
pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let v: Value = serde_json::from_str(&line).map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), n + 1)))?;
        if is_wrapper(&v) {
            continue;
        }
        out.push(serde_json::from_value(v).map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), n + 1)))?);
    }
    Ok(out)
}

/// The header line of a file written by [`write_jsonl`], if present.
pub fn read_header(path: impl AsRef<Path>) -> Result<Option<Header>> {
    let f = File::open(path)?;
    let Some(first) = BufReader::new(f).lines().next().transpose()? else {
        return Ok(None);
    };
    let v: Value = serde_json::from_str(&first).map_err(|e| Error::Data(e.to_string()))?;
    Ok(v.get("header").map(|h| serde_json::from_value(h.clone())).transpose()?)
}

/// Ingested document. Plain-text lines have no summary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextRecord {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<String>,
}

fn parse_line(n: usize, line: &str, json: bool) -> Result<Option<TextRecord>> {
    let t = line.trim();
    if t.is_empty() {
        return Ok(None);
    }
    if json {
        let v: Value = serde_json::from_str(t).map_err(|e| Error::Data(format!("line {}: {e}", n + 1)))?;
        if is_wrapper(&v) {
            return Ok(None);
        }
        return serde_json::from_value(v).map(Some).map_err(|e| Error::Data(format!("line {}: {e}", n + 1)));
    }
    Ok(Some(TextRecord { id: format!("line-{}", n + 1), text: t.to_string(), summary: None }))
}

fn looks_like_jsonl(path: &Path) -> Result<bool> {
    if path.extension().is_some_and(|e| e == "jsonl" || e == "json") {
        return Ok(true);
    }
    let f = File::open(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    for line in BufReader::new(f).lines() {
        let line = line?;
        if let Some(c) = line.trim_start().chars().next() {
            return Ok(c == '{');
        }
    }
    Ok(false)
}

/// Lazily read `{"id", "text"[, "summary"]}` JSONL or one-document-per-line
/// plain text.
pub fn stream_documents(path: impl AsRef<Path>) -> Result<impl Iterator<Item = Result<TextRecord>>> {
    let path = path.as_ref();
    let json = looks_like_jsonl(path)?;
    let f = File::open(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    Ok(BufReader::new(f)
        .lines()
        .enumerate()
        .filter_map(move |(n, line)| match line {
            Ok(l) => parse_line(n, &l, json).transpose(),
            Err(e) => Some(Err(e.into())),
        }))
}

pub fn read_documents(path: impl AsRef<Path>) -> Result<Vec<TextRecord>> {
    stream_documents(path)?.collect()
}
