//! Corpus cleaning: script classification, foreign-run reduction, histogram
//! and gibberish heuristics, and sentence-level perplexity filtering against
//! a character n-gram model.

mod charlm;
mod clean;
mod script;
mod sentences;

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use charlm::{perplexity_percentile, CharLm};
pub use clean::{clean_corpus, clean_document, CleaningConfig, CleaningReport, DocOutcome};
pub use script::{
    char_histogram, classify_codepoint, histogram_filter, is_foreign_letter, reduce_foreign,
    reduce_foreign_counted, DropReason, Histogram, ScriptClass, FOREIGN_TOKEN,
};
pub use sentences::{split_sentences, Sentences};

/// One corpus record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub source: String,
    pub text: String,
}

impl Document {
    pub fn new(id: impl Into<String>, source: impl Into<String>, text: impl Into<String>) -> Self {
        Document { id: id.into(), source: source.into(), text: text.into() }
    }
}

/// A JSONL line that could not be turned into a [`Document`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MalformedRecord {
    /// 1-based line number.
    pub line: usize,
    pub reason: String,
}

pub type Record = std::result::Result<Document, MalformedRecord>;

/// Reads a JSONL corpus, keeping malformed lines (bad UTF-8, bad JSON) as
/// [`MalformedRecord`]s instead of failing. Blank lines are ignored.
pub fn read_records(path: &Path) -> Result<Vec<Record>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut out = Vec::new();
    let mut buf = Vec::new();
    let mut line = 0usize;
    loop {
        buf.clear();
        let n = reader.read_until(b'\n', &mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        line += 1;
        out.extend(parse_record_line(&buf, line));
    }
    Ok(out)
}

fn parse_record_line(raw: &[u8], line: usize) -> Option<Record> {
    let text = match std::str::from_utf8(raw) {
        Ok(t) => t,
        Err(e) => return Some(Err(MalformedRecord { line, reason: format!("invalid utf-8: {e}") })),
    };
    let text = text.trim_end_matches(['\n', '\r']);
    if text.trim().is_empty() {
        return None;
    }
    Some(serde_json::from_str::<Document>(text).map_err(|e| MalformedRecord { line, reason: e.to_string() }))
}

/// Reads a JSONL corpus, failing on the first malformed line.
pub fn read_documents(path: &Path) -> Result<Vec<Document>> {
    read_records(path)?
        .into_iter()
        .map(|r| r.map_err(|m| Error::Parse { line: m.line, message: m.reason }))
        .collect()
}

pub fn write_documents(path: &Path, docs: &[Document]) -> Result<()> {
    write_jsonl(path, docs)
}

/// Writes one JSON object per line.
pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads one JSON object per line; blank lines are skipped.
pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item =
            serde_json::from_str(&line).map_err(|e| Error::Parse { line: i + 1, message: e.to_string() })?;
        out.push(item);
    }
    Ok(out)
}
