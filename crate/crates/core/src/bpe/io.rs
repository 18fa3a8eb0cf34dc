use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::Deserialize;

use super::{TokenizerModel, FORMAT_VERSION};
use crate::error::{Error, Result};

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    version: String,
    vocab: Vec<String>,
    merges: Vec<(u32, u32)>,
    special: BTreeMap<String, u32>,
}

impl TokenizerModel {
    /// Canonical JSON: one vocabulary entry and one merge per line, so the
    /// same model always serializes to the same bytes.
    pub fn to_json(&self) -> String {
        let mut s = String::new();
        s.push_str("{\n");
        let _ = writeln!(s, "  \"version\": \"{FORMAT_VERSION}\",");
        s.push_str("  \"vocab\": [\n");
        for (i, tok) in self.vocab.iter().enumerate() {
            let comma = if i + 1 < self.vocab.len() { "," } else { "" };
            let _ = writeln!(s, "    \"{}\"{comma}", hex::encode(tok));
        }
        s.push_str("  ],\n  \"merges\": [\n");
        for (i, (a, b)) in self.merges.iter().enumerate() {
            let comma = if i + 1 < self.merges.len() { "," } else { "" };
            let _ = writeln!(s, "    [{a}, {b}]{comma}");
        }
        s.push_str("  ],\n  \"special\": {");
        let specials = self.specials();
        for (i, (name, id)) in specials.iter().enumerate() {
            let sep = if i == 0 { "" } else { ", " };
            let _ = write!(s, "{sep}{}: {id}", serde_json::to_string(name).unwrap_or_default());
        }
        s.push_str("}\n}\n");
        s
    }

    /// Parses and validates a model file. Errors carry the line of the
    /// offending entry.
    pub fn from_json(text: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(text)
            .map_err(|e| Error::Parse { line: e.line(), message: e.to_string() })?;
        let line_of = |needle: &str| locate(text, needle);
        if file.version != FORMAT_VERSION {
            return Err(Error::Parse {
                line: line_of("\"version\""),
                message: format!("unsupported version {:?}", file.version),
            });
        }
        let mut by_id: Vec<(u32, &str)> = file.special.iter().map(|(k, &v)| (v, k.as_str())).collect();
        by_id.sort_unstable();
        for (i, &(id, name)) in by_id.iter().enumerate() {
            if id != 256 + i as u32 {
                return Err(Error::Parse {
                    line: line_of(&serde_json::to_string(name).unwrap_or_default()),
                    message: format!("special token {name} has id {id}, expected {}", 256 + i),
                });
            }
        }
        let specials: Vec<&str> = by_id.iter().map(|&(_, n)| n).collect();
        let model = TokenizerModel::from_merges(&specials, file.merges.clone())
            .map_err(|e| Error::Parse { line: line_of("\"merges\""), message: e.to_string() })?;
        if file.vocab.len() != model.vocab.len() {
            return Err(Error::Parse {
                line: line_of("\"vocab\""),
                message: format!(
                    "vocab has {} entries but merges and specials imply {}",
                    file.vocab.len(),
                    model.vocab.len()
                ),
            });
        }
        let vocab_line = line_of("\"vocab\"");
        for (i, (entry, expected)) in file.vocab.iter().zip(&model.vocab).enumerate() {
            let bytes = hex::decode(entry).map_err(|e| Error::Parse {
                line: vocab_line + 1 + i,
                message: format!("vocab entry {i}: {e}"),
            })?;
            if &bytes != expected {
                return Err(Error::Parse {
                    line: vocab_line + 1 + i,
                    message: format!(
                        "vocab entry {i} is {entry}, but its definition gives {}",
                        hex::encode(expected)
                    ),
                });
            }
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// 1-based line of the first occurrence of `needle`, or 1.
fn locate(text: &str, needle: &str) -> usize {
    text.find(needle).map_or(1, |pos| text[..pos].matches('\n').count() + 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bpe::{train_bpe, DEFAULT_SPECIALS};

    #[test]
    fn save_load_save_is_byte_identical() {
        let m = train_bpe(&["שלום עולם hello hello world"], 290, &DEFAULT_SPECIALS).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.json");
        let p2 = dir.path().join("b.json");
        m.save(&p1).unwrap();
        let loaded = TokenizerModel::load(&p1).unwrap();
        assert_eq!(loaded, m);
        loaded.save(&p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    fn hand_written() -> String {
        // two merges: 259 = a+b, 260 = " "+ab
        let mut vocab: Vec<String> = (0..=255u8).map(|b| format!("\"{:02x}\"", b)).collect();
        vocab.push("\"3c666f726569676e3e\"".into()); // <foreign>
        vocab.push("\"3c656f643e\"".into()); // <eod>
        vocab.push("\"3c7061643e\"".into()); // <pad>
        vocab.push("\"6162\"".into());
        vocab.push("\"206162\"".into());
        format!(
            "{{\"version\": \"bpe-v1\", \"vocab\": [{}], \"merges\": [[97, 98], [32, 259]], \
             \"special\": {{\"<foreign>\": 256, \"<eod>\": 257, \"<pad>\": 258}}}}",
            vocab.join(", ")
        )
    }

    #[test]
    fn hand_written_file_loads_and_encodes() {
        let m = TokenizerModel::from_json(&hand_written()).unwrap();
        assert_eq!(m.encode("ab ab"), vec![259, 260]);
        assert_eq!(m.encode("<eod>"), vec![257]);
        assert_eq!(m.eod_id().unwrap(), 257);
    }

    #[test]
    fn malformed_files_name_a_line() {
        let m = train_bpe(&["hello hello"], 265, &DEFAULT_SPECIALS).unwrap();
        let json = m.to_json();
        let truncated = &json[..json.len() / 2];
        match TokenizerModel::from_json(truncated) {
            Err(Error::Parse { line, .. }) => assert!(line > 1),
            other => panic!("expected parse error, got {other:?}"),
        }

        // corrupt vocab entry 104 ('h') on its own line
        let bad = json.replacen("\"68\"", "\"69\"", 1);
        match TokenizerModel::from_json(&bad) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 3 + 104 + 1, "{message}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }

        let bad = json.replacen("bpe-v1", "bpe-v0", 1);
        assert!(matches!(TokenizerModel::from_json(&bad), Err(Error::Parse { line: 2, .. })));
    }
}
