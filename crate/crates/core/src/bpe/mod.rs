//! Byte-level byte-pair encoding.
//!
//! Ids `0..256` are raw bytes, the reserved special tokens follow, and every
//! later id is the output of one learned merge, in the order merges were
//! learned. Text is pre-tokenized on whitespace (see [`pretokenize`]) and
//! merges never cross pre-token boundaries.

mod fertility;
mod io;
mod train;

use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};

pub use fertility::{fertility, FertilityStats};
pub use train::train_bpe;

pub const FOREIGN: &str = "<foreign>";
pub const EOD: &str = "<eod>";
pub const PAD: &str = "<pad>";

/// The reserved special tokens, in id order.
pub const DEFAULT_SPECIALS: [&str; 3] = [FOREIGN, EOD, PAD];

/// Format tag written into model files.
pub const FORMAT_VERSION: &str = "bpe-v1";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizerModel {
    vocab: Vec<Vec<u8>>,
    merges: Vec<(u32, u32)>,
    specials: Vec<String>,
    ranks: HashMap<(u32, u32), u32>,
}

impl TokenizerModel {
    /// Builds a model from special token names and a merge list, checking
    /// every merge refers to an existing id.
    pub fn from_merges(specials: &[&str], merges: Vec<(u32, u32)>) -> Result<Self> {
        let mut vocab: Vec<Vec<u8>> = (0..=255u8).map(|b| vec![b]).collect();
        vocab.extend(specials.iter().map(|s| s.as_bytes().to_vec()));
        let first = vocab.len() as u32;
        for (i, &(a, b)) in merges.iter().enumerate() {
            let next = first + i as u32;
            let ok = |id: u32| id < next && !(256..first).contains(&id);
            if !ok(a) || !ok(b) {
                return Err(Error::Config(format!(
                    "merge {i} ({a}, {b}) refers to a special or not-yet-defined id"
                )));
            }
            let mut bytes = vocab[a as usize].clone();
            bytes.extend_from_slice(&vocab[b as usize]);
            vocab.push(bytes);
        }
        let ranks = merges.iter().enumerate().map(|(i, &p)| (p, i as u32)).collect();
        Ok(TokenizerModel {
            vocab,
            merges,
            specials: specials.iter().map(|s| s.to_string()).collect(),
            ranks,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn merges(&self) -> &[(u32, u32)] {
        &self.merges
    }

    /// Byte string of a token.
    pub fn token_bytes(&self, id: u32) -> Option<&[u8]> {
        self.vocab.get(id as usize).map(Vec::as_slice)
    }

    fn first_merge_id(&self) -> u32 {
        (256 + self.specials.len()) as u32
    }

    pub fn special_id(&self, name: &str) -> Option<u32> {
        self.specials.iter().position(|s| s == name).map(|i| 256 + i as u32)
    }

    /// Special token names mapped to their ids.
    pub fn specials(&self) -> BTreeMap<String, u32> {
        self.specials.iter().enumerate().map(|(i, s)| (s.clone(), 256 + i as u32)).collect()
    }

    pub fn is_special(&self, id: u32) -> bool {
        (256..self.first_merge_id()).contains(&id)
    }

    /// `<eod>` id.
    pub fn eod_id(&self) -> Result<u32> {
        self.special_id(EOD).ok_or_else(|| Error::Config("tokenizer has no <eod> token".into()))
    }

    /// Applies merges in rank order to the bytes of one pre-token.
    fn encode_piece(&self, piece: &[u8], out: &mut Vec<u32>) {
        let mut syms: Vec<u32> = piece.iter().map(|&b| u32::from(b)).collect();
        while syms.len() > 1 {
            let best = syms
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0], w[1])).map(|&r| (r, (w[0], w[1]))))
                .min();
            let Some((rank, pair)) = best else { break };
            let new_id = self.first_merge_id() + rank;
            let mut merged = Vec::with_capacity(syms.len());
            let mut i = 0;
            while i < syms.len() {
                if i + 1 < syms.len() && (syms[i], syms[i + 1]) == pair {
                    merged.push(new_id);
                    i += 2;
                } else {
                    merged.push(syms[i]);
                    i += 1;
                }
            }
            syms = merged;
        }
        out.extend_from_slice(&syms);
    }

    /// Encodes text. Literal special-token strings map to their reserved ids;
    /// everything else is byte-level, so any input is encodable.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        let mut out = Vec::new();
        for seg in split_specials(text, &self.specials) {
            match seg {
                Segment::Special(i) => out.push(256 + i as u32),
                Segment::Text(t) => {
                    for piece in pretokenize(t) {
                        self.encode_piece(piece.as_bytes(), &mut out);
                    }
                }
            }
        }
        out
    }

    /// Concatenated bytes of `ids`.
    pub fn decode_bytes(&self, ids: &[u32]) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        for &id in ids {
            let bytes = self.token_bytes(id).ok_or(Error::TokenOutOfRange { id, vocab: self.vocab.len() })?;
            out.extend_from_slice(bytes);
        }
        Ok(out)
    }

    /// Decodes to text; byte sequences that are not valid UTF-8 (possible
    /// when decoding sampled ids) are replaced with U+FFFD.
    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        let bytes = self.decode_bytes(ids)?;
        Ok(match String::from_utf8(bytes) {
            Ok(s) => s,
            Err(e) => String::from_utf8_lossy(e.as_bytes()).into_owned(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Segment<'a> {
    Text(&'a str),
    /// Index into the special list.
    Special(usize),
}

/// Cuts out literal special-token strings, leftmost first, longest on ties.
pub(crate) fn split_specials<'a>(text: &'a str, specials: &[String]) -> Vec<Segment<'a>> {
    let mut out = Vec::new();
    let mut rest = text;
    loop {
        let found = specials
            .iter()
            .enumerate()
            .filter(|(_, s)| !s.is_empty())
            .filter_map(|(i, s)| rest.find(s.as_str()).map(|pos| (pos, std::cmp::Reverse(s.len()), i)))
            .min();
        match found {
            Some((pos, std::cmp::Reverse(len), i)) => {
                if pos > 0 {
                    out.push(Segment::Text(&rest[..pos]));
                }
                out.push(Segment::Special(i));
                rest = &rest[pos + len..];
            }
            None => {
                if !rest.is_empty() {
                    out.push(Segment::Text(rest));
                }
                return out;
            }
        }
    }
}

/// Lossless whitespace pre-tokenization.
///
/// Each maximal non-whitespace run is a word. A word directly preceded by
/// an ASCII space takes that space as its leading marker (`" word"`); any
/// other whitespace forms pieces of its own. Concatenating the pieces gives
/// back the input.
pub fn pretokenize(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0; // start of the pending whitespace run
    let mut iter = text.char_indices().peekable();
    while let Some(&(i, c)) = iter.peek() {
        if c.is_whitespace() {
            iter.next();
            continue;
        }
        // word starts at i; whitespace run is start..i
        let mut word_start = i;
        if i > start {
            if text[..i].ends_with(' ') {
                word_start = i - 1;
            }
            if word_start > start {
                out.push(&text[start..word_start]);
            }
        }
        let mut end = text.len();
        while let Some(&(j, c)) = iter.peek() {
            if c.is_whitespace() {
                end = j;
                break;
            }
            iter.next();
        }
        out.push(&text[word_start..end]);
        start = end;
    }
    if start < text.len() {
        out.push(&text[start..]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pretokenize_marks_spaces() {
        assert_eq!(pretokenize("ab ab ab"), vec!["ab", " ab", " ab"]);
        assert_eq!(pretokenize("  a\n b "), vec![" ", " a", "\n", " b", " "]);
        assert_eq!(pretokenize(""), Vec::<&str>::new());
        assert_eq!(pretokenize("\t"), vec!["\t"]);
        assert_eq!(pretokenize("שלום עולם"), vec!["שלום", " עולם"]);
    }

    #[test]
    fn specials_are_split_out() {
        let sp: Vec<String> = DEFAULT_SPECIALS.iter().map(|s| s.to_string()).collect();
        assert_eq!(
            split_specials("a<eod>b<foreign>", &sp),
            vec![Segment::Text("a"), Segment::Special(1), Segment::Text("b"), Segment::Special(0)]
        );
        assert_eq!(split_specials("<pad><pad>", &sp), vec![Segment::Special(2); 2]);
    }

    #[test]
    fn byte_fallback_model() {
        let m = TokenizerModel::from_merges(&DEFAULT_SPECIALS, vec![]).unwrap();
        assert_eq!(m.vocab_size(), 259);
        assert_eq!(m.encode(""), Vec::<u32>::new());
        assert_eq!(m.encode("<foreign>"), vec![256]);
        assert_eq!(m.encode("ab"), vec![97, 98]);
        assert_eq!(m.decode(&[257]).unwrap(), "<eod>");
        assert!(m.decode(&[259]).is_err());
    }

    #[test]
    fn hand_built_merges_encode() {
        // 259 = "a"+"b", 260 = " "+"ab"
        let m = TokenizerModel::from_merges(&DEFAULT_SPECIALS, vec![(97, 98), (32, 259)]).unwrap();
        assert_eq!(m.token_bytes(260).unwrap(), b" ab");
        assert_eq!(m.encode("ab ab abc"), vec![259, 260, 260, 99]);
        assert!(TokenizerModel::from_merges(&DEFAULT_SPECIALS, vec![(97, 257)]).is_err());
        assert!(TokenizerModel::from_merges(&DEFAULT_SPECIALS, vec![(97, 259)]).is_err());
    }

    #[test]
    fn merge_order_matters_for_overlaps() {
        // "aaa": merging (a,a) left to right gives [aa, a]
        let m = TokenizerModel::from_merges(&[], vec![(97, 97)]).unwrap();
        assert_eq!(m.encode("aaa"), vec![256, 97]);
    }

    proptest! {
        #[test]
        fn pretokenize_is_lossless(t in "\\PC{0,40}|[ a\n\t]{0,20}") {
            prop_assert_eq!(pretokenize(&t).concat(), t);
        }
    }
}
