use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashMap, HashSet};

use super::{pretokenize, split_specials, Segment, TokenizerModel};
use crate::error::{Error, Result};

/// Heap entry ordered by count, then by the smallest (left bytes, right
/// bytes) so that `BinaryHeap::pop` yields the next merge directly.
#[derive(Debug, PartialEq, Eq)]
struct Candidate {
    count: u64,
    left: Vec<u8>,
    right: Vec<u8>,
    pair: (u32, u32),
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.count.cmp(&other.count).then_with(|| (&other.left, &other.right).cmp(&(&self.left, &self.right)))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

struct Word {
    syms: Vec<u32>,
    freq: u64,
}

/// Counts pre-tokens over the corpus, with special-token literals removed.
fn count_pieces<S: AsRef<str>>(corpus: &[S], specials: &[String]) -> BTreeMap<Vec<u8>, u64> {
    let mut counts = BTreeMap::new();
    for doc in corpus {
        for seg in split_specials(doc.as_ref(), specials) {
            if let Segment::Text(t) = seg {
                for piece in pretokenize(t) {
                    *counts.entry(piece.as_bytes().to_vec()).or_insert(0) += 1;
                }
            }
        }
    }
    counts
}

/// Trains a byte-level BPE model.
///
/// Each step merges the most frequent adjacent pair inside pre-tokens,
/// breaking ties by the lexicographically smallest (left bytes, right
/// bytes). Training stops at `vocab_size` entries or when no pair is left,
/// so a small corpus may produce a smaller vocabulary than requested.
pub fn train_bpe<S: AsRef<str>>(
    corpus: &[S],
    vocab_size: usize,
    specials: &[&str],
) -> Result<TokenizerModel> {
    let base = 256 + specials.len();
    if vocab_size < base {
        return Err(Error::Config(format!(
            "vocab_size {vocab_size} is smaller than 256 bytes + {} special tokens",
            specials.len()
        )));
    }
    if corpus.iter().all(|d| d.as_ref().is_empty()) {
        return Err(Error::Empty("tokenizer training corpus"));
    }
    let special_names: Vec<String> = specials.iter().map(|s| s.to_string()).collect();
    let mut words: Vec<Word> = count_pieces(corpus, &special_names)
        .into_iter()
        .map(|(bytes, freq)| Word { syms: bytes.into_iter().map(u32::from).collect(), freq })
        .collect();

    let mut vocab: Vec<Vec<u8>> = (0..=255u8).map(|b| vec![b]).collect();
    vocab.extend(specials.iter().map(|s| s.as_bytes().to_vec()));

    let mut counts: HashMap<(u32, u32), u64> = HashMap::new();
    let mut where_: HashMap<(u32, u32), HashSet<usize>> = HashMap::new();
    for (wi, w) in words.iter().enumerate() {
        for p in w.syms.windows(2) {
            let pair = (p[0], p[1]);
            *counts.entry(pair).or_insert(0) += w.freq;
            where_.entry(pair).or_default().insert(wi);
        }
    }
    let candidate = |vocab: &[Vec<u8>], pair: (u32, u32), count: u64| Candidate {
        count,
        left: vocab[pair.0 as usize].clone(),
        right: vocab[pair.1 as usize].clone(),
        pair,
    };
    let mut heap: BinaryHeap<Candidate> =
        counts.iter().map(|(&pair, &c)| candidate(&vocab, pair, c)).collect();

    let mut merges = Vec::new();
    while vocab.len() < vocab_size {
        let Some(top) = heap.pop() else { break };
        let current = counts.get(&top.pair).copied().unwrap_or(0);
        if current == 0 || current != top.count {
            continue; // stale
        }
        let pair = top.pair;
        let new_id = vocab.len() as u32;
        let mut bytes = top.left;
        bytes.extend_from_slice(&top.right);
        vocab.push(bytes);
        merges.push(pair);

        let mut affected: Vec<usize> = where_.remove(&pair).unwrap_or_default().into_iter().collect();
        affected.sort_unstable();
        let mut touched: HashSet<(u32, u32)> = HashSet::new();
        for wi in affected {
            let w = &mut words[wi];
            for p in w.syms.windows(2) {
                let old = (p[0], p[1]);
                if let Some(c) = counts.get_mut(&old) {
                    *c -= w.freq;
                }
                touched.insert(old);
            }
            let mut merged = Vec::with_capacity(w.syms.len());
            let mut i = 0;
            while i < w.syms.len() {
                if i + 1 < w.syms.len() && (w.syms[i], w.syms[i + 1]) == pair {
                    merged.push(new_id);
                    i += 2;
                } else {
                    merged.push(w.syms[i]);
                    i += 1;
                }
            }
            w.syms = merged;
            for p in w.syms.windows(2) {
                let new = (p[0], p[1]);
                *counts.entry(new).or_insert(0) += w.freq;
                where_.entry(new).or_default().insert(wi);
                touched.insert(new);
            }
        }
        counts.remove(&pair);
        let mut touched: Vec<(u32, u32)> = touched.into_iter().collect();
        touched.sort_unstable();
        for p in touched {
            match counts.get(&p).copied() {
                Some(0) => {
                    counts.remove(&p);
                }
                Some(c) => heap.push(candidate(&vocab, p, c)),
                None => {}
            }
        }
    }
    TokenizerModel::from_merges(specials, merges)
}
