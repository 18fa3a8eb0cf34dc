//! Corpus mixing and fixed-length sequence packing.
//!
//! Each draw picks a component by weight and then takes the next document
//! from that component's shuffled cyclic order, reshuffling on every wrap.
//! A small component with a large weight is therefore oversampled, and
//! every one of its documents is seen once per cycle.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream_rng, tag};

pub const PACKED_VERSION: &str = "packed-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentSpec {
    pub path: PathBuf,
    pub weight: f64,
}

/// Mixture spec file contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub components: Vec<ComponentSpec>,
    pub seed: u64,
    /// Number of document draws; defaults to enough draws to cycle through
    /// every component at least twice in expectation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_documents: Option<usize>,
}

impl MixtureSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: MixtureSpec = serde_json::from_str(&text)
            .map_err(|e| Error::Parse { line: e.line(), message: e.to_string() })?;
        let weights: Vec<f64> = spec.components.iter().map(|c| c.weight).collect();
        validate_weights(&weights)?;
        Ok(spec)
    }

    pub fn weights(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.weight).collect()
    }

    /// `num_documents`, or `ceil(2 * max_i(size_i / weight_i))`.
    pub fn draws_for(&self, sizes: &[usize]) -> usize {
        self.num_documents.unwrap_or_else(|| default_draws(sizes, &self.weights()))
    }
}

pub fn default_draws(sizes: &[usize], weights: &[f64]) -> usize {
    sizes.iter().zip(weights).map(|(&m, &w)| (2.0 * m as f64 / w).ceil() as usize).max().unwrap_or(0)
}

fn validate_weights(weights: &[f64]) -> Result<()> {
    if weights.is_empty() {
        return Err(Error::Config("mixture has no components".into()));
    }
    if let Some(w) = weights.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
        return Err(Error::Config(format!("mixture weight {w} is not positive")));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("mixture weights sum to {sum}, not 1")));
    }
    Ok(())
}

/// One sampled document: component index and document index within it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Draw {
    pub component: usize,
    pub document: usize,
}

/// Infinite, deterministic stream of [`Draw`]s.
pub struct MixtureSampler {
    cumulative: Vec<f64>,
    orders: Vec<Vec<usize>>,
    cursors: Vec<usize>,
    pick_rng: ChaCha8Rng,
    shuffle_rngs: Vec<ChaCha8Rng>,
}

impl MixtureSampler {
    pub fn new(sizes: &[usize], weights: &[f64], seed: u64) -> Result<Self> {
        if sizes.len() != weights.len() {
            return Err(Error::Config("one weight per component required".into()));
        }
        validate_weights(weights)?;
        if let Some(i) = sizes.iter().position(|&m| m == 0) {
            return Err(Error::Config(format!("mixture component {i} is empty")));
        }
        let mut acc = 0.0;
        let cumulative = weights
            .iter()
            .map(|w| {
                acc += w;
                acc
            })
            .collect();
        let mut shuffle_rngs: Vec<ChaCha8Rng> =
            (0..sizes.len()).map(|i| stream_rng(seed ^ tag("mix-shuffle"), i as u64)).collect();
        let orders = sizes
            .iter()
            .zip(shuffle_rngs.iter_mut())
            .map(|(&m, rng)| {
                let mut order: Vec<usize> = (0..m).collect();
                order.shuffle(rng);
                order
            })
            .collect();
        Ok(MixtureSampler {
            cumulative,
            orders,
            cursors: vec![0; sizes.len()],
            pick_rng: stream_rng(seed ^ tag("mix-pick"), 0),
            shuffle_rngs,
        })
    }

    fn pick_component(&mut self) -> usize {
        let u: f64 = self.pick_rng.random();
        let last = self.cumulative.len() - 1;
        self.cumulative.iter().position(|&c| u < c).unwrap_or(last)
    }
}

impl Iterator for MixtureSampler {
    type Item = Draw;

    fn next(&mut self) -> Option<Draw> {
        let c = self.pick_component();
        if self.cursors[c] == self.orders[c].len() {
            self.orders[c].shuffle(&mut self.shuffle_rngs[c]);
            self.cursors[c] = 0;
        }
        let document = self.orders[c][self.cursors[c]];
        self.cursors[c] += 1;
        Some(Draw { component: c, document })
    }
}

/// The first `n` draws of a mixture over components with the given sizes.
pub fn sample_mixture(sizes: &[usize], weights: &[f64], seed: u64, n: usize) -> Result<Vec<Draw>> {
    Ok(MixtureSampler::new(sizes, weights, seed)?.take(n).collect())
}

/// A contiguous run of one document's tokens inside a packed sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentLabel {
    pub source: usize,
    pub start: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedSequence {
    pub tokens: Vec<u32>,
    pub segments: Vec<SegmentLabel>,
}

impl PackedSequence {
    /// Source of the most tokens in this sequence (lowest index on ties).
    pub fn majority_source(&self) -> Option<usize> {
        let mut totals: Vec<(usize, usize)> = Vec::new();
        for s in &self.segments {
            match totals.iter_mut().find(|(src, _)| *src == s.source) {
                Some(t) => t.1 += s.len,
                None => totals.push((s.source, s.len)),
            }
        }
        totals.into_iter().max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0))).map(|(src, _)| src)
    }
}

/// Streams documents into fixed-length sequences. Each document is
/// followed by one end-of-document id; the trailing partial block is
/// dropped.
pub struct Packer {
    seq_len: usize,
    eod: u32,
    current: PackedSequence,
    done: Vec<PackedSequence>,
}

impl Packer {
    pub fn new(seq_len: usize, eod: u32) -> Result<Self> {
        if seq_len < 2 {
            return Err(Error::Config(format!("seq_len must be >= 2, got {seq_len}")));
        }
        Ok(Packer {
            seq_len,
            eod,
            current: PackedSequence { tokens: Vec::with_capacity(seq_len), segments: Vec::new() },
            done: Vec::new(),
        })
    }

    fn push_token(&mut self, tok: u32, source: usize) {
        let pos = self.current.tokens.len();
        self.current.tokens.push(tok);
        match self.current.segments.last_mut() {
            Some(s) if s.source == source && s.start + s.len == pos => s.len += 1,
            _ => self.current.segments.push(SegmentLabel { source, start: pos, len: 1 }),
        }
        if self.current.tokens.len() == self.seq_len {
            let full = std::mem::replace(
                &mut self.current,
                PackedSequence { tokens: Vec::with_capacity(self.seq_len), segments: Vec::new() },
            );
            self.done.push(full);
        }
    }

    pub fn push_document(&mut self, tokens: &[u32], source: usize) {
        for &t in tokens {
            self.push_token(t, source);
        }
        self.push_token(self.eod, source);
    }

    /// Completed sequences so far.
    pub fn drain(&mut self) -> Vec<PackedSequence> {
        std::mem::take(&mut self.done)
    }

    /// Completed sequences; the partial tail is discarded.
    pub fn finish(self) -> Vec<PackedSequence> {
        self.done
    }
}

/// Packs `(source, tokens)` documents into sequences of `seq_len`.
pub fn pack_documents<'a, I>(docs: I, seq_len: usize, eod: u32) -> Result<Vec<PackedSequence>>
where
    I: IntoIterator<Item = (usize, &'a [u32])>,
{
    let mut packer = Packer::new(seq_len, eod)?;
    for (source, tokens) in docs {
        packer.push_document(tokens, source);
    }
    Ok(packer.finish())
}

/// Epochs completed after `tokens_seen` tokens of a `corpus_tokens` corpus.
pub fn epoch_progress(tokens_seen: u64, corpus_tokens: u64) -> Result<f64> {
    if corpus_tokens == 0 {
        return Err(Error::Empty("corpus has zero tokens"));
    }
    Ok(tokens_seen as f64 / corpus_tokens as f64)
}

/// Per-component accounting stored in the packed file header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentStats {
    pub path: PathBuf,
    pub weight: f64,
    pub documents: usize,
    /// Tokens in one pass over the component (documents plus their `<eod>`).
    pub corpus_tokens: u64,
    pub draws: usize,
    /// Tokens this component contributed to the packed sequences.
    pub packed_tokens: u64,
    /// Sequences in which this component supplies the most tokens.
    pub majority_sequences: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackedHeader {
    pub version: String,
    pub seq_len: usize,
    pub num_sequences: usize,
    pub eod_id: u32,
    pub vocab_size: usize,
    pub seed: u64,
    pub components: Vec<ComponentStats>,
}

impl PackedHeader {
    /// Tokens in one pass over every component.
    pub fn corpus_tokens(&self) -> u64 {
        self.components.iter().map(|c| c.corpus_tokens).sum()
    }

    /// Share of document draws per component.
    pub fn draw_fractions(&self) -> Vec<f64> {
        let total: usize = self.components.iter().map(|c| c.draws).sum();
        self.components.iter().map(|c| c.draws as f64 / total.max(1) as f64).collect()
    }

    /// Share of packed tokens per component.
    pub fn token_fractions(&self) -> Vec<f64> {
        let total: u64 = self.components.iter().map(|c| c.packed_tokens).sum();
        self.components.iter().map(|c| c.packed_tokens as f64 / total.max(1) as f64).collect()
    }

    /// Share of sequences per majority component.
    pub fn sequence_fractions(&self) -> Vec<f64> {
        let total: usize = self.components.iter().map(|c| c.majority_sequences).sum();
        self.components.iter().map(|c| c.majority_sequences as f64 / total.max(1) as f64).collect()
    }
}

/// Packed sequences loaded from disk, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PackedData {
    pub header: PackedHeader,
    pub tokens: Vec<u32>,
}

impl PackedData {
    pub fn num_sequences(&self) -> usize {
        self.header.num_sequences
    }

    pub fn sequence(&self, i: usize) -> &[u32] {
        let n = self.header.seq_len;
        &self.tokens[i * n..(i + 1) * n]
    }

    /// Header JSON line, then little-endian u32 ids.
    pub fn write(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        serde_json::to_writer(&mut w, &self.header)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        for t in &self.tokens {
            w.write_all(&t.to_le_bytes()).map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let mut line = String::new();
        r.read_line(&mut line).map_err(|e| Error::io(path, e))?;
        let header: PackedHeader =
            serde_json::from_str(&line).map_err(|e| Error::Parse { line: 1, message: e.to_string() })?;
        if header.version != PACKED_VERSION {
            return Err(Error::Parse {
                line: 1,
                message: format!("unsupported packed version {:?}", header.version),
            });
        }
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
        let expected = header.num_sequences * header.seq_len * 4;
        if bytes.len() != expected {
            return Err(Error::Parse {
                line: 2,
                message: format!("expected {expected} payload bytes, found {}", bytes.len()),
            });
        }
        let tokens = bytes.chunks_exact(4).map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        Ok(PackedData { header, tokens })
    }
}

/// Samples `draws` documents from tokenized components and packs them,
/// recording per-component accounting in the header.
pub fn build_packed(
    spec: &MixtureSpec,
    corpora: &[Vec<Vec<u32>>],
    seq_len: usize,
    eod: u32,
    vocab_size: usize,
) -> Result<PackedData> {
    if corpora.len() != spec.components.len() {
        return Err(Error::Config("one tokenized corpus per component required".into()));
    }
    let sizes: Vec<usize> = corpora.iter().map(Vec::len).collect();
    let n = spec.draws_for(&sizes);
    let mut stats: Vec<ComponentStats> = spec
        .components
        .iter()
        .zip(corpora)
        .map(|(c, docs)| ComponentStats {
            path: c.path.clone(),
            weight: c.weight,
            documents: docs.len(),
            corpus_tokens: docs.iter().map(|d| d.len() as u64 + 1).sum(),
            draws: 0,
            packed_tokens: 0,
            majority_sequences: 0,
        })
        .collect();
    let mut packer = Packer::new(seq_len, eod)?;
    for d in MixtureSampler::new(&sizes, &spec.weights(), spec.seed)?.take(n) {
        stats[d.component].draws += 1;
        packer.push_document(&corpora[d.component][d.document], d.component);
    }
    let sequences = packer.finish();
    for s in &sequences {
        for seg in &s.segments {
            stats[seg.source].packed_tokens += seg.len as u64;
        }
        if let Some(m) = s.majority_source() {
            stats[m].majority_sequences += 1;
        }
    }
    let tokens: Vec<u32> = sequences.iter().flat_map(|s| s.tokens.iter().copied()).collect();
    Ok(PackedData {
        header: PackedHeader {
            version: PACKED_VERSION.to_string(),
            seq_len,
            num_sequences: sequences.len(),
            eod_id: eod,
            vocab_size,
            seed: spec.seed,
            components: stats,
        },
        tokens,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pack_example() {
        let a = [1u32, 2, 3];
        let b = [4u32, 5];
        let seqs = pack_documents([(0, &a[..]), (1, &b[..])], 3, 0).unwrap();
        let toks: Vec<&[u32]> = seqs.iter().map(|s| s.tokens.as_slice()).collect();
        assert_eq!(toks, vec![&[1, 2, 3][..], &[0, 4, 5][..]]);
        assert_eq!(
            seqs[1].segments,
            vec![SegmentLabel { source: 0, start: 0, len: 1 }, SegmentLabel { source: 1, start: 1, len: 2 }]
        );
        assert_eq!(seqs[1].majority_source(), Some(1));
    }

    #[test]
    fn single_doc_one_short_of_seq_len() {
        let d = [7u32, 8, 9];
        let seqs = pack_documents([(0, &d[..])], 4, 99).unwrap();
        assert_eq!(seqs.len(), 1);
        assert_eq!(seqs[0].tokens, vec![7, 8, 9, 99]);
        assert!(pack_documents([(0, &d[..])], 1, 0).is_err());
    }

    #[test]
    fn single_component_is_a_cycled_permutation() {
        let draws = sample_mixture(&[5], &[1.0], 3, 15).unwrap();
        for cycle in draws.chunks(5) {
            let mut docs: Vec<usize> = cycle.iter().map(|d| d.document).collect();
            docs.sort();
            assert_eq!(docs, vec![0, 1, 2, 3, 4]);
        }
        assert!(draws.iter().all(|d| d.component == 0));
    }

    #[test]
    fn half_half_with_oversampling() {
        let draws = sample_mixture(&[1000, 10], &[0.5, 0.5], 17, 10_000).unwrap();
        let b: Vec<&Draw> = draws.iter().filter(|d| d.component == 1).collect();
        let frac = b.len() as f64 / draws.len() as f64;
        assert!((frac - 0.5).abs() < 0.02, "{frac}");
        let mut seen = [false; 10];
        for d in b {
            seen[d.document] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn deterministic_and_validated() {
        let a = sample_mixture(&[3, 4], &[0.3, 0.7], 1, 100).unwrap();
        let b = sample_mixture(&[3, 4], &[0.3, 0.7], 1, 100).unwrap();
        assert_eq!(a, b);
        assert!(sample_mixture(&[3, 0], &[0.5, 0.5], 1, 10).is_err());
        assert!(sample_mixture(&[3, 3], &[0.5, 0.6], 1, 10).is_err());
        assert!(sample_mixture(&[3, 3], &[1.0, 0.0], 1, 10).is_err());
    }

    #[test]
    fn epochs() {
        assert_eq!(epoch_progress(0, 10).unwrap(), 0.0);
        assert_eq!(epoch_progress(10, 10).unwrap(), 1.0);
        assert!(epoch_progress(1, 0).is_err());
        // 18.5B tokens over a 7.5B-token corpus
        let e = epoch_progress(18_500_000_000, 7_500_000_000).unwrap();
        assert!((e - 2.4667).abs() < 1e-3);
    }

    #[test]
    fn packed_file_round_trip() {
        let spec = MixtureSpec {
            components: vec![
                ComponentSpec { path: "a".into(), weight: 0.5 },
                ComponentSpec { path: "b".into(), weight: 0.5 },
            ],
            seed: 2,
            num_documents: Some(40),
        };
        let corpora = vec![vec![vec![1, 2, 3], vec![4]], vec![vec![5, 6, 7, 8, 9]]];
        let data = build_packed(&spec, &corpora, 8, 0, 10).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.bin");
        data.write(&path).unwrap();
        let back = PackedData::read(&path).unwrap();
        assert_eq!(back, data);
        assert_eq!(back.header.components.iter().map(|c| c.draws).sum::<usize>(), 40);
        assert_eq!(back.tokens.len() % 8, 0);
        let raw = std::fs::read(&path).unwrap();
        let nl = raw.iter().position(|&b| b == b'\n').unwrap();
        assert_eq!(raw.len() - nl - 1, back.tokens.len() * 4);
        std::fs::write(&path, &raw[..raw.len() - 2]).unwrap();
        assert!(PackedData::read(&path).is_err());
    }

    proptest! {
        #[test]
        fn packing_conserves_the_stream(
            docs in prop::collection::vec(prop::collection::vec(1u32..50, 0..12), 0..20),
            seq_len in 2usize..9,
        ) {
            let seqs = pack_documents(docs.iter().map(|d| (0usize, d.as_slice())), seq_len, 0).unwrap();
            let stream: Vec<u32> = docs.iter().flat_map(|d| d.iter().copied().chain([0])).collect();
            let packed: Vec<u32> = seqs.iter().flat_map(|s| s.tokens.iter().copied()).collect();
            prop_assert_eq!(packed.len() % seq_len, 0);
            prop_assert_eq!(packed.len(), stream.len() / seq_len * seq_len);
            prop_assert_eq!(&stream[..packed.len()], packed.as_slice());
            for s in &seqs {
                prop_assert_eq!(s.segments.iter().map(|g| g.len).sum::<usize>(), seq_len);
            }
        }

        #[test]
        fn coverage_after_enough_draws(m in 1usize..30, w in 0.05f64..0.95, seed in 0u64..1000) {
            let n = (2.0 * m as f64 / w).ceil() as usize;
            // the cyclic order guarantees coverage once m draws of the
            // component happen; with n = 2m/w that is overwhelmingly likely
            let draws = sample_mixture(&[m, 7], &[w, 1.0 - w], seed, n * 4).unwrap();
            let mine: Vec<usize> = draws.iter().filter(|d| d.component == 0).map(|d| d.document).collect();
            if mine.len() >= m {
                let mut first: Vec<usize> = mine[..m].to_vec();
                first.sort();
                prop_assert_eq!(first, (0..m).collect::<Vec<_>>());
            }
        }
    }
}
