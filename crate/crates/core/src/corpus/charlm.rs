use std::collections::{BTreeSet, HashMap, HashSet};

use super::{Document, Sentences};
use crate::error::{Error, Result};

const BOS: u32 = 0x11_0000;
const EOS: u32 = 0x11_0001;

#[derive(Debug, Clone, Default)]
struct ContextCounts {
    total: u64,
    next: HashMap<u32, u64>,
}

/// Additive-smoothing codepoint n-gram model with begin/end sentinels.
///
/// `P(c | ctx) = (count(ctx, c) + k) / (count(ctx) + k * V)` where `V` is the
/// number of distinct training codepoints plus the end sentinel. Contexts are
/// the previous `order - 1` symbols, left-padded with the begin sentinel.
/// The model also keeps the set of codepoint bigrams seen in the raw seed
/// text, which backs [`CharLm::gibberish_score`].
#[derive(Debug, Clone)]
pub struct CharLm {
    order: usize,
    smoothing: f64,
    alphabet: BTreeSet<u32>,
    contexts: HashMap<Vec<u32>, ContextCounts>,
    bigrams: HashSet<(char, char)>,
}

impl CharLm {
    /// Trains on every sentence of every seed document.
    pub fn train(seed: &[Document], order: usize, smoothing: f64) -> Result<Self> {
        if order < 2 {
            return Err(Error::Config(format!("n-gram order must be >= 2, got {order}")));
        }
        if !(smoothing > 0.0 && smoothing.is_finite()) {
            return Err(Error::Config(format!(
                "smoothing must be a positive finite number, got {smoothing}"
            )));
        }
        let mut lm = CharLm {
            order,
            smoothing,
            alphabet: BTreeSet::from([EOS]),
            contexts: HashMap::new(),
            bigrams: HashSet::new(),
        };
        let mut sentences = 0usize;
        for doc in seed {
            let chars: Vec<char> = doc.text.chars().collect();
            lm.bigrams.extend(chars.windows(2).map(|w| (w[0], w[1])));
            for sentence in Sentences::split(&doc.text).sentences() {
                lm.observe(sentence);
                sentences += 1;
            }
        }
        if sentences == 0 {
            return Err(Error::Empty("seed corpus has no sentences"));
        }
        Ok(lm)
    }

    fn observe(&mut self, sentence: &str) {
        let mut ctx = vec![BOS; self.order - 1];
        for sym in sentence.chars().map(u32::from).chain([EOS]) {
            self.alphabet.insert(sym);
            let entry = self.contexts.entry(ctx.clone()).or_default();
            entry.total += 1;
            *entry.next.entry(sym).or_default() += 1;
            ctx.remove(0);
            ctx.push(sym);
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Alphabet size including the end sentinel.
    pub fn vocab_size(&self) -> usize {
        self.alphabet.len()
    }

    fn prob_sym(&self, ctx: &[u32], sym: u32) -> f64 {
        let v = self.alphabet.len() as f64;
        let k = self.smoothing;
        match self.contexts.get(ctx) {
            Some(c) => {
                let n = c.next.get(&sym).copied().unwrap_or(0) as f64;
                (n + k) / (c.total as f64 + k * v)
            }
            None => 1.0 / v,
        }
    }

    /// `P(next | context)` where `context` holds up to `order - 1` preceding
    /// codepoints (shorter contexts are left-padded with the begin
    /// sentinel) and `None` stands for the end of the sentence. Codepoints
    /// never seen in training get the zero-count smoothed mass.
    pub fn prob(&self, context: &str, next: Option<char>) -> f64 {
        let ctx = self.context_key(context);
        self.prob_sym(&ctx, next.map_or(EOS, u32::from))
    }

    fn context_key(&self, context: &str) -> Vec<u32> {
        let chars: Vec<u32> = context.chars().map(u32::from).collect();
        let want = self.order - 1;
        let mut ctx = vec![BOS; want.saturating_sub(chars.len())];
        ctx.extend_from_slice(&chars[chars.len().saturating_sub(want)..]);
        ctx
    }

    /// Sum of `P(c | context)` over the whole alphabet.
    pub fn total_mass(&self, context: &str) -> f64 {
        let ctx = self.context_key(context);
        self.alphabet.iter().map(|&s| self.prob_sym(&ctx, s)).sum()
    }

    /// Contexts observed in training, rendered as strings (begin sentinels
    /// dropped).
    pub fn observed_contexts(&self) -> Vec<String> {
        let mut out: Vec<String> =
            self.contexts.keys().map(|k| k.iter().filter_map(|&s| char::from_u32(s)).collect()).collect();
        out.sort();
        out.dedup();
        out
    }

    /// `exp(-(1/N) * sum log P(c_i | context_i))` over the sentence's
    /// codepoints plus the end sentinel.
    pub fn sentence_perplexity(&self, sentence: &str) -> Result<f64> {
        if sentence.is_empty() {
            return Err(Error::Empty("sentence"));
        }
        let mut ctx = vec![BOS; self.order - 1];
        let mut log_sum = 0.0;
        let mut n = 0usize;
        for sym in sentence.chars().map(u32::from).chain([EOS]) {
            log_sum += self.prob_sym(&ctx, sym).ln();
            n += 1;
            ctx.remove(0);
            ctx.push(sym);
        }
        Ok((-log_sum / n as f64).exp())
    }

    /// Fraction of codepoint bigrams in `text` that never occur in the seed
    /// corpus. Texts shorter than two codepoints score 0.
    pub fn gibberish_score(&self, text: &str) -> f64 {
        let chars: Vec<char> = text.chars().collect();
        if chars.len() < 2 {
            return 0.0;
        }
        let unseen = chars.windows(2).filter(|w| !self.bigrams.contains(&(w[0], w[1]))).count();
        unseen as f64 / (chars.len() - 1) as f64
    }
}

/// Nearest-rank percentile (`pct` in 0..=100) of sentence perplexities over
/// the sentences of `docs`.
pub fn perplexity_percentile(lm: &CharLm, docs: &[Document], pct: f64) -> Result<f64> {
    let mut ppl: Vec<f64> = docs
        .iter()
        .flat_map(|d| Sentences::split(&d.text).sentences().collect::<Vec<_>>())
        .map(|s| lm.sentence_perplexity(s))
        .collect::<Result<_>>()?;
    if ppl.is_empty() {
        return Err(Error::Empty("held-out text has no sentences"));
    }
    ppl.sort_by(f64::total_cmp);
    let rank = ((pct / 100.0) * ppl.len() as f64).ceil() as usize;
    Ok(ppl[rank.clamp(1, ppl.len()) - 1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    fn doc(text: &str) -> Document {
        Document::new("x", "test", text)
    }

    #[test]
    fn hand_counted_bigram_probability() {
        let lm = CharLm::train(&[doc("ab")], 2, 1.0).unwrap();
        // alphabet {a, b, </s>}
        assert_eq!(lm.vocab_size(), 3);
        assert!((lm.prob("a", Some('b')) - 0.5).abs() < 1e-15);
        assert!((lm.prob("a", Some('a')) - 0.25).abs() < 1e-15);
        assert!((lm.prob("b", None) - 0.5).abs() < 1e-15);
        // unseen context
        assert!((lm.prob("z", Some('a')) - 1.0 / 3.0).abs() < 1e-15);
        assert!((lm.prob("z", None) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn distributions_normalize() {
        let seed = [doc("שלום עולם. hello world! the cat sat on the mat.")];
        let lm = CharLm::train(&seed, 5, 0.1).unwrap();
        for ctx in lm.observed_contexts() {
            assert!((lm.total_mass(&ctx) - 1.0).abs() < 1e-9, "context {ctx:?}");
        }
        assert!((lm.total_mass("qqqq") - 1.0).abs() < 1e-9);
    }

    #[test]
    fn errors() {
        assert!(CharLm::train(&[], 3, 1.0).is_err());
        assert!(CharLm::train(&[doc("   ")], 3, 1.0).is_err());
        assert!(CharLm::train(&[doc("ab")], 1, 1.0).is_err());
        let lm = CharLm::train(&[doc("ab")], 2, 1.0).unwrap();
        assert!(lm.sentence_perplexity("").is_err());
    }

    #[test]
    fn single_codepoint_alphabet_is_bounded_by_v() {
        let lm = CharLm::train(&[doc("aaaa")], 3, 1.0).unwrap();
        let v = lm.vocab_size() as f64;
        assert_eq!(v, 2.0);
        let ppl = lm.sentence_perplexity("aaaa").unwrap();
        // contexts [^^]->a, [^a]->a, [aa]->{a:2, </s>:1}:
        // probabilities 2/3, 2/3, 3/5, 3/5, 2/5
        let closed = (-((2.0f64 / 3.0).ln() * 2.0 + 0.6f64.ln() * 2.0 + 0.4f64.ln()) / 5.0).exp();
        assert!((ppl - closed).abs() < 1e-12);
        assert!(ppl <= v, "{ppl}");
        assert!(ppl >= 1.0);
    }

    #[test]
    fn verbatim_beats_reversed() {
        let text = "the quick brown fox jumps over the lazy dog. the dog sleeps.";
        let lm = CharLm::train(&[doc(text)], 4, 0.5).unwrap();
        let s = "the quick brown fox jumps over the lazy dog.";
        let rev: String = s.chars().rev().collect();
        assert!(lm.sentence_perplexity(s).unwrap() < lm.sentence_perplexity(&rev).unwrap());
    }

    #[test]
    fn shuffled_text_is_less_likely() {
        let text = "שלום לכולם וברוכים הבאים לאתר החדשות שלנו. היום נדבר על מזג האוויר בארץ. \
                    the weather today is warm and sunny across the country.";
        let lm = CharLm::train(&[doc(text)], 5, 0.1).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for s in split(text) {
            let mut chars: Vec<char> = s.chars().collect();
            chars.shuffle(&mut rng);
            let shuffled: String = chars.into_iter().collect();
            assert!(lm.sentence_perplexity(s).unwrap() < lm.sentence_perplexity(&shuffled).unwrap());
        }
    }

    fn split(t: &str) -> Vec<&str> {
        crate::corpus::split_sentences(t)
    }

    #[test]
    fn gibberish_examples() {
        let seed = "שלום עולם ומלואו";
        let lm = CharLm::train(&[doc(seed)], 3, 1.0).unwrap();
        assert_eq!(lm.gibberish_score(seed), 0.0);
        assert_eq!(lm.gibberish_score("עולם"), 0.0);
        assert_eq!(lm.gibberish_score("קקקקקקקק"), 1.0);
        assert_eq!(lm.gibberish_score(""), 0.0);
        assert_eq!(lm.gibberish_score("ק"), 0.0);
    }

    #[test]
    fn perplexity_ignores_metadata() {
        let a = CharLm::train(&[Document::new("1", "news", "abc abd.")], 3, 1.0).unwrap();
        let b = CharLm::train(&[Document::new("zz", "blogs", "abc abd.")], 3, 1.0).unwrap();
        assert_eq!(a.sentence_perplexity("abd").unwrap(), b.sentence_perplexity("abd").unwrap());
    }

    #[test]
    fn percentile_nearest_rank() {
        let lm = CharLm::train(&[doc("aa. ab. ba. bb.")], 2, 1.0).unwrap();
        let docs = [doc("aa. ab. zz.")];
        let max = perplexity_percentile(&lm, &docs, 100.0).unwrap();
        let min = perplexity_percentile(&lm, &docs, 0.0).unwrap();
        assert_eq!(max, lm.sentence_perplexity("zz.").unwrap());
        assert!(min <= max);
    }
}
