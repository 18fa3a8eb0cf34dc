//! Deterministic synthetic corpora for tests and the demo pipeline.
//!
//! Text is built from a generated Hebrew-script lexicon with Zipfian word
//! frequencies, mixed with a small English vocabulary, numbers and the odd
//! run of Cyrillic or Arabic words. A configurable share of web documents is
//! junk of four kinds (digit tables, symbol runs, punctuation soup and
//! mixed-script gibberish) so that each cleaning filter has work to do.

use std::path::Path;

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};
use serde::{Deserialize, Serialize};

use crate::corpus::{write_documents, write_jsonl, Document};
use crate::error::{Error, Result};
use crate::instruct::{QaRecord, TranslatedRecord};
use crate::mix::{ComponentSpec, MixtureSpec};
use crate::rng::{stream_rng, tag};

const CONSONANTS: [char; 22] = [
    'א', 'ב', 'ג', 'ד', 'ה', 'ו', 'ז', 'ח', 'ט', 'י', 'כ', 'ל', 'מ', 'נ', 'ס', 'ע', 'פ', 'צ', 'ק', 'ר', 'ש',
    'ת',
];

const FUNCTION_WORDS: [&str; 16] =
    ["של", "את", "על", "עם", "זה", "לא", "כי", "גם", "אבל", "הוא", "היא", "אני", "מה", "יש", "אין", "כל"];

const ENGLISH: [&str; 40] = [
    "data", "model", "system", "code", "open", "source", "network", "learning", "language", "online",
    "server", "cloud", "update", "version", "file", "phone", "email", "google", "python", "linux", "startup",
    "design", "market", "video", "music", "game", "project", "team", "app", "web", "news", "blog", "user",
    "test", "search", "image", "media", "group", "travel", "city",
];

const CYRILLIC: [&str; 6] = ["привет", "мир", "новости", "город", "время", "работа"];
const ARABIC: [&str; 6] = ["مرحبا", "عالم", "أخبار", "مدينة", "وقت", "عمل"];

/// Sizes and proportions of the generated fixture set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureSpec {
    pub seed: u64,
    pub web_docs: usize,
    /// Share of web documents that are junk.
    pub junk_fraction: f64,
    pub rabbinic_docs: usize,
    pub seed_docs: usize,
    pub qa_records: usize,
    pub translated_records: usize,
    pub lexicon_size: usize,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        FixtureSpec {
            seed: 2023,
            web_docs: 400,
            junk_fraction: 0.15,
            rabbinic_docs: 80,
            seed_docs: 120,
            qa_records: 200,
            translated_records: 200,
            lexicon_size: 1500,
        }
    }
}

/// Generated vocabulary: Hebrew-script pseudo-words ranked by frequency.
#[derive(Debug, Clone)]
pub struct Lexicon {
    words: Vec<String>,
    zipf: Zipf<f64>,
}

fn final_form(c: char) -> char {
    match c {
        'כ' => 'ך',
        'מ' => 'ם',
        'נ' => 'ן',
        'פ' => 'ף',
        'צ' => 'ץ',
        other => other,
    }
}

impl Lexicon {
    pub fn generate(size: usize, rng: &mut impl Rng) -> Self {
        let mut words: Vec<String> = FUNCTION_WORDS.iter().map(|w| w.to_string()).collect();
        let mut seen: std::collections::HashSet<String> = words.iter().cloned().collect();
        while words.len() < size.max(FUNCTION_WORDS.len() + 1) {
            let len = rng.random_range(2..=6);
            let mut w: Vec<char> = (0..len).map(|_| *CONSONANTS.choose(rng).unwrap()).collect();
            if rng.random_bool(0.3) {
                w.insert(0, *['ה', 'ו', 'ב', 'ל', 'מ'].choose(rng).unwrap());
            }
            let last = w.len() - 1;
            w[last] = final_form(w[last]);
            let w: String = w.into_iter().collect();
            if seen.insert(w.clone()) {
                words.push(w);
            }
        }
        let zipf = Zipf::new(words.len() as f64, 1.07).expect("valid zipf");
        Lexicon { words, zipf }
    }

    pub fn word(&self, rng: &mut impl Rng) -> &str {
        let rank = self.zipf.sample(rng) as usize;
        &self.words[rank.clamp(1, self.words.len()) - 1]
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// Sentence of 5-12 tokens, mostly Hebrew, with some English words and
/// numbers, ending in `.`, `?` or `!`.
pub fn sentence(lex: &Lexicon, rng: &mut impl Rng) -> String {
    let n = rng.random_range(5..=12);
    let mut words: Vec<String> = Vec::with_capacity(n);
    for i in 0..n {
        let r: f64 = rng.random();
        let w = if r < 0.08 {
            ENGLISH.choose(rng).unwrap().to_string()
        } else if r < 0.11 && i > 0 {
            rng.random_range(1..2030).to_string()
        } else {
            lex.word(rng).to_string()
        };
        words.push(w);
    }
    let mut s = words.join(" ");
    if rng.random_bool(0.15) {
        let at = s.find(' ').unwrap_or(s.len());
        s.insert(at, ',');
    }
    let end = if rng.random_bool(0.85) {
        '.'
    } else if rng.random_bool(0.5) {
        '?'
    } else {
        '!'
    };
    s.push(end);
    s
}

fn paragraph(lex: &Lexicon, rng: &mut impl Rng, sentences: std::ops::RangeInclusive<usize>) -> String {
    let n = rng.random_range(sentences);
    (0..n).map(|_| sentence(lex, rng)).collect::<Vec<_>>().join(" ")
}

/// A clean web document, sometimes with a run of foreign-script words
/// spliced between two sentences.
fn clean_doc(lex: &Lexicon, rng: &mut impl Rng) -> String {
    let mut text = paragraph(lex, rng, 3..=8);
    if rng.random_bool(0.2) {
        let pool: &[&str] = if rng.random_bool(0.5) { &CYRILLIC } else { &ARABIC };
        let run: Vec<&str> = (0..rng.random_range(1..=3)).map(|_| *pool.choose(rng).unwrap()).collect();
        let cut = text.find(". ").map(|i| i + 2).unwrap_or(0);
        text.insert_str(cut, &format!("{} ", run.join(" ")));
    }
    if rng.random_bool(0.3) {
        text.push('\n');
        text.push_str(&paragraph(lex, rng, 1..=3));
    }
    text
}

/// Junk document of kind `kind % 4`, built to trip a specific filter.
pub fn junk_doc(kind: usize, lex: &Lexicon, rng: &mut impl Rng) -> String {
    match kind % 4 {
        // digit table
        0 => (0..rng.random_range(4..=8))
            .map(|_| {
                let row: Vec<String> = (0..6).map(|_| rng.random_range(100..99_999).to_string()).collect();
                format!("{} {}", lex.word(rng), row.join(" "))
            })
            .collect::<Vec<_>>()
            .join("\n"),
        // one long repeated-symbol run after a short sentence
        1 => {
            let sym = *['=', '*', '~', '#'].choose(rng).unwrap();
            format!("{} {}", sentence(lex, rng), sym.to_string().repeat(rng.random_range(80..160)))
        }
        // punctuation soup with sparse words
        2 => (0..rng.random_range(15..30))
            .map(|_| {
                let p = ["|", "//", "::", "->", "<>", "{}", "[]", "%%", "@@", "&&"].choose(rng).unwrap();
                if rng.random_bool(0.2) {
                    format!("{p}{}", lex.word(rng))
                } else {
                    p.repeat(rng.random_range(1..4))
                }
            })
            .collect::<Vec<_>>()
            .join(" "),
        // mixed-script keyboard mash
        _ => (0..rng.random_range(20..40))
            .map(|_| {
                (0..rng.random_range(3..8))
                    .map(|k| {
                        if k % 2 == 0 {
                            *CONSONANTS.choose(rng).unwrap()
                        } else {
                            rng.random_range(b'a'..=b'z') as char
                        }
                    })
                    .collect::<String>()
            })
            .collect::<Vec<_>>()
            .join(" "),
    }
}

/// Web-style corpus: `n` documents of which `round(n * junk_fraction)` are
/// junk, interleaved at seeded positions.
pub fn web_corpus(lex: &Lexicon, n: usize, junk_fraction: f64, rng: &mut ChaCha8Rng) -> Vec<Document> {
    let junk = (n as f64 * junk_fraction).round() as usize;
    let mut is_junk = vec![false; n];
    is_junk[..junk.min(n)].iter_mut().for_each(|j| *j = true);
    rand::seq::SliceRandom::shuffle(&mut is_junk[..], rng);
    let mut k = 0;
    is_junk
        .iter()
        .enumerate()
        .map(|(i, &bad)| {
            let text = if bad {
                k += 1;
                junk_doc(k - 1, lex, rng)
            } else {
                clean_doc(lex, rng)
            };
            Document::new(format!("web-{i:05}"), "web", text)
        })
        .collect()
}

/// Short commentary-style passages over their own small lexicon, with
/// quoted abbreviations.
pub fn rabbinic_corpus(n: usize, rng: &mut ChaCha8Rng) -> Vec<Document> {
    let lex = Lexicon::generate(300, rng);
    let abbrev = ["רש\"י", "ז\"ל", "וכו'", "חז\"ל", "ע\"ש", "כנ\"ל"];
    (0..n)
        .map(|i| {
            let sents: Vec<String> = (0..rng.random_range(4..=8))
                .map(|_| {
                    let mut s = sentence(&lex, rng);
                    if rng.random_bool(0.5) {
                        s.insert_str(0, &format!("{} ", abbrev.choose(rng).unwrap()));
                    }
                    s
                })
                .collect();
            Document::new(format!("rab-{i:04}"), "rabbinic", sents.join(" "))
        })
        .collect()
}

/// QA records whose answers are words or short phrases of the context.
pub fn qa_records(lex: &Lexicon, n: usize, rng: &mut ChaCha8Rng) -> Vec<QaRecord> {
    (0..n)
        .map(|_| {
            let context = paragraph(lex, rng, 2..=5);
            let words: Vec<(usize, &str)> = context
                .split(' ')
                .scan(0usize, |pos, w| {
                    let start = *pos;
                    *pos += w.chars().count() + 1;
                    Some((start, w))
                })
                .filter(|(_, w)| w.chars().all(|c| c.is_alphanumeric()))
                .collect();
            let (answer_start, answer) =
                words.choose(rng).map(|(s, w)| (*s, w.to_string())).expect("sentences have plain words");
            let question = format!("{} {} {}?", "מה", lex.word(rng), lex.word(rng));
            QaRecord { context, question, answer_span: answer, answer_start }
        })
        .collect()
}

pub fn translated_records(lex: &Lexicon, n: usize, rng: &mut ChaCha8Rng) -> Vec<TranslatedRecord> {
    (0..n)
        .map(|_| {
            let mut question = sentence(lex, rng);
            question.pop();
            question.push('?');
            TranslatedRecord { question, response: paragraph(lex, rng, 1..=5) }
        })
        .collect()
}

/// About 2 KB: one bilingual paragraph repeated until the text reaches
/// `bytes` bytes (whole repetitions only).
pub fn overfit_text(bytes: usize) -> String {
    let unit = "הספרייה הפתוחה מאפשרת לכל אחד ללמוד. the open library lets anyone learn. \
                מודל שפה קטן זוכר את הטקסט הזה בעל פה. a small model memorizes this text by heart.\n";
    let reps = (bytes / unit.len()).max(1);
    unit.repeat(reps)
}

/// Every generated artifact, in memory.
#[derive(Debug, Clone)]
pub struct FixtureSet {
    pub web: Vec<Document>,
    pub rabbinic: Vec<Document>,
    pub seed: Vec<Document>,
    pub qa: Vec<QaRecord>,
    pub translated: Vec<TranslatedRecord>,
    pub overfit: String,
}

impl FixtureSet {
    pub fn generate(spec: &FixtureSpec) -> Result<Self> {
        if !(0.0..=1.0).contains(&spec.junk_fraction) {
            return Err(Error::Config("junk_fraction must be in [0, 1]".into()));
        }
        let lex = Lexicon::generate(spec.lexicon_size, &mut stream_rng(spec.seed, tag("lexicon")));
        let web = web_corpus(&lex, spec.web_docs, spec.junk_fraction, &mut stream_rng(spec.seed, tag("web")));
        let rabbinic = rabbinic_corpus(spec.rabbinic_docs, &mut stream_rng(spec.seed, tag("rabbinic")));
        let mut srng = stream_rng(spec.seed, tag("seed"));
        let seed = (0..spec.seed_docs)
            .map(|i| Document::new(format!("seed-{i:04}"), "seed", paragraph(&lex, &mut srng, 3..=8)))
            .collect();
        let qa = qa_records(&lex, spec.qa_records, &mut stream_rng(spec.seed, tag("qa")));
        let translated =
            translated_records(&lex, spec.translated_records, &mut stream_rng(spec.seed, tag("translated")));
        Ok(FixtureSet { web, rabbinic, seed, qa, translated, overfit: overfit_text(2048) })
    }

    /// The 50/50 mixture of cleaned web text and the rabbinic corpus, with
    /// paths relative to the directory holding the spec.
    pub fn mixture_spec(seed: u64) -> MixtureSpec {
        MixtureSpec {
            components: vec![
                ComponentSpec { path: "web.clean.jsonl".into(), weight: 0.5 },
                ComponentSpec { path: "rabbinic.jsonl".into(), weight: 0.5 },
            ],
            seed,
            num_documents: None,
        }
    }

    /// Writes `web.jsonl`, `rabbinic.jsonl`, `seed.jsonl`, `qa.jsonl`,
    /// `translated.jsonl` and `overfit.txt` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_documents(&dir.join("web.jsonl"), &self.web)?;
        write_documents(&dir.join("rabbinic.jsonl"), &self.rabbinic)?;
        write_documents(&dir.join("seed.jsonl"), &self.seed)?;
        write_jsonl(&dir.join("qa.jsonl"), &self.qa)?;
        write_jsonl(&dir.join("translated.jsonl"), &self.translated)?;
        let p = dir.join("overfit.txt");
        std::fs::write(&p, &self.overfit).map_err(|e| Error::io(&p, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{char_histogram, histogram_filter, CleaningConfig, ScriptClass};

    #[test]
    fn generation_is_deterministic() {
        let spec = FixtureSpec { web_docs: 40, qa_records: 5, translated_records: 5, ..Default::default() };
        let a = FixtureSet::generate(&spec).unwrap();
        let b = FixtureSet::generate(&spec).unwrap();
        assert_eq!(a.web, b.web);
        assert_eq!(a.qa, b.qa);
        let c = FixtureSet::generate(&FixtureSpec { seed: 1, ..spec }).unwrap();
        assert_ne!(a.web, c.web);
    }

    #[test]
    fn lexicon_words_end_in_final_forms() {
        let lex = Lexicon::generate(200, &mut stream_rng(1, 2));
        assert_eq!(lex.len(), 200);
        for w in &lex.words[FUNCTION_WORDS.len()..] {
            let chars: Vec<char> = w.chars().collect();
            for c in &chars[..chars.len() - 1] {
                assert!(!"ךםןףץ".contains(*c), "{w}");
            }
        }
    }

    #[test]
    fn junk_mix_and_kinds() {
        let lex = Lexicon::generate(500, &mut stream_rng(3, 4));
        let docs = web_corpus(&lex, 100, 0.15, &mut stream_rng(5, 6));
        assert_eq!(docs.len(), 100);
        let cfg = CleaningConfig::default();
        for kind in 0..3 {
            let text = junk_doc(kind, &lex, &mut stream_rng(7, kind as u64));
            assert!(histogram_filter(&char_histogram(&text), &cfg).is_some(), "kind {kind}: {text}");
        }
        let mash = junk_doc(3, &lex, &mut stream_rng(7, 3));
        let h = char_histogram(&mash);
        assert!(h.count(ScriptClass::Latin) > 0 && h.count(ScriptClass::Hebrew) > 0);
    }

    #[test]
    fn overfit_text_is_about_two_kilobytes() {
        let t = overfit_text(2048);
        assert!(t.len() <= 2048 && t.len() > 1500, "{}", t.len());
    }
}
