use serde::{Deserialize, Serialize};

use super::CleaningConfig;

/// Literal that replaces each run of foreign-script words.
pub const FOREIGN_TOKEN: &str = "<foreign>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScriptClass {
    Hebrew,
    Latin,
    Digit,
    Punct,
    Space,
    Foreign,
}

impl ScriptClass {
    pub const ALL: [ScriptClass; 6] = [
        ScriptClass::Hebrew,
        ScriptClass::Latin,
        ScriptClass::Digit,
        ScriptClass::Punct,
        ScriptClass::Space,
        ScriptClass::Foreign,
    ];

    fn index(self) -> usize {
        self as usize
    }
}

/// Total classification of a codepoint.
///
/// Hebrew covers U+0590..=U+05FF and the presentation forms U+FB1D..=U+FB4F;
/// Latin is ASCII letters only; Digit is ASCII digits. Punct is ASCII
/// punctuation, Latin-1 punctuation (U+00A1..=U+00BF) and General
/// Punctuation (U+2010..=U+205E). Everything else is Foreign.
pub fn classify_codepoint(ch: char) -> ScriptClass {
    match ch {
        '\u{0590}'..='\u{05FF}' | '\u{FB1D}'..='\u{FB4F}' => ScriptClass::Hebrew,
        'a'..='z' | 'A'..='Z' => ScriptClass::Latin,
        '0'..='9' => ScriptClass::Digit,
        c if c.is_ascii_punctuation() => ScriptClass::Punct,
        '\u{00A1}'..='\u{00BF}' | '\u{2010}'..='\u{205E}' => ScriptClass::Punct,
        c if c.is_whitespace() => ScriptClass::Space,
        _ => ScriptClass::Foreign,
    }
}

/// A letter outside the kept scripts.
pub fn is_foreign_letter(ch: char) -> bool {
    classify_codepoint(ch) == ScriptClass::Foreign && ch.is_alphabetic()
}

fn is_kept_letter(ch: char) -> bool {
    matches!(classify_codepoint(ch), ScriptClass::Hebrew | ScriptClass::Latin) && ch.is_alphabetic()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum WordKind {
    Plain,
    Foreign,
    Mixed,
}

fn word_kind(word: &str) -> WordKind {
    let mut kept = false;
    let mut foreign = false;
    for ch in word.chars() {
        kept |= is_kept_letter(ch);
        foreign |= is_foreign_letter(ch);
    }
    match (kept, foreign) {
        (_, false) => WordKind::Plain,
        (false, true) => WordKind::Foreign,
        (true, true) => WordKind::Mixed,
    }
}

/// Splits `text` into alternating whitespace / non-whitespace pieces.
fn pieces(text: &str) -> impl Iterator<Item = (bool, &str)> {
    let mut rest = text;
    std::iter::from_fn(move || {
        let first = rest.chars().next()?;
        let ws = first.is_whitespace();
        let end = rest.char_indices().find(|&(_, c)| c.is_whitespace() != ws).map_or(rest.len(), |(i, _)| i);
        let (piece, tail) = rest.split_at(end);
        rest = tail;
        Some((ws, piece))
    })
}

/// Replaces every maximal run of foreign words with [`FOREIGN_TOKEN`].
///
/// A foreign word is a whitespace-delimited token with at least one foreign
/// letter and no Hebrew or Latin letter. Words mixing kept and foreign
/// letters keep their kept characters and lose the foreign letters.
pub fn reduce_foreign(text: &str) -> String {
    reduce_foreign_counted(text).0
}

/// [`reduce_foreign`] plus the number of runs that were collapsed.
pub fn reduce_foreign_counted(text: &str) -> (String, usize) {
    let mut out = String::with_capacity(text.len());
    let mut runs = 0usize;
    // whitespace seen after a foreign word, held back until we know whether
    // the run continues
    let mut in_run = false;
    let mut pending_ws: &str = "";
    for (ws, piece) in pieces(text) {
        if ws {
            if in_run {
                pending_ws = piece;
            } else {
                out.push_str(piece);
            }
            continue;
        }
        match word_kind(piece) {
            WordKind::Foreign => {
                if !in_run {
                    out.push_str(FOREIGN_TOKEN);
                    runs += 1;
                    in_run = true;
                }
                pending_ws = "";
            }
            kind => {
                if in_run {
                    out.push_str(pending_ws);
                    pending_ws = "";
                    in_run = false;
                }
                if kind == WordKind::Mixed {
                    out.extend(piece.chars().filter(|&c| !is_foreign_letter(c)));
                } else {
                    out.push_str(piece);
                }
            }
        }
    }
    out.push_str(pending_ws);
    (out, runs)
}

/// Per-class codepoint counts plus the longest run of one repeated codepoint.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Histogram {
    counts: [usize; 6],
    pub longest_run: usize,
}

impl Histogram {
    pub fn count(&self, class: ScriptClass) -> usize {
        self.counts[class.index()]
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    fn non_space(&self) -> usize {
        self.total() - self.count(ScriptClass::Space)
    }

    /// Share of non-whitespace codepoints that are not Hebrew or Latin.
    pub fn non_letter_fraction(&self) -> f64 {
        let denom = self.non_space();
        if denom == 0 {
            return 0.0;
        }
        let letters = self.count(ScriptClass::Hebrew) + self.count(ScriptClass::Latin);
        (denom - letters) as f64 / denom as f64
    }

    /// Share of non-whitespace codepoints that are digits.
    pub fn digit_fraction(&self) -> f64 {
        let denom = self.non_space();
        if denom == 0 {
            return 0.0;
        }
        self.count(ScriptClass::Digit) as f64 / denom as f64
    }

    /// Longest single-codepoint run relative to all codepoints.
    pub fn run_fraction(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        self.longest_run as f64 / total as f64
    }
}

pub fn char_histogram(text: &str) -> Histogram {
    let mut h = Histogram::default();
    let mut prev = None;
    let mut run = 0usize;
    for ch in text.chars() {
        h.counts[classify_codepoint(ch).index()] += 1;
        run = if prev == Some(ch) { run + 1 } else { 1 };
        prev = Some(ch);
        h.longest_run = h.longest_run.max(run);
    }
    h
}

/// Why a document was rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    NonLetter,
    Digit,
    Run,
    Gibberish,
    Perplexity,
}

/// `None` keeps the document. Thresholds are checked in the fixed order
/// non-letter, digit, run; the first one exceeded is reported.
pub fn histogram_filter(h: &Histogram, config: &CleaningConfig) -> Option<DropReason> {
    if h.non_letter_fraction() > config.max_non_letter_fraction {
        Some(DropReason::NonLetter)
    } else if h.digit_fraction() > config.max_digit_fraction {
        Some(DropReason::Digit)
    } else if h.run_fraction() > config.max_run_fraction {
        Some(DropReason::Run)
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn classify_examples() {
        assert_eq!(classify_codepoint('\u{05D0}'), ScriptClass::Hebrew);
        assert_eq!(classify_codepoint('\u{FB2A}'), ScriptClass::Hebrew);
        assert_eq!(classify_codepoint('q'), ScriptClass::Latin);
        assert_eq!(classify_codepoint('7'), ScriptClass::Digit);
        assert_eq!(classify_codepoint(','), ScriptClass::Punct);
        assert_eq!(classify_codepoint('\u{2014}'), ScriptClass::Punct);
        assert_eq!(classify_codepoint('\t'), ScriptClass::Space);
        assert_eq!(classify_codepoint('\u{0416}'), ScriptClass::Foreign);
        assert_eq!(classify_codepoint('é'), ScriptClass::Foreign);
    }

    #[test]
    fn reduce_foreign_examples() {
        assert_eq!(reduce_foreign("שלום Жизнь хороша hello"), "שלום <foreign> hello");
        assert_eq!(reduce_foreign("hello world"), "hello world");
        assert_eq!(reduce_foreign(""), "");
        assert_eq!(reduce_foreign("Жизнь"), "<foreign>");
        // whitespace around the run survives, whitespace inside it does not
        assert_eq!(reduce_foreign("a  Ж\n\nЖ  b\n"), "a  <foreign>  b\n");
        assert_eq!(reduce_foreign("a Ж "), "a <foreign> ");
        // two runs separated by a kept word
        let (out, runs) = reduce_foreign_counted("Ж a Ж");
        assert_eq!(out, "<foreign> a <foreign>");
        assert_eq!(runs, 2);
    }

    #[test]
    fn mixed_words_lose_foreign_letters() {
        assert_eq!(reduce_foreign("שלוםЖ ok"), "שלום ok");
        assert_eq!(reduce_foreign("abcдef"), "abcef");
        // digits and punctuation alone never make a word foreign
        assert_eq!(reduce_foreign("2023 ... —"), "2023 ... —");
        assert_eq!(reduce_foreign("Ж123"), "<foreign>");
    }

    #[test]
    fn histogram_examples() {
        let h = char_histogram("ab1");
        assert_eq!(h.count(ScriptClass::Latin), 2);
        assert_eq!(h.count(ScriptClass::Digit), 1);
        assert_eq!(h.longest_run, 1);
        let h = char_histogram("aaaa");
        assert_eq!(h.count(ScriptClass::Latin), 4);
        assert_eq!(h.longest_run, 4);
        let h = char_histogram("");
        assert_eq!(h.total(), 0);
        assert_eq!(h.longest_run, 0);
    }

    #[test]
    fn histogram_filter_examples() {
        let mut cfg = CleaningConfig::permissive();
        cfg.max_digit_fraction = 0.5;
        // 9 digits, 1 letter
        let h = char_histogram("123456789a");
        assert!((h.digit_fraction() - 0.9).abs() < 1e-12);
        assert_eq!(histogram_filter(&h, &cfg), Some(DropReason::Digit));

        assert_eq!(histogram_filter(&char_histogram("abc def"), &cfg), None);

        // 6/10 digits
        let h = char_histogram("111111abcd");
        assert!((h.digit_fraction() - 0.6).abs() < 1e-12);
        assert!(histogram_filter(&h, &cfg).is_some());

        // the non-letter check runs first
        let cfg = CleaningConfig::default();
        assert_eq!(histogram_filter(&char_histogram("111111abcd"), &cfg), Some(DropReason::NonLetter));
        assert_eq!(histogram_filter(&char_histogram("aaaaaaaaaabc"), &cfg), Some(DropReason::Run));
    }

    fn mixed_text() -> impl Strategy<Value = String> {
        let word = prop::sample::select(vec![
            "שלום",
            "עולם",
            "hello",
            "world",
            "Жизнь",
            "хороша",
            "λόγος",
            "中文",
            "abcд",
            "שלוםЖ",
            "123",
            "<foreign>",
            "...",
            "é",
            "ü",
            "🙂",
        ]);
        let sep = prop::sample::select(vec![" ", "  ", "\n", "\t", " \n "]);
        prop::collection::vec((word, sep), 0..20)
            .prop_map(|v| v.into_iter().map(|(w, s)| format!("{w}{s}")).collect::<String>())
    }

    proptest! {
        #[test]
        fn reduce_foreign_properties(t in mixed_text()) {
            let once = reduce_foreign(&t);
            prop_assert!(!once.chars().any(is_foreign_letter));
            prop_assert_eq!(reduce_foreign(&once), once.clone());
        }

        #[test]
        fn reduce_foreign_arbitrary(t in "\\PC{0,60}") {
            let once = reduce_foreign(&t);
            prop_assert!(!once.chars().any(is_foreign_letter));
            prop_assert_eq!(reduce_foreign(&once), once.clone());
        }

        #[test]
        fn histogram_counts_sum_to_codepoints(t in "\\PC{0,80}") {
            let h = char_histogram(&t);
            prop_assert_eq!(h.total(), t.chars().count());
            prop_assert!(h.longest_run <= h.total());
        }
    }
}
