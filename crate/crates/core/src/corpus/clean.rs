use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    char_histogram, histogram_filter, perplexity_percentile, reduce_foreign_counted, CharLm, Document,
    DropReason, Record, Sentences,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CleaningConfig {
    pub max_non_letter_fraction: f64,
    pub max_digit_fraction: f64,
    pub max_run_fraction: f64,
    /// Documents whose unseen-bigram fraction exceeds this are dropped.
    pub gibberish_threshold: f64,
    /// Sentences with perplexity above this are dropped. `None` means
    /// "calibrate from held-out seed text" (see [`CleaningConfig::calibrate`]).
    pub perplexity_threshold: Option<f64>,
    /// Percentile of held-out perplexities used when calibrating.
    pub perplexity_percentile: f64,
    /// Share of seed documents held out for calibration.
    pub heldout_fraction: f64,
    pub ngram_order: usize,
    pub smoothing: f64,
}

impl Default for CleaningConfig {
    fn default() -> Self {
        CleaningConfig {
            max_non_letter_fraction: 0.5,
            max_digit_fraction: 0.3,
            max_run_fraction: 0.2,
            gibberish_threshold: 0.25,
            perplexity_threshold: None,
            perplexity_percentile: 97.5,
            heldout_fraction: 0.1,
            ngram_order: 5,
            smoothing: 0.1,
        }
    }
}

impl CleaningConfig {
    /// Every filter disabled; only foreign-run reduction changes text.
    pub fn permissive() -> Self {
        CleaningConfig {
            max_non_letter_fraction: 1.0,
            max_digit_fraction: 1.0,
            max_run_fraction: 1.0,
            gibberish_threshold: 1.0,
            perplexity_threshold: Some(f64::MAX),
            ..CleaningConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fractions = [
            ("max_non_letter_fraction", self.max_non_letter_fraction),
            ("max_digit_fraction", self.max_digit_fraction),
            ("max_run_fraction", self.max_run_fraction),
            ("gibberish_threshold", self.gibberish_threshold),
            ("heldout_fraction", self.heldout_fraction),
        ];
        for (name, v) in fractions {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must be in [0, 1], got {v}")));
            }
        }
        if let Some(t) = self.perplexity_threshold {
            if !(t > 1.0) {
                return Err(Error::Config(format!("perplexity_threshold must be > 1, got {t}")));
            }
        }
        if !(0.0..=100.0).contains(&self.perplexity_percentile) {
            return Err(Error::Config("perplexity_percentile must be in [0, 100]".into()));
        }
        if self.ngram_order < 2 {
            return Err(Error::Config("ngram_order must be >= 2".into()));
        }
        Ok(())
    }

    /// Trains the n-gram model on the seed corpus and, if no perplexity
    /// threshold is set, fixes it at the configured percentile of held-out
    /// sentence perplexities. The held-out split is the tail of `seed`.
    pub fn calibrate(&mut self, seed: &[Document]) -> Result<CharLm> {
        self.validate()?;
        if self.perplexity_threshold.is_some() {
            return CharLm::train(seed, self.ngram_order, self.smoothing);
        }
        let held = ((seed.len() as f64) * self.heldout_fraction).round() as usize;
        let held = held.clamp(1, seed.len().saturating_sub(1).max(1));
        if seed.len() < 2 {
            return Err(Error::Empty("seed corpus needs at least two documents to calibrate"));
        }
        let (train, heldout) = seed.split_at(seed.len() - held);
        let lm = CharLm::train(train, self.ngram_order, self.smoothing)?;
        let threshold = perplexity_percentile(&lm, heldout, self.perplexity_percentile)?;
        self.perplexity_threshold = Some(threshold.max(1.0 + f64::EPSILON));
        Ok(lm)
    }
}

/// Bookkeeping for one cleaning run. Counts merge by addition.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CleaningReport {
    pub total_docs: usize,
    pub kept_docs: usize,
    pub dropped_by_histogram: usize,
    pub dropped_by_gibberish: usize,
    /// Documents left with no sentence after perplexity filtering.
    pub dropped_by_perplexity: usize,
    pub sentences_total: usize,
    pub sentences_dropped_by_perplexity: usize,
    pub foreign_runs_reduced: usize,
    /// Lines that were not valid UTF-8 JSON documents; not part of `total_docs`.
    pub malformed_records: usize,
    /// `1 - kept_docs / total_docs`.
    pub removal_fraction: f64,
    pub chars_in: usize,
    pub chars_out: usize,
    /// `1 - chars_out / chars_in`, counting codepoints.
    pub char_removal_fraction: f64,
    pub perplexity_threshold: f64,
}

impl CleaningReport {
    pub fn merge(&mut self, other: &CleaningReport) {
        self.total_docs += other.total_docs;
        self.kept_docs += other.kept_docs;
        self.dropped_by_histogram += other.dropped_by_histogram;
        self.dropped_by_gibberish += other.dropped_by_gibberish;
        self.dropped_by_perplexity += other.dropped_by_perplexity;
        self.sentences_total += other.sentences_total;
        self.sentences_dropped_by_perplexity += other.sentences_dropped_by_perplexity;
        self.foreign_runs_reduced += other.foreign_runs_reduced;
        self.malformed_records += other.malformed_records;
        self.chars_in += other.chars_in;
        self.chars_out += other.chars_out;
        self.finish();
    }

    fn finish(&mut self) {
        self.removal_fraction =
            if self.total_docs == 0 { 0.0 } else { 1.0 - self.kept_docs as f64 / self.total_docs as f64 };
        self.char_removal_fraction =
            if self.chars_in == 0 { 0.0 } else { 1.0 - self.chars_out as f64 / self.chars_in as f64 };
    }

    /// `kept + dropped_by_histogram + dropped_by_gibberish + dropped_by_perplexity == total`.
    pub fn is_consistent(&self) -> bool {
        self.kept_docs + self.dropped_by_histogram + self.dropped_by_gibberish + self.dropped_by_perplexity
            == self.total_docs
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DocOutcome {
    Kept(Document),
    Dropped(DropReason),
}

/// Runs one document through reduce_foreign, the histogram filter, the
/// gibberish threshold and per-sentence perplexity filtering, returning the
/// outcome and a single-document report.
pub fn clean_document(
    doc: &Document,
    lm: &CharLm,
    config: &CleaningConfig,
    ppl_threshold: f64,
) -> (DocOutcome, CleaningReport) {
    let mut report =
        CleaningReport { total_docs: 1, chars_in: doc.text.chars().count(), ..Default::default() };
    let (text, runs) = reduce_foreign_counted(&doc.text);
    report.foreign_runs_reduced = runs;

    let outcome = if let Some(reason) = histogram_filter(&char_histogram(&text), config) {
        report.dropped_by_histogram = 1;
        DocOutcome::Dropped(reason)
    } else if lm.gibberish_score(&text) > config.gibberish_threshold {
        report.dropped_by_gibberish = 1;
        DocOutcome::Dropped(DropReason::Gibberish)
    } else {
        let sentences = Sentences::split(&text);
        let keep: Vec<bool> = sentences
            .sentences()
            .map(|s| lm.sentence_perplexity(s).is_ok_and(|p| p <= ppl_threshold))
            .collect();
        let dropped = keep.iter().filter(|k| !**k).count();
        report.sentences_total = keep.len();
        report.sentences_dropped_by_perplexity = dropped;
        if dropped == keep.len() {
            report.dropped_by_perplexity = 1;
            DocOutcome::Dropped(DropReason::Perplexity)
        } else {
            let text = if dropped == 0 { text } else { sentences.rejoin(&keep) };
            report.kept_docs = 1;
            report.chars_out = text.chars().count();
            DocOutcome::Kept(Document { id: doc.id.clone(), source: doc.source.clone(), text })
        }
    };
    report.finish();
    (outcome, report)
}

/// Cleans a corpus, preserving input order. Malformed records are skipped
/// and counted. Documents are processed on the current rayon pool; the
/// result does not depend on the number of threads.
pub fn clean_corpus(
    records: &[Record],
    lm: &CharLm,
    config: &CleaningConfig,
) -> Result<(Vec<Document>, CleaningReport)> {
    config.validate()?;
    let threshold = config.perplexity_threshold.ok_or_else(|| {
        Error::Config("perplexity_threshold unresolved; call CleaningConfig::calibrate".into())
    })?;
    let results: Vec<Option<(DocOutcome, CleaningReport)>> = records
        .par_iter()
        .map(|r| r.as_ref().ok().map(|d| clean_document(d, lm, config, threshold)))
        .collect();

    let mut report = CleaningReport { perplexity_threshold: threshold, ..Default::default() };
    let mut kept = Vec::new();
    for r in results {
        match r {
            None => report.malformed_records += 1,
            Some((outcome, doc_report)) => {
                report.merge(&doc_report);
                if let DocOutcome::Kept(d) = outcome {
                    kept.push(d);
                }
            }
        }
    }
    report.finish();
    Ok((kept, report))
}
