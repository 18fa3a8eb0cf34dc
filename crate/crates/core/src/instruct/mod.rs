//! Instruct-tuning records from QA datasets and translated prompt/response
//! pairs.
//!
//! QA records become `(system, context + question, answer)` triples where the
//! system text always carries the base reading instruction and, with a fixed
//! probability, one response-format directive whose transformation is applied
//! to the answer. Translated pairs are emitted three times: once without a
//! system prompt and twice with the two directives available for the
//! response's length.

mod templates;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Sentences;
use crate::error::{Error, Result};
use crate::rng::{stream_rng, tag};

pub use templates::{LengthTemplates, QaDirective, Templates, Transform};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaRecord {
    pub context: String,
    pub question: String,
    #[serde(rename = "answer")]
    pub answer_span: String,
    /// Offset of the answer in `context`, in codepoints.
    pub answer_start: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranslatedRecord {
    pub question: String,
    pub response: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructRecord {
    pub system: Option<String>,
    pub prompt: String,
    pub response: String,
}

impl QaRecord {
    /// Byte range of the answer inside `context`, after checking the span
    /// really sits at `answer_start`.
    pub fn answer_range(&self) -> Result<std::ops::Range<usize>> {
        let err = || Error::AnswerSpan { span: self.answer_span.clone(), start: self.answer_start };
        if self.answer_span.is_empty() {
            return Err(err());
        }
        let start = if self.answer_start == 0 {
            0
        } else {
            self.context.char_indices().nth(self.answer_start).map(|(i, _)| i).ok_or_else(err)?
        };
        let end = start + self.answer_span.len();
        if self.context.get(start..end) != Some(self.answer_span.as_str()) {
            return Err(err());
        }
        Ok(start..end)
    }

    /// The context sentences overlapping the answer, as one slice of the
    /// context, and how many sentences that is.
    pub fn supporting_sentences(&self) -> Result<(&str, usize)> {
        let range = self.answer_range()?;
        let base = self.context.as_ptr() as usize;
        let split = Sentences::split(&self.context);
        let covering: Vec<(usize, usize)> = split
            .sentences()
            .map(|s| {
                let start = s.as_ptr() as usize - base;
                (start, start + s.len())
            })
            .filter(|&(s, e)| s < range.end && e > range.start)
            .collect();
        let (first, last) = (covering[0].0, covering[covering.len() - 1].1);
        Ok((&self.context[first..last], covering.len()))
    }
}

/// Applies one QA directive, or none, to a record.
pub fn format_qa_with(
    rec: &QaRecord,
    templates: &Templates,
    directive: Option<&QaDirective>,
) -> Result<InstructRecord> {
    rec.answer_range()?;
    let prompt = format!("{}\n{}", rec.context, rec.question);
    let Some(directive) = directive else {
        return Ok(InstructRecord {
            system: Some(templates.base_instruction.clone()),
            prompt,
            response: rec.answer_span.clone(),
        });
    };
    let (response, n) = match &directive.transform {
        Transform::Identity => (rec.answer_span.clone(), 1),
        Transform::WrapInSentence { pattern } => (pattern.replace("{answer}", &rec.answer_span), 1),
        Transform::AppendSupportingSentence { joiner } => {
            let (support, n) = rec.supporting_sentences()?;
            (format!("{}{joiner}{support}", rec.answer_span), n)
        }
        Transform::SentenceCount => {
            let (support, n) = rec.supporting_sentences()?;
            (support.to_string(), n)
        }
    };
    let system =
        format!("{} {}", templates.base_instruction, directive.system.replace("{n}", &n.to_string()));
    Ok(InstructRecord { system: Some(system), prompt, response })
}

/// With probability `templates.directive_probability` appends a directive
/// drawn uniformly from the registry.
pub fn format_qa(rec: &QaRecord, templates: &Templates, rng: &mut impl Rng) -> Result<InstructRecord> {
    let directive =
        if rng.random::<f64>() < templates.directive_probability && !templates.qa_directives.is_empty() {
            Some(&templates.qa_directives[rng.random_range(0..templates.qa_directives.len())])
        } else {
            None
        };
    format_qa_with(rec, templates, directive)
}

/// A length-dependent directive for a translated response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LengthDirective {
    Concise,
    Expand,
    ExactCount(usize),
}

impl LengthDirective {
    /// The two directives available for a response of `sentences` sentences.
    pub fn options(sentences: usize) -> [LengthDirective; 2] {
        if sentences <= 2 {
            [LengthDirective::Concise, LengthDirective::ExactCount(sentences)]
        } else {
            [LengthDirective::Expand, LengthDirective::ExactCount(sentences)]
        }
    }

    pub fn system_text(&self, t: &LengthTemplates) -> String {
        match self {
            LengthDirective::Concise => t.concise.clone(),
            LengthDirective::Expand => t.expand.clone(),
            LengthDirective::ExactCount(n) => t.exact_count.replace("{n}", &n.to_string()),
        }
    }

    /// Response consistent with the directive: concise keeps the first
    /// sentence, the others keep the response as is.
    pub fn apply(&self, response: &str) -> String {
        match self {
            LengthDirective::Concise => {
                Sentences::split(response).sentences().next().unwrap_or(response).to_string()
            }
            LengthDirective::Expand | LengthDirective::ExactCount(_) => response.to_string(),
        }
    }
}

/// Picks one of the two directives for the response's sentence count.
pub fn length_directive(response: &str, rng: &mut impl Rng) -> LengthDirective {
    let s = Sentences::split(response).len().max(1);
    LengthDirective::options(s)[rng.random_range(0..2)]
}

/// Three records for one translated pair: no system prompt, then both
/// length directives in random order.
pub fn expand_translated(
    question: &str,
    response: &str,
    templates: &Templates,
    rng: &mut impl Rng,
) -> Result<[InstructRecord; 3]> {
    if question.trim().is_empty() || response.trim().is_empty() {
        return Err(Error::Empty("translated question or response"));
    }
    let first = length_directive(response, rng);
    let s = Sentences::split(response).len().max(1);
    let second = LengthDirective::options(s).into_iter().find(|d| *d != first).unwrap_or(first);
    let with = |d: LengthDirective| InstructRecord {
        system: Some(d.system_text(&templates.length_directives)),
        prompt: question.to_string(),
        response: d.apply(response),
    };
    Ok([
        InstructRecord { system: None, prompt: question.to_string(), response: response.to_string() },
        with(first),
        with(second),
    ])
}

/// Builds the whole instruct set: QA records first, then translated
/// expansions, each record drawing from its own seeded stream so the result
/// does not depend on processing order.
pub fn build_instruct(
    qa: &[QaRecord],
    translated: &[TranslatedRecord],
    templates: &Templates,
    seed: u64,
) -> Result<Vec<InstructRecord>> {
    let qa_seed = seed ^ tag("qa");
    let tr_seed = seed ^ tag("translated");
    let mut out: Vec<InstructRecord> = qa
        .par_iter()
        .enumerate()
        .map(|(i, r)| format_qa(r, templates, &mut stream_rng(qa_seed, i as u64)))
        .collect::<Result<_>>()?;
    let expanded: Vec<[InstructRecord; 3]> = translated
        .par_iter()
        .enumerate()
        .map(|(i, r)| {
            expand_translated(&r.question, &r.response, templates, &mut stream_rng(tr_seed, i as u64))
        })
        .collect::<Result<_>>()?;
    out.extend(expanded.into_iter().flatten());
    Ok(out)
}
