use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const DEFAULT_TEMPLATES: &str = include_str!("../../assets/templates.json");

/// How a QA directive rewrites the answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Transform {
    Identity,
    /// `pattern` with `{answer}` replaced by the answer span.
    WrapInSentence {
        pattern: String,
    },
    /// Answer, `joiner`, then the context sentence(s) containing it.
    AppendSupportingSentence {
        joiner: String,
    },
    /// The context sentence(s) containing the answer; `{n}` in the system
    /// text becomes their count.
    SentenceCount,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaDirective {
    pub name: String,
    pub system: String,
    pub transform: Transform,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LengthTemplates {
    pub concise: String,
    pub expand: String,
    /// `{n}` is replaced by the sentence count.
    pub exact_count: String,
}

impl Default for LengthTemplates {
    fn default() -> Self {
        Templates::default().length_directives
    }
}

/// The directive registry and prompt layout strings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Templates {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    pub base_instruction: String,
    pub directive_probability: f64,
    /// Placed between system, prompt and response when assembling
    /// fine-tuning sequences.
    pub separator: String,
    pub qa_directives: Vec<QaDirective>,
    pub length_directives: LengthTemplates,
}

impl Default for Templates {
    fn default() -> Self {
        serde_json::from_str(DEFAULT_TEMPLATES).expect("bundled templates parse")
    }
}

impl Templates {
    pub fn from_json(text: &str) -> Result<Self> {
        let t: Templates = serde_json::from_str(text)
            .map_err(|e| Error::Parse { line: e.line(), message: e.to_string() })?;
        t.validate()?;
        Ok(t)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// The bundled template file, verbatim.
    pub fn default_json() -> &'static str {
        DEFAULT_TEMPLATES
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.directive_probability) {
            return Err(Error::Config("directive_probability must be in [0, 1]".into()));
        }
        if self.directive_probability > 0.0 && self.qa_directives.is_empty() {
            return Err(Error::Config("qa_directives is empty".into()));
        }
        if !self.length_directives.exact_count.contains("{n}") {
            return Err(Error::Config("exact_count template must contain {n}".into()));
        }
        Ok(())
    }
}
