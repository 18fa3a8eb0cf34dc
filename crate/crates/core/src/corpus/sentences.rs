/// A text cut into sentences, keeping every separator so the original can be
/// rebuilt exactly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentences<'a> {
    /// Whitespace before the first sentence.
    pub leading: &'a str,
    /// Each sentence with the whitespace that follows it.
    pub parts: Vec<(&'a str, &'a str)>,
}

impl<'a> Sentences<'a> {
    /// Rule-based segmentation. A sentence ends after `.`, `!` or `?` when
    /// the next character is whitespace or the end of text, and before any
    /// `\n`. The whitespace run following a sentence is its separator.
    pub fn split(text: &'a str) -> Self {
        let body_start = text.len() - text.trim_start().len();
        let leading = &text[..body_start];
        let mut parts = Vec::new();
        let mut start = body_start;
        let mut iter = text[body_start..].char_indices().peekable();
        while let Some((off, ch)) = iter.next() {
            let pos = body_start + off;
            let end = match ch {
                '.' | '!' | '?' => {
                    let next = iter.peek().map(|&(_, c)| c);
                    if next.is_none_or(char::is_whitespace) {
                        pos + ch.len_utf8()
                    } else {
                        continue;
                    }
                }
                '\n' => pos,
                _ => continue,
            };
            let sep_end = text[end..]
                .char_indices()
                .find(|&(_, c)| !c.is_whitespace())
                .map_or(text.len(), |(i, _)| end + i);
            let sentence = text[start..end].trim_end();
            let sentence_end = start + sentence.len();
            parts.push((sentence, &text[sentence_end..sep_end]));
            start = sep_end;
            // skip the consumed separator
            while iter.peek().is_some_and(|&(o, _)| body_start + o < sep_end) {
                iter.next();
            }
        }
        if start < text.len() {
            // unterminated tail
            let rest = &text[start..];
            let trimmed = rest.trim_end();
            parts.push((trimmed, &rest[trimmed.len()..]));
        }
        Sentences { leading, parts }
    }

    pub fn sentences(&self) -> impl Iterator<Item = &'a str> + '_ {
        self.parts.iter().map(|&(s, _)| s)
    }

    pub fn len(&self) -> usize {
        self.parts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parts.is_empty()
    }

    /// Rebuilds text from the sentences for which `keep` is true. Each kept
    /// sentence is followed by its own separator, except the last kept one,
    /// which takes the separator that ended the original text.
    pub fn rejoin(&self, keep: &[bool]) -> String {
        let kept: Vec<usize> = (0..self.parts.len()).filter(|&i| keep[i]).collect();
        let mut out = String::from(self.leading);
        for (n, &i) in kept.iter().enumerate() {
            let (s, sep) = self.parts[i];
            out.push_str(s);
            if n + 1 == kept.len() {
                out.push_str(self.parts.last().map_or("", |p| p.1));
            } else {
                out.push_str(sep);
            }
        }
        out
    }

    /// Concatenation of every sentence and separator.
    pub fn reconstruct(&self) -> String {
        let mut out = String::from(self.leading);
        for (s, sep) in &self.parts {
            out.push_str(s);
            out.push_str(sep);
        }
        out
    }
}

pub fn split_sentences(text: &str) -> Vec<&str> {
    Sentences::split(text).sentences().collect()
}
