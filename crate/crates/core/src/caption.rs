use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::CoreError;
use crate::hierarchy::{LabelHierarchy, LabelId};

pub const BASE_PREFIX: &str = "a realistic photograph of ";

/// A prompt made of a class-bearing base followed by short sentences.
///
/// Sentences are stored normalized: trimmed, lowercased, without any inner
/// `.`, and terminated by exactly one `.`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Caption {
    base: String,
    sentences: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("caption parse error at byte {position}: expected {expected}")]
pub struct CaptionParseError {
    pub position: usize,
    pub expected: String,
}

/// Splits free text into normalized sentences: split on `.`, trim, drop
/// empty fragments, lowercase, re-terminate with `.`.
pub fn split_sentences(text: &str) -> Vec<String> {
    text.split('.')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| format!("{}.", s.to_lowercase()))
        .collect()
}

fn article_for(name: &str) -> &'static str {
    match name.chars().next().map(|c| c.to_ascii_lowercase()) {
        Some('a' | 'e' | 'i' | 'o' | 'u') => "an",
        _ => "a",
    }
}

/// `a realistic photograph of a/an {name} ({parent}).` for a non-root label.
pub fn build_base_prompt(label: &LabelId, hierarchy: &LabelHierarchy) -> Result<Caption, CoreError> {
    let node = hierarchy.get(label)?;
    let parent = hierarchy.parent(label)?;
    let parent_name = hierarchy.name(parent)?;
    let base = format!(
        "{BASE_PREFIX}{} {} ({}).",
        article_for(&node.name),
        node.name,
        parent_name
    );
    Ok(Caption {
        base,
        sentences: Vec::new(),
    })
}

impl Caption {
    /// A caption with the given base and no sentences. The base is kept
    /// verbatim.
    pub fn from_base(base: impl Into<String>) -> Self {
        Caption {
            base: base.into(),
            sentences: Vec::new(),
        }
    }

    /// Builds a caption whose sentences are re-normalized from `sentences`.
    pub fn new<S: AsRef<str>>(base: impl Into<String>, sentences: &[S]) -> Self {
        let mut c = Caption::from_base(base);
        for s in sentences {
            c.sentences.extend(split_sentences(s.as_ref()));
        }
        c
    }

    /// Interprets a captioner completion that must begin with `prefix`.
    /// Returns `None` when the completion does not start with the prefix.
    pub fn from_completion(prefix: &str, completion: &str) -> Option<Self> {
        let rest = completion.strip_prefix(prefix)?;
        Some(Caption {
            base: prefix.to_string(),
            sentences: split_sentences(rest),
        })
    }

    pub fn base(&self) -> &str {
        &self.base
    }

    pub fn sentences(&self) -> &[String] {
        &self.sentences
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn base_only(&self) -> Caption {
        Caption::from_base(self.base.clone())
    }

    pub fn with_sentence(&self, sentence: &str) -> Caption {
        let mut c = self.clone();
        c.sentences.extend(split_sentences(sentence));
        c
    }

    pub fn truncated(&self, k: usize) -> Caption {
        let mut c = self.clone();
        c.sentences.truncate(k);
        c
    }

    /// Base followed by each sentence, joined by single spaces.
    pub fn render(&self) -> String {
        let mut out = self.base.clone();
        for s in &self.sentences {
            out.push(' ');
            out.push_str(s);
        }
        out
    }

    /// Parses a rendered caption using the base-prompt grammar
    /// `a realistic photograph of a|an NAME (PARENT).` followed by
    /// sentences.
    pub fn parse(text: &str) -> Result<Caption, CaptionParseError> {
        let (base_end, _, _) = parse_base(text)?;
        Ok(Caption {
            base: text[..base_end].to_string(),
            sentences: split_sentences(&text[base_end..]),
        })
    }

    /// Parses `text` and checks that its base is exactly the base prompt of
    /// `label`.
    pub fn parse_for_label(
        text: &str,
        label: &LabelId,
        hierarchy: &LabelHierarchy,
    ) -> Result<Caption, CoreError> {
        let expected = build_base_prompt(label, hierarchy)?;
        if !text.starts_with(expected.base()) {
            // report the first diverging byte so editors can point at it
            let position = text
                .bytes()
                .zip(expected.base().bytes())
                .position(|(a, b)| a != b)
                .unwrap_or_else(|| text.len().min(expected.base().len()));
            if parse_base(text).is_err() {
                return Err(CaptionParseError {
                    position,
                    expected: format!("base prompt `{}`", expected.base()),
                }
                .into());
            }
            return Err(CoreError::BasePromptMismatch {
                expected: expected.base().to_string(),
                found: Caption::parse(text)?.base().to_string(),
            });
        }
        let caption = Caption::parse(text)?;
        if caption.base() != expected.base() {
            return Err(CoreError::BasePromptMismatch {
                expected: expected.base().to_string(),
                found: caption.base().to_string(),
            });
        }
        Ok(caption)
    }

    /// `(name, parent-name)` re-extracted from a grammar-conforming base.
    pub fn base_parts(&self) -> Result<(String, String), CaptionParseError> {
        let (end, name, parent) = parse_base(&self.base)?;
        if end != self.base.len() {
            return Err(CaptionParseError {
                position: end,
                expected: "end of base prompt".into(),
            });
        }
        Ok((name, parent))
    }
}

/// Returns (byte offset where the base ends, name, parent name).
fn parse_base(text: &str) -> Result<(usize, String, String), CaptionParseError> {
    let err = |position: usize, expected: &str| CaptionParseError {
        position,
        expected: expected.to_string(),
    };
    if !text.starts_with(BASE_PREFIX) {
        let position = text
            .bytes()
            .zip(BASE_PREFIX.bytes())
            .position(|(a, b)| a != b)
            .unwrap_or(text.len());
        return Err(err(position, &format!("prefix `{}`", BASE_PREFIX.trim_end())));
    }
    let mut pos = BASE_PREFIX.len();
    let rest = &text[pos..];
    let article_len = if rest.starts_with("an ") {
        3
    } else if rest.starts_with("a ") {
        2
    } else {
        return Err(err(pos, "article `a` or `an`"));
    };
    pos += article_len;
    let body = &text[pos..];
    let close = body
        .find(").")
        .ok_or_else(|| err(text.len(), "`(PARENT).` closing the base prompt"))?;
    let head = &body[..close];
    let open = head
        .rfind(" (")
        .ok_or_else(|| err(pos, "`NAME (PARENT).`"))?;
    let name = &head[..open];
    let parent = &head[open + 2..];
    if name.trim().is_empty() {
        return Err(err(pos, "a label name"));
    }
    if parent.trim().is_empty() {
        return Err(err(pos + open + 2, "a parent name"));
    }
    Ok((pos + close + 2, name.to_string(), parent.to_string()))
}

impl fmt::Display for Caption {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}
