//! Turns an ordered document into the OCR context string and wraps it in
//! the QA prompt template:
//!
//! ```text
//! Context: <context> Question: <question> Answer:
//! ```

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Document;
use crate::ordering::{ReadingOrder, Strategy};

type CountFn = dyn Fn(&str) -> usize + Send + Sync;

/// How token budgets are measured.
#[derive(Clone, Default)]
pub enum TokenizerSpec {
    /// Whitespace-separated pieces.
    #[default]
    Whitespace,
    /// Caller-supplied counter, e.g. a model's own subword tokenizer. It
    /// must be monotone over word prefixes of a context.
    External(Arc<CountFn>),
}

impl TokenizerSpec {
    pub fn external(f: impl Fn(&str) -> usize + Send + Sync + 'static) -> Self {
        TokenizerSpec::External(Arc::new(f))
    }

    pub fn count(&self, text: &str) -> usize {
        match self {
            TokenizerSpec::Whitespace => text.split_whitespace().count(),
            TokenizerSpec::External(f) => f(text),
        }
    }
}

impl fmt::Debug for TokenizerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TokenizerSpec::Whitespace => f.write_str("Whitespace"),
            TokenizerSpec::External(_) => f.write_str("External(..)"),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct SerializeOptions {
    /// Put `\n` rather than a space between raster-scan lines.
    pub line_breaks: bool,
    pub tokenizer: TokenizerSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Truncation {
    Intact,
    Truncated,
    /// The first word alone exceeded the budget; the context is empty.
    FirstWordOverBudget,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SerializedContext {
    pub doc_id: String,
    pub text: String,
    pub order_strategy: Strategy,
    pub token_count: usize,
    pub truncation: Truncation,
    words: Vec<String>,
    // Word positions preceded by a line break; empty when joining by spaces.
    line_starts: Vec<usize>,
}

impl SerializedContext {
    pub fn words(&self) -> &[String] {
        &self.words
    }

    fn join(words: &[String], line_starts: &[usize]) -> String {
        let mut text = String::with_capacity(words.iter().map(|w| w.len() + 1).sum());
        let mut breaks = line_starts.iter().peekable();
        for (i, w) in words.iter().enumerate() {
            while breaks.next_if(|&&s| s < i).is_some() {}
            if i > 0 {
                if breaks.next_if(|&&s| s == i).is_some() {
                    text.push('\n');
                } else {
                    text.push(' ');
                }
            }
            text.push_str(w);
        }
        text
    }
}

/// Joins the document's words with single spaces in reading order, counting
/// tokens on whitespace.
pub fn build_context(doc: &Document, order: &ReadingOrder) -> Result<SerializedContext> {
    build_context_with(doc, order, &SerializeOptions::default())
}

pub fn build_context_with(
    doc: &Document,
    order: &ReadingOrder,
    opts: &SerializeOptions,
) -> Result<SerializedContext> {
    if order.doc_id != doc.doc_id {
        return Err(Error::OrderMismatch(format!(
            "order for {} applied to document {}",
            order.doc_id, doc.doc_id
        )));
    }
    order.validate(doc.len())?;

    let words: Vec<String> = order
        .permutation
        .iter()
        .map(|&i| doc.words[i].text.clone())
        .collect();
    let line_starts = if opts.line_breaks {
        order.line_starts.clone()
    } else {
        Vec::new()
    };
    let text = SerializedContext::join(&words, &line_starts);
    Ok(SerializedContext {
        doc_id: doc.doc_id.clone(),
        token_count: opts.tokenizer.count(&text),
        text,
        order_strategy: order.strategy,
        truncation: Truncation::Intact,
        words,
        line_starts,
    })
}

/// Keeps the longest whole-word prefix whose token count fits `budget`.
pub fn truncate_context(
    ctx: &SerializedContext,
    budget: usize,
    tok: &TokenizerSpec,
) -> Result<SerializedContext> {
    if budget == 0 {
        return Err(Error::Validation(
            "context budget must be at least 1".into(),
        ));
    }
    let prefix_text = |k: usize| {
        let starts: Vec<usize> = ctx.line_starts.iter().copied().filter(|&s| s < k).collect();
        (SerializedContext::join(&ctx.words[..k], &starts), starts)
    };

    let n = ctx.words.len();
    if tok.count(&ctx.text) <= budget {
        let mut out = ctx.clone();
        out.token_count = tok.count(&ctx.text);
        return Ok(out);
    }

    // Largest k in [0, n) with count(prefix k) <= budget.
    let (mut lo, mut hi) = (0usize, n);
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if tok.count(&prefix_text(mid).0) <= budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (text, line_starts) = prefix_text(lo);
    let truncation = if lo == 0 {
        log::warn!(
            "{}: first word exceeds the {budget}-token budget; context is empty",
            ctx.doc_id
        );
        Truncation::FirstWordOverBudget
    } else {
        Truncation::Truncated
    };
    Ok(SerializedContext {
        doc_id: ctx.doc_id.clone(),
        token_count: tok.count(&text),
        text,
        order_strategy: ctx.order_strategy,
        truncation,
        words: ctx.words[..lo].to_vec(),
        line_starts,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prompt {
    pub text: String,
    pub question: String,
    pub context: SerializedContext,
}

pub const CONTEXT_PREFIX: &str = "Context: ";
pub const QUESTION_MARKER: &str = " Question: ";
pub const ANSWER_MARKER: &str = " Answer:";

/// Renders `Context: {C} Question: {Q} Answer:`. An empty context yields a
/// double space after `Context:`.
pub fn build_prompt(ctx: &SerializedContext, question: &str) -> Result<Prompt> {
    if question.trim().is_empty() {
        return Err(Error::Validation("question must not be empty".into()));
    }
    Ok(Prompt {
        text: render_prompt(&ctx.text, question),
        question: question.to_string(),
        context: ctx.clone(),
    })
}

pub fn render_prompt(context: &str, question: &str) -> String {
    format!("{CONTEXT_PREFIX}{context}{QUESTION_MARKER}{question}{ANSWER_MARKER}")
}

/// Inverse of [`render_prompt`]: splits a prompt back into context and
/// question. Uses the last question marker so contexts may contain it.
pub fn parse_prompt(prompt: &str) -> Option<(&str, &str)> {
    let body = prompt
        .strip_prefix(CONTEXT_PREFIX)?
        .strip_suffix(ANSWER_MARKER)?;
    let at = body.rfind(QUESTION_MARKER)?;
    Some((&body[..at], &body[at + QUESTION_MARKER.len()..]))
}
