//! The three synthesis stages.

use crate::anchor::{insert_anchors, Lexicon};
use crate::client::{GenParams, GeneratorClient};
use crate::error::{Error, Result};
use crate::template::{render, Templates};

fn non_empty(stage: &'static str, text: String) -> Result<String> {
    let t = text.trim();
    if t.is_empty() {
        Err(Error::EmptyOutput(stage))
    } else {
        Ok(t.to_string())
    }
}

pub fn describe_prompt(templates: &Templates, image_doc: &str) -> Result<String> {
    render(&templates.describe, &[("image_doc", image_doc)])
}

pub fn reason_prompt(templates: &Templates, description: &str, question: &str) -> Result<String> {
    render(&templates.reason, &[("description", description), ("question", question)])
}

pub fn anchor_prompt(templates: &Templates, chain: &str) -> Result<String> {
    render(&templates.anchor, &[("chain", chain)])
}

/// Stage 1: a full description of the image surrogate.
pub fn describe(
    image_doc: &str,
    client: &dyn GeneratorClient,
    templates: &Templates,
    params: &GenParams,
) -> Result<String> {
    if image_doc.trim().is_empty() {
        return Err(Error::EmptyInput("image_doc"));
    }
    non_empty("describe", client.complete(&describe_prompt(templates, image_doc)?, params)?)
}

/// Stage 2: a step-numbered chain drafted with self-reflection.
pub fn reason(
    description: &str,
    question: &str,
    client: &dyn GeneratorClient,
    templates: &Templates,
    params: &GenParams,
) -> Result<String> {
    if description.trim().is_empty() {
        return Err(Error::EmptyInput("description"));
    }
    if question.trim().is_empty() {
        return Err(Error::EmptyInput("question"));
    }
    non_empty("reason", client.complete(&reason_prompt(templates, description, question)?, params)?)
}

/// How stage 3 places anchors.
#[derive(Clone, Copy)]
pub enum AnchorMode<'a> {
    /// Deterministic insertion before every `k`-th step.
    Rule { k: usize },
    /// Backend rewrite, re-checked with the lexicon.
    Client(&'a dyn GeneratorClient),
}

impl AnchorMode<'_> {
    pub fn provenance(&self) -> String {
        match self {
            AnchorMode::Rule { k } => format!("rule:k={k}"),
            AnchorMode::Client(c) => c.name().to_string(),
        }
    }
}

/// Stage 3: the chain with explicit references back to the image.
///
/// A backend answer without any lexicon match is requested once more before
/// giving up with `NoAnchorProduced`.
pub fn integrate_anchors(
    chain: &str,
    mode: AnchorMode<'_>,
    lexicon: &Lexicon,
    templates: &Templates,
    params: &GenParams,
) -> Result<String> {
    if chain.trim().is_empty() {
        return Err(Error::EmptyInput("reasoning chain"));
    }
    match mode {
        AnchorMode::Rule { k } => {
            let out = insert_anchors(chain, k)?;
            if lexicon.count(&out) == 0 {
                return Err(Error::NoAnchorProduced);
            }
            Ok(out)
        }
        AnchorMode::Client(client) => {
            let prompt = anchor_prompt(templates, chain)?;
            for _ in 0..2 {
                let out = non_empty("anchor", client.complete(&prompt, params)?)?;
                if lexicon.count(&out) > 0 {
                    return Ok(out);
                }
            }
            Err(Error::NoAnchorProduced)
        }
    }
}

/// The text after the last `Answer:` label, if any.
pub fn extract_answer(chain: &str) -> Option<String> {
    chain
        .lines()
        .rev()
        .find_map(|l| l.trim().strip_prefix("Answer:"))
        .map(|a| a.trim().to_string())
        .filter(|a| !a.is_empty())
}
