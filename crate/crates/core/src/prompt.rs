//! Few-shot dialogue prompts for style injection.
//!
//! Each in-context example is replayed as a user turn carrying the
//! serialization and an assistant turn carrying the radiologist's report.
//! The evaluation serialization closes the chain as a final user turn.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SYSTEM_PROMPT: &str =
    "You are a helpful assistant that generates chest x-ray reports from key words.";
pub const INSTRUCTION: &str = "Generate a chest x-ray report from the following key words:";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("evaluation serialization is empty")]
    EmptyEvalSerialization,
    #[error("example {index} has an empty {field}")]
    EmptyExampleField { index: usize, field: &'static str },
    #[error("cannot draw {k} examples from a pool of {pool}")]
    PoolTooSmall { k: usize, pool: usize },
    #[error("malformed prompt chain: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StylePair {
    pub serialization: String,
    pub report: String,
}

impl StylePair {
    pub fn new(serialization: impl Into<String>, report: impl Into<String>) -> Self {
        StylePair { serialization: serialization.into(), report: report.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptMessage {
    pub role: Role,
    pub content: String,
}

/// How user turns are phrased.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptStyle {
    /// System message plus the instruction line before every serialization.
    #[default]
    Template,
    /// User turns are `<serialization>:`. With no examples the chain is a
    /// single user turn and carries no system message.
    Bare,
}

impl PromptStyle {
    pub fn user_content(self, serialization: &str) -> String {
        match self {
            PromptStyle::Template => format!("{INSTRUCTION}\n{serialization}"),
            PromptStyle::Bare => format!("{serialization}:"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PromptChain {
    messages: Vec<PromptMessage>,
    k: usize,
    style: PromptStyle,
}

impl PromptChain {
    pub fn messages(&self) -> &[PromptMessage] {
        &self.messages
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn style(&self) -> PromptStyle {
        self.style
    }

    pub fn last_user_content(&self) -> &str {
        &self.messages.last().expect("chains are never empty").content
    }

    /// Rebuilds a chain from wire messages, checking the structural rules.
    pub fn from_messages(messages: Vec<PromptMessage>, style: PromptStyle) -> Result<Self, PromptError> {
        let k = messages.len().saturating_sub(2) / 2;
        let chain = PromptChain { messages, k, style };
        chain.check()?;
        Ok(chain)
    }

    /// Verifies message count, role order and non-empty contents.
    pub fn check(&self) -> Result<(), PromptError> {
        let bad = |m: String| Err(PromptError::Malformed(m));
        let msgs = &self.messages;
        if let Some(i) = msgs.iter().position(|m| m.content.is_empty()) {
            return bad(format!("message {i} is empty"));
        }
        if self.style == PromptStyle::Bare && self.k == 0 {
            return match msgs.as_slice() {
                [only] if only.role == Role::User => Ok(()),
                _ => bad("zero-shot bare chain must be a single user message".into()),
            };
        }
        if msgs.len() != 2 + 2 * self.k {
            return bad(format!("{} messages for k = {}", msgs.len(), self.k));
        }
        if msgs[0].role != Role::System {
            return bad("first message is not a system message".into());
        }
        for (i, m) in msgs.iter().enumerate().skip(1) {
            let expected = if i % 2 == 1 { Role::User } else { Role::Assistant };
            if m.role != expected {
                return bad(format!("message {i} has role {:?}, expected {expected:?}", m.role));
            }
        }
        Ok(())
    }
}

/// Builds the K-shot chain in the default template style.
pub fn build_prompt(examples: &[StylePair], eval_serialization: &str) -> Result<PromptChain, PromptError> {
    build_prompt_styled(examples, eval_serialization, PromptStyle::Template)
}

pub fn build_prompt_styled(
    examples: &[StylePair],
    eval_serialization: &str,
    style: PromptStyle,
) -> Result<PromptChain, PromptError> {
    if eval_serialization.is_empty() {
        return Err(PromptError::EmptyEvalSerialization);
    }
    for (index, ex) in examples.iter().enumerate() {
        if ex.serialization.is_empty() {
            return Err(PromptError::EmptyExampleField { index, field: "serialization" });
        }
        if ex.report.is_empty() {
            return Err(PromptError::EmptyExampleField { index, field: "report" });
        }
    }
    let mut messages = Vec::with_capacity(2 + 2 * examples.len());
    if !(style == PromptStyle::Bare && examples.is_empty()) {
        messages.push(PromptMessage { role: Role::System, content: SYSTEM_PROMPT.to_string() });
    }
    for ex in examples {
        messages.push(PromptMessage { role: Role::User, content: style.user_content(&ex.serialization) });
        messages.push(PromptMessage { role: Role::Assistant, content: ex.report.clone() });
    }
    messages.push(PromptMessage { role: Role::User, content: style.user_content(eval_serialization) });
    Ok(PromptChain { messages, k: examples.len(), style })
}

/// Draws `k` distinct examples uniformly without replacement. The same seed
/// always yields the same selection in the same order.
pub fn select_examples(pool: &[StylePair], k: usize, seed: u64) -> Result<Vec<StylePair>, PromptError> {
    if k > pool.len() {
        return Err(PromptError::PoolTooSmall { k, pool: pool.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(index::sample(&mut rng, pool.len(), k).into_iter().map(|i| pool[i].clone()).collect())
}
