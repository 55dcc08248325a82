//! Model clients.
//!
//! Agents talk to models through [`LanguageModel`]: a single rendered prompt
//! in, completion text out. Two backends are provided: [`HttpModel`] for
//! chat-completions endpoints and [`ScriptedModel`] for deterministic offline
//! runs and tests.

mod http;
mod scripted;

use std::time::Duration;

use thiserror::Error;

pub use http::{BackoffPolicy, HttpModel, ModelEndpointConfig, API_KEY_ENV};
pub use scripted::{Matcher, ScriptRule, ScriptedModel};

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("model returned an empty completion")]
    EmptyCompletion,
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("request rejected with status {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    pub latency: Duration,
    /// 1-based attempt that produced the text.
    pub attempt: u32,
}

pub trait LanguageModel: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<Completion, LlmError>;

    /// Identifier recorded in evaluation fingerprints.
    fn name(&self) -> &str;
}

impl<M: LanguageModel + ?Sized> LanguageModel for std::sync::Arc<M> {
    fn complete(&self, prompt: &str) -> Result<Completion, LlmError> {
        (**self).complete(prompt)
    }

    fn name(&self) -> &str {
        (**self).name()
    }
}

/// Wraps a closure as a model; handy for tests and adapters.
pub struct FnModel<F> {
    name: String,
    f: F,
}

impl<F> FnModel<F>
where
    F: Fn(&str) -> String + Send + Sync,
{
    pub fn new(name: impl Into<String>, f: F) -> Self {
        Self { name: name.into(), f }
    }
}

impl<F> LanguageModel for FnModel<F>
where
    F: Fn(&str) -> String + Send + Sync,
{
    fn complete(&self, prompt: &str) -> Result<Completion, LlmError> {
        if prompt.is_empty() {
            return Err(LlmError::EmptyPrompt);
        }
        let text = (self.f)(prompt);
        if text.trim().is_empty() {
            return Err(LlmError::EmptyCompletion);
        }
        Ok(Completion {
            text,
            latency: Duration::ZERO,
            attempt: 1,
        })
    }

    fn name(&self) -> &str {
        &self.name
    }
}
