use std::collections::VecDeque;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::ProviderError;
use crate::http::{self, RetryPolicy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationParams {
    pub temperature: f64,
    pub max_tokens: u32,
    pub seed: Option<u64>,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            temperature: 0.2,
            max_tokens: 1024,
            seed: None,
        }
    }
}

/// A text-completion model.
pub trait GenerationProvider: Send + Sync {
    fn model_id(&self) -> &str;

    fn complete(&self, prompt: &str, params: &GenerationParams) -> Result<String, ProviderError>;
}

/// Offline stand-in that answers each prompt kind with well-formed output
/// derived from a hash of the seed and the prompt.
///
/// Answer prompts are recognised by a `REASONING:` marker, grading prompts
/// by `GRADE:`; everything else is treated as a question prompt.
#[derive(Debug)]
pub struct MockGenerationProvider {
    seed: u64,
    model_id: String,
    calls: AtomicUsize,
}

impl MockGenerationProvider {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            model_id: format!("mock:{seed}"),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn rng(&self, prompt: &str) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(prompt.as_bytes());
        ChaCha8Rng::from_seed(h.finalize().into())
    }
}

fn excerpt(prompt: &str, marker: &str, words: usize) -> String {
    let tail = prompt.find(marker).map_or(prompt, |i| &prompt[i + marker.len()..]);
    tail.split_whitespace().take(words).collect::<Vec<_>>().join(" ")
}

impl GenerationProvider for MockGenerationProvider {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn complete(&self, prompt: &str, _params: &GenerationParams) -> Result<String, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let mut rng = self.rng(prompt);
        if prompt.contains("REASONING:") {
            let evidence = excerpt(prompt, "DOCUMENT:", 12);
            let question = excerpt(prompt, "QUESTION:", 8);
            return Ok(format!(
                "REASONING: The document states: \"{evidence}\". This addresses {question}\nANSWER: {evidence}"
            ));
        }
        if prompt.contains("GRADE:") {
            let grade: f64 = rng.random_range(0..=100) as f64 / 100.0;
            return Ok(format!("FEEDBACK: mock assessment.\nGRADE: {grade:.2}"));
        }
        let topic = excerpt(prompt, "DOCUMENT:", 6);
        let extra = rng.random_range(0..=3usize);
        let levels: Vec<&str> = ["Remember", "Understand", "Apply"]
            .into_iter()
            .chain((0..extra).map(|_| ["Remember", "Understand", "Apply"][rng.random_range(0..3usize)]))
            .collect();
        let items: Vec<serde_json::Value> = levels
            .iter()
            .enumerate()
            .map(|(i, level)| {
                let stem = match *level {
                    "Remember" => "What is stated about",
                    "Understand" => "Explain in your own words",
                    _ => "Apply the idea of",
                };
                serde_json::json!({
                    "level": level,
                    "question": format!("{stem} \"{topic}\" (item {})?", i + 1),
                })
            })
            .collect();
        let body = serde_json::to_string_pretty(&items).expect("json values serialize");
        Ok(format!("Here are the questions.\n```json\n{body}\n```\n"))
    }
}

/// Replays canned responses in order and records every prompt. Once the
/// script runs out, every call fails with a fatal error.
#[derive(Debug, Default)]
pub struct ScriptedProvider {
    responses: Mutex<VecDeque<Result<String, ProviderError>>>,
    prompts: Mutex<Vec<String>>,
}

impl ScriptedProvider {
    pub fn new<I: IntoIterator<Item = Result<String, ProviderError>>>(responses: I) -> Self {
        Self {
            responses: Mutex::new(responses.into_iter().collect()),
            prompts: Mutex::new(Vec::new()),
        }
    }

    pub fn ok<I: IntoIterator<Item = S>, S: Into<String>>(responses: I) -> Self {
        Self::new(responses.into_iter().map(|s| Ok(s.into())))
    }

    pub fn prompts(&self) -> Vec<String> {
        self.prompts.lock().expect("prompt log poisoned").clone()
    }
}

impl GenerationProvider for ScriptedProvider {
    fn model_id(&self) -> &str {
        "scripted"
    }

    fn complete(&self, prompt: &str, _params: &GenerationParams) -> Result<String, ProviderError> {
        self.prompts
            .lock()
            .expect("prompt log poisoned")
            .push(prompt.to_string());
        self.responses
            .lock()
            .expect("script poisoned")
            .pop_front()
            .unwrap_or_else(|| Err(ProviderError::Fatal("script exhausted".into())))
    }
}

#[derive(Serialize)]
struct CompletionRequest<'a> {
    model: &'a str,
    prompt: &'a str,
    temperature: f64,
    max_tokens: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

/// Pulls the generated text out of the common completion response shapes:
/// `{text}`, `{choices: [{text}]}` and `{choices: [{message: {content}}]}`.
fn completion_text(v: &serde_json::Value) -> Option<String> {
    if let Some(t) = v.get("text").and_then(|t| t.as_str()) {
        return Some(t.to_string());
    }
    let choice = v.get("choices")?.get(0)?;
    choice
        .get("text")
        .or_else(|| choice.get("message").and_then(|m| m.get("content")))
        .and_then(|t| t.as_str())
        .map(str::to_string)
}

/// Client for a completion endpoint accepting
/// `{model, prompt, temperature, max_tokens, seed?}`.
#[derive(Debug, Clone)]
pub struct HttpGenerationProvider {
    url: String,
    model: String,
    api_key: Option<String>,
    retry: RetryPolicy,
    client: reqwest::blocking::Client,
}

impl HttpGenerationProvider {
    pub fn new(url: impl Into<String>, model: impl Into<String>, api_key: Option<String>) -> Self {
        Self {
            url: url.into(),
            model: model.into(),
            api_key,
            retry: RetryPolicy::default(),
            client: http::client(Duration::from_secs(300)),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }
}

impl GenerationProvider for HttpGenerationProvider {
    fn model_id(&self) -> &str {
        &self.model
    }

    fn complete(&self, prompt: &str, params: &GenerationParams) -> Result<String, ProviderError> {
        let body = CompletionRequest {
            model: &self.model,
            prompt,
            temperature: params.temperature,
            max_tokens: params.max_tokens,
            seed: params.seed,
        };
        let resp: serde_json::Value = self
            .retry
            .run(|| http::post_json(&self.client, &self.url, self.api_key.as_deref(), &body))?;
        completion_text(&resp).ok_or_else(|| ProviderError::Malformed("response carries no completion text".into()))
    }
}
