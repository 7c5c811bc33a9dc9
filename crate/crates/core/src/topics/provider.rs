use std::collections::HashMap;
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::ProviderError;
use crate::http::{self, RetryPolicy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub model_id: String,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>, model_id: impl Into<String>) -> Self {
        Self {
            values,
            model_id: model_id.into(),
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Turns texts into vectors. Identical text must map to the identical
/// vector within one run.
pub trait EmbeddingProvider: Send + Sync {
    fn model_id(&self) -> &str;

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError>;
}

/// Deterministic offline embeddings: each text seeds a ChaCha stream through
/// SHA-256 and becomes a unit vector of Gaussian draws.
#[derive(Debug, Clone)]
pub struct MockEmbeddingProvider {
    seed: u64,
    dim: usize,
    model_id: String,
}

impl MockEmbeddingProvider {
    pub const DEFAULT_DIM: usize = 64;

    pub fn new(seed: u64) -> Self {
        Self::with_dim(seed, Self::DEFAULT_DIM)
    }

    pub fn with_dim(seed: u64, dim: usize) -> Self {
        Self {
            seed,
            dim,
            model_id: format!("mock:{seed}"),
        }
    }

    pub fn vector(&self, text: &str) -> Vec<f64> {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(text.as_bytes());
        let mut rng = ChaCha8Rng::from_seed(h.finalize().into());
        let raw: Vec<f64> = (0..self.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        raw.into_iter().map(|v| v / norm).collect()
    }
}

impl EmbeddingProvider for MockEmbeddingProvider {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        Ok(texts
            .iter()
            .map(|t| EmbeddingVector::new(self.vector(t), self.model_id.clone()))
            .collect())
    }
}

/// Fixed text-to-vector table, for tests and precomputed embeddings.
#[derive(Debug, Clone, Default)]
pub struct StaticEmbeddingProvider {
    table: HashMap<String, Vec<f64>>,
}

impl StaticEmbeddingProvider {
    pub fn new<I, S>(entries: I) -> Self
    where
        I: IntoIterator<Item = (S, Vec<f64>)>,
        S: Into<String>,
    {
        Self {
            table: entries.into_iter().map(|(k, v)| (k.into(), v)).collect(),
        }
    }
}

impl EmbeddingProvider for StaticEmbeddingProvider {
    fn model_id(&self) -> &str {
        "static"
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        texts
            .iter()
            .map(|t| {
                self.table
                    .get(t)
                    .map(|v| EmbeddingVector::new(v.clone(), "static"))
                    .ok_or_else(|| ProviderError::Fatal(format!("no static embedding for {t:?}")))
            })
            .collect()
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    model: &'a str,
    texts: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

/// Client for an embedding endpoint speaking
/// `{model, texts} -> {vectors}`.
#[derive(Debug, Clone)]
pub struct HttpEmbeddingProvider {
    url: String,
    model: String,
    batch_size: usize,
    retry: RetryPolicy,
    client: reqwest::blocking::Client,
}

impl HttpEmbeddingProvider {
    pub const MAX_BATCH: usize = 64;

    pub fn new(url: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            model: model.into(),
            batch_size: Self::MAX_BATCH,
            retry: RetryPolicy::default(),
            client: http::client(Duration::from_secs(120)),
        }
    }

    pub fn with_batch_size(mut self, batch_size: usize) -> Self {
        self.batch_size = batch_size.clamp(1, Self::MAX_BATCH);
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }
}

impl EmbeddingProvider for HttpEmbeddingProvider {
    fn model_id(&self) -> &str {
        &self.model
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        let mut out = Vec::with_capacity(texts.len());
        for batch in texts.chunks(self.batch_size) {
            let resp: EmbedResponse = self.retry.run(|| {
                http::post_json(
                    &self.client,
                    &self.url,
                    None,
                    &EmbedRequest {
                        model: &self.model,
                        texts: batch,
                    },
                )
            })?;
            if resp.vectors.len() != batch.len() {
                return Err(ProviderError::Malformed(format!(
                    "asked for {} vectors, got {}",
                    batch.len(),
                    resp.vectors.len()
                )));
            }
            out.extend(
                resp.vectors
                    .into_iter()
                    .map(|v| EmbeddingVector::new(v, self.model.clone())),
            );
        }
        Ok(out)
    }
}
