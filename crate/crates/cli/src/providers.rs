use std::sync::atomic::{AtomicUsize, Ordering};

use anyhow::{anyhow, bail, Context, Result};
use studykit::qagen::{GenerationParams, GenerationProvider, HttpGenerationProvider, MockGenerationProvider};
use studykit::topics::{EmbeddingProvider, HttpEmbeddingProvider, MockEmbeddingProvider};
use studykit::ProviderError;

use crate::config::Providers;
use crate::ProviderArgs;

/// Provider settings after merging flags, environment and config file.
#[derive(Debug, Clone, Default)]
pub struct Resolved {
    pub mock_seed: Option<u64>,
    pub embed_url: Option<String>,
    pub embed_model: Option<String>,
    pub gen_url: Option<String>,
    pub gen_model: Option<String>,
    api_key: Option<String>,
}

fn parse_mock(spec: &str) -> Result<u64> {
    let seed = spec
        .strip_prefix("mock:")
        .ok_or_else(|| anyhow!("unknown provider '{spec}': expected mock:SEED"))?;
    seed.parse()
        .with_context(|| format!("mock seed '{seed}' is not an integer"))
}

impl Resolved {
    pub fn new(args: &ProviderArgs, file: &Providers) -> Result<Self> {
        let mock_seed = args
            .provider
            .as_ref()
            .or(file.provider.as_ref())
            .map(|s| parse_mock(s))
            .transpose()?;
        let pick = |a: &Option<String>, f: &Option<String>| a.clone().or_else(|| f.clone());
        Ok(Self {
            mock_seed,
            embed_url: pick(&args.embed_url, &file.embed_url),
            embed_model: pick(&args.embed_model, &file.embed_model),
            gen_url: pick(&args.gen_url, &file.gen_url),
            gen_model: pick(&args.gen_model, &file.gen_model),
            api_key: args.gen_api_key.clone(),
        })
    }

    /// Everything but the key, for the resolved-config log line.
    pub fn describe(&self) -> String {
        format!(
            "provider={} embed_url={} embed_model={} gen_url={} gen_model={} api_key={}",
            self.mock_seed.map_or("-".into(), |s| format!("mock:{s}")),
            self.embed_url.as_deref().unwrap_or("-"),
            self.embed_model.as_deref().unwrap_or("-"),
            self.gen_url.as_deref().unwrap_or("-"),
            self.gen_model.as_deref().unwrap_or("-"),
            if self.api_key.is_some() { "set" } else { "unset" },
        )
    }

    pub fn embedder(&self) -> Result<Box<dyn EmbeddingProvider>> {
        if let Some(seed) = self.mock_seed {
            return Ok(Box::new(MockEmbeddingProvider::new(seed)));
        }
        match (&self.embed_url, &self.embed_model) {
            (Some(url), Some(model)) => Ok(Box::new(HttpEmbeddingProvider::new(url, model))),
            _ => bail!("no embedding provider: pass --provider mock:SEED or set --embed-url and --embed-model"),
        }
    }

    pub fn generator(&self) -> Result<Counting> {
        let inner: Box<dyn GenerationProvider> = if let Some(seed) = self.mock_seed {
            Box::new(MockGenerationProvider::new(seed))
        } else {
            match (&self.gen_url, &self.gen_model) {
                (Some(url), Some(model)) => Box::new(HttpGenerationProvider::new(url, model, self.api_key.clone())),
                _ => bail!("no generation provider: pass --provider mock:SEED or set --gen-url and --gen-model"),
            }
        };
        Ok(Counting {
            inner,
            calls: AtomicUsize::new(0),
        })
    }
}

/// Counts calls passed through to the wrapped provider.
pub struct Counting {
    inner: Box<dyn GenerationProvider>,
    calls: AtomicUsize,
}

impl Counting {
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl GenerationProvider for Counting {
    fn model_id(&self) -> &str {
        self.inner.model_id()
    }

    fn complete(&self, prompt: &str, params: &GenerationParams) -> Result<String, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.complete(prompt, params)
    }
}
