//! Wiring of encoder, evaluator and generator: remote services when endpoints
//! are configured, in-process reference components otherwise.

use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, Context, Result};
use dialogue_cache::remote::{RemoteEncoder, RemoteEvaluator, RemoteGenerator};
use dialogue_cache::{
    CacheEngine, EchoGenerator, Encoder, EngineConfig, Evaluator, Generator, MemoizingEncoder, ReferenceEncoder,
    SimilarityProxyEvaluator, StoreMeta, VectorStore,
};
use serde::Deserialize;

/// Texts kept by the memo in front of a remote encoder.
const REMOTE_MEMO_CAPACITY: usize = 200_000;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelEndpoints {
    #[serde(default)]
    pub encoder: Option<String>,
    #[serde(default)]
    pub evaluator: Option<String>,
    #[serde(default)]
    pub generator: Option<String>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

fn default_timeout_secs() -> u64 {
    30
}

impl Default for ModelEndpoints {
    fn default() -> Self {
        ModelEndpoints {
            encoder: None,
            evaluator: None,
            generator: None,
            timeout_secs: default_timeout_secs(),
        }
    }
}

impl ModelEndpoints {
    pub fn is_hermetic(&self) -> bool {
        self.encoder.is_none() && self.evaluator.is_none() && self.generator.is_none()
    }

    fn timeout(&self) -> Duration {
        Duration::from_secs(self.timeout_secs.max(1))
    }
}

/// Settings of the in-process encoder used when no encoder endpoint is set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceSettings {
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_dim() -> usize {
    256
}

impl Default for ReferenceSettings {
    fn default() -> Self {
        ReferenceSettings {
            dim: default_dim(),
            seed: 0,
        }
    }
}

fn remote_encoder(url: &str, endpoints: &ModelEndpoints, expected_dim: Option<usize>) -> Result<Arc<dyn Encoder>> {
    let enc = match expected_dim {
        Some(dim) => RemoteEncoder::connect_expecting_dim(url, endpoints.timeout(), dim),
        None => RemoteEncoder::connect(url, endpoints.timeout()),
    }
    .with_context(|| format!("connecting to encoder at {url}"))?;
    Ok(Arc::new(MemoizingEncoder::new(enc, REMOTE_MEMO_CAPACITY)))
}

/// Encoder for a store that does not exist yet.
pub fn encoder_for_new_store(endpoints: &ModelEndpoints, reference: ReferenceSettings) -> Result<Arc<dyn Encoder>> {
    match &endpoints.encoder {
        Some(url) => remote_encoder(url, endpoints, None),
        None => Ok(Arc::new(ReferenceEncoder::new(reference.dim, reference.seed)?)),
    }
}

/// Encoder that reproduces the embeddings already in a store.
pub fn encoder_for_store(meta: &StoreMeta, endpoints: &ModelEndpoints) -> Result<Arc<dyn Encoder>> {
    let enc = match &endpoints.encoder {
        Some(url) => remote_encoder(url, endpoints, Some(meta.dim))?,
        None => Arc::new(ReferenceEncoder::from_id(&meta.encoder_id).ok_or_else(|| {
            anyhow!(
                "snapshot was built with encoder '{}', which is not built in; pass an encoder endpoint",
                meta.encoder_id
            )
        })?) as Arc<dyn Encoder>,
    };
    if enc.descriptor().id() != meta.encoder_id {
        return Err(anyhow!(
            "encoder '{}' does not match snapshot encoder '{}'",
            enc.descriptor().id(),
            meta.encoder_id
        ));
    }
    Ok(enc)
}

pub fn evaluator(encoder: &Arc<dyn Encoder>, lambda: f64, endpoints: &ModelEndpoints) -> Result<Arc<dyn Evaluator>> {
    Ok(match &endpoints.evaluator {
        Some(url) => Arc::new(
            RemoteEvaluator::connect(url, endpoints.timeout())
                .with_context(|| format!("connecting to evaluator at {url}"))?,
        ),
        None => Arc::new(SimilarityProxyEvaluator::new(encoder.clone(), lambda)?),
    })
}

pub fn generator(endpoints: &ModelEndpoints) -> Arc<dyn Generator> {
    match &endpoints.generator {
        Some(url) => Arc::new(RemoteGenerator::new(url, endpoints.timeout())),
        None => Arc::new(EchoGenerator::new()),
    }
}

/// Builds an engine over `store`. `config` supplies k and threshold; its lambda
/// must agree with the store's.
pub fn engine_for_store(
    store: Arc<VectorStore>,
    config: EngineConfig,
    endpoints: &ModelEndpoints,
) -> Result<CacheEngine> {
    let meta = store.meta().clone();
    let encoder = encoder_for_store(&meta, endpoints)?;
    let evaluator = evaluator(&encoder, meta.lambda, endpoints)?;
    Ok(CacheEngine::new(
        config,
        store,
        encoder,
        evaluator,
        generator(endpoints),
    )?)
}
