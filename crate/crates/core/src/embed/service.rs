//! Blocking client for the embedding service.
//!
//! The service exposes `GET /health`, `POST /tokenize` and `POST /embed` with
//! JSON bodies. Requests are chunked into batches of at most `batch_size`
//! sequences and reassembled in request order.

use serde::{Deserialize, Serialize};

use super::EmbeddingVector;
use crate::tokenizer::TokenSequence;

pub const DEFAULT_BATCH_SIZE: usize = 64;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("request to {url} failed: {message}")]
    Transport { url: String, message: String },
    #[error("{url} returned HTTP {status}: {message}")]
    Status {
        url: String,
        status: u16,
        message: String,
    },
    #[error("could not decode response from {url}: {message}")]
    Decode { url: String, message: String },
    #[error("embedding {index} has dim {found}, expected {expected}")]
    DimMismatch {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("sent {sent} items but received {received}")]
    CountMismatch { sent: usize, received: usize },
    #[error("batch size must be positive")]
    ZeroBatch,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    #[serde(default)]
    pub models: Vec<String>,
}

#[derive(Serialize)]
struct TokenizeRequest<'a> {
    model: &'a str,
    texts: &'a [String],
}

#[derive(Deserialize)]
struct TokenizeResponse {
    token_ids: Vec<Vec<u32>>,
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    model: &'a str,
    token_ids: Vec<&'a [u32]>,
}

#[derive(Deserialize)]
struct EmbedResponse {
    dim: usize,
    embeddings: Vec<Vec<f32>>,
}

#[derive(Debug, Clone)]
pub struct ServiceClient {
    endpoint: String,
    model: String,
    batch_size: usize,
    #[cfg(feature = "service")]
    agent: ureq::Agent,
}

impl ServiceClient {
    pub fn new(endpoint: &str, model: &str, batch_size: usize) -> Result<Self, ServiceError> {
        if batch_size == 0 {
            return Err(ServiceError::ZeroBatch);
        }
        Ok(Self {
            endpoint: endpoint.trim_end_matches('/').to_string(),
            model: model.to_string(),
            batch_size,
            #[cfg(feature = "service")]
            agent: ureq::Agent::config_builder()
                .http_status_as_error(false)
                .build()
                .into(),
        })
    }

    fn url(&self, route: &str) -> String {
        format!("{}{route}", self.endpoint)
    }

    /// GET when `body` is `None`, otherwise POST with a JSON body.
    #[cfg(feature = "service")]
    fn call<T: for<'de> Deserialize<'de>, B: Serialize>(&self, url: &str, body: Option<&B>) -> Result<T, ServiceError> {
        let result = match body {
            Some(b) => self.agent.post(url).send_json(b),
            None => self.agent.get(url).call(),
        };
        Self::read(url, result)
    }

    #[cfg(not(feature = "service"))]
    fn call<T: for<'de> Deserialize<'de>, B: Serialize>(&self, url: &str, _body: Option<&B>) -> Result<T, ServiceError> {
        Err(ServiceError::Transport {
            url: url.to_string(),
            message: "built without HTTP support (enable the `service` feature)".into(),
        })
    }

    #[cfg(feature = "service")]
    fn read<T: for<'de> Deserialize<'de>>(
        url: &str,
        result: Result<ureq::http::Response<ureq::Body>, ureq::Error>,
    ) -> Result<T, ServiceError> {
        let mut resp = result.map_err(|e| ServiceError::Transport {
            url: url.to_string(),
            message: e.to_string(),
        })?;
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| ServiceError::Transport {
                url: url.to_string(),
                message: e.to_string(),
            })?;
        if !(200..300).contains(&status) {
            return Err(ServiceError::Status {
                url: url.to_string(),
                status,
                message: server_message(&body),
            });
        }
        serde_json::from_str(&body).map_err(|e| ServiceError::Decode {
            url: url.to_string(),
            message: e.to_string(),
        })
    }

    pub fn health(&self) -> Result<Health, ServiceError> {
        let url = self.url("/health");
        self.call(&url, None::<&()>)
    }

    /// Tokenizes with the model's own tokenizer, framing included.
    pub fn tokenize(&self, texts: &[String]) -> Result<Vec<TokenSequence>, ServiceError> {
        let url = self.url("/tokenize");
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(self.batch_size) {
            let req = TokenizeRequest {
                model: &self.model,
                texts: chunk,
            };
            let resp: TokenizeResponse = self.call(&url, Some(&req))?;
            if resp.token_ids.len() != chunk.len() {
                return Err(ServiceError::CountMismatch {
                    sent: chunk.len(),
                    received: resp.token_ids.len(),
                });
            }
            out.extend(resp.token_ids.into_iter().map(TokenSequence));
        }
        Ok(out)
    }

    /// One embedding per sequence, in order. An empty input makes no request.
    pub fn fetch_embeddings(&self, sequences: &[TokenSequence]) -> Result<Vec<EmbeddingVector>, ServiceError> {
        let url = self.url("/embed");
        let mut out: Vec<EmbeddingVector> = Vec::with_capacity(sequences.len());
        let mut expected_dim: Option<usize> = None;
        for chunk in sequences.chunks(self.batch_size) {
            let req = EmbedRequest {
                model: &self.model,
                token_ids: chunk.iter().map(TokenSequence::ids).collect(),
            };
            let resp: EmbedResponse = self.call(&url, Some(&req))?;
            if resp.embeddings.len() != chunk.len() {
                return Err(ServiceError::CountMismatch {
                    sent: chunk.len(),
                    received: resp.embeddings.len(),
                });
            }
            let dim = *expected_dim.get_or_insert(resp.dim);
            for v in resp.embeddings {
                let index = out.len();
                if v.len() != dim || resp.dim != dim {
                    return Err(ServiceError::DimMismatch {
                        index,
                        expected: dim,
                        found: if v.len() != dim { v.len() } else { resp.dim },
                    });
                }
                out.push(EmbeddingVector(v));
            }
        }
        Ok(out)
    }
}

/// Pulls `error`/`detail`/`message` out of a JSON error body, falling back
/// to the raw text.
#[cfg_attr(not(feature = "service"), allow(dead_code))]
fn server_message(body: &str) -> String {
    serde_json::from_str::<serde_json::Value>(body)
        .ok()
        .and_then(|v| {
            ["error", "detail", "message"]
                .iter()
                .find_map(|k| v.get(*k).map(|m| m.as_str().map_or_else(|| m.to_string(), str::to_string)))
        })
        .unwrap_or_else(|| body.trim().to_string())
}
