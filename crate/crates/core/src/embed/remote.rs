//! Client for OpenAI-style embedding endpoints:
//! `POST {"model", "input": [..]}` → `{"data": [{"embedding": [..]}, ..]}`.

use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{EmbedError, EmbeddingConfig};

/// Bearer token for the remote provider.
pub const TOKEN_ENV: &str = "STRUCTEVAL_EMBED_TOKEN";

#[derive(Serialize)]
struct Request<'a> {
    model: &'a str,
    input: &'a [&'a str],
}

#[derive(Deserialize)]
struct Response {
    data: Vec<Item>,
}

#[derive(Deserialize)]
struct Item {
    embedding: Vec<f64>,
}

fn retryable(status: Option<u16>) -> bool {
    match status {
        None => true,
        Some(s) => s == 429 || s >= 500,
    }
}

fn post_batch(agent: &ureq::Agent, cfg: &EmbeddingConfig, batch: &[&str]) -> Result<Vec<Vec<f64>>, EmbedError> {
    let endpoint = cfg.endpoint.as_deref().expect("validated");
    let body = Request {
        model: cfg.model_name(),
        input: batch,
    };
    let mut req = agent.post(endpoint);
    if let Ok(token) = std::env::var(TOKEN_ENV) {
        req = req.header("Authorization", &format!("Bearer {token}"));
    }
    let mut resp = req.send_json(&body).map_err(|e| match e {
        ureq::Error::StatusCode(code) => EmbedError::Remote {
            status: Some(code),
            message: format!("HTTP {code}"),
        },
        other => EmbedError::Remote {
            status: None,
            message: other.to_string(),
        },
    })?;
    let parsed: Response = resp.body_mut().read_json().map_err(|e| EmbedError::Remote {
        status: Some(resp.status().as_u16()),
        message: format!("malformed response: {e}"),
    })?;
    if parsed.data.len() != batch.len() {
        return Err(EmbedError::Remote {
            status: Some(resp.status().as_u16()),
            message: format!("expected {} embeddings, got {}", batch.len(), parsed.data.len()),
        });
    }
    parsed
        .data
        .into_iter()
        .map(|item| {
            if item.embedding.len() != cfg.dimension {
                Err(EmbedError::DimensionMismatch {
                    expected: cfg.dimension,
                    actual: item.embedding.len(),
                })
            } else if item.embedding.iter().any(|x| !x.is_finite()) {
                Err(EmbedError::Remote {
                    status: None,
                    message: "non-finite embedding value".into(),
                })
            } else {
                Ok(item.embedding)
            }
        })
        .collect()
}

pub(super) fn embed_remote(cfg: &EmbeddingConfig, texts: &[&str]) -> Result<Vec<Vec<f64>>, EmbedError> {
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_secs(60)))
        .build()
        .into();
    let mut out = Vec::with_capacity(texts.len());
    for batch in texts.chunks(cfg.batch_size) {
        let mut attempt = 0;
        loop {
            match post_batch(&agent, cfg, batch) {
                Ok(vectors) => {
                    out.extend(vectors);
                    break;
                }
                Err(EmbedError::Remote { status, message }) if retryable(status) && attempt < cfg.max_retries => {
                    log::warn!("embedding request failed ({message}), retrying");
                    thread::sleep(Duration::from_millis(100 << attempt));
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }
    Ok(out)
}
