//! Text embeddings behind a pluggable provider, with an on-disk cache.

mod cache;
mod remote;

use std::path::PathBuf;
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use cache::EmbeddingCache;
pub use remote::TOKEN_ENV;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provider {
    /// Deterministic feature hashing of whitespace tokens. Offline.
    Hash,
    /// An HTTP embedding service.
    Remote,
}

impl Provider {
    pub fn as_str(&self) -> &'static str {
        match self {
            Provider::Hash => "hash",
            Provider::Remote => "remote",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub provider: Provider,
    #[serde(default = "default_dimension")]
    pub dimension: usize,
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
}

fn default_dimension() -> usize {
    256
}

fn default_batch_size() -> usize {
    64
}

fn default_retries() -> u32 {
    3
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        EmbeddingConfig {
            provider: Provider::Hash,
            dimension: default_dimension(),
            endpoint: None,
            model: None,
            cache_dir: None,
            batch_size: default_batch_size(),
            max_retries: default_retries(),
        }
    }
}

impl EmbeddingConfig {
    pub fn validate(&self) -> Result<(), EmbedError> {
        if self.dimension < 2 {
            return Err(EmbedError::Config(format!("dimension must be at least 2, got {}", self.dimension)));
        }
        if self.batch_size == 0 {
            return Err(EmbedError::Config("batch_size must be positive".into()));
        }
        if self.provider == Provider::Remote && self.endpoint.is_none() {
            return Err(EmbedError::Config("remote provider requires an endpoint".into()));
        }
        Ok(())
    }

    pub fn model_name(&self) -> &str {
        match self.provider {
            Provider::Hash => "feature-hash",
            Provider::Remote => self.model.as_deref().unwrap_or("default"),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EmbedError {
    #[error("invalid embedding config: {0}")]
    Config(String),
    #[error("embedding service failed (status {status:?}): {message}")]
    Remote { status: Option<u16>, message: String },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("embedding cache {path} is corrupt: {reason}")]
    CacheCorrupt { path: PathBuf, reason: String },
    #[error("embedding cache I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("embed_texts needs at least one text")]
    NoTexts,
}

/// One vector per input text, in input order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    /// Hex SHA-256 of each text.
    pub keys: Vec<String>,
    pub vectors: Vec<Vec<f64>>,
    pub dimension: usize,
}

impl EmbeddingMatrix {
    pub fn new(keys: Vec<String>, vectors: Vec<Vec<f64>>, dimension: usize) -> Result<Self, EmbedError> {
        for v in &vectors {
            if v.len() != dimension {
                return Err(EmbedError::DimensionMismatch {
                    expected: dimension,
                    actual: v.len(),
                });
            }
        }
        debug_assert!(vectors.iter().flatten().all(|x| x.is_finite()));
        Ok(EmbeddingMatrix { keys, vectors, dimension })
    }

    /// Matrix from raw points, keyed by index. Handy for tests and for
    /// callers that already hold vectors.
    pub fn from_points(points: Vec<Vec<f64>>) -> Result<Self, EmbedError> {
        let dimension = points.first().map_or(0, Vec::len);
        let keys = (0..points.len()).map(|i| i.to_string()).collect();
        Self::new(keys, points, dimension)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.vectors[i]
    }
}

pub fn content_digest(text: &str) -> [u8; 32] {
    Sha256::digest(text.as_bytes()).into()
}

/// Feature-hashed bag of whitespace tokens, L2-normalized. Each token adds
/// ±1 at a hash-chosen index; the empty text maps to the zero vector.
pub fn hash_embed(text: &str, dimension: usize) -> Vec<f64> {
    let mut counts = vec![0i64; dimension];
    for token in text.split_whitespace() {
        let h = Sha256::digest(token.as_bytes());
        let index = u64::from_le_bytes(h[..8].try_into().unwrap()) % dimension as u64;
        let sign = if h[8] & 1 == 0 { 1 } else { -1 };
        counts[index as usize] += sign;
    }
    let norm = counts.iter().map(|&c| (c * c) as f64).sum::<f64>().sqrt();
    if norm == 0.0 {
        return vec![0.0; dimension];
    }
    counts.iter().map(|&c| c as f64 / norm).collect()
}

/// `u·v / (‖u‖‖v‖)`, defined as 0 when either vector is zero.
pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64, EmbedError> {
    if u.len() != v.len() {
        return Err(EmbedError::DimensionMismatch {
            expected: u.len(),
            actual: v.len(),
        });
    }
    let (mut dot, mut uu, mut vv) = (0.0, 0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        dot += a * b;
        uu += a * a;
        vv += b * b;
    }
    if uu == 0.0 || vv == 0.0 {
        return Ok(0.0);
    }
    Ok((dot / (uu.sqrt() * vv.sqrt())).clamp(-1.0, 1.0))
}

/// Embeds texts with the configured provider, consulting the cache first.
/// Safe to share between threads; cache writes go through one lock.
pub struct Embedder {
    config: EmbeddingConfig,
    cache: Option<Mutex<EmbeddingCache>>,
}

impl std::fmt::Debug for Embedder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Embedder").field("config", &self.config).finish_non_exhaustive()
    }
}

impl Embedder {
    pub fn new(config: EmbeddingConfig) -> Result<Self, EmbedError> {
        config.validate()?;
        let cache = match &config.cache_dir {
            Some(dir) => Some(Mutex::new(EmbeddingCache::open(
                dir,
                config.provider.as_str(),
                config.model_name(),
                config.dimension,
            )?)),
            None => None,
        };
        Ok(Embedder { config, cache })
    }

    pub fn config(&self) -> &EmbeddingConfig {
        &self.config
    }

    pub fn embed_texts<S: AsRef<str> + Sync>(&self, texts: &[S]) -> Result<EmbeddingMatrix, EmbedError> {
        if texts.is_empty() {
            return Err(EmbedError::NoTexts);
        }
        let digests: Vec<[u8; 32]> = texts.par_iter().map(|t| content_digest(t.as_ref())).collect();
        let mut vectors: Vec<Option<Vec<f64>>> = match &self.cache {
            Some(cache) => {
                let cache = cache.lock().expect("cache lock poisoned");
                digests.iter().map(|d| cache.get(d).map(<[f64]>::to_vec)).collect()
            }
            None => vec![None; texts.len()],
        };

        let mut missing: Vec<usize> = (0..texts.len()).filter(|&i| vectors[i].is_none()).collect();
        // Identical texts in one call are computed once.
        missing.sort_by_key(|&i| digests[i]);
        missing.dedup_by_key(|i| digests[*i]);
        missing.sort_unstable();

        if !missing.is_empty() {
            let fresh: Vec<Vec<f64>> = match self.config.provider {
                Provider::Hash => missing
                    .par_iter()
                    .map(|&i| hash_embed(texts[i].as_ref(), self.config.dimension))
                    .collect(),
                Provider::Remote => {
                    let batch: Vec<&str> = missing.iter().map(|&i| texts[i].as_ref()).collect();
                    remote::embed_remote(&self.config, &batch)?
                }
            };
            if let Some(cache) = &self.cache {
                let mut cache = cache.lock().expect("cache lock poisoned");
                for (&i, v) in missing.iter().zip(&fresh) {
                    cache.insert(digests[i], v)?;
                }
            }
            let by_digest: std::collections::HashMap<[u8; 32], &Vec<f64>> =
                missing.iter().zip(&fresh).map(|(&i, v)| (digests[i], v)).collect();
            for (i, slot) in vectors.iter_mut().enumerate() {
                if slot.is_none() {
                    *slot = Some(by_digest[&digests[i]].clone());
                }
            }
        }

        let vectors: Vec<Vec<f64>> = vectors.into_iter().map(|v| v.expect("filled above")).collect();
        EmbeddingMatrix::new(digests.iter().map(hex::encode).collect(), vectors, self.config.dimension)
    }
}

/// One-shot convenience over [`Embedder`].
pub fn embed_texts<S: AsRef<str> + Sync>(config: &EmbeddingConfig, texts: &[S]) -> Result<EmbeddingMatrix, EmbedError> {
    Embedder::new(config.clone())?.embed_texts(texts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn norm(v: &[f64]) -> f64 {
        v.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    #[test]
    fn hash_embedding_is_deterministic_and_normalized() {
        let cfg = EmbeddingConfig::default();
        let m = embed_texts(&cfg, &["HUMAN: hello there", "HUMAN: hello there"]).unwrap();
        assert_eq!(m.vectors[0], m.vectors[1]);
        assert_eq!(m.vectors[0].len(), 256);
        assert!((norm(&m.vectors[0]) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn empty_text_is_zero_vector() {
        let v = hash_embed("", 256);
        assert!(v.iter().all(|&x| x == 0.0));
        assert_eq!(hash_embed("   \n", 16), vec![0.0; 16]);
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((cosine_similarity(&[1.0, 2.0], &[2.0, 4.0]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[-1.0, 0.0]).unwrap(), -1.0);
        assert_eq!(cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]).unwrap(), 0.0);
        assert!(matches!(
            cosine_similarity(&[1.0], &[1.0, 2.0]),
            Err(EmbedError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn config_validation() {
        let mut cfg = EmbeddingConfig {
            dimension: 1,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        cfg.dimension = 8;
        cfg.provider = Provider::Remote;
        assert!(cfg.validate().is_err());
        cfg.endpoint = Some("http://localhost:1".into());
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn empty_input_rejected() {
        let texts: [&str; 0] = [];
        assert!(matches!(embed_texts(&EmbeddingConfig::default(), &texts), Err(EmbedError::NoTexts)));
    }

    #[test]
    fn cached_vectors_are_bitwise_equal() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = EmbeddingConfig {
            cache_dir: Some(dir.path().to_path_buf()),
            dimension: 32,
            ..Default::default()
        };
        let texts = ["alpha beta", "gamma", "alpha beta", ""];
        let first = embed_texts(&cfg, &texts).unwrap();
        let second = embed_texts(&cfg, &texts).unwrap();
        assert_eq!(first, second);
        let cache = EmbeddingCache::open(dir.path(), "hash", "feature-hash", 32).unwrap();
        assert_eq!(cache.len(), 3);
        for (text, v) in texts.iter().zip(&first.vectors) {
            assert_eq!(cache.get(&content_digest(text)).unwrap(), v.as_slice());
        }
    }

    proptest! {
        #[test]
        fn self_cosine_is_one(v in prop::collection::vec(-100.0f64..100.0, 2..16)) {
            prop_assume!(v.iter().any(|&x| x != 0.0));
            prop_assert!((cosine_similarity(&v, &v).unwrap() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn hash_embedding_ignores_token_order(mut tokens in prop::collection::vec("[a-z]{1,5}", 1..12), seed in any::<u64>()) {
            let a = tokens.join(" ");
            let n = tokens.len();
            tokens.rotate_left((seed as usize) % n);
            let b = tokens.join("  ");
            prop_assert_eq!(hash_embed(&a, 64), hash_embed(&b, 64));
        }
    }
}
