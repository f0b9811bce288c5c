//! Append-only vector cache, one file per (provider, model, dimension).
//!
//! Layout (little endian):
//!
//! ```text
//! header:  "SEVCACHE" | version u32 | dimension u32 | label_len u32 | label | sha256(header)[..8]
//! record:  digest [32] | dimension × f64 | sha256(digest ‖ values)[..4]
//! ```
//!
//! A torn final record (crash mid-append) is dropped on open; any other
//! checksum failure is reported as corruption.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::EmbedError;

const MAGIC: &[u8; 8] = b"SEVCACHE";
const VERSION: u32 = 1;

pub struct EmbeddingCache {
    path: PathBuf,
    dimension: usize,
    entries: HashMap<[u8; 32], Vec<f64>>,
    file: File,
}

fn header_bytes(label: &str, dimension: usize) -> Vec<u8> {
    let mut h = Vec::new();
    h.extend_from_slice(MAGIC);
    h.extend_from_slice(&VERSION.to_le_bytes());
    h.extend_from_slice(&(dimension as u32).to_le_bytes());
    h.extend_from_slice(&(label.len() as u32).to_le_bytes());
    h.extend_from_slice(label.as_bytes());
    let sum = Sha256::digest(&h);
    h.extend_from_slice(&sum[..8]);
    h
}

fn record_checksum(digest: &[u8], values: &[u8]) -> [u8; 4] {
    let mut hasher = Sha256::new();
    hasher.update(digest);
    hasher.update(values);
    hasher.finalize()[..4].try_into().unwrap()
}

fn sanitize(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
        .collect()
}

impl EmbeddingCache {
    pub fn open(dir: &Path, provider: &str, model: &str, dimension: usize) -> Result<Self, EmbedError> {
        fs::create_dir_all(dir)?;
        let path = dir.join(format!("{}-{}-d{dimension}.vecache", sanitize(provider), sanitize(model)));
        let label = format!("{provider}/{model}");
        let header = header_bytes(&label, dimension);
        let corrupt = |reason: &str| EmbedError::CacheCorrupt {
            path: path.clone(),
            reason: reason.to_string(),
        };

        let mut entries = HashMap::new();
        if path.exists() {
            let mut raw = Vec::new();
            File::open(&path)?.read_to_end(&mut raw)?;
            if raw.len() < header.len() || raw[..header.len()] != header[..] {
                return Err(corrupt("header mismatch"));
            }
            let record_len = 32 + dimension * 8 + 4;
            let body = &raw[header.len()..];
            let whole = body.len() / record_len;
            for rec in body.chunks_exact(record_len) {
                let (digest, rest) = rec.split_at(32);
                let (values, sum) = rest.split_at(dimension * 8);
                if record_checksum(digest, values) != sum {
                    return Err(corrupt("record checksum mismatch"));
                }
                let vector: Vec<f64> = values
                    .chunks_exact(8)
                    .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                    .collect();
                entries.insert(digest.try_into().unwrap(), vector);
            }
            if body.len() % record_len != 0 {
                log::warn!("dropping torn record at end of {}", path.display());
                let keep = (header.len() + whole * record_len) as u64;
                OpenOptions::new().write(true).open(&path)?.set_len(keep)?;
            }
        } else {
            let mut f = File::create(&path)?;
            f.write_all(&header)?;
            f.sync_all()?;
        }
        let file = OpenOptions::new().append(true).open(&path)?;
        Ok(EmbeddingCache {
            path,
            dimension,
            entries,
            file,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, digest: &[u8; 32]) -> Option<&[f64]> {
        self.entries.get(digest).map(Vec::as_slice)
    }

    pub fn insert(&mut self, digest: [u8; 32], vector: &[f64]) -> Result<(), EmbedError> {
        if vector.len() != self.dimension {
            return Err(EmbedError::DimensionMismatch {
                expected: self.dimension,
                actual: vector.len(),
            });
        }
        if self.entries.contains_key(&digest) {
            return Ok(());
        }
        let values: Vec<u8> = vector.iter().flat_map(|x| x.to_le_bytes()).collect();
        let mut rec = Vec::with_capacity(32 + values.len() + 4);
        rec.extend_from_slice(&digest);
        rec.extend_from_slice(&values);
        rec.extend_from_slice(&record_checksum(&digest, &values));
        self.file.write_all(&rec)?;
        self.file.flush()?;
        self.entries.insert(digest, vector.to_vec());
        Ok(())
    }
}
