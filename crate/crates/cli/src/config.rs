//! The `evaluate` config file. Every problem is collected before reporting
//! so a bad file can be fixed in one pass.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{Map, Value};
use structeval::corpus::{AttributeSource, AttributeSpec};
use structeval::embed::EmbeddingConfig;
use structeval::metrics::{DependencyFunction, KnnConfig, MetricConfig};
use structeval::KeyPairPattern;

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportOptions {
    #[serde(default)]
    pub dataset: Option<String>,
    #[serde(default)]
    pub method: Option<String>,
    #[serde(default)]
    pub epsilon: Option<f64>,
    /// Record the wall-clock time in the report.
    #[serde(default)]
    pub timestamp: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfigFile {
    pub grammar: Option<PathBuf>,
    pub metrics: MetricConfig,
    pub report: ReportOptions,
}

#[derive(Debug)]
pub struct ConfigErrors(pub Vec<String>);

impl std::fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} problem(s) in config:", self.0.len())?;
        for v in &self.0 {
            write!(f, "\n  - {v}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ConfigErrors {}

const KEYS: &[&str] = &[
    "grammar",
    "key_node_pairs",
    "attributes",
    "knn",
    "embedding",
    "dependency_function",
    "ttr",
    "report",
];

fn field<T: DeserializeOwned>(obj: &Map<String, Value>, key: &str, errors: &mut Vec<String>) -> Option<T> {
    let v = obj.get(key)?;
    match serde_json::from_value(v.clone()) {
        Ok(t) => Some(t),
        Err(e) => {
            errors.push(format!("{key}: {e}"));
            None
        }
    }
}

fn list<T: DeserializeOwned>(obj: &Map<String, Value>, key: &str, errors: &mut Vec<String>) -> Vec<T> {
    let Some(v) = obj.get(key) else { return Vec::new() };
    let Some(items) = v.as_array() else {
        errors.push(format!("{key}: expected an array"));
        return Vec::new();
    };
    items
        .iter()
        .enumerate()
        .filter_map(|(i, item)| match serde_json::from_value(item.clone()) {
            Ok(t) => Some(t),
            Err(e) => {
                errors.push(format!("{key}[{i}]: {e}"));
                None
            }
        })
        .collect()
}

/// Parse config text. Relative paths are resolved against `base`.
pub fn parse_config(text: &str, base: &Path) -> Result<EvalConfigFile, ConfigErrors> {
    let value: Value = serde_json::from_str(text).map_err(|e| ConfigErrors(vec![format!("not valid JSON: {e}")]))?;
    let Value::Object(obj) = value else {
        return Err(ConfigErrors(vec!["top level must be a JSON object".into()]));
    };
    let mut errors = Vec::new();
    for key in obj.keys() {
        if !KEYS.contains(&key.as_str()) {
            errors.push(format!("unknown key `{key}` (expected one of: {})", KEYS.join(", ")));
        }
    }
    let grammar: Option<PathBuf> = field(&obj, "grammar", &mut errors);
    let key_pair_patterns: Vec<KeyPairPattern> = list(&obj, "key_node_pairs", &mut errors);
    let attribute_specs: Vec<AttributeSpec> = list(&obj, "attributes", &mut errors);
    let knn: Option<KnnConfig> = match obj.get("knn") {
        None => Some(KnnConfig::default()),
        Some(Value::Null) => None,
        Some(_) => field(&obj, "knn", &mut errors),
    };
    if let Some(k) = &knn {
        if k.k == 0 {
            errors.push("knn.k must be at least 1".into());
        }
    }
    let embedding: EmbeddingConfig = field(&obj, "embedding", &mut errors).unwrap_or_default();
    if obj.contains_key("embedding") {
        if let Err(e) = embedding.validate() {
            errors.push(format!("embedding: {e}"));
        }
    }
    let dependency: DependencyFunction = field(&obj, "dependency_function", &mut errors).unwrap_or_default();
    let ttr: bool = field(&obj, "ttr", &mut errors).unwrap_or(true);
    let report: ReportOptions = field(&obj, "report", &mut errors).unwrap_or_default();
    if !errors.is_empty() {
        return Err(ConfigErrors(errors));
    }

    let resolve = |p: PathBuf| if p.is_relative() { base.join(p) } else { p };
    let attribute_specs = attribute_specs
        .into_iter()
        .map(|mut s| {
            if let AttributeSource::Sidecar { real, synth, .. } = &mut s.source {
                *real = resolve(real.clone());
                *synth = resolve(synth.clone());
            }
            s
        })
        .collect();
    let dependency = match dependency {
        DependencyFunction::Sidecar { real, synth } => DependencyFunction::Sidecar {
            real: resolve(real),
            synth: resolve(synth),
        },
        other => other,
    };
    let embedding = EmbeddingConfig {
        cache_dir: embedding.cache_dir.clone().map(resolve),
        ..embedding
    };
    Ok(EvalConfigFile {
        grammar: grammar.map(resolve),
        metrics: MetricConfig {
            key_pair_patterns,
            attribute_specs,
            knn,
            embedding,
            dependency,
            ttr,
        },
        report,
    })
}
