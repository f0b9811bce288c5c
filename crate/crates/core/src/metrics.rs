//! The metric suite: CFG pass rate, key-node dependency (KND), attribute
//! match (AM), k-NN precision/recall and type-token ratio.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::corpus::{
    materialize, AttributeKind, AttributeSpec, AttributeTable, Corpus, CorpusError, CorpusRole, Materialized,
};
use crate::embed::{cosine_similarity, EmbedError, Embedder, EmbeddingConfig};
use crate::grammar::{Grammar, ParseOutcome};
use crate::report::EvalReport;
use crate::stats::{coverage_fraction, knn_radii, total_variation, wasserstein2, DistanceMetric, StatsError};
use crate::tree::{match_pairs, KeyPairPattern, Tokenizer, WhitespaceTokenizer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    HigherBetter,
    LowerBetter,
}

/// A metric value, or "n/a" when the metric could not be computed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricResult {
    pub name: String,
    #[serde(with = "na_value")]
    pub value: Option<f64>,
    pub direction: Direction,
    pub support: usize,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, Value>,
}

mod na_value {
    use serde::{Deserialize, Deserializer, Serializer};

    pub const NA: &str = "n/a";

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(x) => s.serialize_f64(*x),
            None => s.serialize_str(NA),
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Number(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        match Raw::deserialize(d)? {
            Raw::Number(x) => Ok(Some(x)),
            Raw::Text(t) if t == NA => Ok(None),
            Raw::Text(t) => Err(serde::de::Error::custom(format!("expected a number or \"{NA}\", got {t:?}"))),
        }
    }
}

pub use na_value::NA;

impl MetricResult {
    pub fn new(name: impl Into<String>, value: f64, direction: Direction, support: usize) -> Self {
        MetricResult {
            name: name.into(),
            value: Some(value),
            direction,
            support,
            metadata: BTreeMap::new(),
        }
    }

    pub fn not_applicable(name: impl Into<String>, direction: Direction, reason: impl std::fmt::Display) -> Self {
        MetricResult {
            name: name.into(),
            value: None,
            direction,
            support: 0,
            metadata: BTreeMap::from([("reason".to_string(), Value::String(reason.to_string()))]),
        }
    }

    pub fn with(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.metadata.insert(key.to_string(), value.into());
        self
    }

    pub fn is_applicable(&self) -> bool {
        self.value.is_some()
    }

    /// Value as printed in tables.
    pub fn display_value(&self) -> String {
        match self.value {
            Some(v) => format!("{v:.4}"),
            None => NA.to_string(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum MetricError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("corpus has no tokens")]
    NoTokens,
    #[error("no matched pairs in the {0} corpus")]
    NoPairs(CorpusRole),
    #[error("attribute `{name}` has no values in the {role} corpus")]
    MissingAttribute { name: String, role: CorpusRole },
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KnnConfig {
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub metric: DistanceMetric,
}

fn default_k() -> usize {
    3
}

impl Default for KnnConfig {
    fn default() -> Self {
        KnnConfig {
            k: default_k(),
            metric: DistanceMetric::default(),
        }
    }
}

/// How a matched node pair is scored.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum DependencyFunction {
    /// Cosine similarity of the two nodes' content embeddings.
    #[default]
    Cosine,
    /// Precomputed scores, JSONL `{id, pair, score, pattern?}` where `pair`
    /// is the index of the pair within the sample for that pattern.
    Sidecar { real: PathBuf, synth: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricConfig {
    #[serde(default)]
    pub key_pair_patterns: Vec<KeyPairPattern>,
    #[serde(default)]
    pub attribute_specs: Vec<AttributeSpec>,
    /// `None` disables KNN precision/recall.
    #[serde(default = "default_knn")]
    pub knn: Option<KnnConfig>,
    #[serde(default)]
    pub embedding: EmbeddingConfig,
    #[serde(default)]
    pub dependency: DependencyFunction,
    #[serde(default = "default_true")]
    pub ttr: bool,
}

fn default_knn() -> Option<KnnConfig> {
    Some(KnnConfig::default())
}

fn default_true() -> bool {
    true
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            key_pair_patterns: Vec::new(),
            attribute_specs: Vec::new(),
            knn: default_knn(),
            embedding: EmbeddingConfig::default(),
            dependency: DependencyFunction::default(),
            ttr: true,
        }
    }
}

impl MetricConfig {
    /// Every problem with the config against `grammar`, not just the first.
    pub fn violations(&self, grammar: &Grammar) -> Vec<String> {
        let mut out = Vec::new();
        if let Some(knn) = &self.knn {
            if knn.k == 0 {
                out.push("knn.k must be at least 1".to_string());
            }
        }
        if let Err(e) = self.embedding.validate() {
            out.push(e.to_string());
        }
        let mut labels = HashSet::new();
        for p in &self.key_pair_patterns {
            for t in p.unknown_types(grammar) {
                out.push(format!("key pair `{}`: unknown node type `{t}`", p.label()));
            }
            if !labels.insert(p.label()) {
                out.push(format!("key pair `{}` listed twice", p.label()));
            }
        }
        let mut names = HashSet::new();
        for spec in &self.attribute_specs {
            if let Err(e) = spec.validate(grammar) {
                out.push(e.to_string());
            }
            if !names.insert(spec.name.as_str()) {
                out.push(format!("attribute `{}` listed twice", spec.name));
            }
        }
        out
    }

    /// Node types that appear in any key pair pattern.
    pub fn key_types(&self) -> BTreeSet<String> {
        self.key_pair_patterns
            .iter()
            .flat_map(|p| [p.a.clone(), p.b.clone()])
            .collect()
    }

    /// SHA-256 over the config and the grammar it is used with.
    pub fn digest(&self, grammar: &Grammar) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(self).expect("config serializes"));
        h.update(grammar.to_string().as_bytes());
        hex::encode(h.finalize())
    }
}

pub fn cfg_pass_rate(outcomes: &[ParseOutcome]) -> Result<MetricResult, MetricError> {
    if outcomes.is_empty() {
        return Err(MetricError::EmptyCorpus);
    }
    let parsed = outcomes.iter().filter(|o| o.is_parsed()).count();
    Ok(
        MetricResult::new("cfg_pr", parsed as f64 / outcomes.len() as f64, Direction::HigherBetter, outcomes.len())
            .with("parsed", parsed),
    )
}

pub fn type_token_ratio(corpus: &Corpus, tokenizer: &dyn Tokenizer) -> Result<MetricResult, MetricError> {
    if corpus.is_empty() {
        return Err(MetricError::EmptyCorpus);
    }
    let mut seen = HashSet::new();
    let mut total = 0usize;
    for s in &corpus.samples {
        for tok in tokenizer.tokenize(&s.text) {
            total += 1;
            seen.insert(tok);
        }
    }
    if total == 0 {
        return Err(MetricError::NoTokens);
    }
    Ok(MetricResult::new("ttr", seen.len() as f64 / total as f64, Direction::HigherBetter, total)
        .with("types", seen.len()))
}

/// Externally computed dependency scores for one corpus.
#[derive(Debug, Clone, Default)]
pub struct DependencyScores {
    scores: HashMap<(String, Option<String>, usize), f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScoreRecord {
    id: Value,
    pair: usize,
    score: f64,
    #[serde(default)]
    pattern: Option<String>,
}

impl DependencyScores {
    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let text = std::fs::read_to_string(path).map_err(|source| {
            if source.kind() == std::io::ErrorKind::NotFound {
                CorpusError::MissingFile(path.to_path_buf())
            } else {
                CorpusError::Io {
                    path: path.to_path_buf(),
                    source,
                }
            }
        })?;
        Self::parse_str(&text)
    }

    pub fn parse_str(text: &str) -> Result<Self, CorpusError> {
        let mut scores = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let malformed = |reason: String| CorpusError::MalformedRecord { line: i + 1, reason };
            let rec: ScoreRecord = serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
            let id = match rec.id {
                Value::String(s) => s,
                Value::Number(n) => n.to_string(),
                _ => return Err(malformed("id must be a string or number".into())),
            };
            if !rec.score.is_finite() {
                return Err(CorpusError::TypeMismatch { id });
            }
            scores.insert((id, rec.pattern, rec.pair), rec.score);
        }
        Ok(DependencyScores { scores })
    }

    /// A pattern-specific score wins over one recorded without a pattern.
    pub fn get(&self, id: &str, pattern: &str, pair: usize) -> Option<f64> {
        self.scores
            .get(&(id.to_string(), Some(pattern.to_string()), pair))
            .or_else(|| self.scores.get(&(id.to_string(), None, pair)))
            .copied()
    }
}

/// Scorer for matched node pairs.
#[derive(Clone, Copy)]
pub enum Dependency<'a> {
    Cosine(&'a Embedder),
    Scores {
        real: &'a DependencyScores,
        synth: &'a DependencyScores,
    },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PairScores {
    pub scores: Vec<f64>,
    /// Pairs where one side embedded to the zero vector (similarity 0).
    pub zero_vector_pairs: usize,
    /// Pairs with no sidecar score.
    pub unscored_pairs: usize,
}

/// Dependency score of every matched pair in every parsed sample, pooled in
/// corpus order.
pub fn pair_scores(
    materialized: &Materialized,
    role: CorpusRole,
    pattern: &KeyPairPattern,
    dependency: Dependency<'_>,
) -> Result<PairScores, MetricError> {
    let label = pattern.label();
    let mut out = PairScores::default();
    let mut texts: Vec<String> = Vec::new();
    for (id, outcome) in materialized.ids.iter().zip(&materialized.outcomes) {
        let Some(tree) = outcome.tree() else { continue };
        for (i, pair) in match_pairs(tree, pattern).into_iter().enumerate() {
            match dependency {
                Dependency::Cosine(_) => {
                    texts.push(pair.a.content());
                    texts.push(pair.b.content());
                }
                Dependency::Scores { real, synth } => {
                    let table = match role {
                        CorpusRole::Real => real,
                        CorpusRole::Synthetic => synth,
                    };
                    match table.get(id, &label, i) {
                        Some(s) => out.scores.push(s),
                        None => out.unscored_pairs += 1,
                    }
                }
            }
        }
    }
    if let Dependency::Cosine(embedder) = dependency {
        if texts.is_empty() {
            return Ok(out);
        }
        let m = embedder.embed_texts(&texts)?;
        for i in 0..texts.len() / 2 {
            let (u, v) = (m.row(2 * i), m.row(2 * i + 1));
            if u.iter().all(|&x| x == 0.0) || v.iter().all(|&x| x == 0.0) {
                out.zero_vector_pairs += 1;
            }
            out.scores.push(cosine_similarity(u, v)?);
        }
    }
    Ok(out)
}

pub fn knd_name(pattern: &KeyPairPattern) -> String {
    format!("knd[{}]", pattern.label())
}

pub fn am_name(attribute: &str) -> String {
    format!("am[{attribute}]")
}

/// W2 distance between the pooled pair-score distributions of both corpora.
pub fn key_node_dependency(
    real: &Materialized,
    synth: &Materialized,
    pattern: &KeyPairPattern,
    dependency: Dependency<'_>,
) -> Result<MetricResult, MetricError> {
    let r = pair_scores(real, CorpusRole::Real, pattern, dependency)?;
    let s = pair_scores(synth, CorpusRole::Synthetic, pattern, dependency)?;
    if r.scores.is_empty() {
        return Err(MetricError::NoPairs(CorpusRole::Real));
    }
    if s.scores.is_empty() {
        return Err(MetricError::NoPairs(CorpusRole::Synthetic));
    }
    let value = wasserstein2(
        &crate::stats::EmpiricalDistribution::numeric(r.scores.iter().copied())?,
        &crate::stats::EmpiricalDistribution::numeric(s.scores.iter().copied())?,
    )?;
    let mut result = MetricResult::new(knd_name(pattern), value, Direction::LowerBetter, s.scores.len())
        .with("pattern", pattern.label())
        .with("real_pairs", r.scores.len());
    if r.zero_vector_pairs + s.zero_vector_pairs > 0 {
        result = result
            .with("zero_vector_pairs_real", r.zero_vector_pairs)
            .with("zero_vector_pairs_synth", s.zero_vector_pairs);
    }
    if r.unscored_pairs + s.unscored_pairs > 0 {
        result = result
            .with("unscored_pairs_real", r.unscored_pairs)
            .with("unscored_pairs_synth", s.unscored_pairs);
    }
    Ok(result)
}

/// W2 for numeric attributes, total variation for categorical ones.
pub fn attribute_match(real: &AttributeTable, synth: &AttributeTable, name: &str) -> Result<MetricResult, MetricError> {
    let missing = |role| MetricError::MissingAttribute {
        name: name.to_string(),
        role,
    };
    let rc = real.column(name).ok_or_else(|| missing(CorpusRole::Real))?;
    let sc = synth.column(name).ok_or_else(|| missing(CorpusRole::Synthetic))?;
    let rd = rc.distribution().map_err(|_| missing(CorpusRole::Real))?;
    let sd = sc.distribution().map_err(|_| missing(CorpusRole::Synthetic))?;
    let value = match rc.spec.kind {
        AttributeKind::Numeric => wasserstein2(&rd, &sd)?,
        AttributeKind::Categorical => total_variation(&rd, &sd)?,
    };
    let mut result = MetricResult::new(am_name(name), value, Direction::LowerBetter, sd.len())
        .with("attribute", name)
        .with(
            "distance",
            match rc.spec.kind {
                AttributeKind::Numeric => "wasserstein2",
                AttributeKind::Categorical => "total_variation",
            },
        )
        .with("real_support", rd.len());
    if rc.missing() + sc.missing() > 0 {
        result = result.with("missing_real", rc.missing()).with("missing_synth", sc.missing());
    }
    Ok(result)
}

/// Precision: synthetic samples inside some real k-NN ball. Recall: real
/// samples inside some synthetic k-NN ball. Whole sample texts are embedded.
pub fn knn_precision_recall(
    real: &Corpus,
    synth: &Corpus,
    knn: &KnnConfig,
    embedder: &Embedder,
) -> Result<(MetricResult, MetricResult), MetricError> {
    if real.is_empty() || synth.is_empty() {
        return Err(MetricError::EmptyCorpus);
    }
    fn texts(c: &Corpus) -> Vec<&str> {
        c.samples.iter().map(|s| s.text.as_str()).collect()
    }
    let re = embedder.embed_texts(&texts(real))?;
    let se = embedder.embed_texts(&texts(synth))?;
    let real_radii = knn_radii(&re, knn.k, knn.metric)?;
    let synth_radii = knn_radii(&se, knn.k, knn.metric)?;
    let precision = coverage_fraction(&se, &re, &real_radii, knn.metric)?;
    let recall = coverage_fraction(&re, &se, &synth_radii, knn.metric)?;
    let cfg = embedder.config();
    let annotate = |r: MetricResult| {
        r.with("k", knn.k)
            .with("distance", knn.metric.to_string())
            .with("provider", cfg.provider.as_str())
            .with("model", cfg.model_name())
            .with("dimension", cfg.dimension)
    };
    Ok((
        annotate(MetricResult::new("knn_precision", precision, Direction::HigherBetter, se.len())),
        annotate(MetricResult::new("knn_recall", recall, Direction::HigherBetter, re.len())),
    ))
}

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

/// Labels recorded in the report.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunInfo {
    pub dataset: String,
    pub method: String,
    pub epsilon: Option<f64>,
}

fn degrade(name: String, direction: Direction, r: Result<MetricResult, MetricError>) -> MetricResult {
    r.unwrap_or_else(|e| {
        log::info!("{name} not applicable: {e}");
        MetricResult::not_applicable(name, direction, e)
    })
}

/// Run the whole suite. Both corpora are parsed once; a metric that cannot
/// be computed is reported as "n/a" rather than failing the run.
pub fn evaluate(
    real: &Corpus,
    synth: &Corpus,
    grammar: &Grammar,
    cfg: &MetricConfig,
    info: &RunInfo,
) -> Result<EvalReport, EvalError> {
    let violations = cfg.violations(grammar);
    if !violations.is_empty() {
        return Err(EvalError::Config(violations));
    }
    let tokenizer = WhitespaceTokenizer;
    let key_types = cfg.key_types();
    let real_m = materialize(real, grammar, &cfg.attribute_specs, &key_types, &tokenizer)?;
    let synth_m = materialize(synth, grammar, &cfg.attribute_specs, &key_types, &tokenizer)?;
    let embedder = Embedder::new(cfg.embedding.clone())?;
    let sidecars = match &cfg.dependency {
        DependencyFunction::Cosine => None,
        DependencyFunction::Sidecar { real, synth } => {
            Some((DependencyScores::load(real)?, DependencyScores::load(synth)?))
        }
    };
    let dependency = match &sidecars {
        None => Dependency::Cosine(&embedder),
        Some((real, synth)) => Dependency::Scores { real, synth },
    };

    let mut metrics = Vec::new();
    metrics.push(degrade("cfg_pr".into(), Direction::HigherBetter, cfg_pass_rate(&synth_m.outcomes)));
    let mut sanity = degrade("cfg_pr_real".into(), Direction::HigherBetter, cfg_pass_rate(&real_m.outcomes));
    sanity.name = "cfg_pr_real".into();
    metrics.push(sanity);

    for pattern in &cfg.key_pair_patterns {
        metrics.push(degrade(
            knd_name(pattern),
            Direction::LowerBetter,
            key_node_dependency(&real_m, &synth_m, pattern, dependency),
        ));
    }
    for spec in &cfg.attribute_specs {
        metrics.push(degrade(
            am_name(&spec.name),
            Direction::LowerBetter,
            attribute_match(&real_m.table, &synth_m.table, &spec.name),
        ));
    }
    if let Some(knn) = &cfg.knn {
        match knn_precision_recall(real, synth, knn, &embedder) {
            Ok((p, r)) => metrics.extend([p, r]),
            Err(e) => {
                log::info!("knn metrics not applicable: {e}");
                metrics.push(MetricResult::not_applicable("knn_precision", Direction::HigherBetter, &e));
                metrics.push(MetricResult::not_applicable("knn_recall", Direction::HigherBetter, &e));
            }
        }
    }
    if cfg.ttr {
        metrics.push(degrade("ttr".into(), Direction::HigherBetter, type_token_ratio(synth, &tokenizer)));
    }

    Ok(EvalReport {
        dataset: info.dataset.clone(),
        method: info.method.clone(),
        epsilon: info.epsilon,
        config_digest: cfg.digest(grammar),
        created_at: None,
        metrics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{AttributeLevel, AttributeSource, CorpusFormat, Sample};
    use crate::fixtures::{self, SHAREGPT_GRAMMAR, SHAREGPT_REAL, SHAREGPT_SYNTH};
    use crate::tree::{BuiltinAttribute, Relation};

    fn grammar() -> Grammar {
        Grammar::load(SHAREGPT_GRAMMAR).unwrap()
    }

    fn corpus(text: &str, role: CorpusRole) -> Corpus {
        Corpus::parse_str(text, CorpusFormat::Jsonl, role).unwrap()
    }

    fn lines(text: &str, role: CorpusRole) -> Corpus {
        Corpus::parse_str(text, CorpusFormat::Lines, role).unwrap()
    }

    fn full_config() -> MetricConfig {
        let topic = fixtures::path("sharegpt_real_topic.jsonl");
        MetricConfig {
            key_pair_patterns: vec![
                KeyPairPattern::new("query", "response", Relation::NextSibling),
                KeyPairPattern::new("response", "query", Relation::DocumentAdjacent),
            ],
            attribute_specs: vec![
                AttributeSpec::builtin("num_nodes", AttributeLevel::Sample, BuiltinAttribute::NumNodes, None),
                AttributeSpec::builtin("query_len", AttributeLevel::Node, BuiltinAttribute::TokenLength, Some(&["query"])),
                AttributeSpec::builtin(
                    "response_len",
                    AttributeLevel::Node,
                    BuiltinAttribute::TokenLength,
                    Some(&["response"]),
                ),
                AttributeSpec {
                    name: "topic".into(),
                    level: AttributeLevel::Sample,
                    kind: AttributeKind::Categorical,
                    source: AttributeSource::Sidecar {
                        real: topic.clone(),
                        synth: topic,
                        key: "value".into(),
                    },
                    node_types: None,
                },
            ],
            ..MetricConfig::default()
        }
    }

    fn metric<'r>(report: &'r EvalReport, name: &str) -> &'r MetricResult {
        report.metrics.iter().find(|m| m.name == name).unwrap_or_else(|| panic!("no metric {name}"))
    }

    #[test]
    fn pass_rate() {
        let g = grammar();
        let c = lines("HUMAN: a GPT: b\nHUMAN: c GPT: d\nHUMAN: e GPT: f\nnope\n", CorpusRole::Synthetic);
        let outcomes: Vec<_> = c.samples.iter().map(|s| crate::parse(&g, &s.text)).collect();
        assert_eq!(cfg_pass_rate(&outcomes).unwrap().value, Some(0.75));
        assert!(matches!(cfg_pass_rate(&[]), Err(MetricError::EmptyCorpus)));
    }

    #[test]
    fn ttr_examples() {
        let t = WhitespaceTokenizer;
        let one = |s: &str| type_token_ratio(&lines(s, CorpusRole::Synthetic), &t).unwrap().value.unwrap();
        assert_eq!(one("the cat the"), 2.0 / 3.0);
        assert_eq!(one("a b c d"), 1.0);
        assert_eq!(one("x x x x x"), 0.2);
        assert!(matches!(type_token_ratio(&lines("  \n", CorpusRole::Synthetic), &t), Err(MetricError::NoTokens)));
    }

    fn numeric_table(name: &str, values: &[f64]) -> AttributeTable {
        use crate::corpus::{AttributeCell, AttributeColumn};
        AttributeTable {
            columns: vec![AttributeColumn {
                spec: AttributeSpec::builtin(name, AttributeLevel::Sample, BuiltinAttribute::TokenLength, None),
                cells: values
                    .iter()
                    .enumerate()
                    .map(|(i, v)| AttributeCell {
                        sample_id: i.to_string(),
                        node_index: None,
                        value: Some(crate::tree::AttrValue::Numeric(*v)),
                    })
                    .collect(),
            }],
        }
    }

    #[test]
    fn attribute_match_examples() {
        let r = numeric_table("len", &[10.0, 20.0]);
        let s = numeric_table("len", &[15.0, 25.0]);
        assert!((attribute_match(&r, &s, "len").unwrap().value.unwrap() - 5.0).abs() < 1e-12);
        assert_eq!(attribute_match(&r, &r, "len").unwrap().value, Some(0.0));
        assert!(matches!(attribute_match(&r, &s, "other"), Err(MetricError::MissingAttribute { .. })));
    }

    #[test]
    fn categorical_attribute_match() {
        use crate::corpus::{AttributeCell, AttributeColumn};
        let table = |labels: &[&str]| AttributeTable {
            columns: vec![AttributeColumn {
                spec: AttributeSpec::builtin("topic", AttributeLevel::Sample, BuiltinAttribute::NodeType, None),
                cells: labels
                    .iter()
                    .map(|l| AttributeCell {
                        sample_id: String::new(),
                        node_index: None,
                        value: Some(crate::tree::AttrValue::Categorical(l.to_string())),
                    })
                    .collect(),
            }],
        };
        let m = attribute_match(&table(&["A", "A", "B", "B"]), &table(&["A"; 4]), "topic").unwrap();
        assert_eq!(m.value, Some(0.5));
    }

    #[test]
    fn knd_from_sidecar_scores() {
        let g = grammar();
        let c = lines("HUMAN: a GPT: b\nHUMAN: c GPT: d\n", CorpusRole::Real);
        let m = materialize(&c, &g, &[], &BTreeSet::new(), &WhitespaceTokenizer).unwrap();
        let real = DependencyScores::parse_str("{\"id\":\"0\",\"pair\":0,\"score\":0.2}\n{\"id\":\"1\",\"pair\":0,\"score\":0.4}").unwrap();
        let synth = DependencyScores::parse_str("{\"id\":\"0\",\"pair\":0,\"score\":0.3}\n{\"id\":1,\"pair\":0,\"score\":0.5}").unwrap();
        let p = KeyPairPattern::new("query", "response", Relation::NextSibling);
        let r = key_node_dependency(&m, &m, &p, Dependency::Scores { real: &real, synth: &synth }).unwrap();
        assert!((r.value.unwrap() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn knd_without_matches_is_an_error() {
        let g = grammar();
        let c = lines("HUMAN: a GPT: b\n", CorpusRole::Real);
        let m = materialize(&c, &g, &[], &BTreeSet::new(), &WhitespaceTokenizer).unwrap();
        let embedder = Embedder::new(EmbeddingConfig::default()).unwrap();
        let p = KeyPairPattern::new("response", "query", Relation::NextSibling);
        assert!(matches!(
            key_node_dependency(&m, &m, &p, Dependency::Cosine(&embedder)),
            Err(MetricError::NoPairs(CorpusRole::Real))
        ));
    }

    #[test]
    fn zero_vector_pairs_are_flagged() {
        let g = grammar();
        let c = lines("HUMAN:  GPT: b\nHUMAN: a GPT: b\n", CorpusRole::Real);
        let m = materialize(&c, &g, &[], &BTreeSet::new(), &WhitespaceTokenizer).unwrap();
        let embedder = Embedder::new(EmbeddingConfig::default()).unwrap();
        let p = KeyPairPattern::new("query", "response", Relation::NextSibling);
        let r = key_node_dependency(&m, &m, &p, Dependency::Cosine(&embedder)).unwrap();
        assert_eq!(r.metadata["zero_vector_pairs_real"], Value::from(1));
    }

    #[test]
    fn knn_identity_and_outlier() {
        let embedder = Embedder::new(EmbeddingConfig::default()).unwrap();
        let real = corpus(SHAREGPT_REAL, CorpusRole::Real);
        let (p, r) = knn_precision_recall(&real, &real, &KnnConfig::default(), &embedder).unwrap();
        assert_eq!((p.value, r.value), (Some(1.0), Some(1.0)));
        let too_small = lines("a\nb\n", CorpusRole::Synthetic);
        assert!(matches!(
            knn_precision_recall(&real, &too_small, &KnnConfig::default(), &embedder),
            Err(MetricError::Stats(StatsError::KTooLarge { .. }))
        ));
    }

    #[test]
    fn identity_evaluation() {
        let g = grammar();
        let real = corpus(SHAREGPT_REAL, CorpusRole::Real);
        let report = evaluate(&real, &real, &g, &full_config(), &RunInfo::default()).unwrap();
        assert_eq!(metric(&report, "cfg_pr").value, metric(&report, "cfg_pr_real").value);
        for m in &report.metrics {
            if m.name.starts_with("knd[") || m.name.starts_with("am[") {
                assert_eq!(m.value, Some(0.0), "{}", m.name);
            }
        }
        assert_eq!(metric(&report, "knn_precision").value, Some(1.0));
        assert_eq!(metric(&report, "knn_recall").value, Some(1.0));
    }

    #[test]
    fn all_invalid_synth_is_not_applicable() {
        let g = grammar();
        let real = corpus(SHAREGPT_REAL, CorpusRole::Real);
        let synth = lines("one\ntwo\nthree\nfour\n", CorpusRole::Synthetic);
        let mut cfg = full_config();
        cfg.attribute_specs.pop();
        let report = evaluate(&real, &synth, &g, &cfg, &RunInfo::default()).unwrap();
        assert_eq!(metric(&report, "cfg_pr").value, Some(0.0));
        for m in &report.metrics {
            if m.name.starts_with("knd[") || m.name.starts_with("am[") {
                assert_eq!(m.value, None, "{}", m.name);
                assert_eq!(m.support, 0);
            }
        }
        let json = serde_json::to_value(metric(&report, "am[num_nodes]")).unwrap();
        assert_eq!(json["value"], Value::from("n/a"));
    }

    #[test]
    fn permutation_invariance() {
        let g = grammar();
        let real = corpus(SHAREGPT_REAL, CorpusRole::Real);
        let synth = corpus(SHAREGPT_SYNTH, CorpusRole::Synthetic);
        let mut shuffled = synth.clone();
        shuffled.samples.reverse();
        let mut real_shuffled = real.clone();
        real_shuffled.samples.rotate_left(3);
        let cfg = full_config();
        let a = evaluate(&real, &synth, &g, &cfg, &RunInfo::default()).unwrap();
        let b = evaluate(&real_shuffled, &shuffled, &g, &cfg, &RunInfo::default()).unwrap();
        for (x, y) in a.metrics.iter().zip(&b.metrics) {
            assert_eq!(x.name, y.name);
            match (x.value, y.value) {
                (Some(u), Some(v)) => assert!((u - v).abs() < 1e-12, "{}: {u} vs {v}", x.name),
                (u, v) => assert_eq!(u, v),
            }
        }
    }

    #[test]
    fn duplicating_synth_only_moves_ttr() {
        let g = grammar();
        let real = corpus(SHAREGPT_REAL, CorpusRole::Real);
        let synth = corpus(SHAREGPT_SYNTH, CorpusRole::Synthetic);
        let mut doubled = synth.clone();
        doubled.samples.extend(synth.samples.iter().map(|s| Sample {
            id: format!("{}-dup", s.id),
            text: s.text.clone(),
        }));
        let mut cfg = full_config();
        cfg.attribute_specs.pop();
        cfg.knn = None;
        let a = evaluate(&real, &synth, &g, &cfg, &RunInfo::default()).unwrap();
        let b = evaluate(&real, &doubled, &g, &cfg, &RunInfo::default()).unwrap();
        for (x, y) in a.metrics.iter().zip(&b.metrics) {
            if x.name == "ttr" {
                assert!(y.value.unwrap() < x.value.unwrap());
            } else {
                let (u, v) = (x.value.unwrap(), y.value.unwrap());
                assert!((u - v).abs() < 1e-12, "{}: {u} vs {v}", x.name);
            }
        }
    }

    #[test]
    fn config_violations_are_all_listed() {
        let g = grammar();
        let mut cfg = full_config();
        cfg.knn = Some(KnnConfig { k: 0, ..KnnConfig::default() });
        cfg.key_pair_patterns.push(KeyPairPattern::new("query", "nope", Relation::SameParent));
        cfg.attribute_specs.push(cfg.attribute_specs[0].clone());
        let v = cfg.violations(&g);
        assert_eq!(v.len(), 3, "{v:?}");
        assert!(matches!(
            evaluate(&corpus(SHAREGPT_REAL, CorpusRole::Real), &corpus(SHAREGPT_REAL, CorpusRole::Real), &g, &cfg, &RunInfo::default()),
            Err(EvalError::Config(v)) if v.len() == 3
        ));
    }

    #[test]
    fn config_rejects_unknown_keys() {
        let err = serde_json::from_str::<MetricConfig>(r#"{"knn": {"k": 2}, "bogus": 1}"#).unwrap_err();
        assert!(err.to_string().contains("bogus"));
        let cfg: MetricConfig = serde_json::from_str(r#"{"knn": null}"#).unwrap();
        assert!(cfg.knn.is_none());
    }

    #[test]
    fn metric_result_round_trips() {
        let a = MetricResult::new("x", 0.1 + 0.2, Direction::LowerBetter, 3).with("k", 5);
        let b = MetricResult::not_applicable("y", Direction::HigherBetter, "why");
        for m in [a, b] {
            let json = serde_json::to_string(&m).unwrap();
            assert_eq!(serde_json::from_str::<MetricResult>(&json).unwrap(), m);
        }
    }
}
