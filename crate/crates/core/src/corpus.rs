//! Corpus ingestion, sidecar labels, attribute tables and TSTR export.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::grammar::{parse, Grammar, ParseOutcome};
use crate::stats::{EmpiricalDistribution, StatsError};
use crate::tree::{collect_nodes, node_attribute, sample_attribute, AttrValue, BuiltinAttribute, ParseNode, Tokenizer};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("duplicate sample id `{0}`")]
    DuplicateId(String),
    #[error("value for `{id}` does not match the attribute kind")]
    TypeMismatch { id: String },
    #[error("no label for sample `{0}`")]
    MissingLabel(String),
    #[error("invalid attribute spec `{name}`: {reason}")]
    InvalidSpec { name: String, reason: String },
}

fn read_file(path: &Path) -> Result<String, CorpusError> {
    fs::read_to_string(path).map_err(|source| {
        if source.kind() == std::io::ErrorKind::NotFound {
            CorpusError::MissingFile(path.to_path_buf())
        } else {
            CorpusError::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    })
}

fn write_file(path: &Path, contents: &str) -> Result<(), CorpusError> {
    fs::write(path, contents).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusRole {
    Real,
    Synthetic,
}

impl std::fmt::Display for CorpusRole {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CorpusRole::Real => "real",
            CorpusRole::Synthetic => "synthetic",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusFormat {
    Jsonl,
    Lines,
}

impl CorpusFormat {
    /// `.jsonl`/`.json` files are JSONL, anything else is one sample per line.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("json") => CorpusFormat::Jsonl,
            _ => CorpusFormat::Lines,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub samples: Vec<Sample>,
    pub source_path: Option<PathBuf>,
    pub role: CorpusRole,
}

#[derive(Deserialize)]
struct RawRecord {
    #[serde(default)]
    id: Option<Value>,
    text: String,
}

fn id_string(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

impl Corpus {
    pub fn new(samples: Vec<Sample>, role: CorpusRole) -> Result<Self, CorpusError> {
        let mut seen = HashSet::new();
        for s in &samples {
            if !seen.insert(s.id.as_str()) {
                return Err(CorpusError::DuplicateId(s.id.clone()));
            }
        }
        Ok(Corpus {
            samples,
            source_path: None,
            role,
        })
    }

    /// Parse corpus text. JSONL records are `{"id": ..., "text": ...}` with
    /// `id` defaulting to the record's 0-based line number; in the lines
    /// format each physical line is one sample with id = line number.
    pub fn parse_str(text: &str, format: CorpusFormat, role: CorpusRole) -> Result<Self, CorpusError> {
        let samples = match format {
            CorpusFormat::Lines => text
                .lines()
                .enumerate()
                .map(|(i, l)| Sample {
                    id: i.to_string(),
                    text: l.to_string(),
                })
                .collect(),
            CorpusFormat::Jsonl => {
                let mut out = Vec::new();
                for (i, line) in text.lines().enumerate() {
                    if line.trim().is_empty() {
                        continue;
                    }
                    let rec: RawRecord = serde_json::from_str(line).map_err(|e| CorpusError::MalformedRecord {
                        line: i + 1,
                        reason: e.to_string(),
                    })?;
                    let id = match &rec.id {
                        None => i.to_string(),
                        Some(v) => id_string(v).ok_or_else(|| CorpusError::MalformedRecord {
                            line: i + 1,
                            reason: "id must be a string or number".into(),
                        })?,
                    };
                    out.push(Sample { id, text: rec.text });
                }
                out
            }
        };
        Corpus::new(samples, role)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for s in &self.samples {
            out.push_str(&serde_json::to_string(s).expect("samples serialize"));
            out.push('\n');
        }
        out
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<(), CorpusError> {
        write_file(path, &self.to_jsonl())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

pub fn load_corpus(path: &Path, format: CorpusFormat, role: CorpusRole) -> Result<Corpus, CorpusError> {
    let text = read_file(path)?;
    let mut corpus = Corpus::parse_str(&text, format, role)?;
    corpus.source_path = Some(path.to_path_buf());
    Ok(corpus)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributeLevel {
    Sample,
    Node,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributeKind {
    Numeric,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum AttributeSource {
    Builtin {
        name: BuiltinAttribute,
    },
    /// JSONL `{id, value}` files, one per corpus. Node-level ids are
    /// `<sample id>:<node index>`.
    Sidecar {
        real: PathBuf,
        synth: PathBuf,
        #[serde(default = "default_sidecar_key")]
        key: String,
    },
    /// First capture group (or whole match) of `pattern` in the content of
    /// nodes of `node_type`.
    RegexCapture {
        node_type: String,
        pattern: String,
    },
}

fn default_sidecar_key() -> String {
    "value".into()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributeSpec {
    pub name: String,
    pub level: AttributeLevel,
    pub kind: AttributeKind,
    pub source: AttributeSource,
    /// Node-level: which node types carry the attribute. Sample-level
    /// `num_nodes`: which node types are counted. Defaults to the key-node
    /// types (all rule nodes when none are configured).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node_types: Option<Vec<String>>,
}

impl AttributeSpec {
    pub fn builtin(name: &str, level: AttributeLevel, attr: BuiltinAttribute, node_types: Option<&[&str]>) -> Self {
        AttributeSpec {
            name: name.into(),
            level,
            kind: match attr {
                BuiltinAttribute::NodeType => AttributeKind::Categorical,
                _ => AttributeKind::Numeric,
            },
            source: AttributeSource::Builtin { name: attr },
            node_types: node_types.map(|t| t.iter().map(|s| s.to_string()).collect()),
        }
    }

    /// Checks that don't need a corpus: kinds of built-ins, regex syntax,
    /// node types known to the grammar.
    pub fn validate(&self, grammar: &Grammar) -> Result<(), CorpusError> {
        let invalid = |reason: String| CorpusError::InvalidSpec {
            name: self.name.clone(),
            reason,
        };
        match &self.source {
            AttributeSource::Builtin { name } => {
                let expected = match name {
                    BuiltinAttribute::NodeType => AttributeKind::Categorical,
                    _ => AttributeKind::Numeric,
                };
                if expected != self.kind {
                    return Err(invalid(format!("builtin {name:?} is {expected:?}")));
                }
            }
            AttributeSource::RegexCapture { node_type, pattern } => {
                fancy_regex::Regex::new(pattern).map_err(|e| invalid(e.to_string()))?;
                if !grammar.has_node_type(node_type) {
                    return Err(invalid(format!("unknown node type `{node_type}`")));
                }
            }
            AttributeSource::Sidecar { .. } => {}
        }
        for t in self.node_types.iter().flatten() {
            if !grammar.has_node_type(t) {
                return Err(invalid(format!("unknown node type `{t}`")));
            }
        }
        Ok(())
    }
}

fn coerce(value: &Value, kind: AttributeKind) -> Option<AttrValue> {
    match (kind, value) {
        (AttributeKind::Numeric, Value::Number(n)) => n.as_f64().filter(|x| x.is_finite()).map(AttrValue::Numeric),
        (AttributeKind::Numeric, Value::String(s)) => {
            s.trim().parse::<f64>().ok().filter(|x| x.is_finite()).map(AttrValue::Numeric)
        }
        (AttributeKind::Categorical, Value::String(s)) => Some(AttrValue::Categorical(s.clone())),
        (AttributeKind::Categorical, Value::Number(n)) => Some(AttrValue::Categorical(n.to_string())),
        (AttributeKind::Categorical, Value::Bool(b)) => Some(AttrValue::Categorical(b.to_string())),
        _ => None,
    }
}

/// Read a `{id, <key>}` JSONL sidecar, type-checking each value.
pub fn load_sidecar_labels(
    path: &Path,
    key: &str,
    kind: AttributeKind,
) -> Result<HashMap<String, AttrValue>, CorpusError> {
    let text = read_file(path)?;
    let mut out = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |reason: String| CorpusError::MalformedRecord { line: i + 1, reason };
        let rec: serde_json::Map<String, Value> = serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
        let id = rec
            .get("id")
            .and_then(id_string)
            .ok_or_else(|| malformed("missing id".into()))?;
        let raw = rec.get(key).ok_or_else(|| malformed(format!("missing `{key}`")))?;
        let value = coerce(raw, kind).ok_or_else(|| CorpusError::TypeMismatch { id: id.clone() })?;
        if out.insert(id.clone(), value).is_some() {
            return Err(CorpusError::DuplicateId(id));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttributeCell {
    pub sample_id: String,
    /// Index among the selected nodes of the sample, for node-level columns.
    pub node_index: Option<usize>,
    /// `None` marks a missing value.
    pub value: Option<AttrValue>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttributeColumn {
    pub spec: AttributeSpec,
    pub cells: Vec<AttributeCell>,
}

impl AttributeColumn {
    pub fn missing(&self) -> usize {
        self.cells.iter().filter(|c| c.value.is_none()).count()
    }

    pub fn present(&self) -> impl Iterator<Item = &AttrValue> {
        self.cells.iter().filter_map(|c| c.value.as_ref())
    }

    /// Empirical distribution of the present values.
    pub fn distribution(&self) -> Result<EmpiricalDistribution, StatsError> {
        match self.spec.kind {
            AttributeKind::Numeric => EmpiricalDistribution::numeric(self.present().filter_map(|v| match v {
                AttrValue::Numeric(x) => Some(*x),
                AttrValue::Categorical(_) => None,
            })),
            AttributeKind::Categorical => EmpiricalDistribution::categorical(self.present().filter_map(|v| match v {
                AttrValue::Categorical(s) => Some(s.clone()),
                AttrValue::Numeric(_) => None,
            })),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AttributeTable {
    pub columns: Vec<AttributeColumn>,
}

impl AttributeTable {
    pub fn column(&self, name: &str) -> Option<&AttributeColumn> {
        self.columns.iter().find(|c| c.spec.name == name)
    }
}

/// A corpus after parsing: one outcome per sample plus the attribute table
/// over parsed samples.
#[derive(Debug, Clone)]
pub struct Materialized {
    pub ids: Vec<String>,
    pub outcomes: Vec<ParseOutcome>,
    pub table: AttributeTable,
}

impl Materialized {
    pub fn parsed_count(&self) -> usize {
        self.outcomes.iter().filter(|o| o.is_parsed()).count()
    }
}

fn capture(re: &fancy_regex::Regex, text: &str) -> Option<String> {
    let caps = re.captures(text).ok().flatten()?;
    caps.get(1).or_else(|| caps.get(0)).map(|m| m.as_str().to_string())
}

struct PreparedSpec<'s> {
    spec: &'s AttributeSpec,
    sidecar: Option<HashMap<String, AttrValue>>,
    regex: Option<fancy_regex::Regex>,
    node_types: BTreeSet<String>,
}

/// Parse every sample once and build the attribute table. Failed samples
/// contribute no rows. Output order follows corpus order.
pub fn materialize(
    corpus: &Corpus,
    grammar: &Grammar,
    specs: &[AttributeSpec],
    key_types: &BTreeSet<String>,
    tokenizer: &dyn Tokenizer,
) -> Result<Materialized, CorpusError> {
    let mut prepared = Vec::with_capacity(specs.len());
    for spec in specs {
        spec.validate(grammar)?;
        let sidecar = match &spec.source {
            AttributeSource::Sidecar { real, synth, key } => {
                let path = match corpus.role {
                    CorpusRole::Real => real,
                    CorpusRole::Synthetic => synth,
                };
                Some(load_sidecar_labels(path, key, spec.kind)?)
            }
            _ => None,
        };
        let regex = match &spec.source {
            AttributeSource::RegexCapture { pattern, .. } => Some(fancy_regex::Regex::new(pattern).expect("validated")),
            _ => None,
        };
        let node_types = match (&spec.node_types, &spec.source) {
            (Some(t), _) => t.iter().cloned().collect(),
            (None, AttributeSource::RegexCapture { node_type, .. }) => BTreeSet::from([node_type.clone()]),
            (None, _) => key_types.clone(),
        };
        prepared.push(PreparedSpec {
            spec,
            sidecar,
            regex,
            node_types,
        });
    }

    let outcomes: Vec<ParseOutcome> = corpus.samples.par_iter().map(|s| parse(grammar, &s.text)).collect();

    let columns = prepared
        .iter()
        .map(|p| {
            let mut cells = Vec::new();
            for (sample, outcome) in corpus.samples.iter().zip(&outcomes) {
                let Some(tree) = outcome.tree() else { continue };
                match p.spec.level {
                    AttributeLevel::Sample => {
                        let value = match &p.spec.source {
                            AttributeSource::Builtin { name } => {
                                Some(sample_attribute(&sample.text, tree, *name, &p.node_types, tokenizer))
                            }
                            AttributeSource::Sidecar { .. } => p.sidecar.as_ref().unwrap().get(&sample.id).cloned(),
                            AttributeSource::RegexCapture { .. } => collect_nodes(tree, &p.node_types)
                                .first()
                                .and_then(|n| capture(p.regex.as_ref().unwrap(), &n.content()))
                                .and_then(|s| coerce(&Value::String(s), p.spec.kind)),
                        };
                        cells.push(AttributeCell {
                            sample_id: sample.id.clone(),
                            node_index: None,
                            value,
                        });
                    }
                    AttributeLevel::Node => {
                        let nodes: Vec<&ParseNode> = collect_nodes(tree, &p.node_types);
                        for (i, node) in nodes.iter().enumerate() {
                            let value = match &p.spec.source {
                                AttributeSource::Builtin { name } => Some(node_attribute(node, *name, tokenizer)),
                                AttributeSource::Sidecar { .. } => {
                                    p.sidecar.as_ref().unwrap().get(&format!("{}:{i}", sample.id)).cloned()
                                }
                                AttributeSource::RegexCapture { .. } => capture(p.regex.as_ref().unwrap(), &node.content())
                                    .and_then(|s| coerce(&Value::String(s), p.spec.kind)),
                            };
                            cells.push(AttributeCell {
                                sample_id: sample.id.clone(),
                                node_index: Some(i),
                                value,
                            });
                        }
                    }
                }
            }
            AttributeColumn {
                spec: p.spec.clone(),
                cells,
            }
        })
        .collect();

    Ok(Materialized {
        ids: corpus.samples.iter().map(|s| s.id.clone()).collect(),
        outcomes,
        table: AttributeTable { columns },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabeledSample {
    pub id: String,
    pub text: String,
    pub label: AttrValue,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TstrSplit {
    pub train: Vec<LabeledSample>,
    pub test: Vec<LabeledSample>,
}

impl TstrSplit {
    /// Writes `train.jsonl` and `test.jsonl` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(PathBuf, PathBuf), CorpusError> {
        fs::create_dir_all(dir).map_err(|source| CorpusError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let render = |rows: &[LabeledSample]| {
            rows.iter()
                .map(|r| serde_json::to_string(r).expect("labeled samples serialize") + "\n")
                .collect::<String>()
        };
        let train = dir.join("train.jsonl");
        let test = dir.join("test.jsonl");
        write_file(&train, &render(&self.train))?;
        write_file(&test, &render(&self.test))?;
        Ok((train, test))
    }
}

/// Seeded train/test split of a labeled corpus. `round(test_fraction · n)`
/// samples go to test; both halves keep corpus order.
pub fn export_tstr_split(
    corpus: &Corpus,
    labels: &HashMap<String, AttrValue>,
    test_fraction: f64,
    seed: u64,
) -> Result<TstrSplit, CorpusError> {
    if !(0.0..=1.0).contains(&test_fraction) {
        return Err(CorpusError::InvalidSpec {
            name: "test_fraction".into(),
            reason: format!("{test_fraction} is outside [0, 1]"),
        });
    }
    let mut rows = Vec::with_capacity(corpus.len());
    for s in &corpus.samples {
        let label = labels.get(&s.id).ok_or_else(|| CorpusError::MissingLabel(s.id.clone()))?;
        rows.push(LabeledSample {
            id: s.id.clone(),
            text: s.text.clone(),
            label: label.clone(),
        });
    }
    let n_test = (test_fraction * rows.len() as f64).round() as usize;
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test_idx: BTreeSet<usize> = order[..n_test].iter().copied().collect();
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (i, row) in rows.into_iter().enumerate() {
        if test_idx.contains(&i) {
            test.push(row);
        } else {
            train.push(row);
        }
    }
    Ok(TstrSplit { train, test })
}
