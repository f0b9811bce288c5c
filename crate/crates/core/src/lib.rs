//! Evaluation of synthetic structured-text datasets against a real one.
//!
//! Samples are parsed with a context-free grammar ([`grammar`]), key nodes
//! and attributes are pulled out of the parse trees ([`tree`], [`corpus`]),
//! and the two corpora are compared with distributional and embedding-space
//! metrics ([`stats`], [`metrics`]). [`dpgen`] is a small differentially
//! private generator used to drive the pipeline end to end, and [`report`]
//! aggregates results across methods.

pub mod corpus;
pub mod dpgen;
pub mod grammar;
pub mod embed;
pub mod metrics;
pub mod report;
pub mod stats;
pub mod tree;

/// Grammar and corpora shipped with the crate.
pub mod fixtures {
    pub const SHAREGPT_GRAMMAR: &str = include_str!("../fixtures/sharegpt.cfg");
    pub const SHAREGPT_REAL: &str = include_str!("../fixtures/sharegpt_real.jsonl");
    pub const SHAREGPT_SYNTH: &str = include_str!("../fixtures/sharegpt_synth.jsonl");

    /// Absolute path of a file in the fixtures directory.
    pub fn path(name: &str) -> std::path::PathBuf {
        std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
    }
}

#[cfg(test)]
pub(crate) use fixtures as test_fixtures;

pub use grammar::{parse, Grammar, GrammarError, ParseOutcome};
pub use tree::{collect_nodes, match_pairs, KeyPairPattern, NodePair, ParseNode, ParseTree, Relation};
pub use corpus::{load_corpus, AttributeSpec, AttributeTable, Corpus, CorpusFormat, CorpusRole, Sample};
pub use dpgen::{fit_histograms, generate, DpParams};
pub use embed::{EmbeddingConfig, EmbeddingMatrix};
pub use metrics::{evaluate, MetricConfig, MetricResult};
pub use report::{rescale, EvalReport, RescaledScore};
pub use stats::{total_variation, wasserstein2, EmpiricalDistribution};
