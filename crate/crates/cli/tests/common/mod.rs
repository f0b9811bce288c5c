#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use structeval::corpus::{Corpus, CorpusFormat, CorpusRole, Sample};
use structeval::fixtures::{self, SHAREGPT_GRAMMAR, SHAREGPT_REAL, SHAREGPT_SYNTH};
use structeval::{parse, Grammar};

pub fn fixture(name: &str) -> PathBuf {
    fixtures::path(name)
}

pub fn structeval(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_structeval"))
        .args(args)
        .env_remove("RUST_LOG")
        .output()
        .expect("binary runs")
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Query/response texts of every round in the fixture corpora.
fn fixture_rounds() -> Vec<(String, String)> {
    let g = Grammar::load(SHAREGPT_GRAMMAR).unwrap();
    let mut rounds = Vec::new();
    for text in [SHAREGPT_REAL, SHAREGPT_SYNTH] {
        let corpus = Corpus::parse_str(text, CorpusFormat::Jsonl, CorpusRole::Real).unwrap();
        for sample in &corpus.samples {
            let Some(tree) = parse(&g, &sample.text).tree().cloned() else { continue };
            for conv in &tree.root.children {
                let q = conv.children.iter().find(|c| c.node_type == "query").unwrap();
                let r = conv.children.iter().find(|c| c.node_type == "response").unwrap();
                let strip = |n: &structeval::ParseNode| n.children[1].text.clone();
                rounds.push((strip(q), strip(r)));
            }
        }
    }
    rounds
}

/// `n` distinct conversations recombined from fixture rounds.
pub fn large_corpus(n: usize, seed: u64, role: CorpusRole) -> Corpus {
    let rounds = fixture_rounds();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..n)
        .map(|i| {
            let k = rng.gen_range(1..=4);
            let mut text = String::new();
            for j in 0..k {
                let (q, r) = rounds.choose(&mut rng).unwrap();
                let q = if j == 0 { format!("[{i}] {q}") } else { q.clone() };
                text.push_str(&format!("HUMAN: {q}GPT: {r}"));
            }
            Sample {
                id: format!("{}{i}", if role == CorpusRole::Real { "r" } else { "s" }),
                text,
            }
        })
        .collect();
    Corpus::new(samples, role).unwrap()
}
