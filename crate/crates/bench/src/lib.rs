//! Input builders shared by the benchmarks.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use structeval::corpus::{Corpus, CorpusRole, Sample};

const QUERIES: &[&str] = &[
    "How do I reverse a list in Python?\n",
    "Assume the debt down payment is 50%\n",
    "Write a haiku about autumn leaves\n",
    "What is the capital of Australia?\n",
    "Explain the difference between TCP and UDP\n",
];

const RESPONSES: &[&str] = &[
    "Use the reverse method to reverse in place, or slicing with a step of minus one.\n",
    "Sure, I can adjust the calculations to assume a 50% down payment.\n",
    "Crimson leaves drifting, the cold wind hums a soft tune, branches bare and still.\n",
    "The capital of Australia is Canberra.\n",
    "TCP is connection oriented and reliable; UDP is connectionless and lighter.\n",
];

/// A ShareGPT-style conversation with `rounds` query/response pairs.
pub fn conversation(rounds: usize, rng: &mut impl Rng) -> String {
    (0..rounds)
        .map(|_| {
            format!(
                "HUMAN: {}GPT: {}",
                QUERIES.choose(rng).unwrap(),
                RESPONSES.choose(rng).unwrap()
            )
        })
        .collect()
}

pub fn corpus(n: usize, seed: u64, role: CorpusRole) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..n)
        .map(|i| {
            let rounds = rng.gen_range(1..=4);
            Sample {
                id: i.to_string(),
                text: format!("[{i}] ") + &conversation(rounds, &mut rng)[..],
            }
        })
        .collect();
    Corpus::new(samples, role).unwrap()
}

pub fn uniform(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(0.0..1.0)).collect()
}
