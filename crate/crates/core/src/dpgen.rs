//! A small ε-differentially private generator: grammar derivations whose
//! choices and terminal text are sampled from Laplace-noised histograms of
//! the real corpus.
//!
//! Every histogram is built so that adding or removing one sample moves at
//! most one unit of mass (each sample's contribution is normalized to 1),
//! and the budget is split evenly, so each histogram gets noise of scale
//! `H / ε` for `H` histograms.

use std::collections::HashMap;

use rand::distributions::{Distribution, Open01, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, CorpusRole, Sample};
use crate::grammar::{parse, Grammar, RuleId, RuleOrigin, Symbol, TerminalId, TerminalKind};
use crate::tree::Derivation;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum DpError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("no sample of the real corpus parses under the grammar")]
    NoParsedSamples,
    #[error("derivation deeper than {0}")]
    DepthExceeded(usize),
    #[error("no parseable sample after {0} attempts")]
    GenerationFailed(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpParams {
    pub epsilon: f64,
    pub seed: u64,
    pub n_samples: usize,
    pub max_derivation_depth: usize,
    /// Repetition counts above this are recorded as this.
    pub max_repetitions: usize,
    /// Token counts above this are recorded as this.
    pub max_tokens: usize,
    /// Unigram vocabulary size per regex terminal.
    pub vocab_size: usize,
    /// Draws per sample before giving up on producing a parseable one.
    pub max_attempts: usize,
}

impl DpParams {
    pub fn new(epsilon: f64, n_samples: usize, seed: u64) -> Self {
        DpParams {
            epsilon,
            seed,
            n_samples,
            max_derivation_depth: 64,
            max_repetitions: 16,
            max_tokens: 64,
            vocab_size: 1024,
            max_attempts: 64,
        }
    }

    /// Pure ε-DP only.
    pub fn delta(&self) -> f64 {
        0.0
    }

    pub fn validate(&self) -> Result<(), DpError> {
        if self.epsilon.is_nan() || self.epsilon <= 0.0 || self.epsilon.is_infinite() {
            return Err(DpError::InvalidParams(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if self.n_samples == 0 {
            return Err(DpError::InvalidParams("n_samples must be at least 1".into()));
        }
        if self.vocab_size == 0 || self.max_attempts == 0 {
            return Err(DpError::InvalidParams("vocab_size and max_attempts must be positive".into()));
        }
        Ok(())
    }
}

/// Draw from Laplace(0, scale) by inverting the CDF at a uniform draw.
pub fn laplace_noise<R: Rng + ?Sized>(scale: f64, rng: &mut R) -> f64 {
    if scale == 0.0 {
        return 0.0;
    }
    let p: f64 = Open01.sample(rng);
    laplace_inverse_cdf(p, scale)
}

pub fn laplace_inverse_cdf(p: f64, scale: f64) -> f64 {
    if p < 0.5 {
        scale * (2.0 * p).ln()
    } else {
        -scale * (2.0 * (1.0 - p)).ln()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "name", rename_all = "snake_case")]
pub enum HistogramKey {
    /// Number of repetitions of a starred group.
    Repetitions(String),
    /// Which alternative of a rule is taken.
    Alternative(String),
    /// Whitespace tokens inside a regex terminal.
    Tokens(String),
    /// Token count of a regex terminal's text.
    Length(String),
}

/// Noised, clamped and normalized weights over named bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisyHistogram {
    pub key: HistogramKey,
    pub bins: Vec<(String, f64)>,
    pub epsilon_share: f64,
}

/// Clamp negatives to 0 and normalize; uniform when nothing is left.
pub fn normalize_weights(noised: &[f64]) -> Vec<f64> {
    let clamped: Vec<f64> = noised.iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect();
    let total: f64 = clamped.iter().sum();
    if total > 0.0 {
        clamped.iter().map(|x| x / total).collect()
    } else {
        vec![1.0 / noised.len() as f64; noised.len()]
    }
}

impl NoisyHistogram {
    fn release<R: Rng>(key: HistogramKey, counts: Vec<(String, f64)>, epsilon_share: f64, noisy: bool, rng: &mut R) -> Self {
        let scale = if noisy { 1.0 / epsilon_share } else { 0.0 };
        let noised: Vec<f64> = counts.iter().map(|(_, c)| c + laplace_noise(scale, rng)).collect();
        let weights = normalize_weights(&noised);
        NoisyHistogram {
            key,
            bins: counts.into_iter().map(|(b, _)| b).zip(weights).collect(),
            epsilon_share,
        }
    }

    pub fn weight(&self, bin: &str) -> Option<f64> {
        self.bins.iter().find(|(b, _)| b == bin).map(|(_, w)| *w)
    }

    fn sample<'h, R: Rng>(&'h self, rng: &mut R) -> Option<&'h str> {
        let weights = self.bins.iter().map(|(_, w)| *w);
        let index = WeightedIndex::new(weights).ok()?;
        Some(&self.bins[index.sample(rng)].0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histograms {
    pub epsilon: f64,
    pub histograms: Vec<NoisyHistogram>,
}

impl Histograms {
    pub fn get(&self, key: &HistogramKey) -> Option<&NoisyHistogram> {
        self.histograms.iter().find(|h| &h.key == key)
    }

    /// Total budget spent; equals the requested ε.
    pub fn epsilon_spent(&self) -> f64 {
        self.histograms.iter().map(|h| h.epsilon_share).sum()
    }
}

/// Per-sample observations, each list later weighted 1/len.
#[derive(Default)]
struct Observations {
    repetitions: HashMap<RuleId, Vec<usize>>,
    alternatives: HashMap<RuleId, Vec<usize>>,
    tokens: HashMap<TerminalId, Vec<String>>,
    lengths: HashMap<TerminalId, Vec<usize>>,
}

fn observe(grammar: &Grammar, d: &Derivation, chars: &[char], obs: &mut Observations, params: &DpParams) {
    match d {
        Derivation::Token { terminal, span } => {
            if grammar.terminal(*terminal).kind == TerminalKind::Regex {
                let text: String = chars[span.0..span.1].iter().collect();
                let toks: Vec<String> = text.split_whitespace().map(str::to_string).collect();
                obs.lengths.entry(*terminal).or_default().push(toks.len().min(params.max_tokens));
                obs.tokens.entry(*terminal).or_default().extend(toks);
            }
        }
        Derivation::Rule {
            rule,
            alternative,
            children,
            ..
        } => {
            let r = grammar.rule(*rule);
            if r.origin == RuleOrigin::Star {
                // Walk the repetition chain X aux -> X aux -> "".
                let mut count = 0;
                let mut link = d;
                while let Derivation::Rule {
                    alternative, children, ..
                } = link
                {
                    if children.is_empty() {
                        break;
                    }
                    count += 1;
                    if r.alternatives.len() > 2 {
                        obs.alternatives.entry(*rule).or_default().push(*alternative);
                    }
                    let (next, body) = children.split_last().expect("non-empty");
                    for c in body {
                        observe(grammar, c, chars, obs, params);
                    }
                    link = next;
                }
                obs.repetitions.entry(*rule).or_default().push(count.min(params.max_repetitions));
            } else {
                if r.alternatives.len() > 1 {
                    obs.alternatives.entry(*rule).or_default().push(*alternative);
                }
                for c in children {
                    observe(grammar, c, chars, obs, params);
                }
            }
        }
    }
}

/// Add `1/len` per observation so the sample's total contribution is 1.
fn accumulate<K: Clone + Eq + std::hash::Hash>(target: &mut HashMap<K, f64>, items: &[K]) {
    if items.is_empty() {
        return;
    }
    let w = 1.0 / items.len() as f64;
    for it in items {
        *target.entry(it.clone()).or_default() += w;
    }
}

pub fn fit_histograms(real: &Corpus, grammar: &Grammar, params: &DpParams) -> Result<Histograms, DpError> {
    fit(real, grammar, params, true)
}

/// Exact normalized counts with no noise. Not private.
pub fn exact_histograms(real: &Corpus, grammar: &Grammar, params: &DpParams) -> Result<Histograms, DpError> {
    fit(real, grammar, params, false)
}

fn fit(real: &Corpus, grammar: &Grammar, params: &DpParams, noisy: bool) -> Result<Histograms, DpError> {
    params.validate()?;
    let mut rep: HashMap<RuleId, HashMap<usize, f64>> = HashMap::new();
    let mut alt: HashMap<RuleId, HashMap<usize, f64>> = HashMap::new();
    let mut tok: HashMap<TerminalId, HashMap<String, f64>> = HashMap::new();
    let mut len: HashMap<TerminalId, HashMap<usize, f64>> = HashMap::new();
    let mut tok_raw: HashMap<TerminalId, HashMap<String, u64>> = HashMap::new();
    let mut per_sample_tokens: Vec<HashMap<TerminalId, Vec<String>>> = Vec::new();
    let mut parsed = 0;
    for s in &real.samples {
        let outcome = parse(grammar, &s.text);
        let Some(tree) = outcome.tree() else { continue };
        parsed += 1;
        let chars: Vec<char> = s.text.chars().collect();
        let mut obs = Observations::default();
        observe(grammar, &tree.derivation, &chars, &mut obs, params);
        for (r, v) in &obs.repetitions {
            accumulate(rep.entry(*r).or_default(), v);
        }
        for (r, v) in &obs.alternatives {
            accumulate(alt.entry(*r).or_default(), v);
        }
        for (t, v) in &obs.lengths {
            accumulate(len.entry(*t).or_default(), v);
        }
        for (t, v) in &obs.tokens {
            let raw = tok_raw.entry(*t).or_default();
            for w in v {
                *raw.entry(w.clone()).or_default() += 1;
            }
        }
        per_sample_tokens.push(obs.tokens);
    }
    if parsed == 0 {
        return Err(DpError::NoParsedSamples);
    }

    // Vocabulary: top-V tokens by true count, ties broken lexically.
    let mut vocab: HashMap<TerminalId, Vec<String>> = HashMap::new();
    for (t, counts) in &tok_raw {
        let mut words: Vec<(&String, &u64)> = counts.iter().collect();
        words.sort_by(|a, b| b.1.cmp(a.1).then(a.0.cmp(b.0)));
        vocab.insert(*t, words.into_iter().take(params.vocab_size).map(|(w, _)| w.clone()).collect());
    }
    for sample in &per_sample_tokens {
        for (t, words) in sample {
            let keep: std::collections::HashSet<&String> = vocab[t].iter().collect();
            let kept: Vec<String> = words.iter().filter(|w| keep.contains(w)).cloned().collect();
            accumulate(tok.entry(*t).or_default(), &kept);
        }
    }

    // Every histogram shape is fixed by the grammar and params, not the data.
    let mut layout: Vec<(HistogramKey, Vec<(String, f64)>)> = Vec::new();
    for (i, r) in grammar.rules().iter().enumerate() {
        let id = RuleId(i);
        if r.origin == RuleOrigin::Star {
            let counts = rep.get(&id);
            let bins = (0..=params.max_repetitions)
                .map(|n| (n.to_string(), counts.and_then(|c| c.get(&n)).copied().unwrap_or(0.0)))
                .collect();
            layout.push((HistogramKey::Repetitions(r.head.clone()), bins));
        }
        let choices = match r.origin {
            RuleOrigin::Star => r.alternatives.len() - 1,
            _ => r.alternatives.len(),
        };
        if choices > 1 {
            let counts = alt.get(&id);
            let bins = (0..choices)
                .map(|a| (a.to_string(), counts.and_then(|c| c.get(&a)).copied().unwrap_or(0.0)))
                .collect();
            layout.push((HistogramKey::Alternative(r.head.clone()), bins));
        }
    }
    for (i, t) in grammar.terminals().iter().enumerate() {
        if t.kind != TerminalKind::Regex {
            continue;
        }
        let id = TerminalId(i);
        let words = vocab.get(&id).cloned().unwrap_or_default();
        let counts = tok.get(&id);
        let bins = words
            .into_iter()
            .map(|w| {
                let c = counts.and_then(|c| c.get(&w)).copied().unwrap_or(0.0);
                (w, c)
            })
            .collect();
        layout.push((HistogramKey::Tokens(t.name.clone()), bins));
        let counts = len.get(&id);
        let bins = (0..=params.max_tokens)
            .map(|n| (n.to_string(), counts.and_then(|c| c.get(&n)).copied().unwrap_or(0.0)))
            .collect();
        layout.push((HistogramKey::Length(t.name.clone()), bins));
    }

    let shares = split_budget(params.epsilon, layout.len());
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    rng.set_stream(0);
    let histograms = layout
        .into_iter()
        .zip(shares)
        .map(|((key, counts), share)| NoisyHistogram::release(key, counts, share, noisy, &mut rng))
        .collect();
    Ok(Histograms {
        epsilon: params.epsilon,
        histograms,
    })
}

/// Even split of ε into `parts` shares whose sum is exactly ε: the last
/// share takes the remainder, which is exact because the other shares sum
/// to at least ε/2.
pub fn split_budget(epsilon: f64, parts: usize) -> Vec<f64> {
    if parts == 0 {
        return Vec::new();
    }
    let mut shares = vec![epsilon / parts as f64; parts - 1];
    let spent: f64 = shares.iter().sum();
    shares.push(epsilon - spent);
    shares
}

struct Generator<'a, R> {
    grammar: &'a Grammar,
    hists: HashMap<&'a HistogramKey, &'a NoisyHistogram>,
    params: &'a DpParams,
    rng: &'a mut R,
}

impl<R: Rng> Generator<'_, R> {
    fn draw(&mut self, key: HistogramKey) -> Option<usize> {
        self.hists.get(&key)?.sample(self.rng)?.parse().ok()
    }

    fn expand_symbol(&mut self, sym: Symbol, depth: usize, out: &mut String) -> Result<(), DpError> {
        match sym {
            Symbol::Terminal(t) => {
                self.fill_terminal(t, out);
                Ok(())
            }
            Symbol::Rule(r) => self.expand_rule(r, depth + 1, out),
        }
    }

    fn expand_rule(&mut self, id: RuleId, depth: usize, out: &mut String) -> Result<(), DpError> {
        if depth > self.params.max_derivation_depth {
            return Err(DpError::DepthExceeded(self.params.max_derivation_depth));
        }
        let rule = self.grammar.rule(id);
        let head = rule.head.clone();
        if rule.origin == RuleOrigin::Star {
            let reps = self.draw(HistogramKey::Repetitions(head.clone())).unwrap_or(0);
            let choices = rule.alternatives.len() - 1;
            for _ in 0..reps {
                let a = if choices > 1 {
                    self.draw(HistogramKey::Alternative(head.clone())).unwrap_or(0)
                } else {
                    0
                };
                let body = &rule.alternatives[a];
                for &sym in &body[..body.len() - 1] {
                    self.expand_symbol(sym, depth, out)?;
                }
            }
            return Ok(());
        }
        let a = if rule.alternatives.len() > 1 {
            self.draw(HistogramKey::Alternative(head)).unwrap_or(0)
        } else {
            0
        };
        for &sym in &rule.alternatives[a] {
            self.expand_symbol(sym, depth, out)?;
        }
        Ok(())
    }

    fn fill_terminal(&mut self, id: TerminalId, out: &mut String) {
        let t = self.grammar.terminal(id);
        match t.kind {
            TerminalKind::Literal => out.push_str(&t.pattern),
            TerminalKind::Regex => {
                let n = self.draw(HistogramKey::Length(t.name.clone())).unwrap_or(1);
                let Some(vocab) = self.hists.get(&HistogramKey::Tokens(t.name.clone())).copied() else { return };
                for _ in 0..n {
                    if let Some(w) = vocab.sample(self.rng) {
                        out.push_str(w);
                        out.push(' ');
                    }
                }
            }
        }
    }
}

/// Sample `n_samples` strings from the grammar driven by the histograms.
/// Each is checked with the parser and redrawn if it does not parse.
pub fn generate(grammar: &Grammar, histograms: &Histograms, params: &DpParams) -> Result<Corpus, DpError> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    rng.set_stream(1);
    let mut gen = Generator {
        grammar,
        hists: histograms.histograms.iter().map(|h| (&h.key, h)).collect(),
        params,
        rng: &mut rng,
    };
    let mut samples = Vec::with_capacity(params.n_samples);
    for i in 0..params.n_samples {
        let mut attempts = 0;
        let text = loop {
            if attempts == params.max_attempts {
                return Err(DpError::GenerationFailed(attempts));
            }
            attempts += 1;
            let mut text = String::new();
            gen.expand_rule(grammar.start(), 0, &mut text)?;
            if parse(grammar, &text).is_parsed() {
                break text;
            }
            log::debug!("generated sample {i} does not parse, redrawing");
        };
        samples.push(Sample { id: format!("g{i}"), text });
    }
    Ok(Corpus::new(samples, CorpusRole::Synthetic).expect("generated ids are unique"))
}

/// Fit on `real` and generate in one go.
pub fn fit_and_generate(real: &Corpus, grammar: &Grammar, params: &DpParams) -> Result<Corpus, DpError> {
    let h = fit_histograms(real, grammar, params)?;
    generate(grammar, &h, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::CorpusFormat;
    use crate::fixtures::{SHAREGPT_GRAMMAR, SHAREGPT_REAL};
    use proptest::prelude::*;

    fn setup() -> (Grammar, Corpus) {
        (
            Grammar::load(SHAREGPT_GRAMMAR).unwrap(),
            Corpus::parse_str(SHAREGPT_REAL, CorpusFormat::Jsonl, CorpusRole::Real).unwrap(),
        )
    }

    #[test]
    fn normalization_examples() {
        let w = normalize_weights(&[6.1, 4.2]);
        assert!((w[0] - 0.592).abs() < 5e-4 && (w[1] - 0.408).abs() < 5e-4);
        assert_eq!(normalize_weights(&[-1.0, 3.0]), vec![0.0, 1.0]);
        assert_eq!(normalize_weights(&[-1.0, -3.0, 0.0, -0.5]), vec![0.25; 4]);
    }

    #[test]
    fn laplace_median_and_moments() {
        assert_eq!(laplace_inverse_cdf(0.5, 1.0), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let draws: Vec<f64> = (0..n).map(|_| laplace_noise(1.0, &mut rng)).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 2.0).abs() < 0.05, "variance {var}");
    }

    #[test]
    fn histogram_weights_are_probabilities() {
        let (g, real) = setup();
        let h = fit_histograms(&real, &g, &DpParams::new(1.0, 10, 3)).unwrap();
        assert_eq!(h.histograms.len(), 5);
        for hist in &h.histograms {
            let total: f64 = hist.bins.iter().map(|(_, w)| w).sum();
            assert!((total - 1.0).abs() < 1e-9, "{:?}", hist.key);
            assert!(hist.bins.iter().all(|(_, w)| *w >= 0.0));
        }
        assert_eq!(h.epsilon_spent(), 1.0);
    }

    #[test]
    fn exact_repetition_counts() {
        let (g, real) = setup();
        let params = DpParams::new(1.0, 10, 3);
        let h = exact_histograms(&real, &g, &params).unwrap();
        let star = g.rules().iter().find(|r| r.origin == RuleOrigin::Star).unwrap();
        let rep = h.get(&HistogramKey::Repetitions(star.head.clone())).unwrap();
        // The fixture's rounds after the first: 2, 0, 1, then one each of the rest.
        let mut expected = [0.0; 17];
        for s in &real.samples {
            let rounds = s.text.matches("HUMAN: ").count();
            expected[rounds - 1] += 1.0;
        }
        for (n, e) in expected.iter().enumerate() {
            assert!((rep.weight(&n.to_string()).unwrap() - e / 10.0).abs() < 1e-12);
        }
        let loose = fit_histograms(&real, &g, &DpParams::new(1e300, 10, 3)).unwrap();
        let rep_loose = loose.get(&HistogramKey::Repetitions(star.head.clone())).unwrap();
        for ((_, a), (_, b)) in rep.bins.iter().zip(&rep_loose.bins) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn generated_samples_parse() {
        let (g, real) = setup();
        for eps in [1.0, 2.0, 4.0] {
            let synth = fit_and_generate(&real, &g, &DpParams::new(eps, 50, 7)).unwrap();
            assert_eq!(synth.len(), 50);
            for s in &synth.samples {
                assert!(parse(&g, &s.text).is_parsed(), "{:?}", s.text);
                assert!(s.text.starts_with("HUMAN: "));
                let h = s.text.matches("HUMAN: ").count();
                assert_eq!(h, s.text.matches("GPT: ").count());
            }
        }
    }

    #[test]
    fn generation_is_seeded() {
        let (g, real) = setup();
        let a = fit_and_generate(&real, &g, &DpParams::new(2.0, 20, 5)).unwrap();
        let b = fit_and_generate(&real, &g, &DpParams::new(2.0, 20, 5)).unwrap();
        assert_eq!(a, b);
        let c = fit_and_generate(&real, &g, &DpParams::new(2.0, 20, 6)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn errors() {
        let (g, _) = setup();
        let junk = Corpus::parse_str("nope\n", CorpusFormat::Lines, CorpusRole::Real).unwrap();
        assert_eq!(fit_histograms(&junk, &g, &DpParams::new(1.0, 1, 0)), Err(DpError::NoParsedSamples));
        assert!(matches!(fit_histograms(&junk, &g, &DpParams::new(0.0, 1, 0)), Err(DpError::InvalidParams(_))));

        let deep = Grammar::load("s: \"a\" s | \"b\"").unwrap();
        let real = Corpus::parse_str("aaaab\n", CorpusFormat::Lines, CorpusRole::Real).unwrap();
        let mut params = DpParams::new(1.0, 5, 1);
        let h = exact_histograms(&real, &deep, &params).unwrap();
        params.max_derivation_depth = 2;
        let forced = Histograms {
            epsilon: 1.0,
            histograms: h
                .histograms
                .iter()
                .map(|x| NoisyHistogram {
                    bins: vec![("0".into(), 1.0), ("1".into(), 0.0)],
                    ..x.clone()
                })
                .collect(),
        };
        assert_eq!(generate(&deep, &forced, &params), Err(DpError::DepthExceeded(2)));
    }

    proptest! {
        #[test]
        fn budget_split_is_exact(eps in 1e-6f64..1e6, parts in 1usize..200) {
            let shares = split_budget(eps, parts);
            prop_assert_eq!(shares.len(), parts);
            prop_assert_eq!(shares.iter().sum::<f64>(), eps);
            prop_assert!(shares.iter().all(|s| *s > 0.0));
        }
    }
}
