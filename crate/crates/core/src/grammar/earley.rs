//! Scannerless Earley recognition over Unicode scalar offsets, followed by
//! deterministic extraction of one derivation.

use std::collections::{HashMap, HashSet};

use super::{Grammar, RuleId, Symbol, TerminalId};
use crate::tree::{Derivation, ParseTree};

#[derive(Debug, Clone, PartialEq)]
pub enum ParseOutcome {
    Parsed(ParseTree),
    /// Input rejected; `position` is the furthest offset any Earley item reached.
    Failed { position: usize },
}

impl ParseOutcome {
    pub fn is_parsed(&self) -> bool {
        matches!(self, ParseOutcome::Parsed(_))
    }

    pub fn tree(&self) -> Option<&ParseTree> {
        match self {
            ParseOutcome::Parsed(t) => Some(t),
            ParseOutcome::Failed { .. } => None,
        }
    }

    pub fn failure_position(&self) -> Option<usize> {
        match self {
            ParseOutcome::Parsed(_) => None,
            ParseOutcome::Failed { position } => Some(*position),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct Item {
    rule: u32,
    alt: u32,
    dot: u32,
    origin: u32,
}

#[derive(Default)]
struct EarleySet {
    items: Vec<Item>,
    seen: HashSet<Item>,
    /// Items whose next symbol is the keyed rule.
    waiting: HashMap<u32, Vec<Item>>,
    /// Rules completed in this set with origin equal to this set.
    nulled: HashSet<u32>,
}

impl EarleySet {
    fn add(&mut self, item: Item) -> bool {
        if self.seen.insert(item) {
            self.items.push(item);
            true
        } else {
            false
        }
    }
}

struct Chart<'g> {
    grammar: &'g Grammar,
    chars: Vec<char>,
    /// Byte offset of each char, plus the total length.
    byte_at: Vec<usize>,
    input: &'g str,
    sets: Vec<EarleySet>,
    matches: HashMap<(u32, u32), Option<u32>>,
    /// (rule, origin) -> end offsets where the rule completed.
    ends: HashMap<(u32, u32), Vec<u32>>,
    completed_alts: HashSet<(u32, u32, u32, u32)>,
}

impl<'g> Chart<'g> {
    fn new(grammar: &'g Grammar, input: &'g str) -> Self {
        let chars: Vec<char> = input.chars().collect();
        let mut byte_at: Vec<usize> = input.char_indices().map(|(b, _)| b).collect();
        byte_at.push(input.len());
        let n = chars.len();
        Chart {
            grammar,
            chars,
            byte_at,
            input,
            sets: (0..=n).map(|_| EarleySet::default()).collect(),
            matches: HashMap::new(),
            ends: HashMap::new(),
            completed_alts: HashSet::new(),
        }
    }

    fn alt(&self, item: &Item) -> &'g [Symbol] {
        &self.grammar.rules[item.rule as usize].alternatives[item.alt as usize]
    }

    fn char_offset(&self, byte: usize) -> usize {
        self.byte_at.binary_search(&byte).expect("match ends on a char boundary")
    }

    fn scan(&mut self, terminal: u32, pos: u32) -> Option<u32> {
        if let Some(m) = self.matches.get(&(terminal, pos)) {
            return *m;
        }
        let start = self.byte_at[pos as usize];
        let rest = &self.input[start..];
        let m = self.grammar.terminals[terminal as usize]
            .match_prefix(rest)
            .map(|len| self.char_offset(start + len) as u32);
        self.matches.insert((terminal, pos), m);
        m
    }

    fn advance(item: Item) -> Item {
        Item {
            dot: item.dot + 1,
            ..item
        }
    }

    fn recognize(&mut self) {
        let n = self.chars.len();
        let start = self.grammar.start().0 as u32;
        for alt in 0..self.grammar.rules[start as usize].alternatives.len() {
            self.sets[0].add(Item {
                rule: start,
                alt: alt as u32,
                dot: 0,
                origin: 0,
            });
        }
        for i in 0..=n {
            let mut cursor = 0;
            while cursor < self.sets[i].items.len() {
                let item = self.sets[i].items[cursor];
                cursor += 1;
                let alt = self.alt(&item);
                match alt.get(item.dot as usize) {
                    None => self.complete(i, item),
                    Some(Symbol::Rule(RuleId(next))) => {
                        let next = *next as u32;
                        self.sets[i].waiting.entry(next).or_default().push(item);
                        for a in 0..self.grammar.rules[next as usize].alternatives.len() {
                            self.sets[i].add(Item {
                                rule: next,
                                alt: a as u32,
                                dot: 0,
                                origin: i as u32,
                            });
                        }
                        if self.sets[i].nulled.contains(&next) {
                            self.sets[i].add(Self::advance(item));
                        }
                    }
                    Some(Symbol::Terminal(TerminalId(t))) => {
                        if let Some(end) = self.scan(*t as u32, i as u32) {
                            self.sets[end as usize].add(Self::advance(item));
                        }
                    }
                }
            }
        }
    }

    fn complete(&mut self, i: usize, item: Item) {
        self.completed_alts.insert((item.rule, item.alt, item.origin, i as u32));
        let ends = self.ends.entry((item.rule, item.origin)).or_default();
        if !ends.contains(&(i as u32)) {
            ends.push(i as u32);
        }
        let origin = item.origin as usize;
        if origin == i {
            self.sets[i].nulled.insert(item.rule);
        }
        let parents = self.sets[origin].waiting.get(&item.rule).cloned().unwrap_or_default();
        for parent in parents {
            self.sets[i].add(Self::advance(parent));
        }
    }

    fn furthest(&self) -> usize {
        self.sets.iter().rposition(|s| !s.items.is_empty()).unwrap_or(0)
    }

    fn accepted(&self) -> bool {
        let n = self.chars.len() as u32;
        let start = self.grammar.start().0 as u32;
        self.ends.get(&(start, 0)).is_some_and(|e| e.contains(&n))
    }
}

/// Builds one derivation from a finished chart. Alternatives are tried in
/// declaration order and each nonterminal takes its shortest feasible span.
struct Extractor<'c, 'g> {
    chart: &'c Chart<'g>,
    active: HashSet<(u32, u32, u32)>,
}

impl Extractor<'_, '_> {
    fn derive_rule(&mut self, rule: u32, start: u32, end: u32) -> Option<Derivation> {
        if !self.active.insert((rule, start, end)) {
            return None;
        }
        let grammar = self.chart.grammar;
        let mut result = None;
        for alt in 0..grammar.rules[rule as usize].alternatives.len() as u32 {
            if !self.chart.completed_alts.contains(&(rule, alt, start, end)) {
                continue;
            }
            let mut failed = HashSet::new();
            let mut children = Vec::new();
            if self.sequence(rule, alt, start, end, 0, start, &mut failed, &mut children) {
                children.reverse();
                result = Some(Derivation::Rule {
                    rule: RuleId(rule as usize),
                    alternative: alt as usize,
                    span: (start as usize, end as usize),
                    children,
                });
                break;
            }
        }
        self.active.remove(&(rule, start, end));
        result
    }

    /// Match symbols `k..` of the alternative over `pos..end`; on success the
    /// children are pushed in reverse order.
    #[allow(clippy::too_many_arguments)]
    fn sequence(
        &mut self,
        rule: u32,
        alt: u32,
        origin: u32,
        end: u32,
        k: usize,
        pos: u32,
        failed: &mut HashSet<(usize, u32)>,
        out: &mut Vec<Derivation>,
    ) -> bool {
        let symbols = &self.chart.grammar.rules[rule as usize].alternatives[alt as usize];
        if k == symbols.len() {
            return pos == end;
        }
        if failed.contains(&(k, pos)) {
            return false;
        }
        let reached = |chart: &Chart, q: u32| {
            chart.sets[q as usize].seen.contains(&Item {
                rule,
                alt,
                dot: k as u32 + 1,
                origin,
            })
        };
        match symbols[k] {
            Symbol::Terminal(TerminalId(t)) => {
                if let Some(Some(q)) = self.chart.matches.get(&(t as u32, pos)).copied() {
                    if q <= end && reached(self.chart, q) && self.sequence(rule, alt, origin, end, k + 1, q, failed, out) {
                        out.push(Derivation::Token {
                            terminal: TerminalId(t),
                            span: (pos as usize, q as usize),
                        });
                        return true;
                    }
                }
            }
            Symbol::Rule(RuleId(sub)) => {
                let mut candidates: Vec<u32> = self
                    .chart
                    .ends
                    .get(&(sub as u32, pos))
                    .map(|e| e.iter().copied().filter(|&q| q <= end).collect())
                    .unwrap_or_default();
                candidates.sort_unstable();
                for q in candidates {
                    if !reached(self.chart, q) {
                        continue;
                    }
                    let mark = out.len();
                    if self.sequence(rule, alt, origin, end, k + 1, q, failed, out) {
                        if let Some(child) = self.derive_rule(sub as u32, pos, q) {
                            out.push(child);
                            return true;
                        }
                        out.truncate(mark);
                    }
                }
            }
        }
        failed.insert((k, pos));
        false
    }
}

/// Parse `input` under `grammar`.
pub fn parse(grammar: &Grammar, input: &str) -> ParseOutcome {
    let mut chart = Chart::new(grammar, input);
    chart.recognize();
    if !chart.accepted() {
        return ParseOutcome::Failed {
            position: chart.furthest(),
        };
    }
    let n = chart.chars.len() as u32;
    let mut extractor = Extractor {
        chart: &chart,
        active: HashSet::new(),
    };
    let derivation = extractor
        .derive_rule(grammar.start().0 as u32, 0, n)
        .expect("accepted input has a derivation");
    ParseOutcome::Parsed(ParseTree::from_derivation(grammar, input, derivation))
}
