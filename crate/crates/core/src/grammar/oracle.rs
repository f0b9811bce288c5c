//! Exhaustive derivation enumeration. Slow and only defined for
//! literal-only grammars and short inputs; it exists to cross-check the
//! Earley parser and shares no code with it.

use std::collections::HashSet;

use super::{Grammar, Symbol, TerminalKind};

pub const ORACLE_MAX_INPUT: usize = 16;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum OracleError {
    #[error("derivation search hit depth {0} without finishing")]
    DepthExceeded(usize),
    #[error("oracle only supports literal terminals")]
    RegexTerminal,
    #[error("oracle inputs are limited to {ORACLE_MAX_INPUT} characters")]
    InputTooLong,
}

/// Whether some derivation of `g` yields exactly `input`.
///
/// Enumerates, for every rule, the set of strings derivable by trees of
/// height at most `h`, for `h = 1, 2, ...` until the sets stop growing.
/// Only yields that occur as substrings of `input` are kept, which keeps
/// the sets finite. `max_depth` bounds `h`.
pub fn oracle_parse(g: &Grammar, input: &str, max_depth: usize) -> Result<bool, OracleError> {
    if g.terminals().iter().any(|t| t.kind != TerminalKind::Literal) {
        return Err(OracleError::RegexTerminal);
    }
    if input.chars().count() > ORACLE_MAX_INPUT {
        return Err(OracleError::InputTooLong);
    }
    let chars: Vec<char> = input.chars().collect();
    let mut substrings: HashSet<String> = HashSet::new();
    for i in 0..=chars.len() {
        for j in i..=chars.len() {
            substrings.insert(chars[i..j].iter().collect());
        }
    }

    let mut yields: Vec<HashSet<String>> = vec![HashSet::new(); g.rules().len()];
    for _ in 0..max_depth {
        let mut next = yields.clone();
        for (i, rule) in g.rules().iter().enumerate() {
            for alt in &rule.alternatives {
                let mut partial: HashSet<String> = HashSet::from([String::new()]);
                for sym in alt {
                    let options: Vec<&str> = match sym {
                        Symbol::Terminal(t) => vec![g.terminal(*t).pattern.as_str()],
                        Symbol::Rule(r) => yields[r.0].iter().map(String::as_str).collect(),
                    };
                    partial = partial
                        .iter()
                        .flat_map(|p| options.iter().map(move |o| format!("{p}{o}")))
                        .filter(|s| substrings.contains(s))
                        .collect();
                    if partial.is_empty() {
                        break;
                    }
                }
                next[i].extend(partial);
            }
        }
        if next == yields {
            return Ok(yields[g.start().0].contains(input));
        }
        yields = next;
    }
    if yields[g.start().0].contains(input) {
        Ok(true)
    } else {
        Err(OracleError::DepthExceeded(max_depth))
    }
}
