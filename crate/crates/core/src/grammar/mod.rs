//! Context-free grammars with literal and regex terminals.
//!
//! Grammar files use one rule per line:
//!
//! ```text
//! ShareGPT: conversation (conversation)*
//! conversation: query response
//! query: "HUMAN: " query_text
//! query_text: /(?s).+?(?=(?:GPT: |$))/
//! ```
//!
//! Alternatives are separated by `|`, literals are double-quoted, regexes sit
//! between slashes, `( ... )*` is the only repetition form and `//` starts a
//! comment. A declaration whose whole body is a single regex defines a named
//! terminal; every other declaration is a rule. The first declaration is the
//! start rule.

mod earley;
mod loader;
mod oracle;

use std::fmt;

use fancy_regex::Regex;

pub use earley::{parse, ParseOutcome};
pub use oracle::{oracle_parse, OracleError};

/// Index of a rule inside [`Grammar::rules`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RuleId(pub usize);

/// Index of a terminal inside [`Grammar::terminals`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TerminalId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Symbol {
    Rule(RuleId),
    Terminal(TerminalId),
}

/// What a rule was written as. Auxiliary rules are introduced while
/// desugaring groups and stars, and never show up in parse trees.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RuleOrigin {
    User,
    Star,
    Group,
}

#[derive(Debug, Clone)]
pub struct Rule {
    pub head: String,
    /// An empty alternative is an explicit epsilon (written `""`).
    pub alternatives: Vec<Vec<Symbol>>,
    pub origin: RuleOrigin,
}

impl Rule {
    pub fn is_auxiliary(&self) -> bool {
        self.origin != RuleOrigin::User
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TerminalKind {
    Literal,
    Regex,
}

#[derive(Debug, Clone)]
pub struct Terminal {
    /// Declared name, or the quoted source text for inline terminals.
    pub name: String,
    pub kind: TerminalKind,
    /// Literal text, or regex source with any trailing flags folded in.
    pub pattern: String,
    /// True for terminals written inline in a rule body.
    pub anonymous: bool,
    matcher: Option<Regex>,
}

impl Terminal {
    /// Length in bytes of the match of this terminal at the start of `rest`.
    ///
    /// Literals match by prefix comparison; regexes are anchored at the start
    /// of `rest` and yield the single leftmost match. Lookbehind cannot see
    /// text before the scan position.
    pub fn match_prefix(&self, rest: &str) -> Option<usize> {
        match self.kind {
            TerminalKind::Literal => rest.starts_with(&self.pattern).then_some(self.pattern.len()),
            TerminalKind::Regex => {
                let re = self.matcher.as_ref().expect("regex terminal compiled at load");
                match re.find(rest) {
                    Ok(Some(m)) if m.start() == 0 => Some(m.end()),
                    _ => None,
                }
            }
        }
    }
}

/// A validated, desugared grammar. Immutable once loaded.
#[derive(Debug, Clone)]
pub struct Grammar {
    rules: Vec<Rule>,
    terminals: Vec<Terminal>,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum GrammarError {
    #[error("syntax error at line {line}, column {col}: {message}")]
    Syntax {
        line: usize,
        col: usize,
        message: String,
    },
    #[error("line {line}, column {col}: unknown symbol `{name}`")]
    UnknownSymbol { name: String, line: usize, col: usize },
    #[error("terminal `{name}` has an invalid regex: {reason}")]
    BadRegex { name: String, reason: String },
    #[error("line {line}: `{name}` is declared more than once")]
    Duplicate { name: String, line: usize },
    #[error("grammar source is empty")]
    Empty,
}

impl Grammar {
    /// Parse and validate grammar-file text.
    pub fn load(source: &str) -> Result<Self, GrammarError> {
        loader::load(source)
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn rule(&self, id: RuleId) -> &Rule {
        &self.rules[id.0]
    }

    pub fn terminals(&self) -> &[Terminal] {
        &self.terminals
    }

    pub fn terminal(&self, id: TerminalId) -> &Terminal {
        &self.terminals[id.0]
    }

    pub fn start(&self) -> RuleId {
        RuleId(0)
    }

    pub fn start_symbol(&self) -> &str {
        &self.rules[0].head
    }

    pub fn rule_id(&self, head: &str) -> Option<RuleId> {
        self.rules.iter().position(|r| r.head == head).map(RuleId)
    }

    pub fn terminal_id(&self, name: &str) -> Option<TerminalId> {
        self.terminals.iter().position(|t| t.name == name).map(TerminalId)
    }

    /// Whether `name` can appear as a node type in parse trees: a user rule
    /// or a named terminal.
    pub fn has_node_type(&self, name: &str) -> bool {
        self.rules.iter().any(|r| !r.is_auxiliary() && r.head == name)
            || self.terminals.iter().any(|t| !t.anonymous && t.name == name)
    }

    /// Names of all user-written rules, in declaration order.
    pub fn node_types(&self) -> Vec<&str> {
        self.rules
            .iter()
            .filter(|r| !r.is_auxiliary())
            .map(|r| r.head.as_str())
            .collect()
    }

    pub fn user_rule_count(&self) -> usize {
        self.rules.iter().filter(|r| !r.is_auxiliary()).count()
    }

    pub fn auxiliary_rule_count(&self) -> usize {
        self.rules.len() - self.user_rule_count()
    }

    pub fn count_terminals(&self, kind: TerminalKind) -> usize {
        self.terminals.iter().filter(|t| t.kind == kind).count()
    }

    /// True when every terminal is a literal.
    pub fn is_literal_only(&self) -> bool {
        self.terminals.iter().all(|t| t.kind == TerminalKind::Literal)
    }

    /// Nonterminals that derive the empty string, by fixpoint over the rules.
    /// Regex terminals are treated as non-nullable.
    pub fn nullable(&self) -> Vec<bool> {
        let mut nullable = vec![false; self.rules.len()];
        loop {
            let mut changed = false;
            for (i, rule) in self.rules.iter().enumerate() {
                if nullable[i] {
                    continue;
                }
                let derives_empty = rule.alternatives.iter().any(|alt| {
                    alt.iter().all(|s| match s {
                        Symbol::Rule(r) => nullable[r.0],
                        Symbol::Terminal(_) => false,
                    })
                });
                if derives_empty {
                    nullable[i] = true;
                    changed = true;
                }
            }
            if !changed {
                return nullable;
            }
        }
    }
}

impl fmt::Display for Grammar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for rule in &self.rules {
            write!(f, "{}:", rule.head)?;
            for (i, alt) in rule.alternatives.iter().enumerate() {
                if i > 0 {
                    write!(f, " |")?;
                }
                if alt.is_empty() {
                    write!(f, " \"\"")?;
                }
                for sym in alt {
                    match sym {
                        Symbol::Rule(r) => write!(f, " {}", self.rules[r.0].head)?,
                        Symbol::Terminal(t) => write!(f, " {}", self.terminals[t.0].name)?,
                    }
                }
            }
            writeln!(f)?;
        }
        for t in self.terminals.iter().filter(|t| !t.anonymous) {
            writeln!(f, "{}: /{}/", t.name, t.pattern)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;
