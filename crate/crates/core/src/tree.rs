//! Parse trees, node collection, key-node pair matching and built-in
//! attributes.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::grammar::{Grammar, RuleId, TerminalId, TerminalKind};

/// Full derivation as produced by the parser, auxiliary rules included.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Derivation {
    Rule {
        rule: RuleId,
        alternative: usize,
        span: (usize, usize),
        children: Vec<Derivation>,
    },
    Token {
        terminal: TerminalId,
        span: (usize, usize),
    },
}

impl Derivation {
    pub fn span(&self) -> (usize, usize) {
        match self {
            Derivation::Rule { span, .. } | Derivation::Token { span, .. } => *span,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeKind {
    Rule,
    /// Leaf matched by a literal terminal (format tokens such as `"HUMAN: "`).
    Literal,
    /// Leaf matched by a regex terminal.
    Pattern,
}

/// A node of the user-visible tree. Auxiliary rules are spliced into their
/// parents, so the children of a rule node are exactly the symbols the user
/// wrote, with repetitions expanded in place.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseNode {
    pub node_type: String,
    pub kind: NodeKind,
    /// Offsets in Unicode scalar values, end exclusive.
    pub span: (usize, usize),
    pub text: String,
    pub children: Vec<ParseNode>,
}

impl ParseNode {
    pub fn is_leaf(&self) -> bool {
        self.kind != NodeKind::Rule
    }

    /// Node text with literal format tokens removed.
    pub fn content(&self) -> String {
        let mut out = String::new();
        self.push_content(&mut out);
        out
    }

    fn push_content(&self, out: &mut String) {
        match self.kind {
            NodeKind::Literal => {}
            NodeKind::Pattern => out.push_str(&self.text),
            NodeKind::Rule => self.children.iter().for_each(|c| c.push_content(out)),
        }
    }

    /// Leaves in order.
    pub fn leaves(&self) -> Vec<&ParseNode> {
        let mut out = Vec::new();
        fn walk<'a>(n: &'a ParseNode, out: &mut Vec<&'a ParseNode>) {
            if n.is_leaf() {
                out.push(n);
            } else {
                n.children.iter().for_each(|c| walk(c, out));
            }
        }
        walk(self, &mut out);
        out
    }

    /// Pre-order traversal.
    pub fn preorder(&self) -> Vec<&ParseNode> {
        let mut out = Vec::new();
        let mut stack = vec![self];
        while let Some(n) = stack.pop() {
            out.push(n);
            stack.extend(n.children.iter().rev());
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseTree {
    pub root: ParseNode,
    pub derivation: Derivation,
}

impl ParseTree {
    pub(crate) fn from_derivation(grammar: &Grammar, input: &str, derivation: Derivation) -> Self {
        let chars: Vec<char> = input.chars().collect();
        let text = |(s, e): (usize, usize)| chars[s..e].iter().collect::<String>();
        let mut nodes = build_nodes(grammar, &derivation, &text);
        debug_assert_eq!(nodes.len(), 1, "start rule is never auxiliary");
        ParseTree {
            root: nodes.remove(0),
            derivation,
        }
    }
}

fn build_nodes(grammar: &Grammar, d: &Derivation, text: &dyn Fn((usize, usize)) -> String) -> Vec<ParseNode> {
    match d {
        Derivation::Token { terminal, span } => {
            let t = grammar.terminal(*terminal);
            vec![ParseNode {
                node_type: t.name.clone(),
                kind: match t.kind {
                    TerminalKind::Literal => NodeKind::Literal,
                    TerminalKind::Regex => NodeKind::Pattern,
                },
                span: *span,
                text: text(*span),
                children: Vec::new(),
            }]
        }
        Derivation::Rule { rule, span, children, .. } => {
            let children: Vec<ParseNode> = children.iter().flat_map(|c| build_nodes(grammar, c, text)).collect();
            let r = grammar.rule(*rule);
            if r.is_auxiliary() {
                children
            } else {
                vec![ParseNode {
                    node_type: r.head.clone(),
                    kind: NodeKind::Rule,
                    span: *span,
                    text: text(*span),
                    children,
                }]
            }
        }
    }
}

/// Rule nodes (and named-terminal leaves) whose type is in `types`, in
/// pre-order. An empty `types` selects every rule node.
pub fn collect_nodes<'t>(tree: &'t ParseTree, types: &BTreeSet<String>) -> Vec<&'t ParseNode> {
    tree.root
        .preorder()
        .into_iter()
        .filter(|n| {
            if types.is_empty() {
                n.kind == NodeKind::Rule
            } else {
                types.contains(&n.node_type)
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Relation {
    NextSibling,
    SameParent,
    DocumentAdjacent,
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Relation::NextSibling => "next-sibling",
            Relation::SameParent => "same-parent",
            Relation::DocumentAdjacent => "document-adjacent",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KeyPairPattern {
    pub a: String,
    pub b: String,
    pub relation: Relation,
}

impl KeyPairPattern {
    pub fn new(a: impl Into<String>, b: impl Into<String>, relation: Relation) -> Self {
        KeyPairPattern {
            a: a.into(),
            b: b.into(),
            relation,
        }
    }

    /// Stable label, e.g. `query,response,next-sibling`.
    pub fn label(&self) -> String {
        format!("{},{},{}", self.a, self.b, self.relation)
    }

    /// Names of the pattern's types missing from `grammar`.
    pub fn unknown_types(&self, grammar: &Grammar) -> Vec<String> {
        [&self.a, &self.b]
            .into_iter()
            .filter(|t| !grammar.has_node_type(t))
            .cloned()
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct NodePair<'t> {
    pub a: &'t ParseNode,
    pub b: &'t ParseNode,
}

/// Rule-node children of `n` (format-token leaves are not siblings).
fn rule_children(n: &ParseNode) -> impl Iterator<Item = &ParseNode> {
    n.children.iter().filter(|c| c.kind == NodeKind::Rule || c.kind == NodeKind::Pattern)
}

/// All pairs in `tree` related by `pattern`, ordered by the position of `a`.
pub fn match_pairs<'t>(tree: &'t ParseTree, pattern: &KeyPairPattern) -> Vec<NodePair<'t>> {
    let mut pairs = Vec::new();
    match pattern.relation {
        Relation::NextSibling | Relation::SameParent => {
            // Every node is visited before any of its descendants, and each
            // parent's pairs are grouped by `a`; sort by `a` afterwards.
            for parent in tree.root.preorder() {
                let kids: Vec<&ParseNode> = rule_children(parent).collect();
                for (i, a) in kids.iter().enumerate() {
                    if a.node_type != pattern.a {
                        continue;
                    }
                    match pattern.relation {
                        Relation::NextSibling => {
                            if let Some(b) = kids.get(i + 1) {
                                if b.node_type == pattern.b {
                                    pairs.push(NodePair { a, b });
                                }
                            }
                        }
                        _ => {
                            for b in kids[i + 1..].iter().filter(|b| b.node_type == pattern.b) {
                                pairs.push(NodePair { a, b });
                            }
                        }
                    }
                }
            }
            let rank: HashMap<*const ParseNode, usize> = tree
                .root
                .preorder()
                .into_iter()
                .enumerate()
                .map(|(i, n)| (n as *const _, i))
                .collect();
            pairs.sort_by_key(|p| (rank[&(p.a as *const _)], rank[&(p.b as *const _)]));
        }
        Relation::DocumentAdjacent => {
            let nodes = tree.root.preorder();
            for (i, a) in nodes.iter().enumerate() {
                if a.node_type != pattern.a {
                    continue;
                }
                // Skip a's own subtree, then find the first b before any other a.
                for n in nodes[i + 1..].iter().filter(|n| n.span.0 >= a.span.1 && !std::ptr::eq(**n, *a)) {
                    if n.node_type == pattern.b {
                        pairs.push(NodePair { a, b: n });
                        break;
                    }
                    if n.node_type == pattern.a {
                        break;
                    }
                }
            }
        }
    }
    pairs
}

/// Splits text into tokens. Both corpora must use the same tokenizer.
pub trait Tokenizer: Send + Sync {
    fn tokenize<'a>(&self, text: &'a str) -> Vec<&'a str>;
}

/// Maximal runs of non-whitespace characters.
#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceTokenizer;

impl Tokenizer for WhitespaceTokenizer {
    fn tokenize<'a>(&self, text: &'a str) -> Vec<&'a str> {
        text.split_whitespace().collect()
    }
}

pub fn token_length(text: &str, tokenizer: &dyn Tokenizer) -> usize {
    tokenizer.tokenize(text).len()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuiltinAttribute {
    TokenLength,
    NumNodes,
    NodeType,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("unknown attribute `{0}`")]
pub struct UnknownAttribute(pub String);

impl FromStr for BuiltinAttribute {
    type Err = UnknownAttribute;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "token_length" => Ok(BuiltinAttribute::TokenLength),
            "num_nodes" => Ok(BuiltinAttribute::NumNodes),
            "node_type" => Ok(BuiltinAttribute::NodeType),
            other => Err(UnknownAttribute(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AttrValue {
    Numeric(f64),
    Categorical(String),
}

impl Serialize for AttrValue {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            AttrValue::Numeric(x) => s.serialize_f64(*x),
            AttrValue::Categorical(c) => s.serialize_str(c),
        }
    }
}

/// Built-in attribute of a single node. Token length counts the node's
/// content, i.e. without literal format tokens.
pub fn node_attribute(node: &ParseNode, attr: BuiltinAttribute, tokenizer: &dyn Tokenizer) -> AttrValue {
    match attr {
        BuiltinAttribute::TokenLength => AttrValue::Numeric(token_length(&node.content(), tokenizer) as f64),
        BuiltinAttribute::NumNodes => {
            AttrValue::Numeric(node.preorder().into_iter().filter(|n| n.kind == NodeKind::Rule).count() as f64)
        }
        BuiltinAttribute::NodeType => AttrValue::Categorical(node.node_type.clone()),
    }
}

/// Built-in attribute of a whole sample. `num_nodes` counts nodes whose
/// type is in `count_types` (every rule node when empty).
pub fn sample_attribute(
    text: &str,
    tree: &ParseTree,
    attr: BuiltinAttribute,
    count_types: &BTreeSet<String>,
    tokenizer: &dyn Tokenizer,
) -> AttrValue {
    match attr {
        BuiltinAttribute::TokenLength => AttrValue::Numeric(token_length(text, tokenizer) as f64),
        BuiltinAttribute::NumNodes => AttrValue::Numeric(collect_nodes(tree, count_types).len() as f64),
        BuiltinAttribute::NodeType => AttrValue::Categorical(tree.root.node_type.clone()),
    }
}
