use std::collections::{HashMap, HashSet};

use fancy_regex::Regex;

use super::{Grammar, GrammarError, Rule, RuleId, RuleOrigin, Symbol, Terminal, TerminalId, TerminalKind};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Str(String),
    Regex(String),
    Colon,
    Pipe,
    LParen,
    RParen,
    Star,
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: usize,
    col: usize,
}

fn syntax(line: usize, col: usize, message: impl Into<String>) -> GrammarError {
    GrammarError::Syntax {
        line,
        col,
        message: message.into(),
    }
}

/// Tokenize one physical line. Stops at a `//` comment.
fn lex_line(text: &str, line: usize) -> Result<Vec<Spanned>, GrammarError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let col = i + 1;
        let push = |out: &mut Vec<Spanned>, tok| out.push(Spanned { tok, line, col });
        match c {
            c if c.is_whitespace() => i += 1,
            '/' if chars.get(i + 1) == Some(&'/') => break,
            ':' => {
                push(&mut out, Tok::Colon);
                i += 1;
            }
            '|' => {
                push(&mut out, Tok::Pipe);
                i += 1;
            }
            '(' => {
                push(&mut out, Tok::LParen);
                i += 1;
            }
            ')' => {
                push(&mut out, Tok::RParen);
                i += 1;
            }
            '*' => {
                push(&mut out, Tok::Star);
                i += 1;
            }
            '"' => {
                let mut lit = String::new();
                i += 1;
                loop {
                    match chars.get(i) {
                        None => return Err(syntax(line, col, "unterminated string literal")),
                        Some('"') => {
                            i += 1;
                            break;
                        }
                        Some('\\') => {
                            let escaped = chars
                                .get(i + 1)
                                .ok_or_else(|| syntax(line, i + 1, "dangling escape"))?;
                            match escaped {
                                'n' => lit.push('\n'),
                                't' => lit.push('\t'),
                                'r' => lit.push('\r'),
                                '"' => lit.push('"'),
                                '\\' => lit.push('\\'),
                                other => {
                                    lit.push('\\');
                                    lit.push(*other);
                                }
                            }
                            i += 2;
                        }
                        Some(&ch) => {
                            lit.push(ch);
                            i += 1;
                        }
                    }
                }
                push(&mut out, Tok::Str(lit));
            }
            '/' => {
                let mut src = String::new();
                i += 1;
                loop {
                    match chars.get(i) {
                        None => return Err(syntax(line, col, "unterminated regex")),
                        Some('/') => {
                            i += 1;
                            break;
                        }
                        Some('\\') if chars.get(i + 1) == Some(&'/') => {
                            src.push('/');
                            i += 2;
                        }
                        Some('\\') => {
                            src.push('\\');
                            if let Some(&next) = chars.get(i + 1) {
                                src.push(next);
                            }
                            i += 2;
                        }
                        Some(&ch) => {
                            src.push(ch);
                            i += 1;
                        }
                    }
                }
                let mut flags = String::new();
                while let Some(&f) = chars.get(i) {
                    if matches!(f, 'i' | 'm' | 's' | 'x' | 'u') {
                        flags.push(f);
                        i += 1;
                    } else {
                        break;
                    }
                }
                if src.is_empty() {
                    return Err(syntax(line, col, "empty regex"));
                }
                let pattern = if flags.is_empty() {
                    src
                } else {
                    format!("(?{flags}){src}")
                };
                push(&mut out, Tok::Regex(pattern));
            }
            c if c.is_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                let ident: String = chars[start..i].iter().collect();
                push(&mut out, Tok::Ident(ident));
            }
            other => return Err(syntax(line, col, format!("unexpected character `{other}`"))),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
enum Item {
    Name(String, (usize, usize)),
    Str(String),
    Regex(String),
    Group(Vec<Vec<Item>>, bool),
}

struct Decl {
    name: String,
    line: usize,
    body: Vec<Vec<Item>>,
}

struct BodyParser<'a> {
    toks: &'a [Spanned],
    pos: usize,
    eol: (usize, usize),
}

impl BodyParser<'_> {
    fn peek(&self) -> Option<&Spanned> {
        self.toks.get(self.pos)
    }

    fn alternatives(&mut self, nested: bool) -> Result<Vec<Vec<Item>>, GrammarError> {
        let mut alts = vec![self.sequence()?];
        while let Some(Spanned { tok: Tok::Pipe, .. }) = self.peek() {
            self.pos += 1;
            alts.push(self.sequence()?);
        }
        if let Some(t) = self.peek() {
            if !(nested && t.tok == Tok::RParen) {
                return Err(syntax(t.line, t.col, format!("unexpected {:?}", t.tok)));
            }
        }
        Ok(alts)
    }

    fn sequence(&mut self) -> Result<Vec<Item>, GrammarError> {
        let mut items = Vec::new();
        while let Some(t) = self.peek().cloned() {
            match t.tok {
                Tok::Ident(name) => {
                    self.pos += 1;
                    items.push(Item::Name(name, (t.line, t.col)));
                }
                Tok::Str(s) => {
                    self.pos += 1;
                    items.push(Item::Str(s));
                }
                Tok::Regex(r) => {
                    self.pos += 1;
                    items.push(Item::Regex(r));
                }
                Tok::LParen => {
                    self.pos += 1;
                    let inner = self.alternatives(true)?;
                    match self.peek() {
                        Some(Spanned { tok: Tok::RParen, .. }) => self.pos += 1,
                        _ => return Err(syntax(t.line, t.col, "unclosed `(`")),
                    }
                    let star = matches!(self.peek(), Some(Spanned { tok: Tok::Star, .. }));
                    if star {
                        self.pos += 1;
                    }
                    items.push(Item::Group(inner, star));
                }
                Tok::Pipe | Tok::RParen => break,
                Tok::Star => return Err(syntax(t.line, t.col, "`*` must follow a parenthesized group")),
                Tok::Colon => return Err(syntax(t.line, t.col, "unexpected `:`")),
            }
        }
        if items.is_empty() {
            let (line, col) = self.peek().map(|t| (t.line, t.col)).unwrap_or(self.eol);
            return Err(syntax(line, col, "empty alternative (write \"\" for epsilon)"));
        }
        Ok(items)
    }
}

/// Head, line, body tokens and end-of-line position.
type PendingDecl = (String, usize, Vec<Spanned>, (usize, usize));

fn split_declarations(source: &str) -> Result<Vec<Decl>, GrammarError> {
    let mut decls: Vec<PendingDecl> = Vec::new();
    for (idx, text) in source.lines().enumerate() {
        let line = idx + 1;
        let toks = lex_line(text, line)?;
        let Some(first) = toks.first() else { continue };
        let eol = (line, text.chars().count() + 1);
        if first.tok == Tok::Pipe {
            let Some(prev) = decls.last_mut() else {
                return Err(syntax(line, first.col, "continuation line before any rule"));
            };
            prev.2.extend(toks);
            prev.3 = eol;
            continue;
        }
        match (&first.tok, toks.get(1).map(|t| &t.tok)) {
            (Tok::Ident(name), Some(Tok::Colon)) => {
                decls.push((name.clone(), line, toks[2..].to_vec(), eol));
            }
            _ => return Err(syntax(line, first.col, "expected `name: body`")),
        }
    }
    decls
        .into_iter()
        .map(|(name, line, toks, eol)| {
            let mut p = BodyParser { toks: &toks, pos: 0, eol };
            let body = p.alternatives(false)?;
            Ok(Decl { name, line, body })
        })
        .collect()
}

struct Lowering {
    rules: Vec<Rule>,
    terminals: Vec<Terminal>,
    rule_ids: HashMap<String, RuleId>,
    terminal_ids: HashMap<String, TerminalId>,
    taken: HashSet<String>,
    aux_counter: HashMap<String, usize>,
}

impl Lowering {
    fn inline_terminal(&mut self, kind: TerminalKind, pattern: String) -> Result<TerminalId, GrammarError> {
        let name = match kind {
            TerminalKind::Literal => format!("{:?}", pattern),
            TerminalKind::Regex => format!("/{pattern}/"),
        };
        if let Some(id) = self.terminal_ids.get(&name) {
            return Ok(*id);
        }
        let terminal = make_terminal(name.clone(), kind, pattern, true)?;
        let id = TerminalId(self.terminals.len());
        self.terminals.push(terminal);
        self.terminal_ids.insert(name, id);
        Ok(id)
    }

    fn fresh_aux(&mut self, head: &str, kind: &str) -> String {
        loop {
            let n = self.aux_counter.entry(head.to_string()).or_insert(0);
            let candidate = format!("{head}__{kind}{n}");
            *n += 1;
            if self.taken.insert(candidate.clone()) {
                return candidate;
            }
        }
    }

    fn lower_alternatives(&mut self, head: &str, alts: &[Vec<Item>]) -> Result<Vec<Vec<Symbol>>, GrammarError> {
        let mut out = Vec::with_capacity(alts.len());
        for alt in alts {
            if let [Item::Str(s)] = alt.as_slice() {
                if s.is_empty() {
                    out.push(Vec::new());
                    continue;
                }
            }
            let mut seq = Vec::new();
            self.lower_sequence(head, alt, &mut seq)?;
            out.push(seq);
        }
        Ok(out)
    }

    fn lower_sequence(&mut self, head: &str, items: &[Item], seq: &mut Vec<Symbol>) -> Result<(), GrammarError> {
        for item in items {
            match item {
                Item::Name(name, (line, col)) => {
                    if let Some(r) = self.rule_ids.get(name) {
                        seq.push(Symbol::Rule(*r));
                    } else if let Some(t) = self.terminal_ids.get(name) {
                        seq.push(Symbol::Terminal(*t));
                    } else {
                        return Err(GrammarError::UnknownSymbol {
                            name: name.clone(),
                            line: *line,
                            col: *col,
                        });
                    }
                }
                Item::Str(s) => {
                    if s.is_empty() {
                        return Err(GrammarError::Syntax {
                            line: 0,
                            col: 0,
                            message: format!("empty literal inside a sequence in rule `{head}`"),
                        });
                    }
                    seq.push(Symbol::Terminal(self.inline_terminal(TerminalKind::Literal, s.clone())?));
                }
                Item::Regex(r) => {
                    seq.push(Symbol::Terminal(self.inline_terminal(TerminalKind::Regex, r.clone())?));
                }
                Item::Group(inner, false) if inner.len() == 1 => {
                    self.lower_sequence(head, &inner[0], seq)?;
                }
                Item::Group(inner, star) => {
                    let origin = if *star { RuleOrigin::Star } else { RuleOrigin::Group };
                    let name = self.fresh_aux(head, if *star { "star" } else { "group" });
                    let id = RuleId(self.rules.len());
                    self.rules.push(Rule {
                        head: name.clone(),
                        alternatives: Vec::new(),
                        origin,
                    });
                    self.rule_ids.insert(name, id);
                    let mut alternatives = self.lower_alternatives(head, inner)?;
                    if *star {
                        // aux: X aux | ... | ""
                        alternatives.retain(|a| !a.is_empty());
                        for alt in &mut alternatives {
                            alt.push(Symbol::Rule(id));
                        }
                        alternatives.push(Vec::new());
                    }
                    self.rules[id.0].alternatives = alternatives;
                    seq.push(Symbol::Rule(id));
                }
            }
        }
        Ok(())
    }
}

fn make_terminal(name: String, kind: TerminalKind, pattern: String, anonymous: bool) -> Result<Terminal, GrammarError> {
    let matcher = match kind {
        TerminalKind::Literal => None,
        TerminalKind::Regex => Some(Regex::new(&format!("^(?:{pattern})")).map_err(|e| GrammarError::BadRegex {
            name: name.clone(),
            reason: e.to_string(),
        })?),
    };
    Ok(Terminal {
        name,
        kind,
        pattern,
        anonymous,
        matcher,
    })
}

pub(super) fn load(source: &str) -> Result<Grammar, GrammarError> {
    if source.trim().is_empty() {
        return Err(GrammarError::Empty);
    }
    let decls = split_declarations(source)?;
    if decls.is_empty() {
        return Err(GrammarError::Empty);
    }

    let mut lowering = Lowering {
        rules: Vec::new(),
        terminals: Vec::new(),
        rule_ids: HashMap::new(),
        terminal_ids: HashMap::new(),
        taken: HashSet::new(),
        aux_counter: HashMap::new(),
    };

    // Declare every name before lowering so bodies may reference later rules.
    let mut rule_decls = Vec::new();
    for (i, decl) in decls.iter().enumerate() {
        if !lowering.taken.insert(decl.name.clone()) {
            return Err(GrammarError::Duplicate {
                name: decl.name.clone(),
                line: decl.line,
            });
        }
        let named_terminal = match decl.body.as_slice() {
            [alt] => match alt.as_slice() {
                [Item::Regex(r)] if i > 0 => Some(r.clone()),
                _ => None,
            },
            _ => None,
        };
        match named_terminal {
            Some(pattern) => {
                let terminal = make_terminal(decl.name.clone(), TerminalKind::Regex, pattern, false)?;
                lowering.terminal_ids.insert(decl.name.clone(), TerminalId(lowering.terminals.len()));
                lowering.terminals.push(terminal);
            }
            None => {
                let id = RuleId(lowering.rules.len());
                lowering.rule_ids.insert(decl.name.clone(), id);
                lowering.rules.push(Rule {
                    head: decl.name.clone(),
                    alternatives: Vec::new(),
                    origin: RuleOrigin::User,
                });
                rule_decls.push((id, decl));
            }
        }
    }

    for (id, decl) in rule_decls {
        let alternatives = lowering.lower_alternatives(&decl.name, &decl.body).map_err(|e| match e {
            GrammarError::Syntax { line: 0, message, .. } => GrammarError::Syntax {
                line: decl.line,
                col: 1,
                message,
            },
            other => other,
        })?;
        lowering.rules[id.0].alternatives = alternatives;
    }

    Ok(Grammar {
        rules: lowering.rules,
        terminals: lowering.terminals,
    })
}
