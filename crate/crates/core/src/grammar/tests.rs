use proptest::prelude::*;

use super::*;
use crate::fixtures::SHAREGPT_GRAMMAR;
use crate::tree::ParseNode;

fn sharegpt() -> Grammar {
    Grammar::load(SHAREGPT_GRAMMAR).unwrap()
}

fn leaves_concat(n: &ParseNode) -> String {
    n.leaves().iter().map(|l| l.text.as_str()).collect()
}

#[test]
fn loads_sharegpt_listing() {
    let g = sharegpt();
    assert_eq!(g.start_symbol(), "ShareGPT");
    assert_eq!(g.user_rule_count(), 4);
    assert_eq!(g.auxiliary_rule_count(), 1);
    assert_eq!(g.rules().len(), 5);
    assert_eq!(g.count_terminals(TerminalKind::Regex), 2);
    assert_eq!(g.count_terminals(TerminalKind::Literal), 2);
    let star = &g.rules()[4];
    assert_eq!(star.origin, RuleOrigin::Star);
    // conversation star | epsilon
    assert_eq!(star.alternatives.len(), 2);
    assert!(star.alternatives[1].is_empty());
    assert!(g.rules().iter().all(|r| r.alternatives.iter().all(|a| a.iter().all(|s| match s {
        Symbol::Rule(id) => id.0 < g.rules().len(),
        Symbol::Terminal(id) => id.0 < g.terminals().len(),
    }))));
}

#[test]
fn minimal_grammar() {
    let g = Grammar::load("s: \"a\"").unwrap();
    assert_eq!(g.rules().len(), 1);
    assert_eq!(g.terminals().len(), 1);
    assert_eq!(g.terminals()[0].kind, TerminalKind::Literal);
    assert_eq!(g.start_symbol(), "s");
}

#[test]
fn undefined_symbol() {
    assert_eq!(Grammar::load("s: t").unwrap_err(), GrammarError::UnknownSymbol {
            name: "t".into(),
            line: 1,
            col: 4
        });
}

#[test]
fn bad_regex_names_the_terminal() {
    let err = Grammar::load("s: word\nword: /(unclosed/").unwrap_err();
    assert!(matches!(err, GrammarError::BadRegex { ref name, .. } if name == "word"), "{err:?}");
}

#[test]
fn syntax_errors_carry_position() {
    match Grammar::load("s: \"a\"\nt \"b\"").unwrap_err() {
        GrammarError::Syntax { line, col, .. } => assert_eq!((line, col), (2, 1)),
        other => panic!("{other:?}"),
    }
    match Grammar::load("s: \"a\" | ").unwrap_err() {
        GrammarError::Syntax { line, .. } => assert_eq!(line, 1),
        other => panic!("{other:?}"),
    }
    assert!(matches!(Grammar::load("s: \"a\" *"), Err(GrammarError::Syntax { .. })));
    assert!(matches!(Grammar::load("s: (\"a\""), Err(GrammarError::Syntax { .. })));
    assert_eq!(Grammar::load("  // only a comment\n").unwrap_err(), GrammarError::Empty);
}

#[test]
fn duplicate_and_colliding_names() {
    assert_eq!(Grammar::load("s: \"a\"\ns: \"b\"").unwrap_err(), GrammarError::Duplicate { name: "s".into(), line: 2 });
    assert_eq!(Grammar::load("s: t\nt: /x/\nt: \"y\"").unwrap_err(), GrammarError::Duplicate { name: "t".into(), line: 3 });
}

#[test]
fn comments_do_not_eat_regexes_or_strings() {
    let g = Grammar::load("s: \"//\" url // trailing\nurl: /https?:\\/\\/\\S+/").unwrap();
    assert!(parse(&g, "//http://x.y").is_parsed());
}

#[test]
fn continuation_lines_and_groups() {
    let g = Grammar::load("s: \"a\" (\"b\" | \"c\")*\n  | \"d\"").unwrap();
    for ok in ["a", "abcb", "d"] {
        assert!(parse(&g, ok).is_parsed(), "{ok}");
    }
    assert!(!parse(&g, "ad").is_parsed());
    assert!(g.rules().iter().all(|r| r.alternatives.iter().all(|a| !a.is_empty() || r.is_auxiliary())));
}

#[test]
fn sharegpt_single_round() {
    let g = sharegpt();
    let tree = parse(&g, "HUMAN: hi GPT: hello").tree().cloned().expect("parses");
    let convo = &tree.root.children;
    assert_eq!(convo.len(), 1);
    assert_eq!(convo[0].node_type, "conversation");
    let q = &convo[0].children[0];
    let r = &convo[0].children[1];
    assert_eq!((q.node_type.as_str(), q.content().as_str()), ("query", "hi "));
    assert_eq!((r.node_type.as_str(), r.content().as_str()), ("response", "hello"));
}

#[test]
fn sharegpt_rejects_unformatted_text() {
    let g = sharegpt();
    let outcome = parse(&g, "How are you? I'm doing well.");
    assert!(!outcome.is_parsed());
    assert_eq!(outcome.failure_position(), Some(0));
}

#[test]
fn sharegpt_failure_position_is_furthest_progress() {
    let g = sharegpt();
    // Scans "HUMAN: " and the query text, then nothing can follow.
    let outcome = parse(&g, "HUMAN: hi there");
    assert_eq!(outcome.failure_position(), Some(15));
}

#[test]
fn right_recursion() {
    let g = Grammar::load("s: \"a\" s | \"b\"").unwrap();
    assert!(parse(&g, "aab").is_parsed());
    assert!(!parse(&g, "aa").is_parsed());
    assert_eq!(parse(&g, "aa").failure_position(), Some(2));
}

#[test]
fn empty_input_needs_epsilon() {
    let g = Grammar::load("s: \"a\"").unwrap();
    assert!(!parse(&g, "").is_parsed());
    let g = Grammar::load("s: \"a\" | \"\"").unwrap();
    assert!(parse(&g, "").is_parsed());
    let g = Grammar::load("s: (\"a\")*").unwrap();
    assert!(parse(&g, "").is_parsed());
}

#[test]
fn nullable_chains_complete() {
    // b is nullable only through c, which is declared after it is used.
    let g = Grammar::load("s: b b \"x\"\nb: c\nc: \"\" | \"y\"").unwrap();
    for ok in ["x", "yx", "yyx"] {
        assert!(parse(&g, ok).is_parsed(), "{ok}");
    }
    assert!(!parse(&g, "yyyx").is_parsed());
}

#[test]
fn left_recursion_and_cycles() {
    let g = Grammar::load("s: s \"a\" | \"b\"").unwrap();
    assert!(parse(&g, "baaa").is_parsed());
    let g = Grammar::load("s: t | \"a\"\nt: s").unwrap();
    assert!(parse(&g, "a").is_parsed());
}

#[test]
fn first_alternative_wins_on_ambiguity() {
    let g = Grammar::load("s: x | y\nx: \"a\"\ny: \"a\"").unwrap();
    let tree = parse(&g, "a").tree().cloned().unwrap();
    assert_eq!(tree.root.children[0].node_type, "x");
}

#[test]
fn offsets_are_unicode_scalars() {
    let g = sharegpt();
    let input = "HUMAN: héllo wörld GPT: ça va 😀";
    let tree = parse(&g, input).tree().cloned().unwrap();
    assert_eq!(tree.root.span, (0, input.chars().count()));
    assert_eq!(leaves_concat(&tree.root), input);
}

#[test]
fn regex_flags_after_slash() {
    let g = Grammar::load("s: word\nword: /HELLO/i").unwrap();
    assert!(parse(&g, "hello").is_parsed());
}

#[test]
fn oracle_examples() {
    let g = Grammar::load("s: \"a\" s | \"b\"").unwrap();
    assert_eq!(oracle_parse(&g, "aab", 50), Ok(true));
    assert_eq!(oracle_parse(&g, "ba", 50), Ok(false));
    assert_eq!(oracle_parse(&sharegpt(), "x", 50), Err(OracleError::RegexTerminal));
    assert_eq!(oracle_parse(&g, "aaaaab", 3), Err(OracleError::DepthExceeded(3)));
    let cyclic = Grammar::load("s: s s | \"\" | \"a\"").unwrap();
    assert_eq!(oracle_parse(&cyclic, "b", 3), Ok(false));
    assert_eq!(oracle_parse(&cyclic, "aaa", 8), Ok(true));
}

fn render_grammar(rules: &[Vec<Vec<u8>>]) -> String {
    // Symbols 0..3 are literals, 3.. are nonterminal indices.
    const LITS: [&str; 3] = ["\"a\"", "\"b\"", "\"ab\""];
    let n = rules.len();
    let mut out = String::new();
    for (i, alts) in rules.iter().enumerate() {
        let body: Vec<String> = alts
            .iter()
            .map(|alt| {
                if alt.is_empty() {
                    "\"\"".to_string()
                } else {
                    alt.iter()
                        .map(|&s| match s as usize {
                            s if s < 3 => LITS[s].to_string(),
                            s => format!("n{}", (s - 3) % n),
                        })
                        .collect::<Vec<_>>()
                        .join(" ")
                }
            })
            .collect();
        out.push_str(&format!("n{i}: {}\n", body.join(" | ")));
    }
    out
}

fn grammar_strategy() -> impl Strategy<Value = Vec<Vec<Vec<u8>>>> {
    prop::collection::vec(
        prop::collection::vec(prop::collection::vec(0u8..7, 0..4), 1..4),
        1..4,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn parser_agrees_with_oracle(rules in grammar_strategy(), input in "[ab]{0,8}") {
        let g = Grammar::load(&render_grammar(&rules)).unwrap();
        let expected = oracle_parse(&g, &input, 64).unwrap();
        prop_assert_eq!(parse(&g, &input).is_parsed(), expected);
    }

    #[test]
    fn parsed_leaves_reassemble_input(rules in grammar_strategy(), input in "[ab]{0,8}") {
        let g = Grammar::load(&render_grammar(&rules)).unwrap();
        let first = parse(&g, &input);
        if let ParseOutcome::Parsed(tree) = &first {
            prop_assert_eq!(leaves_concat(&tree.root), input.clone());
        } else {
            prop_assert!(first.failure_position().unwrap() <= input.chars().count());
        }
        prop_assert_eq!(parse(&g, &input), first);
    }

    #[test]
    fn sharegpt_round_trip(rounds in prop::collection::vec(("[a-z ?.]{1,12}", "[a-z .!]{1,12}"), 1..5)) {
        let text: String = rounds.iter().map(|(q, r)| format!("HUMAN: {q}GPT: {r}")).collect();
        let g = sharegpt();
        let tree = parse(&g, &text).tree().cloned().expect("well-formed conversation parses");
        prop_assert_eq!(leaves_concat(&tree.root), text);
        prop_assert_eq!(tree.root.children.len(), rounds.len());
    }
}
