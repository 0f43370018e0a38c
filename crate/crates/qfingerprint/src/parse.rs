//! Bracketed parse-tree reader and breadth-first label traversal.
//!
//! Trees arrive as PTB-style bracketed strings produced by an external
//! constituency parser, e.g. `(SBARQ (WHNP (WP What)) (SQ (VBZ is)))`.
//! A parenthesized element is a syntactic node; a bare token is a word leaf.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::featurize::SYMBOL_DELIMITER;

/// A node of a constituency parse tree. Leaves (empty `children`) hold the
/// terminal word tokens; inner nodes hold syntactic labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseTree {
    pub label: String,
    pub children: Vec<ParseTree>,
}

impl ParseTree {
    pub fn leaf(label: impl Into<String>) -> Self {
        ParseTree {
            label: label.into(),
            children: Vec::new(),
        }
    }

    pub fn node(label: impl Into<String>, children: Vec<ParseTree>) -> Self {
        ParseTree {
            label: label.into(),
            children,
        }
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    /// Total node count, leaves included.
    pub fn node_count(&self) -> usize {
        1 + self.children.iter().map(ParseTree::node_count).sum::<usize>()
    }

    /// Render back to normalized bracketed form (single spaces).
    pub fn print_bracketed(&self) -> String {
        if self.is_leaf() {
            self.label.clone()
        } else {
            let inner: Vec<String> = self.children.iter().map(|c| c.print_bracketed()).collect();
            format!("({} {})", self.label, inner.join(" "))
        }
    }

    /// Drop functional annotations from syntactic labels: `NP-SBJ` becomes
    /// `NP`, `NP=2` becomes `NP`. Word leaves and labels that start with `-`
    /// (such as `-NONE-` or `-LRB-`) are left untouched.
    pub fn strip_function_tags(&mut self) {
        if !self.is_leaf() {
            if !self.label.starts_with('-') {
                if let Some(cut) = self.label.find(['-', '=']) {
                    self.label.truncate(cut);
                }
            }
            for child in &mut self.children {
                child.strip_function_tags();
            }
        }
    }
}

/// Ordered node labels produced by a tree traversal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSequence {
    pub labels: Vec<String>,
}

impl LabelSequence {
    pub fn new(labels: Vec<String>) -> Self {
        LabelSequence { labels }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Quick balance check used at ingestion time, before full parsing.
pub fn has_balanced_parens(s: &str) -> bool {
    let mut depth: i64 = 0;
    for c in s.chars() {
        match c {
            '(' => depth += 1,
            ')' => {
                depth -= 1;
                if depth < 0 {
                    return false;
                }
            }
            _ => {}
        }
    }
    depth == 0
}

struct Scanner<'a> {
    chars: Vec<(usize, char)>,
    pos: usize,
    src: &'a str,
}

impl<'a> Scanner<'a> {
    fn new(src: &'a str) -> Self {
        Scanner {
            chars: src.char_indices().collect(),
            pos: 0,
            src,
        }
    }

    fn offset(&self) -> usize {
        self.chars
            .get(self.pos)
            .map(|(o, _)| *o)
            .unwrap_or(self.src.len())
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).map(|(_, c)| *c)
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek();
        self.pos += 1;
        c
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(c) if c.is_whitespace()) {
            self.pos += 1;
        }
    }

    fn err(&self, reason: impl Into<String>) -> Error {
        Error::Parse {
            offset: self.offset(),
            reason: reason.into(),
        }
    }

    fn atom(&mut self) -> Result<String> {
        let start = self.offset();
        let mut out = String::new();
        while let Some(c) = self.peek() {
            if c.is_whitespace() || c == '(' || c == ')' {
                break;
            }
            if c == SYMBOL_DELIMITER {
                return Err(Error::Parse {
                    offset: self.offset(),
                    reason: format!("label contains reserved delimiter `{SYMBOL_DELIMITER}`"),
                });
            }
            out.push(c);
            self.pos += 1;
        }
        if out.is_empty() {
            return Err(Error::Parse {
                offset: start,
                reason: "expected a label".into(),
            });
        }
        Ok(out)
    }

    fn tree(&mut self) -> Result<ParseTree> {
        self.skip_ws();
        match self.peek() {
            Some('(') => {
                self.bump();
                self.skip_ws();
                let label = self.atom()?;
                let mut children = Vec::new();
                loop {
                    self.skip_ws();
                    match self.peek() {
                        Some(')') => {
                            self.bump();
                            break;
                        }
                        Some(_) => children.push(self.tree()?),
                        None => return Err(self.err("unexpected end of input, expected `)`")),
                    }
                }
                if children.is_empty() {
                    return Err(self.err(format!("node `{label}` has no children")));
                }
                Ok(ParseTree { label, children })
            }
            Some(')') => Err(self.err("unexpected `)`")),
            Some(_) => Ok(ParseTree::leaf(self.atom()?)),
            None => Err(self.err("unexpected end of input")),
        }
    }
}

fn check_balance(s: &str) -> Result<()> {
    let mut depth: i64 = 0;
    for (offset, c) in s.char_indices() {
        match c {
            '(' => depth += 1,
            ')' => {
                depth -= 1;
                if depth < 0 {
                    return Err(Error::Parse {
                        offset,
                        reason: "unmatched `)`".into(),
                    });
                }
            }
            _ => {}
        }
    }
    if depth > 0 {
        return Err(Error::Parse {
            offset: s.len(),
            reason: format!("missing {depth} closing `)`"),
        });
    }
    Ok(())
}

/// Parse a single bracketed tree string. The tree must start with `(`; bare
/// words are only valid inside a node. The treebank convention of an extra
/// unlabeled outer bracket, `((S ...))`, is accepted and unwrapped.
pub fn parse_bracketed(s: &str) -> Result<ParseTree> {
    check_balance(s)?;
    let mut sc = Scanner::new(s);
    sc.skip_ws();
    if sc.peek().is_none() {
        return Err(Error::Parse {
            offset: 0,
            reason: "empty input".into(),
        });
    }
    if sc.peek() != Some('(') {
        return Err(sc.err("expected `(`"));
    }
    // Detect the unlabeled outer bracket: `(` followed by another `(`.
    let mut probe = sc.pos + 1;
    while matches!(sc.chars.get(probe), Some((_, c)) if c.is_whitespace()) {
        probe += 1;
    }
    let outer = matches!(sc.chars.get(probe), Some((_, '(')));
    if outer {
        sc.bump();
    }
    let tree = sc.tree()?;
    if outer {
        sc.skip_ws();
        if sc.bump() != Some(')') {
            return Err(sc.err("expected `)` closing the outer bracket"));
        }
    }
    sc.skip_ws();
    if sc.peek().is_some() {
        return Err(sc.err("trailing input after tree"));
    }
    Ok(tree)
}

/// Level-order traversal of node labels, left-to-right within a level.
/// With `include_terminals = false` the word leaves are dropped and only
/// syntactic labels (nonterminals and preterminal POS tags) are emitted.
pub fn bfs_labels(tree: &ParseTree, include_terminals: bool) -> LabelSequence {
    let mut labels = Vec::new();
    let mut queue = VecDeque::new();
    queue.push_back(tree);
    while let Some(node) = queue.pop_front() {
        if include_terminals || !node.is_leaf() {
            labels.push(node.label.clone());
        }
        for child in &node.children {
            queue.push_back(child);
        }
    }
    LabelSequence::new(labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    const WHAT_IS: &str = "(SBARQ (WHNP (WP What)) (SQ (VBZ is)))";

    #[test]
    fn parses_nested_tree() {
        let t = parse_bracketed(WHAT_IS).unwrap();
        assert_eq!(t.label, "SBARQ");
        assert_eq!(t.children.len(), 2);
        assert_eq!(t.children[0].label, "WHNP");
        assert_eq!(t.children[1].label, "SQ");
    }

    #[test]
    fn parses_minimal_tree() {
        let t = parse_bracketed("(X a)").unwrap();
        assert_eq!(t.label, "X");
        assert_eq!(t.children, vec![ParseTree::leaf("a")]);
    }

    #[test]
    fn unbalanced_input_reports_offset() {
        let err = parse_bracketed("((A b)").unwrap_err();
        match err {
            Error::Parse { offset, .. } => assert_eq!(offset, 6),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn empty_and_garbage_inputs_fail() {
        assert!(parse_bracketed("").is_err());
        assert!(parse_bracketed("   ").is_err());
        assert!(parse_bracketed("(X a) junk").is_err());
        assert!(parse_bracketed("word").is_err());
        assert!(parse_bracketed("(X)").is_err());
    }

    #[test]
    fn unlabeled_outer_bracket_is_unwrapped() {
        let t = parse_bracketed("((S (NNP John) (VP (VBD saw))))").unwrap();
        assert_eq!(t.label, "S");
        assert_eq!(t.children.len(), 2);
        // Two trees inside an outer bracket are not a single tree.
        assert!(parse_bracketed("((X a) (Y b))").is_err());
    }

    #[test]
    fn delimiter_in_label_rejected() {
        assert!(parse_bracketed("(A·B c)").is_err());
    }

    #[test]
    fn bfs_excludes_terminals_by_default() {
        let t = parse_bracketed(WHAT_IS).unwrap();
        let seq = bfs_labels(&t, false);
        assert_eq!(seq.labels, vec!["SBARQ", "WHNP", "SQ", "WP", "VBZ"]);
    }

    #[test]
    fn bfs_with_terminals() {
        let t = parse_bracketed(WHAT_IS).unwrap();
        let seq = bfs_labels(&t, true);
        assert_eq!(
            seq.labels,
            vec!["SBARQ", "WHNP", "SQ", "WP", "VBZ", "What", "is"]
        );
    }

    #[test]
    fn bfs_single_node() {
        let t = parse_bracketed("(X a)").unwrap();
        assert_eq!(bfs_labels(&t, false).labels, vec!["X"]);
    }

    #[test]
    fn bfs_length_matches_node_count() {
        let t = parse_bracketed(WHAT_IS).unwrap();
        assert_eq!(bfs_labels(&t, true).len(), t.node_count());
        let leaf_words = 2;
        assert_eq!(bfs_labels(&t, false).len(), t.node_count() - leaf_words);
    }

    #[test]
    fn print_round_trips_normalized_input() {
        let normalized = parse_bracketed(WHAT_IS).unwrap().print_bracketed();
        assert_eq!(normalized, WHAT_IS);
        let messy = "( SBARQ  (WHNP (WP What) )\n (SQ (VBZ is)) )";
        let t = parse_bracketed(messy).unwrap();
        assert_eq!(t.print_bracketed(), WHAT_IS);
        let again = parse_bracketed(&t.print_bracketed()).unwrap();
        assert_eq!(again, t);
    }

    #[test]
    fn strip_function_tags_keeps_special_labels() {
        let mut t = parse_bracketed("(S (NP-SBJ (NNP-2 John)) (-NONE- x) (NP=1 y))").unwrap();
        t.strip_function_tags();
        assert_eq!(t.print_bracketed(), "(S (NP (NNP John)) (-NONE- x) (NP y))");
    }

    #[test]
    fn balance_check() {
        assert!(has_balanced_parens(WHAT_IS));
        assert!(!has_balanced_parens("((A b)"));
        assert!(!has_balanced_parens(")("));
    }
}
