//! Bracketed phrase-structure trees.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use crate::spanrep::Span;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Tree {
    Node { label: String, children: Vec<Tree> },
    Leaf { tag: String, word: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TreeErrorKind {
    Unbalanced,
    EmptyConstituent,
    StrayToken,
    UnexpectedClose,
    TrailingInput,
    NoTokens,
}

impl fmt::Display for TreeErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TreeErrorKind::Unbalanced => "unbalanced parentheses",
            TreeErrorKind::EmptyConstituent => "empty constituent",
            TreeErrorKind::StrayToken => "stray token",
            TreeErrorKind::UnexpectedClose => "unexpected `)`",
            TreeErrorKind::TrailingInput => "input after the tree",
            TreeErrorKind::NoTokens => "tree has no surface tokens",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("malformed tree at byte {offset}: {kind}")]
pub struct TreeError {
    pub offset: usize,
    pub kind: TreeErrorKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Tok<'a> {
    Open,
    Close,
    Atom(&'a str),
}

fn tokenize(text: &str) -> Vec<(usize, Tok<'_>)> {
    let mut out = Vec::new();
    let bytes = text.as_bytes();
    let mut k = 0;
    while k < bytes.len() {
        match bytes[k] {
            b'(' => {
                out.push((k, Tok::Open));
                k += 1;
            }
            b')' => {
                out.push((k, Tok::Close));
                k += 1;
            }
            b if b.is_ascii_whitespace() => k += 1,
            _ => {
                let start = k;
                while k < bytes.len() && !matches!(bytes[k], b'(' | b')') && !bytes[k].is_ascii_whitespace() {
                    k += 1;
                }
                out.push((start, Tok::Atom(&text[start..k])));
            }
        }
    }
    out
}

struct Parser<'a> {
    toks: Vec<(usize, Tok<'a>)>,
    pos: usize,
    len: usize,
}

impl<'a> Parser<'a> {
    fn err(&self, kind: TreeErrorKind) -> TreeError {
        let offset = self.toks.get(self.pos).map_or(self.len, |t| t.0);
        TreeError { offset, kind }
    }

    /// Parses one bracketed node; the cursor is on its `(`.
    fn node(&mut self) -> Result<Tree, TreeError> {
        let open = self.toks[self.pos].0;
        self.pos += 1;
        let label = match self.toks.get(self.pos) {
            Some((_, Tok::Atom(a))) => {
                self.pos += 1;
                (*a).to_string()
            }
            _ => String::new(),
        };
        let mut children = Vec::new();
        let mut word: Option<&str> = None;
        loop {
            match self.toks.get(self.pos) {
                None => return Err(TreeError { offset: open, kind: TreeErrorKind::Unbalanced }),
                Some((_, Tok::Close)) => {
                    self.pos += 1;
                    break;
                }
                Some((_, Tok::Open)) => {
                    if word.is_some() {
                        return Err(self.err(TreeErrorKind::StrayToken));
                    }
                    children.push(self.node()?);
                }
                Some((_, Tok::Atom(a))) => {
                    if word.is_some() || !children.is_empty() || label.is_empty() {
                        return Err(self.err(TreeErrorKind::StrayToken));
                    }
                    word = Some(a);
                    self.pos += 1;
                }
            }
        }
        match word {
            Some(w) => Ok(Tree::Leaf { tag: label, word: w.to_string() }),
            None if children.is_empty() => Err(TreeError { offset: open, kind: TreeErrorKind::EmptyConstituent }),
            None => Ok(Tree::Node { label, children }),
        }
    }
}

const EMPTY_TAG: &str = "-NONE-";
const ROOT_LABELS: [&str; 3] = ["", "ROOT", "TOP"];

/// Parses a single tree. Empty elements (`-NONE-` leaves and nodes left
/// without surface tokens) are removed, and an unlabeled, `ROOT` or `TOP`
/// wrapper around a single tree is dropped.
pub fn parse_tree(text: &str) -> Result<Tree, TreeError> {
    let toks = tokenize(text);
    let mut p = Parser { toks, pos: 0, len: text.len() };
    match p.toks.first() {
        None => return Err(TreeError { offset: 0, kind: TreeErrorKind::Unbalanced }),
        Some((o, Tok::Close)) => return Err(TreeError { offset: *o, kind: TreeErrorKind::UnexpectedClose }),
        Some((o, Tok::Atom(_))) => return Err(TreeError { offset: *o, kind: TreeErrorKind::StrayToken }),
        Some((_, Tok::Open)) => {}
    }
    let tree = p.node()?;
    if let Some(&(o, t)) = p.toks.get(p.pos) {
        let kind = if t == Tok::Close { TreeErrorKind::UnexpectedClose } else { TreeErrorKind::TrailingInput };
        return Err(TreeError { offset: o, kind });
    }
    let mut tree = prune(tree).ok_or(TreeError { offset: 0, kind: TreeErrorKind::NoTokens })?;
    while let Tree::Node { label, children } = &mut tree {
        if !ROOT_LABELS.contains(&label.as_str()) {
            break;
        }
        if children.len() == 1 {
            tree = children.pop().unwrap();
        } else {
            if label.is_empty() {
                *label = "ROOT".into();
            }
            break;
        }
    }
    Ok(tree)
}

fn prune(tree: Tree) -> Option<Tree> {
    match tree {
        Tree::Leaf { ref tag, .. } if tag == EMPTY_TAG => None,
        Tree::Leaf { .. } => Some(tree),
        Tree::Node { label, children } => {
            let children: Vec<Tree> = children.into_iter().filter_map(prune).collect();
            (!children.is_empty()).then_some(Tree::Node { label, children })
        }
    }
}

/// Strips function tags and co-indices: `NP-SBJ-1` → `NP`, `S=2` → `S`.
/// Labels that start with `-` (such as `-LRB-`) are kept whole.
pub fn base_category(label: &str) -> &str {
    if label.starts_with('-') {
        return label;
    }
    match label.find(['-', '=']) {
        Some(k) => &label[..k],
        None => label,
    }
}

/// A phrasal node: its span, unary chain of categories (top-down), and the
/// category of its parent node, if any.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Constituent {
    pub span: Span,
    pub chain: Vec<String>,
    pub parent: Option<String>,
}

impl Constituent {
    pub fn chain_label(&self) -> String {
        self.chain.join("|")
    }
}

impl Tree {
    pub fn is_leaf(&self) -> bool {
        matches!(self, Tree::Leaf { .. })
    }

    pub fn label(&self) -> &str {
        match self {
            Tree::Node { label, .. } => label,
            Tree::Leaf { tag, .. } => tag,
        }
    }

    pub fn leaves(&self) -> Vec<(&str, &str)> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves<'a>(&'a self, out: &mut Vec<(&'a str, &'a str)>) {
        match self {
            Tree::Leaf { tag, word } => out.push((word, tag)),
            Tree::Node { children, .. } => children.iter().for_each(|c| c.collect_leaves(out)),
        }
    }

    pub fn tokens(&self) -> Vec<String> {
        self.leaves().into_iter().map(|(w, _)| w.to_string()).collect()
    }

    pub fn pos_tags(&self) -> Vec<String> {
        self.leaves().into_iter().map(|(_, t)| t.to_string()).collect()
    }

    pub fn len(&self) -> usize {
        match self {
            Tree::Leaf { .. } => 1,
            Tree::Node { children, .. } => children.iter().map(Tree::len).sum(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Phrasal constituents in pre-order. Preterminals are not included; a
    /// unary chain of nodes over the same tokens is reported once.
    pub fn constituents(&self) -> Vec<Constituent> {
        let mut out = Vec::new();
        self.walk(1, None, &mut out);
        out
    }

    fn walk(&self, start: usize, parent: Option<&str>, out: &mut Vec<Constituent>) {
        let Tree::Node { .. } = self else { return };
        let mut chain = Vec::new();
        let mut node = self;
        while let Tree::Node { label, children } = node {
            chain.push(base_category(label).to_string());
            match children.as_slice() {
                [only @ Tree::Node { .. }] => node = only,
                _ => break,
            }
        }
        let Tree::Node { label, children } = node else { unreachable!() };
        out.push(Constituent { span: Span::new(start, start + self.len() - 1), chain, parent: parent.map(ToString::to_string) });
        let mut s = start;
        for c in children {
            c.walk(s, Some(base_category(label)), out);
            s += c.len();
        }
    }
}

impl fmt::Display for Tree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tree::Leaf { tag, word } => write!(f, "({tag} {word})"),
            Tree::Node { label, children } => {
                write!(f, "({label}")?;
                for c in children {
                    write!(f, " {c}")?;
                }
                f.write_str(")")
            }
        }
    }
}

/// Builds a tree bottom-up; handy for tests and generators.
pub fn node(label: &str, children: impl Into<Vec<Tree>>) -> Tree {
    Tree::Node { label: label.to_string(), children: children.into() }
}

pub fn leaf(tag: &str, word: &str) -> Tree {
    Tree::Leaf { tag: tag.to_string(), word: word.to_string() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;
    use alloc::vec;

    const TOY: &str = "(S (NP (DT the) (NN cat)) (VP (VBD sat)))";

    #[test]
    fn toy_constituents() {
        let t = parse_tree(TOY).unwrap();
        let got: Vec<(String, Span)> = t.constituents().into_iter().map(|c| (c.chain_label(), c.span)).collect();
        assert_eq!(
            got,
            vec![("S".into(), Span::new(1, 3)), ("NP".into(), Span::new(1, 2)), ("VP".into(), Span::new(3, 3))]
        );
        assert_eq!(t.tokens(), ["the", "cat", "sat"]);
        assert_eq!(t.pos_tags(), ["DT", "NN", "VBD"]);
    }

    #[test]
    fn errors_carry_offsets() {
        let e = |s: &str| parse_tree(s).unwrap_err();
        assert_eq!(e("("), TreeError { offset: 0, kind: TreeErrorKind::Unbalanced });
        assert_eq!(e("(S (NP (DT the)"), TreeError { offset: 3, kind: TreeErrorKind::Unbalanced });
        assert_eq!(e("(S (NP) (VBD sat))").kind, TreeErrorKind::EmptyConstituent);
        assert_eq!(e("(S (NP) (VBD sat))").offset, 3);
        assert_eq!(e("(NN cat dog)"), TreeError { offset: 8, kind: TreeErrorKind::StrayToken });
        assert_eq!(e("(S (NN cat)))"), TreeError { offset: 12, kind: TreeErrorKind::UnexpectedClose });
        assert_eq!(e("cat").kind, TreeErrorKind::StrayToken);
        assert_eq!(e("").kind, TreeErrorKind::Unbalanced);
        assert_eq!(e("(S (-NONE- *T*))").kind, TreeErrorKind::NoTokens);
    }

    #[test]
    fn wrappers_traces_and_function_tags() {
        let t = parse_tree("( (S (NP-SBJ-1 (PRP he)) (VP (VBD left) (S (NP (-NONE- *-1))))) )").unwrap();
        assert_eq!(t.label(), "S");
        let c = t.constituents();
        assert_eq!(c.len(), 3);
        assert_eq!(c[1].chain, vec!["NP"]);
        assert_eq!(c[2].span, Span::new(2, 2));
        assert_eq!(format!("{t}"), "(S (NP-SBJ-1 (PRP he)) (VP (VBD left)))");
        assert_eq!(base_category("-LRB-"), "-LRB-");
        assert_eq!(base_category("S=2"), "S");
        let multi = parse_tree("((S (NN a)) (S (NN b)))").unwrap();
        assert_eq!(multi.label(), "ROOT");
    }

    #[test]
    fn unary_chain_and_parent() {
        let t = parse_tree("(S (NP (NNS officials)) (VP (VBD helped) (PP (IN by) (S (VP (VBG encouraging) (NP (PRP them)))))))").unwrap();
        let c = t.constituents();
        let enc = c.iter().find(|c| c.span == Span::new(4, 5)).unwrap();
        assert_eq!(enc.chain_label(), "S|VP");
        assert_eq!(enc.parent.as_deref(), Some("PP"));
        assert_eq!(c[0].parent, None);
    }

    #[test]
    fn reprint_round_trips() {
        for s in [TOY, "(S (NP (NNS officials)) (VP (VBD helped) (PP (IN by) (S (VP (VBG encouraging) (NP (PRP them)))))))"] {
            let t = parse_tree(s).unwrap();
            assert_eq!(parse_tree(&format!("{t}")).unwrap(), t);
        }
        let t = node("S", [node("NP", [leaf("DT", "a")]), leaf("VBZ", "is")]);
        assert_eq!(format!("{t}"), "(S (NP (DT a)) (VBZ is))");
    }
}
