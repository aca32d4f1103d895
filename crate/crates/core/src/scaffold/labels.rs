//! Span label schemes derived from phrase-structure trees.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use super::tree::{Constituent, Tree};
use crate::error::Error;
use crate::spanrep::{enumerate_spans, Span};

/// Label of spans that are not constituents.
pub const NULL_LABEL: &str = "null";
/// Identity-scheme labels.
pub const CONSTITUENT: &str = "1";
pub const NOT_CONSTITUENT: &str = "0";
/// Common-scheme label for constituents outside the first class.
pub const OTHER: &str = "OTHER";
/// Parent marker used for the root constituent.
pub const NO_PARENT: &str = "null";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum LabelScheme {
    /// Constituent or not.
    Identity,
    /// The (unary-chain) category, e.g. `S|VP`.
    Nonterminal,
    /// Category plus the parent's category, e.g. `S|VP+par=PP`.
    NonterminalParent,
    /// Three-way: in the given categories, any other constituent, or null.
    Common(Vec<String>),
}

impl LabelScheme {
    /// First-class categories for SRL.
    pub fn common_srl() -> Self {
        LabelScheme::Common(alloc::vec!["NP".into(), "PP".into()])
    }

    /// First-class categories for coreference.
    pub fn common_coref() -> Self {
        LabelScheme::Common(alloc::vec!["NP".into()])
    }

    /// Parses `identity`, `nonterminal`, `nonterminal_parent` or `common`;
    /// `common` uses `default_common`, `common:A,B` names the categories.
    pub fn parse(name: &str, default_common: &LabelScheme) -> Result<Self, Error> {
        match name {
            "identity" => Ok(LabelScheme::Identity),
            "nonterminal" => Ok(LabelScheme::Nonterminal),
            "nonterminal_parent" => Ok(LabelScheme::NonterminalParent),
            "common" => Ok(default_common.clone()),
            _ => match name.strip_prefix("common:") {
                Some(list) if !list.is_empty() => Ok(LabelScheme::Common(list.split(',').map(ToString::to_string).collect())),
                _ => Err(Error::Config(format!("unknown scaffold scheme `{name}`"))),
            },
        }
    }

    pub fn null_label(&self) -> &'static str {
        match self {
            LabelScheme::Identity => NOT_CONSTITUENT,
            _ => NULL_LABEL,
        }
    }

    /// Label of the first-class group under `Common`, e.g. `NP/PP`.
    pub fn common_label(classes: &[String]) -> String {
        classes.join("/")
    }

    pub fn label(&self, c: &Constituent) -> String {
        match self {
            LabelScheme::Identity => CONSTITUENT.into(),
            LabelScheme::Nonterminal => c.chain_label(),
            LabelScheme::NonterminalParent => {
                format!("{}+par={}", c.chain_label(), c.parent.as_deref().unwrap_or(NO_PARENT))
            }
            LabelScheme::Common(classes) => {
                if c.chain.iter().any(|x| classes.contains(x)) {
                    Self::common_label(classes)
                } else {
                    OTHER.into()
                }
            }
        }
    }

    /// The fixed category set, for schemes that have one.
    pub fn closed_categories(&self) -> Option<CategorySet> {
        match self {
            LabelScheme::Identity => Some(CategorySet::new([NOT_CONSTITUENT.into(), CONSTITUENT.into()])),
            LabelScheme::Common(classes) => {
                Some(CategorySet::new([NULL_LABEL.into(), Self::common_label(classes), OTHER.into()]))
            }
            _ => None,
        }
    }
}

impl fmt::Display for LabelScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LabelScheme::Identity => f.write_str("identity"),
            LabelScheme::Nonterminal => f.write_str("nonterminal"),
            LabelScheme::NonterminalParent => f.write_str("nonterminal_parent"),
            LabelScheme::Common(c) => write!(f, "common:{}", c.join(",")),
        }
    }
}

/// Ordered label inventory; index 0 is the scheme's null label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategorySet {
    labels: Vec<String>,
}

impl CategorySet {
    pub fn new(labels: impl IntoIterator<Item = String>) -> Self {
        CategorySet { labels: labels.into_iter().collect() }
    }

    /// Closed set of the scheme, or the null label followed by every label
    /// seen in `instances`, sorted.
    pub fn for_instances(scheme: &LabelScheme, instances: &[ScaffoldInstance]) -> Self {
        if let Some(c) = scheme.closed_categories() {
            return c;
        }
        let null = scheme.null_label();
        let seen: BTreeSet<&str> = instances.iter().flat_map(|i| i.labels.iter().map(String::as_str)).filter(|l| *l != null).collect();
        CategorySet::new(core::iter::once(null.to_string()).chain(seen.into_iter().map(ToString::to_string)))
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn index_of(&self, label: &str) -> Result<usize, Error> {
        self.labels.iter().position(|l| l == label).ok_or_else(|| Error::UnknownLabel(label.into()))
    }

    pub fn indices(&self, labels: &[String]) -> Result<Vec<usize>, Error> {
        labels.iter().map(|l| self.index_of(l)).collect()
    }
}

/// A treebank sentence prepared for the scaffold task: every span up to the
/// width limit with its label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScaffoldInstance {
    pub tokens: Vec<String>,
    pub pos: Vec<String>,
    pub target: Span,
    pub spans: Vec<Span>,
    pub labels: Vec<String>,
}

/// Width-one span on the last verb (tag starting with `VB`), or on the first
/// token when there is none.
pub fn placeholder_target<S: AsRef<str>>(pos: &[S]) -> Span {
    let q = pos.iter().rposition(|t| t.as_ref().starts_with("VB")).map_or(1, |k| k + 1);
    Span::new(q, q)
}

/// Labels every span of width at most `max_width`. Wider constituents are
/// not enumerated and so do not appear.
pub fn extract_span_labels(tree: &Tree, scheme: &LabelScheme, max_width: usize) -> ScaffoldInstance {
    let labeled: BTreeMap<Span, String> = tree.constituents().iter().map(|c| (c.span, scheme.label(c))).collect();
    let spans = enumerate_spans(tree.len(), max_width);
    let labels = spans
        .iter()
        .map(|s| labeled.get(s).cloned().unwrap_or_else(|| scheme.null_label().into()))
        .collect();
    let pos = tree.pos_tags();
    ScaffoldInstance { tokens: tree.tokens(), target: placeholder_target(&pos), pos, spans, labels }
}

#[cfg(test)]
mod tests {
    use super::super::tree::parse_tree;
    use super::*;
    use alloc::vec;

    const EXAMPLE: &str = "(S (NP (NNS officials)) (VP (VBD helped) (PP (IN by) (S (VP (VBG encouraging) (NP (PRP them)))))))";
    const TOY: &str = "(S (NP (DT the) (NN cat)) (VP (VBD sat)))";

    fn label_of(tree: &str, scheme: &LabelScheme, span: Span) -> String {
        let inst = extract_span_labels(&parse_tree(tree).unwrap(), scheme, 15);
        let k = inst.spans.iter().position(|s| *s == span).unwrap();
        inst.labels[k].clone()
    }

    #[test]
    fn encouraging_them_under_each_scheme() {
        let s = Span::new(4, 5);
        assert_eq!(label_of(EXAMPLE, &LabelScheme::Identity, s), "1");
        assert_eq!(label_of(EXAMPLE, &LabelScheme::Nonterminal, s), "S|VP");
        assert_eq!(label_of(EXAMPLE, &LabelScheme::NonterminalParent, s), "S|VP+par=PP");
        assert_eq!(label_of(EXAMPLE, &LabelScheme::common_srl(), s), "OTHER");
        assert_eq!(label_of(EXAMPLE, &LabelScheme::common_srl(), Span::new(3, 5)), "NP/PP");
        assert_eq!(label_of(EXAMPLE, &LabelScheme::common_coref(), Span::new(5, 5)), "NP");
        assert_eq!(label_of(EXAMPLE, &LabelScheme::NonterminalParent, Span::new(1, 5)), "S+par=null");
    }

    #[test]
    fn toy_tree_labels() {
        for scheme in [LabelScheme::Nonterminal, LabelScheme::common_coref()] {
            assert_eq!(label_of(TOY, &scheme, Span::new(1, 2)), "NP");
        }
        assert_eq!(label_of(TOY, &LabelScheme::NonterminalParent, Span::new(1, 2)), "NP+par=S");
        assert_eq!(label_of(TOY, &LabelScheme::Identity, Span::new(2, 3)), "0");
        for scheme in [LabelScheme::Nonterminal, LabelScheme::NonterminalParent, LabelScheme::common_srl()] {
            assert_eq!(label_of(TOY, &scheme, Span::new(2, 3)), "null");
        }
    }

    #[test]
    fn placeholder_rule() {
        assert_eq!(placeholder_target(&["DT", "NN", "VBD", "DT", "NN"]), Span::new(3, 3));
        assert_eq!(placeholder_target(&["DT", "NN"]), Span::new(1, 1));
        assert_eq!(placeholder_target(&["VB", "NN", "VBZ"]), Span::new(3, 3));
    }

    #[test]
    fn scheme_names_parse() {
        let d = LabelScheme::common_srl();
        for s in [LabelScheme::Identity, LabelScheme::Nonterminal, LabelScheme::NonterminalParent, LabelScheme::common_coref()] {
            assert_eq!(LabelScheme::parse(&s.to_string(), &d).unwrap(), s);
        }
        assert_eq!(LabelScheme::parse("common", &d).unwrap(), d);
        assert!(LabelScheme::parse("bogus", &d).is_err());
    }

    #[test]
    fn open_category_sets_start_with_null() {
        let inst = vec![extract_span_labels(&parse_tree(TOY).unwrap(), &LabelScheme::Nonterminal, 3)];
        let c = CategorySet::for_instances(&LabelScheme::Nonterminal, &inst);
        assert_eq!(c.labels(), ["null", "NP", "S", "VP"]);
        assert!(matches!(c.index_of("PP"), Err(Error::UnknownLabel(_))));
    }
}
