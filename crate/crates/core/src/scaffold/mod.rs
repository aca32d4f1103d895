//! The syntactic scaffold: treebank spans labeled by a scheme and a
//! span classifier whose loss is added to the primary task's.

mod labels;
mod tree;

pub use labels::{
    extract_span_labels, placeholder_target, CategorySet, LabelScheme, ScaffoldInstance, CONSTITUENT, NOT_CONSTITUENT,
    NO_PARENT, NULL_LABEL, OTHER,
};
pub use tree::{base_category, leaf, node, parse_tree, Constituent, Tree, TreeError, TreeErrorKind};

use alloc::vec::Vec;

use crate::error::Error;
use crate::math;
use crate::tensor::{Linear, NodeId, ParamStore, Tape, Tensor};
use crate::Rng;

/// Summed negative log-likelihood of each row's gold category under a
/// softmax over the row.
pub fn scaffold_loss(logits: &Tensor, gold: &[usize]) -> Result<f64, Error> {
    let c = logits.cols();
    if logits.rows() != gold.len() {
        return Err(Error::ScoreTableSize { expected: gold.len(), actual: logits.rows() });
    }
    let mut total = 0.0;
    for (r, &g) in gold.iter().enumerate() {
        if g >= c {
            return Err(Error::UnknownLabel(alloc::format!("category index {g}")));
        }
        let row = logits.row(r);
        total += math::log_sum_exp(row) - row[g];
    }
    Ok(total)
}

/// `L1 + δ·L2`.
pub fn joint_loss(primary: f64, scaffold: f64, delta: f64) -> f64 {
    primary + delta * scaffold
}

/// Per-category weight vectors applied to span embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaffoldHead {
    pub scheme: LabelScheme,
    pub categories: CategorySet,
    pub classifier: Linear,
}

impl ScaffoldHead {
    pub fn new(params: &mut ParamStore, name: &str, span_dim: usize, scheme: LabelScheme, categories: CategorySet, rng: &mut Rng) -> Self {
        let classifier = Linear::new(params, &alloc::format!("{name}.classifier"), span_dim, categories.len(), false, rng);
        ScaffoldHead { scheme, categories, classifier }
    }

    /// `[S × |C|]` category scores for a `[S × d]` block of span embeddings.
    pub fn logits(&self, tape: &mut Tape<'_>, spans: NodeId) -> NodeId {
        self.classifier.forward(tape, spans)
    }

    pub fn loss(&self, tape: &mut Tape<'_>, spans: NodeId, labels: &[alloc::string::String]) -> Result<NodeId, Error> {
        let gold: Vec<usize> = self.categories.indices(labels)?;
        let logits = self.logits(tape, spans);
        if tape.value(logits).rows() != gold.len() {
            return Err(Error::ScoreTableSize { expected: gold.len(), actual: tape.value(logits).rows() });
        }
        Ok(tape.cross_entropy_rows(logits, &gold))
    }
}
