//! Zeroth-order semi-Markov CRF over labeled segmentations.
//!
//! A segmentation covers the sentence with non-overlapping labeled spans of
//! width at most `D`. Scores are additive over segments, so both the
//! (cost-augmented) partition function and the best segmentation come out of
//! a left-to-right dynamic program over end positions, run in log space.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::Error;
use crate::math;
use crate::spanrep::{Span, SpanIndex};
use crate::tensor::{NodeId, Tape};

/// A labeled span. The label indexes the caller's label inventory, which
/// includes the reserved null label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Segment {
    pub span: Span,
    pub label: usize,
}

impl Segment {
    pub fn new(start: usize, end: usize, label: usize) -> Self {
        Segment { span: Span::new(start, end), label }
    }
}

/// Ordered segments that tile `1..=n` exactly.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Segmentation {
    segments: Vec<Segment>,
}

impl Segmentation {
    pub fn new(segments: Vec<Segment>, n: usize) -> Result<Self, Error> {
        if n == 0 {
            return Err(Error::EmptySentence);
        }
        let mut next = 1;
        for s in &segments {
            if s.span.start != next {
                return Err(Error::InvalidSegmentation("segments must be contiguous from token 1"));
            }
            if s.span.end < s.span.start {
                return Err(Error::InvalidSegmentation("segment ends before it starts"));
            }
            next = s.span.end + 1;
        }
        if next != n + 1 {
            return Err(Error::InvalidSegmentation("segments must end at the last token"));
        }
        Ok(Segmentation { segments })
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn contains(&self, segment: &Segment) -> bool {
        self.segments.binary_search_by(|s| s.span.cmp(&segment.span)).is_ok_and(|k| self.segments[k] == *segment)
    }

    /// Non-null segments, i.e. the predicted arguments.
    pub fn arguments(&self, null: usize) -> Vec<Segment> {
        self.segments.iter().copied().filter(|s| s.label != null).collect()
    }

    /// `Ψ(s) = Σ_k ψ(s_k)`; `None` if a segment is not in the table.
    pub fn score(&self, table: &ScoreTable) -> Option<f64> {
        self.segments.iter().map(|s| table.get(s.span, s.label)).sum()
    }
}

/// Gold arguments rendered as a segmentation, or a note that they cannot be
/// (an argument is wider than the maximum segment width).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GoldEncoding {
    Trainable(Segmentation),
    Untrainable,
}

/// Encodes gold arguments as a segmentation whose uncovered tokens become
/// width-one null segments.
pub fn gold_to_segmentation(arguments: &[Segment], n: usize, max_width: usize, null: usize) -> Result<GoldEncoding, Error> {
    if n == 0 {
        return Err(Error::EmptySentence);
    }
    let mut args = arguments.to_vec();
    args.sort();
    for a in &args {
        a.span.check_bounds(n)?;
    }
    for w in args.windows(2) {
        if w[0].span.overlaps(&w[1].span) {
            return Err(Error::OverlappingArguments(w[0].span, w[1].span));
        }
    }
    if args.iter().any(|a| a.span.width() > max_width) {
        return Ok(GoldEncoding::Untrainable);
    }
    let mut segments = Vec::with_capacity(n);
    let mut next = 1;
    for a in args {
        while next < a.span.start {
            segments.push(Segment::new(next, next, null));
            next += 1;
        }
        segments.push(a);
        next = a.span.end + 1;
    }
    while next <= n {
        segments.push(Segment::new(next, next, null));
        next += 1;
    }
    Segmentation::new(segments, n).map(GoldEncoding::Trainable)
}

/// Segment scores `ψ(i, j, r)` for every enumerated span and label.
/// Entries set to `-inf` are disallowed segments.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    index: SpanIndex,
    num_labels: usize,
    scores: Vec<f64>,
}

impl ScoreTable {
    /// `scores` is row-major `[span × label]` in enumeration order.
    pub fn new(n: usize, max_width: usize, num_labels: usize, scores: Vec<f64>) -> Result<Self, Error> {
        if n == 0 {
            return Err(Error::EmptySentence);
        }
        let index = SpanIndex::new(n, max_width);
        let expected = index.len() * num_labels;
        if scores.len() != expected || num_labels == 0 {
            return Err(Error::ScoreTableSize { expected, actual: scores.len() });
        }
        Ok(ScoreTable { index, num_labels, scores })
    }

    pub fn from_fn(n: usize, max_width: usize, num_labels: usize, mut f: impl FnMut(Span, usize) -> f64) -> Self {
        let index = SpanIndex::new(n, max_width);
        let mut scores = Vec::with_capacity(index.len() * num_labels);
        for s in index.spans() {
            for r in 0..num_labels {
                scores.push(f(s, r));
            }
        }
        ScoreTable { index, num_labels, scores }
    }

    pub fn n(&self) -> usize {
        self.index.n()
    }

    pub fn max_width(&self) -> usize {
        self.index.max_width()
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    fn slot(&self, span: Span, label: usize) -> Option<usize> {
        (label < self.num_labels).then_some(())?;
        self.index.get(span).map(|k| k * self.num_labels + label)
    }

    pub fn get(&self, span: Span, label: usize) -> Option<f64> {
        self.slot(span, label).map(|k| self.scores[k])
    }

    pub fn set(&mut self, span: Span, label: usize, value: f64) {
        let k = self.slot(span, label).expect("segment outside the table");
        self.scores[k] = value;
    }

    /// Copy with every entry multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> ScoreTable {
        let mut t = self.clone();
        t.scores.iter_mut().for_each(|x| *x *= factor);
        t
    }

    fn row_start(&self, span: Span) -> usize {
        self.index.get(span).unwrap() * self.num_labels
    }
}

/// `1` if the segment (span and label) is absent from `gold`, else `0`.
pub fn cost(segment: &Segment, gold: &Segmentation) -> f64 {
    if gold.contains(segment) {
        0.0
    } else {
        1.0
    }
}

/// Per-entry cost table aligned with `table`, or zeros when no gold is given.
fn cost_table(table: &ScoreTable, gold: Option<&Segmentation>) -> Vec<f64> {
    match gold {
        None => vec![0.0; table.scores.len()],
        Some(g) => {
            let mut c = vec![1.0; table.scores.len()];
            for s in g.segments() {
                if let Some(k) = table.slot(s.span, s.label) {
                    c[k] = 0.0;
                }
            }
            c
        }
    }
}

/// Forward log-potentials `α_0..α_n` with `α_0 = log 1 = 0`.
fn forward(table: &ScoreTable, cost: &[f64], evaluations: &mut usize) -> Vec<f64> {
    let n = table.n();
    let d = table.max_width();
    let l = table.num_labels;
    let mut alpha = vec![f64::NEG_INFINITY; n + 1];
    alpha[0] = 0.0;
    let mut terms = Vec::with_capacity(d * l);
    for j in 1..=n {
        terms.clear();
        for i in j.saturating_sub(d - 1).max(1)..=j {
            let base = table.row_start(Span::new(i, j));
            for r in 0..l {
                *evaluations += 1;
                terms.push(alpha[i - 1] + table.scores[base + r] + cost[base + r]);
            }
        }
        alpha[j] = math::log_sum_exp(&terms);
    }
    alpha
}

/// Backward log-potentials `β_0..β_n` with `β_n = 0`.
fn backward(table: &ScoreTable, cost: &[f64]) -> Vec<f64> {
    let n = table.n();
    let d = table.max_width();
    let l = table.num_labels;
    let mut beta = vec![f64::NEG_INFINITY; n + 1];
    beta[n] = 0.0;
    let mut terms = Vec::with_capacity(d * l);
    for i in (1..=n).rev() {
        terms.clear();
        for j in i..=n.min(i + d - 1) {
            let base = table.row_start(Span::new(i, j));
            for r in 0..l {
                terms.push(table.scores[base + r] + cost[base + r] + beta[j]);
            }
        }
        beta[i - 1] = math::log_sum_exp(&terms);
    }
    beta
}

/// `log Σ_s exp{Ψ(s) + cost(s, gold)}` over all segmentations; the cost term
/// is dropped when `gold` is `None`.
pub fn log_partition(table: &ScoreTable, gold: Option<&Segmentation>) -> f64 {
    log_partition_counted(table, gold).0
}

/// [`log_partition`] together with the number of segment scores consulted.
pub fn log_partition_counted(table: &ScoreTable, gold: Option<&Segmentation>) -> (f64, usize) {
    let cost = cost_table(table, gold);
    let mut evaluations = 0;
    let alpha = forward(table, &cost, &mut evaluations);
    (alpha[table.n()], evaluations)
}

/// Log partition and posterior segment marginals under the (optionally
/// cost-augmented) distribution, aligned with [`ScoreTable::scores`].
pub fn marginals(table: &ScoreTable, gold: Option<&Segmentation>) -> (f64, Vec<f64>) {
    let n = table.n();
    let d = table.max_width();
    let l = table.num_labels;
    let cost = cost_table(table, gold);
    let alpha = forward(table, &cost, &mut 0);
    let beta = backward(table, &cost);
    let log_z = alpha[n];
    let mut mu = vec![0.0; table.scores.len()];
    for i in 1..=n {
        for j in i..=n.min(i + d - 1) {
            let base = table.row_start(Span::new(i, j));
            for r in 0..l {
                let k = base + r;
                let lp = alpha[i - 1] + table.scores[k] + cost[k] + beta[j] - log_z;
                mu[k] = math::exp(lp);
            }
        }
    }
    (log_z, mu)
}

fn gold_score(table: &ScoreTable, gold: &Segmentation) -> Result<f64, Error> {
    let mut total = 0.0;
    for s in gold.segments() {
        if s.span.width() > table.max_width() {
            return Err(Error::SegmentTooWide { span: s.span, max_width: table.max_width() });
        }
        total += table.get(s.span, s.label).ok_or(Error::InvalidSegmentation("gold segment outside the table"))?;
    }
    Ok(total)
}

/// Softmax-margin loss `-Ψ(gold) + log Σ_s exp{Ψ(s) + cost(s, gold)}`.
pub fn srl_loss(table: &ScoreTable, gold: &Segmentation) -> Result<f64, Error> {
    Ok(srl_loss_with_grad(table, gold, true)?.0)
}

/// Loss and its gradient with respect to every table entry. With
/// `cost_augmented` unset this is the plain negative log-likelihood.
pub fn srl_loss_with_grad(table: &ScoreTable, gold: &Segmentation, cost_augmented: bool) -> Result<(f64, Vec<f64>), Error> {
    let gs = gold_score(table, gold)?;
    let (log_z, mut grad) = marginals(table, cost_augmented.then_some(gold));
    for s in gold.segments() {
        grad[table.slot(s.span, s.label).unwrap()] -= 1.0;
    }
    Ok((log_z - gs, grad))
}

/// Highest-scoring segmentation. For each end position, start positions are
/// scanned in increasing order and labels in declared order; only a strictly
/// better score replaces the current best, so ties keep the first candidate.
pub fn viterbi(table: &ScoreTable) -> Segmentation {
    let n = table.n();
    let d = table.max_width();
    let l = table.num_labels;
    let mut gamma = vec![f64::NEG_INFINITY; n + 1];
    let mut back = vec![(0usize, 0usize); n + 1];
    gamma[0] = 0.0;
    for j in 1..=n {
        let mut best: Option<(f64, usize, usize)> = None;
        for i in j.saturating_sub(d - 1).max(1)..=j {
            let base = table.row_start(Span::new(i, j));
            for r in 0..l {
                let v = gamma[i - 1] + table.scores[base + r];
                if best.is_none_or(|(b, _, _)| v > b) {
                    best = Some((v, i, r));
                }
            }
        }
        let (v, i, r) = best.expect("every position has a candidate");
        gamma[j] = v;
        back[j] = (i, r);
    }
    let mut segments = Vec::new();
    let mut j = n;
    while j > 0 {
        let (i, r) = back[j];
        segments.push(Segment::new(i, j, r));
        j = i - 1;
    }
    segments.reverse();
    Segmentation { segments }
}

/// Records the softmax-margin (or plain likelihood) loss for a `[S × L]`
/// score node on the tape. `allowed`, when given, masks out disallowed
/// entries, which then take no part in the distribution.
pub fn loss_node(
    tape: &mut Tape<'_>,
    scores: NodeId,
    n: usize,
    max_width: usize,
    allowed: Option<&[bool]>,
    gold: &Segmentation,
    cost_augmented: bool,
) -> Result<NodeId, Error> {
    let table = table_from_node(tape, scores, n, max_width, allowed)?;
    let (loss, grad) = srl_loss_with_grad(&table, gold, cost_augmented)?;
    Ok(tape.fused_scalar(scores, loss, grad, "semicrf_loss"))
}

/// Reads a `[S × L]` score node into a [`ScoreTable`], applying a mask.
pub fn table_from_node(tape: &Tape<'_>, scores: NodeId, n: usize, max_width: usize, allowed: Option<&[bool]>) -> Result<ScoreTable, Error> {
    let v = tape.value(scores);
    let mut data = v.data().to_vec();
    if let Some(mask) = allowed {
        if mask.len() != data.len() {
            return Err(Error::ScoreTableSize { expected: data.len(), actual: mask.len() });
        }
        for (x, &ok) in data.iter_mut().zip(mask) {
            if !ok {
                *x = f64::NEG_INFINITY;
            }
        }
    }
    ScoreTable::new(n, max_width, v.cols(), data)
}
