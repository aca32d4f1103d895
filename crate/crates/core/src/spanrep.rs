//! Candidate spans and their learned representations.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::tensor::{Ffn, NodeId, ParamId, ParamStore, Tape, Tensor};
use crate::Rng;

/// Contiguous token span, 1-based and inclusive on both ends. Serialized
/// as a `[start, end]` pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "(usize, usize)", into = "(usize, usize)")]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        debug_assert!(1 <= start && start <= end, "bad span ({start}, {end})");
        Span { start, end }
    }

    pub fn width(&self) -> usize {
        self.end + 1 - self.start
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start <= other.end && other.start <= self.end
    }

    pub fn check_bounds(&self, len: usize) -> Result<(), Error> {
        if self.start == 0 || self.start > self.end || self.end > len {
            return Err(Error::SpanOutOfBounds { span: *self, len });
        }
        Ok(())
    }

    /// Shifts a sentence-local span into document coordinates.
    pub fn offset(&self, by: usize) -> Span {
        Span { start: self.start + by, end: self.end + by }
    }
}

impl TryFrom<(usize, usize)> for Span {
    type Error = alloc::string::String;

    fn try_from((start, end): (usize, usize)) -> Result<Self, Self::Error> {
        if start == 0 || end < start {
            return Err(format!("invalid span [{start}, {end}]: spans are 1-based with start <= end"));
        }
        Ok(Span { start, end })
    }
}

impl From<Span> for (usize, usize) {
    fn from(s: Span) -> Self {
        (s.start, s.end)
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.start, self.end)
    }
}

/// All spans of width at most `max_width`, ordered by `(start, end)`.
pub fn enumerate_spans(n: usize, max_width: usize) -> Vec<Span> {
    let mut out = Vec::new();
    for i in 1..=n {
        for j in i..=n.min(i + max_width - 1) {
            out.push(Span::new(i, j));
        }
    }
    out
}

/// Position of each enumerated span in the [`enumerate_spans`] order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpanIndex {
    n: usize,
    max_width: usize,
    offsets: Vec<usize>,
}

impl SpanIndex {
    pub fn new(n: usize, max_width: usize) -> Self {
        assert!(max_width >= 1, "max width must be positive");
        let mut offsets = Vec::with_capacity(n + 1);
        let mut acc = 0;
        for i in 1..=n {
            offsets.push(acc);
            acc += max_width.min(n - i + 1);
        }
        offsets.push(acc);
        SpanIndex { n, max_width, offsets }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn max_width(&self) -> usize {
        self.max_width
    }

    pub fn len(&self) -> usize {
        self.offsets[self.n]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, span: Span) -> Option<usize> {
        if span.start == 0 || span.end > self.n || span.start > span.end || span.width() > self.max_width {
            return None;
        }
        Some(self.offsets[span.start - 1] + span.end - span.start)
    }

    pub fn spans(&self) -> Vec<Span> {
        enumerate_spans(self.n, self.max_width)
    }
}

pub const WIDTH_BUCKETS: usize = 7;
pub const DISTANCE_BUCKETS: usize = 8;

/// Width buckets `{1, 2, 3, 4, 5–7, 8–15, 16+}`.
pub fn width_bucket(width: usize) -> usize {
    match width {
        0 | 1 => 0,
        2 => 1,
        3 => 2,
        4 => 3,
        5..=7 => 4,
        8..=15 => 5,
        _ => 6,
    }
}

/// Distance buckets `{0, 1, 2, 3, 4–7, 8–15, 16–31, 32+}`.
pub fn distance_bucket(distance: usize) -> usize {
    match distance {
        0..=3 => distance,
        4..=7 => 4,
        8..=15 => 5,
        16..=31 => 6,
        _ => 7,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Position {
    Before,
    After,
    Overlap,
}

impl Position {
    fn index(self) -> usize {
        match self {
            Position::Before => 0,
            Position::After => 1,
            Position::Overlap => 2,
        }
    }
}

/// Placement of `span` relative to `target`; sharing any token is an overlap.
pub fn position(span: Span, target: Span) -> Position {
    if span.overlaps(&target) {
        Position::Overlap
    } else if span.end < target.start {
        Position::Before
    } else {
        Position::After
    }
}

/// Number of tokens strictly between `span` and `target`.
pub fn token_distance(span: Span, target: Span) -> usize {
    match position(span, target) {
        Position::Overlap => 0,
        Position::Before => target.start - span.end - 1,
        Position::After => span.start - target.end - 1,
    }
}

/// Discrete features of a span; the target-relative ones are absent when
/// there is no target.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpanFeatures {
    pub width_bucket: usize,
    pub distance_bucket: Option<usize>,
    pub position: Option<Position>,
}

pub fn span_features(span: Span, target: Option<Span>) -> SpanFeatures {
    SpanFeatures {
        width_bucket: width_bucket(span.width()),
        distance_bucket: target.map(|t| distance_bucket(token_distance(span, t))),
        position: target.map(|t| position(span, t)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpanFeatureConfig {
    pub width_dim: usize,
    pub distance_dim: usize,
    pub position_dim: usize,
}

impl Default for SpanFeatureConfig {
    fn default() -> Self {
        SpanFeatureConfig { width_dim: 20, distance_dim: 20, position_dim: 20 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpanRepConfig {
    pub ffn_dim: usize,
    pub ffn_depth: usize,
    pub dropout: f64,
    pub features: SpanFeatureConfig,
    /// Distance and position relative to a target; off for coreference.
    pub target_features: bool,
}

impl Default for SpanRepConfig {
    fn default() -> Self {
        SpanRepConfig {
            ffn_dim: 150,
            ffn_depth: 2,
            dropout: 0.2,
            features: SpanFeatureConfig::default(),
            target_features: true,
        }
    }
}

/// Produces `v = FFN([h_i; h_j; u; a])` for spans of one sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct SpanEncoder {
    pub config: SpanRepConfig,
    pub head: ParamId,
    pub width_table: ParamId,
    pub distance_table: Option<ParamId>,
    pub position_table: Option<ParamId>,
    pub ffn: Ffn,
}

impl SpanEncoder {
    pub fn new(params: &mut ParamStore, name: &str, token_dim: usize, config: SpanRepConfig, rng: &mut Rng) -> Self {
        let fc = config.features;
        let head = params.glorot(format!("{name}.head"), 1, token_dim, rng);
        let width_table = params.glorot(format!("{name}.width"), WIDTH_BUCKETS, fc.width_dim, rng);
        let mut input = 3 * token_dim + fc.width_dim;
        let (distance_table, position_table) = if config.target_features {
            input += fc.distance_dim + fc.position_dim;
            (
                Some(params.glorot(format!("{name}.distance"), DISTANCE_BUCKETS, fc.distance_dim, rng)),
                Some(params.glorot(format!("{name}.position"), 3, fc.position_dim, rng)),
            )
        } else {
            (None, None)
        };
        let ffn = Ffn::new(params, &format!("{name}.ffn"), input, config.ffn_dim, config.ffn_depth, config.dropout, rng);
        SpanEncoder { config, head, width_table, distance_table, position_table, ffn }
    }

    pub fn output_dim(&self) -> usize {
        self.config.ffn_dim
    }

    /// Stacks token states into an `[n × d]` matrix and scores each row for
    /// attention.
    pub fn prepare(&self, tape: &mut Tape<'_>, h: &[NodeId]) -> (NodeId, NodeId) {
        let hm = tape.concat_rows(h);
        let w = tape.param(self.head);
        let logits = tape.affine(hm, w, None);
        let logits = tape.reshape(logits, &[h.len()]);
        (hm, logits)
    }

    /// Attention-pooled summary `u = Σ_k σ_k h_k` over the span's tokens.
    pub fn summary(&self, tape: &mut Tape<'_>, hm: NodeId, logits: NodeId, span: Span) -> NodeId {
        let w = span.width();
        let l = tape.slice(logits, span.start - 1, w);
        let sigma = tape.softmax(l);
        let rows = tape.rows(hm, span.start - 1, w);
        tape.weighted_row_sum(sigma, rows)
    }

    /// Embedded discrete features `a` for a span.
    pub fn features(&self, tape: &mut Tape<'_>, span: Span, target: Option<Span>) -> NodeId {
        let target = if self.config.target_features { target } else { None };
        let f = span_features(span, target);
        let wt = tape.param(self.width_table);
        let mut parts = vec![tape.row(wt, f.width_bucket)];
        if let (Some(dt), Some(pt)) = (self.distance_table, self.position_table) {
            let d = f.distance_bucket.unwrap_or(0);
            let p = f.position.unwrap_or(Position::Overlap);
            let dt = tape.param(dt);
            let pt = tape.param(pt);
            parts.push(tape.row(dt, d));
            parts.push(tape.row(pt, p.index()));
        }
        tape.concat(&parts)
    }

    /// `[S × ffn_dim]` matrix of span embeddings, one row per span.
    pub fn embed(&self, tape: &mut Tape<'_>, h: &[NodeId], spans: &[Span], target: Option<Span>) -> Result<NodeId, Error> {
        if h.is_empty() {
            return Err(Error::EmptySentence);
        }
        for s in spans {
            s.check_bounds(h.len())?;
        }
        if let Some(t) = target {
            t.check_bounds(h.len())?;
        }
        let (hm, logits) = self.prepare(tape, h);
        let mut rows = Vec::with_capacity(spans.len());
        for &span in spans {
            let u = self.summary(tape, hm, logits, span);
            let a = self.features(tape, span, target);
            rows.push(tape.concat(&[h[span.start - 1], h[span.end - 1], u, a]));
        }
        let x = tape.concat_rows(&rows);
        Ok(self.ffn.forward(tape, x))
    }
}

/// Plain `f64` attention summary, used to cross-check the tape version.
pub fn span_summary(h: &[Vec<f64>], span: Span, head: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let logits: Vec<f64> = (span.start..=span.end)
        .map(|k| h[k - 1].iter().zip(head).map(|(a, b)| a * b).sum())
        .collect();
    let mut sigma = vec![0.0; logits.len()];
    crate::math::softmax_into(&logits, &mut sigma);
    let mut u = vec![0.0; h[0].len()];
    for (s, k) in sigma.iter().zip(span.start..=span.end) {
        for (o, x) in u.iter_mut().zip(&h[k - 1]) {
            *o += s * x;
        }
    }
    (u, sigma)
}

/// Helper for tests and callers that hold plain vectors.
pub fn constant_rows(tape: &mut Tape<'_>, rows: &[Vec<f64>]) -> Vec<NodeId> {
    rows.iter().map(|r| tape.constant(Tensor::vector(r.clone()))).collect()
}
