//! Antecedent-ranking coreference over candidate spans.
//!
//! Candidate spans are kept in document order. Each span chooses one
//! antecedent among a dummy `null` (index 0 of its candidate list, fixed
//! score 0) and up to `window` immediately preceding spans.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use serde::{Deserialize, Serialize};

use crate::data::CorefDocument;
use crate::error::Error;
use crate::math;
use crate::spanrep::{distance_bucket, Span, DISTANCE_BUCKETS};
use crate::tensor::{Ffn, Linear, NodeId, ParamId, ParamStore, Tape, Tensor};
use crate::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorefConfig {
    pub max_width: usize,
    /// Number of preceding candidates considered as antecedents.
    pub window: usize,
    pub ffn_dim: usize,
    pub ffn_depth: usize,
    pub dropout: f64,
    pub distance_dim: usize,
    pub genre_dim: usize,
    pub speaker_dim: usize,
    /// Known genres; an empty list disables the genre feature.
    pub genres: Vec<String>,
    pub use_speaker: bool,
}

impl Default for CorefConfig {
    fn default() -> Self {
        CorefConfig {
            max_width: 10,
            window: 50,
            ffn_dim: 150,
            ffn_depth: 2,
            dropout: 0.2,
            distance_dim: 20,
            genre_dim: 20,
            speaker_dim: 20,
            genres: Vec::new(),
            use_speaker: false,
        }
    }
}

/// Indices of the spans that may serve as antecedents of span `k`.
pub fn candidate_window(k: usize, window: usize) -> Range<usize> {
    k.saturating_sub(window)..k
}

/// Softmax over one span's candidate scores (null first).
pub fn antecedent_distribution(scores: &[f64]) -> Vec<f64> {
    let mut p = vec![0.0; scores.len()];
    math::softmax_into(scores, &mut p);
    p
}

/// Positions in span `k`'s candidate list (0 = null) of antecedents in the
/// same gold cluster; `[0]` when there are none.
pub fn gold_antecedents(spans: &[Span], k: usize, window: usize, cluster_of: &BTreeMap<Span, usize>) -> Vec<usize> {
    let range = candidate_window(k, window);
    let out: Vec<usize> = match cluster_of.get(&spans[k]) {
        Some(c) => range
            .clone()
            .enumerate()
            .filter(|&(_, j)| cluster_of.get(&spans[j]) == Some(c))
            .map(|(pos, _)| pos + 1)
            .collect(),
        None => Vec::new(),
    };
    if out.is_empty() {
        vec![0]
    } else {
        out
    }
}

/// Cluster index of every gold mention.
pub fn cluster_index(clusters: &[Vec<Span>]) -> BTreeMap<Span, usize> {
    clusters.iter().enumerate().flat_map(|(c, m)| m.iter().map(move |s| (*s, c))).collect()
}

/// `−log Σ_{a ∈ gold} p(a)` for one span.
pub fn span_loss(scores: &[f64], gold: &[usize]) -> f64 {
    let g: Vec<f64> = gold.iter().map(|&a| scores[a]).collect();
    math::log_sum_exp(scores) - math::log_sum_exp(&g)
}

/// Sum of [`span_loss`] over spans.
pub fn coref_loss(scores: &[Vec<f64>], gold: &[Vec<usize>]) -> f64 {
    scores.iter().zip(gold).map(|(s, g)| span_loss(s, g)).sum()
}

/// Highest-scoring candidate position; ties go to the earliest, so null wins
/// ties with real antecedents.
pub fn best_antecedent(scores: &[f64]) -> usize {
    let mut best = 0;
    for (k, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = k;
        }
    }
    best
}

/// Connected components of the predicted links, dropping singletons.
/// `antecedents[k]` is the index of span `k`'s antecedent, if any, and must
/// be smaller than `k`. Clusters are sorted internally and by first mention.
pub fn recover_clusters(spans: &[Span], antecedents: &[Option<usize>]) -> Result<Vec<Vec<Span>>, Error> {
    assert_eq!(spans.len(), antecedents.len(), "one link per span");
    let mut cluster: Vec<Option<usize>> = vec![None; spans.len()];
    let mut members: Vec<Vec<usize>> = Vec::new();
    for (k, a) in antecedents.iter().enumerate() {
        let Some(a) = *a else { continue };
        if a >= k {
            return Err(Error::NotPreceding { span: k, antecedent: a });
        }
        let c = match cluster[a] {
            Some(c) => c,
            None => {
                members.push(vec![a]);
                cluster[a] = Some(members.len() - 1);
                members.len() - 1
            }
        };
        cluster[k] = Some(c);
        members[c].push(k);
    }
    let mut out: Vec<Vec<Span>> = members
        .into_iter()
        .map(|m| {
            let mut c: Vec<Span> = m.into_iter().map(|k| spans[k]).collect();
            c.sort();
            c
        })
        .collect();
    out.sort();
    Ok(out)
}

/// Pairwise antecedent scorer over span embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct CorefHead {
    pub config: CorefConfig,
    pub ffn: Ffn,
    pub out: Linear,
    pub distance: ParamId,
    pub genre: Option<ParamId>,
    pub speaker: Option<ParamId>,
}

/// Per-document feature inputs shared by every pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairContext {
    /// Row of the genre table (0 = unknown genre).
    pub genre: Option<usize>,
    /// Speaker of each span's first token.
    pub speakers: Option<Vec<String>>,
}

impl PairContext {
    pub fn for_document(config: &CorefConfig, doc: &CorefDocument, spans: &[Span]) -> Self {
        let genre = (!config.genres.is_empty()).then(|| {
            doc.genre.as_ref().and_then(|g| config.genres.iter().position(|x| x == g)).map_or(0, |k| k + 1)
        });
        let speakers = (config.use_speaker && doc.speakers.is_some())
            .then(|| spans.iter().map(|s| doc.speaker_of(s.start).unwrap_or_default().into()).collect());
        PairContext { genre, speakers }
    }
}

impl CorefHead {
    pub fn new(params: &mut ParamStore, name: &str, span_dim: usize, config: CorefConfig, rng: &mut Rng) -> Self {
        let distance = params.glorot(format!("{name}.distance"), DISTANCE_BUCKETS, config.distance_dim, rng);
        let mut input = 3 * span_dim + config.distance_dim;
        let genre = (!config.genres.is_empty()).then(|| {
            input += config.genre_dim;
            params.glorot(format!("{name}.genre"), config.genres.len() + 1, config.genre_dim, rng)
        });
        let speaker = config.use_speaker.then(|| {
            input += config.speaker_dim;
            params.glorot(format!("{name}.speaker"), 2, config.speaker_dim, rng)
        });
        let ffn = Ffn::new(params, &format!("{name}.ffn"), input, config.ffn_dim, config.ffn_depth, config.dropout, rng);
        let out = Linear::new(params, &format!("{name}.out"), config.ffn_dim, 1, true, rng);
        CorefHead { config, ffn, out, distance, genre, speaker }
    }

    /// Score vector `[0, Ψ(s, a_1), …]` for span `k` over its window.
    /// `spans` is the `[S × d]` embedding matrix in document order.
    pub fn scores(&self, tape: &mut Tape<'_>, spans: NodeId, k: usize, ctx: &PairContext) -> NodeId {
        let range = candidate_window(k, self.config.window);
        let null = tape.constant(Tensor::vector(vec![0.0]));
        if range.is_empty() {
            return null;
        }
        let cand: Vec<usize> = range.collect();
        let m = cand.len();
        let a = tape.gather_rows(spans, &cand);
        let s = tape.gather_rows(spans, &vec![k; m]);
        let prod = tape.mul(s, a);
        let dt = tape.param(self.distance);
        let buckets: Vec<usize> = cand.iter().map(|&j| distance_bucket(k - j - 1)).collect();
        let mut parts = vec![s, a, prod, tape.gather_rows(dt, &buckets)];
        if let Some(g) = self.genre {
            let gt = tape.param(g);
            parts.push(tape.gather_rows(gt, &vec![ctx.genre.unwrap_or(0); m]));
        }
        if let Some(sp) = self.speaker {
            let same: Vec<usize> = match &ctx.speakers {
                Some(who) => cand.iter().map(|&j| usize::from(who[j] == who[k])).collect(),
                None => vec![0; m],
            };
            let st = tape.param(sp);
            parts.push(tape.gather_rows(st, &same));
        }
        let x = tape.concat_cols(&parts);
        let h = self.ffn.forward(tape, x);
        let psi = self.out.forward(tape, h);
        let psi = tape.reshape(psi, &[m]);
        tape.concat(&[null, psi])
    }

    /// Score of a single pair; the antecedent must precede the span.
    pub fn pair_score(&self, tape: &mut Tape<'_>, spans: NodeId, k: usize, antecedent: usize, ctx: &PairContext) -> Result<NodeId, Error> {
        let range = candidate_window(k, self.config.window);
        if antecedent >= k {
            return Err(Error::NotPreceding { span: k, antecedent });
        }
        if !range.contains(&antecedent) {
            return Err(Error::Config(format!("span {antecedent} is outside the antecedent window of span {k}")));
        }
        let all = self.scores(tape, spans, k, ctx);
        Ok(tape.gather(all, &[antecedent - range.start + 1]))
    }

    /// Marginal log-likelihood loss summed over all spans.
    pub fn loss(&self, tape: &mut Tape<'_>, spans: NodeId, order: &[Span], clusters: &[Vec<Span>], ctx: &PairContext) -> NodeId {
        let of = cluster_index(clusters);
        let mut terms = Vec::with_capacity(order.len());
        for k in 0..order.len() {
            let gold = gold_antecedents(order, k, self.config.window, &of);
            let sc = self.scores(tape, spans, k, ctx);
            let all = tape.log_sum_exp(sc);
            let g = tape.gather(sc, &gold);
            let gl = tape.log_sum_exp(g);
            terms.push(tape.sub(all, gl));
        }
        let v = tape.concat(&terms);
        tape.sum(v)
    }

    /// Predicted antecedent of every span, as indices into `order`.
    pub fn decode(&self, tape: &mut Tape<'_>, spans: NodeId, n: usize, ctx: &PairContext) -> Vec<Option<usize>> {
        (0..n)
            .map(|k| {
                let sc = self.scores(tape, spans, k, ctx);
                let best = best_antecedent(tape.value(sc).data());
                (best > 0).then(|| candidate_window(k, self.config.window).start + best - 1)
            })
            .collect()
    }
}
