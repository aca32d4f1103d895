//! Task records, vocabulary, and the alternating multitask batch schedule.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::spanrep::{enumerate_spans, Span};
use crate::{math, rng_from_seed, Rng};

/// A labeled argument span of one target.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SrlArgument {
    pub span: Span,
    pub role: String,
}

/// One target annotation in a sentence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SrlTarget {
    pub span: Span,
    pub frame: String,
    pub arguments: Vec<SrlArgument>,
}

/// A sentence with all of its target annotations, as stored on disk.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SrlSentence {
    pub tokens: Vec<String>,
    pub targets: Vec<SrlTarget>,
}

/// One (sentence, target) pair: the unit of SRL training and prediction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SrlInstance {
    pub tokens: Vec<String>,
    pub target: Span,
    pub frame: String,
    pub arguments: Vec<SrlArgument>,
}

impl SrlInstance {
    pub fn validate(&self) -> Result<(), Error> {
        let n = self.tokens.len();
        if n == 0 {
            return Err(Error::EmptySentence);
        }
        self.target.check_bounds(n)?;
        let mut spans: Vec<Span> = self.arguments.iter().map(|a| a.span).collect();
        for s in &spans {
            s.check_bounds(n)?;
        }
        spans.sort();
        for w in spans.windows(2) {
            if w[0].overlaps(&w[1]) {
                return Err(Error::OverlappingArguments(w[0], w[1]));
            }
        }
        Ok(())
    }
}

impl SrlSentence {
    /// Each target becomes an independent instance.
    pub fn instances(&self) -> Result<Vec<SrlInstance>, Error> {
        self.targets
            .iter()
            .map(|t| {
                let inst = SrlInstance {
                    tokens: self.tokens.clone(),
                    target: t.span,
                    frame: t.frame.clone(),
                    arguments: t.arguments.clone(),
                };
                inst.validate().map(|_| inst)
            })
            .collect()
    }
}

/// A coreference document; spans are 1-based document token positions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorefDocument {
    pub sentences: Vec<Vec<String>>,
    pub clusters: Vec<Vec<Span>>,
    pub genre: Option<String>,
    /// One speaker id per token, parallel to `sentences`.
    pub speakers: Option<Vec<Vec<String>>>,
}

impl CorefDocument {
    pub fn num_tokens(&self) -> usize {
        self.sentences.iter().map(Vec::len).sum()
    }

    /// Document offset of each sentence's first token, minus one.
    pub fn sentence_offsets(&self) -> Vec<usize> {
        let mut acc = 0;
        self.sentences
            .iter()
            .map(|s| {
                let o = acc;
                acc += s.len();
                o
            })
            .collect()
    }

    pub fn validate(&self) -> Result<(), Error> {
        let n = self.num_tokens();
        let mut seen = BTreeSet::new();
        for c in &self.clusters {
            for s in c {
                s.check_bounds(n)?;
                if !seen.insert(*s) {
                    return Err(Error::Config(format!("span {s} appears in more than one cluster")));
                }
            }
        }
        if let Some(sp) = &self.speakers {
            let ok = sp.len() == self.sentences.len() && sp.iter().zip(&self.sentences).all(|(a, b)| a.len() == b.len());
            if !ok {
                return Err(Error::Config("speakers must be parallel to sentences".into()));
            }
        }
        Ok(())
    }

    /// Candidate mention spans: every within-sentence span of width at most
    /// `max_width`, in document order.
    pub fn candidate_spans(&self, max_width: usize) -> Vec<Span> {
        let mut out = Vec::new();
        for (sent, off) in self.sentences.iter().zip(self.sentence_offsets()) {
            out.extend(enumerate_spans(sent.len(), max_width).into_iter().map(|s| s.offset(off)));
        }
        out
    }

    /// Speaker of a document token, if speakers are annotated.
    pub fn speaker_of(&self, token: usize) -> Option<&str> {
        let sp = self.speakers.as_ref()?;
        let mut k = token - 1;
        for s in sp {
            if k < s.len() {
                return Some(&s[k]);
            }
            k -= s.len();
        }
        None
    }
}

/// Pretrained word vectors keyed by token.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: BTreeMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        EmbeddingTable { dim, vectors: BTreeMap::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn insert(&mut self, token: String, vector: Vec<f64>) -> Result<(), Error> {
        if vector.len() != self.dim {
            return Err(Error::Config(format!("vector for `{token}` has {} values, expected {}", vector.len(), self.dim)));
        }
        self.vectors.insert(token, vector);
        Ok(())
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.vectors.get(token).map(Vec::as_slice)
    }
}

/// Reserved first row of every vocabulary.
pub const UNKNOWN_TOKEN: &str = "<unk>";

/// Where a token's input vector comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum WordRef {
    /// Row of the learned embedding matrix.
    Row(usize),
    /// Token outside the vocabulary, with its deterministic vector.
    Unknown(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "StoredVocabulary", into = "StoredVocabulary")]
pub struct Vocabulary {
    tokens: Vec<String>,
    /// Whether each row was initialized from the pretrained table.
    pretrained: Vec<bool>,
    dim: usize,
    seed: u64,
    index: BTreeMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct StoredVocabulary {
    tokens: Vec<String>,
    pretrained: Vec<bool>,
    dim: usize,
    seed: u64,
}

impl From<StoredVocabulary> for Vocabulary {
    fn from(v: StoredVocabulary) -> Self {
        Vocabulary::from_tokens(v.tokens, v.pretrained, v.dim, v.seed)
    }
}

impl From<Vocabulary> for StoredVocabulary {
    fn from(v: Vocabulary) -> Self {
        StoredVocabulary { tokens: v.tokens, pretrained: v.pretrained, dim: v.dim, seed: v.seed }
    }
}

impl Vocabulary {
    pub fn from_tokens(tokens: Vec<String>, pretrained: Vec<bool>, dim: usize, seed: u64) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocabulary { tokens, pretrained, dim, seed, index }
    }

    /// Number of rows, including the reserved unknown row.
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 1
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_pretrained(&self, row: usize) -> bool {
        self.pretrained[row]
    }

    pub fn lookup(&self, token: &str) -> WordRef {
        match self.index.get(token) {
            Some(&r) => WordRef::Row(r),
            None => WordRef::Unknown(self.unknown_vector(token)),
        }
    }

    /// Random vector determined by the token and the vocabulary seed.
    pub fn unknown_vector(&self, token: &str) -> Vec<f64> {
        let mut rng = rng_from_seed(self.seed ^ fnv1a(token.as_bytes()));
        random_row(self.dim, &mut rng)
    }

    /// Initial embedding matrix: pretrained rows copied, the rest random.
    pub fn initial_table(&self, table: &EmbeddingTable, dim: usize, rng: &mut Rng) -> crate::tensor::Tensor {
        let mut data = Vec::with_capacity(self.tokens.len() * dim);
        for tok in &self.tokens {
            match table.get(tok) {
                Some(v) if v.len() == dim => data.extend_from_slice(v),
                _ => data.extend(random_row(dim, rng)),
            }
        }
        crate::tensor::Tensor::matrix(self.tokens.len(), dim, data)
    }
}

fn random_row(dim: usize, rng: &mut Rng) -> Vec<f64> {
    crate::tensor::params::uniform_vector(dim, math::sqrt(3.0 / dim as f64), rng)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Vocabulary over every distinct token of the given sentences, in first
/// occurrence order after the reserved unknown row. Tokens missing from
/// `table` are marked as not pretrained.
pub fn build_vocab<'a>(sentences: impl IntoIterator<Item = &'a [String]>, table: &EmbeddingTable) -> Vocabulary {
    build_vocab_seeded(sentences, table, 0x5eed)
}

pub fn build_vocab_seeded<'a>(sentences: impl IntoIterator<Item = &'a [String]>, table: &EmbeddingTable, seed: u64) -> Vocabulary {
    let mut tokens = alloc::vec![String::from(UNKNOWN_TOKEN)];
    let mut pretrained = alloc::vec![false];
    let mut seen = BTreeSet::new();
    seen.insert(String::from(UNKNOWN_TOKEN));
    for sent in sentences {
        for tok in sent {
            if seen.insert(tok.clone()) {
                pretrained.push(table.get(tok).is_some());
                tokens.push(tok.clone());
            }
        }
    }
    Vocabulary::from_tokens(tokens, pretrained, table.dim(), seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaskTag {
    Primary,
    Scaffold,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub task: TaskTag,
    /// Indices into the task's instance list.
    pub indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BatchSchedule {
    pub batches: Vec<Batch>,
}

impl BatchSchedule {
    pub fn count(&self, task: TaskTag) -> usize {
        self.batches.iter().filter(|b| b.task == task).map(|b| b.indices.len()).sum()
    }
}

/// Draws `target` scaffold indices from `0..available`: without replacement
/// when there are enough, otherwise with replacement.
pub fn resample(available: usize, target: usize, rng: &mut Rng) -> Vec<usize> {
    if available >= target {
        rand::seq::index::sample(rng, available, target).into_vec()
    } else {
        (0..target).map(|_| rng.gen_range(0..available)).collect()
    }
}

/// One epoch of alternating batches. The scaffold stream is resampled to the
/// primary stream's size, both are shuffled, cut into batches, and
/// interleaved starting with a primary batch.
pub fn build_schedule(primary_len: usize, scaffold_len: usize, batch_size: usize, seed: u64) -> Result<BatchSchedule, Error> {
    if primary_len == 0 {
        return Err(Error::EmptyStream("primary"));
    }
    if scaffold_len == 0 {
        return Err(Error::EmptyStream("scaffold"));
    }
    assert!(batch_size > 0, "batch size must be positive");
    let mut rng = rng_from_seed(seed);
    let mut primary: Vec<usize> = (0..primary_len).collect();
    primary.shuffle(&mut rng);
    let mut scaffold = resample(scaffold_len, primary_len, &mut rng);
    scaffold.shuffle(&mut rng);
    let mut p = primary.chunks(batch_size);
    let mut s = scaffold.chunks(batch_size);
    let mut batches = Vec::new();
    loop {
        let (a, b) = (p.next(), s.next());
        if a.is_none() && b.is_none() {
            break;
        }
        if let Some(a) = a {
            batches.push(Batch { task: TaskTag::Primary, indices: a.to_vec() });
        }
        if let Some(b) = b {
            batches.push(Batch { task: TaskTag::Scaffold, indices: b.to_vec() });
        }
    }
    Ok(BatchSchedule { batches })
}

/// Shuffled primary-only batches, used when the scaffold is switched off.
pub fn primary_schedule(primary_len: usize, batch_size: usize, seed: u64) -> BatchSchedule {
    let mut rng = rng_from_seed(seed);
    let mut primary: Vec<usize> = (0..primary_len).collect();
    primary.shuffle(&mut rng);
    BatchSchedule {
        batches: primary
            .chunks(batch_size.max(1))
            .map(|c| Batch { task: TaskTag::Primary, indices: c.to_vec() })
            .collect(),
    }
}
