//! Contextualized token states from pretrained embeddings, a target
//! indicator and a stacked bidirectional LSTM with highway connections.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::{Vocabulary, WordRef};
use crate::error::Error;
use crate::spanrep::Span;
use crate::tensor::{BiLstm, Highway, NodeId, ParamId, ParamStore, Tape, Tensor};
use crate::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub word_dim: usize,
    pub target_dim: usize,
    /// Per direction.
    pub hidden_dim: usize,
    pub layers: usize,
    pub recurrent_dropout: f64,
    pub freeze_embeddings: bool,
}

impl EncoderConfig {
    pub fn frame_srl() -> Self {
        EncoderConfig {
            word_dim: 300,
            target_dim: 100,
            hidden_dim: 300,
            layers: 6,
            recurrent_dropout: 0.1,
            freeze_embeddings: true,
        }
    }

    pub fn propbank_srl() -> Self {
        EncoderConfig { word_dim: 100, freeze_embeddings: false, ..Self::frame_srl() }
    }

    pub fn validate(&self) -> Result<(), Error> {
        if self.word_dim == 0 || self.target_dim == 0 || self.hidden_dim == 0 || self.layers == 0 {
            return Err(Error::Config(format!("encoder dimensions must be positive: {self:?}")));
        }
        if !(0.0..1.0).contains(&self.recurrent_dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.recurrent_dropout)));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.word_dim + self.target_dim
    }

    pub fn output_dim(&self) -> usize {
        2 * self.hidden_dim
    }
}

/// 0/1 target indicator per token, before the learned transform.
pub fn target_indicators(n: usize, target: Option<Span>) -> Result<Vec<usize>, Error> {
    if n == 0 {
        return Err(Error::EmptySentence);
    }
    if let Some(t) = target {
        t.check_bounds(n)?;
    }
    Ok((1..=n)
        .map(|q| match target {
            Some(t) if t.start <= q && q <= t.end => 1,
            _ => 0,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub words: ParamId,
    pub target: ParamId,
    pub layers: Vec<BiLstm>,
    pub highways: Vec<Highway>,
}

impl Encoder {
    /// `word_table` is the initial `[vocab × word_dim]` embedding matrix.
    pub fn new(params: &mut ParamStore, name: &str, config: EncoderConfig, word_table: Tensor, rng: &mut Rng) -> Result<Self, Error> {
        config.validate()?;
        if word_table.shape().len() != 2 || word_table.cols() != config.word_dim {
            return Err(Error::Config(format!(
                "word table shape {:?} does not match word_dim {}",
                word_table.shape(),
                config.word_dim
            )));
        }
        let words = params.add(format!("{name}.words"), word_table, !config.freeze_embeddings);
        let target = params.glorot(format!("{name}.target"), 2, config.target_dim, rng);
        let mut layers = Vec::with_capacity(config.layers);
        let mut highways = Vec::new();
        let mut input = config.input_dim();
        for k in 0..config.layers {
            layers.push(BiLstm::new(params, &format!("{name}.lstm{k}"), input, config.hidden_dim, rng));
            if k > 0 {
                highways.push(Highway::new(params, &format!("{name}.highway{k}"), config.output_dim(), rng));
            }
            input = config.output_dim();
        }
        Ok(Encoder { config, words, target, layers, highways })
    }

    /// Token inputs `[x_q; v_q]`: the word vector and the transformed target
    /// indicator. Tokens unknown to `vocab` get a vector derived from the
    /// token itself, so repeated lookups agree.
    pub fn embed_tokens(&self, tape: &mut Tape<'_>, vocab: &Vocabulary, tokens: &[alloc::string::String], target: Option<Span>) -> Result<Vec<NodeId>, Error> {
        let indicators = target_indicators(tokens.len(), target)?;
        let words = tape.param(self.words);
        let tt = tape.param(self.target);
        let mut out = Vec::with_capacity(tokens.len());
        for (tok, &ind) in tokens.iter().zip(&indicators) {
            let x = match vocab.lookup(tok) {
                WordRef::Row(r) => tape.row(words, r),
                WordRef::Unknown(v) => tape.constant(Tensor::vector(v)),
            };
            let v = tape.row(tt, ind);
            out.push(tape.concat(&[x, v]));
        }
        Ok(out)
    }

    /// `h_1..h_n`, each of size `2 · hidden_dim`.
    pub fn encode(&self, tape: &mut Tape<'_>, inputs: &[NodeId]) -> Result<Vec<NodeId>, Error> {
        if inputs.is_empty() {
            return Err(Error::EmptySentence);
        }
        let mut xs = inputs.to_vec();
        for (k, layer) in self.layers.iter().enumerate() {
            let mut hs = layer.run(tape, &xs);
            if k > 0 {
                let hw = self.highways[k - 1];
                hs = xs.iter().zip(&hs).map(|(&x, &h)| hw.forward(tape, x, h)).collect();
            }
            if k + 1 < self.layers.len() {
                hs = hs.into_iter().map(|h| tape.dropout(h, self.config.recurrent_dropout)).collect();
            }
            xs = hs;
        }
        Ok(xs)
    }

    /// `embed_tokens` followed by `encode`.
    pub fn run(&self, tape: &mut Tape<'_>, vocab: &Vocabulary, tokens: &[alloc::string::String], target: Option<Span>) -> Result<Vec<NodeId>, Error> {
        let inputs = self.embed_tokens(tape, vocab, tokens, target)?;
        self.encode(tape, &inputs)
    }
}
