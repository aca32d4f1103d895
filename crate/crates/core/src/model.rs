//! Task models assembled from the shared encoder and span network, plus an
//! optional scaffold classifier.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::coref::{recover_clusters, CorefConfig, CorefHead, PairContext};
use crate::data::{CorefDocument, SrlArgument, SrlInstance, Vocabulary};
use crate::encoder::{Encoder, EncoderConfig};
use crate::error::Error;
use crate::scaffold::{CategorySet, LabelScheme, ScaffoldHead, ScaffoldInstance};
use crate::semicrf::{self, GoldEncoding, Segment};
use crate::spanrep::{enumerate_spans, Span, SpanEncoder, SpanRepConfig};
use crate::tensor::{Linear, NodeId, ParamStore, Tape, Tensor};
use crate::Rng;

/// Label of the null role; always index 0 of the role inventory.
pub const NULL_ROLE: &str = "null";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    FrameSrl,
    PropbankSrl,
    Coref,
}

impl TaskKind {
    pub fn is_srl(self) -> bool {
        self != TaskKind::Coref
    }

    pub fn default_max_width(self) -> usize {
        match self {
            TaskKind::FrameSrl => 15,
            TaskKind::PropbankSrl => 13,
            TaskKind::Coref => 10,
        }
    }

    pub fn default_delta(self) -> f64 {
        match self {
            TaskKind::Coref => 0.1,
            _ => 1.0,
        }
    }

    pub fn default_encoder(self) -> EncoderConfig {
        match self {
            TaskKind::FrameSrl => EncoderConfig::frame_srl(),
            _ => EncoderConfig::propbank_srl(),
        }
    }

    /// First-class categories of the common-nonterminal scheme.
    pub fn common_scheme(self) -> LabelScheme {
        match self {
            TaskKind::Coref => LabelScheme::common_coref(),
            _ => LabelScheme::common_srl(),
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskKind::FrameSrl => "frame_srl",
            TaskKind::PropbankSrl => "propbank_srl",
            TaskKind::Coref => "coref",
        })
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "frame_srl" => Ok(TaskKind::FrameSrl),
            "propbank_srl" => Ok(TaskKind::PropbankSrl),
            "coref" => Ok(TaskKind::Coref),
            _ => Err(Error::Config(format!("unknown task `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaffoldSpec {
    pub scheme: LabelScheme,
    pub categories: CategorySet,
}

/// Everything needed to rebuild a model's parameter layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub task: TaskKind,
    pub encoder: EncoderConfig,
    pub span: SpanRepConfig,
    pub max_width: usize,
    pub vocab: Vocabulary,
    /// SRL role inventory, null first.
    pub roles: Vec<String>,
    /// Roles observed with each frame; frames not listed allow every role.
    pub frame_roles: BTreeMap<String, BTreeSet<String>>,
    pub coref: Option<CorefConfig>,
    pub scaffold: Option<ScaffoldSpec>,
    /// Softmax-margin (cost-augmented) training for SRL.
    pub softmax_margin: bool,
}

impl ModelSpec {
    /// Role inventory and frame-role map from training instances.
    pub fn roles_from(instances: &[SrlInstance], restrict_by_frame: bool) -> (Vec<String>, BTreeMap<String, BTreeSet<String>>) {
        let mut roles = BTreeSet::new();
        let mut frames: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for inst in instances {
            let entry = frames.entry(inst.frame.clone()).or_default();
            for a in &inst.arguments {
                roles.insert(a.role.clone());
                entry.insert(a.role.clone());
            }
        }
        roles.remove(NULL_ROLE);
        let roles = core::iter::once(NULL_ROLE.to_string()).chain(roles).collect();
        (roles, if restrict_by_frame { frames } else { BTreeMap::new() })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub spec: ModelSpec,
    pub encoder: Encoder,
    pub spans: SpanEncoder,
    pub roles: Option<Linear>,
    pub coref: Option<CorefHead>,
    pub scaffold: Option<ScaffoldHead>,
}

impl Model {
    /// Registers every parameter in `params`; `word_table` initializes the
    /// word embeddings.
    pub fn build(spec: ModelSpec, word_table: Tensor, params: &mut ParamStore, rng: &mut Rng) -> Result<Self, Error> {
        if spec.max_width == 0 {
            return Err(Error::Config("max_width must be at least 1".into()));
        }
        let encoder = Encoder::new(params, "encoder", spec.encoder, word_table, rng)?;
        let mut span_config = spec.span;
        span_config.target_features = spec.task.is_srl();
        let spans = SpanEncoder::new(params, "span", spec.encoder.output_dim(), span_config, rng);
        let dim = spans.output_dim();
        let roles = if spec.task.is_srl() {
            if spec.roles.first().map(String::as_str) != Some(NULL_ROLE) {
                return Err(Error::Config("role inventory must start with the null role".into()));
            }
            Some(Linear::new(params, "srl.roles", dim, spec.roles.len(), false, rng))
        } else {
            None
        };
        let coref = match (&spec.coref, spec.task) {
            (Some(c), TaskKind::Coref) => Some(CorefHead::new(params, "coref", dim, c.clone(), rng)),
            (None, TaskKind::Coref) => return Err(Error::Config("coreference model needs a coref config".into())),
            _ => None,
        };
        let scaffold = spec
            .scaffold
            .as_ref()
            .map(|s| ScaffoldHead::new(params, "scaffold", dim, s.scheme.clone(), s.categories.clone(), rng));
        let mut spec = spec;
        spec.span = span_config;
        Ok(Model { spec, encoder, spans, roles, coref, scaffold })
    }

    pub fn role_index(&self, role: &str) -> Result<usize, Error> {
        self.spec.roles.iter().position(|r| r == role).ok_or_else(|| Error::UnknownLabel(role.into()))
    }

    /// Allowed `(span, role)` entries for a frame, row-major over the
    /// enumerated spans; `None` when every role is allowed.
    pub fn role_mask(&self, frame: &str, n: usize) -> Option<Vec<bool>> {
        let set = self.spec.frame_roles.get(frame)?;
        let row: Vec<bool> = self.spec.roles.iter().enumerate().map(|(k, r)| k == 0 || set.contains(r)).collect();
        let s = enumerate_spans(n, self.spec.max_width).len();
        Some(row.iter().copied().cycle().take(s * row.len()).collect())
    }

    /// `[S × L]` role scores over every enumerated span.
    pub fn srl_scores(&self, tape: &mut Tape<'_>, inst: &SrlInstance) -> Result<NodeId, Error> {
        let roles = self.roles.as_ref().ok_or_else(|| Error::Config("model has no SRL head".into()))?;
        let h = self.encoder.run(tape, &self.spec.vocab, &inst.tokens, Some(inst.target))?;
        let spans = enumerate_spans(inst.tokens.len(), self.spec.max_width);
        let v = self.spans.embed(tape, &h, &spans, Some(inst.target))?;
        Ok(roles.forward(tape, v))
    }

    /// Gold arguments as a segmentation, or `None` when an argument is wider
    /// than the model allows.
    pub fn gold_segmentation(&self, inst: &SrlInstance) -> Result<Option<semicrf::Segmentation>, Error> {
        let args = inst
            .arguments
            .iter()
            .map(|a| Ok(Segment { span: a.span, label: self.role_index(&a.role)? }))
            .collect::<Result<Vec<_>, Error>>()?;
        match semicrf::gold_to_segmentation(&args, inst.tokens.len(), self.spec.max_width, 0)? {
            GoldEncoding::Trainable(s) => Ok(Some(s)),
            GoldEncoding::Untrainable => Ok(None),
        }
    }

    /// Semi-CRF loss of one instance; `None` if its gold cannot be encoded.
    pub fn srl_loss(&self, tape: &mut Tape<'_>, inst: &SrlInstance) -> Result<Option<NodeId>, Error> {
        let Some(gold) = self.gold_segmentation(inst)? else { return Ok(None) };
        let scores = self.srl_scores(tape, inst)?;
        let n = inst.tokens.len();
        // Gold roles stay available even if the frame was not seen with them.
        let mask = self.role_mask(&inst.frame, n).map(|mut m| {
            let index = crate::spanrep::SpanIndex::new(n, self.spec.max_width);
            let l = self.spec.roles.len();
            for s in gold.segments() {
                if let Some(k) = index.get(s.span) {
                    m[k * l + s.label] = true;
                }
            }
            m
        });
        semicrf::loss_node(tape, scores, n, self.spec.max_width, mask.as_deref(), &gold, self.spec.softmax_margin).map(Some)
    }

    /// Best-scoring arguments, null segments removed.
    pub fn predict_srl(&self, params: &ParamStore, inst: &SrlInstance) -> Result<Vec<SrlArgument>, Error> {
        let mut tape = Tape::eval(params);
        let scores = self.srl_scores(&mut tape, inst)?;
        let mask = self.role_mask(&inst.frame, inst.tokens.len());
        let table = semicrf::table_from_node(&tape, scores, inst.tokens.len(), self.spec.max_width, mask.as_deref())?;
        Ok(semicrf::viterbi(&table)
            .arguments(0)
            .into_iter()
            .map(|s| SrlArgument { span: s.span, role: self.spec.roles[s.label].clone() })
            .collect())
    }

    /// Candidate span embeddings of a document, sentences encoded
    /// independently.
    pub fn coref_embed(&self, tape: &mut Tape<'_>, doc: &CorefDocument) -> Result<(NodeId, Vec<Span>), Error> {
        let mut h = Vec::with_capacity(doc.num_tokens());
        for sent in &doc.sentences {
            h.extend(self.encoder.run(tape, &self.spec.vocab, sent, None)?);
        }
        let spans = doc.candidate_spans(self.spec.max_width);
        if spans.is_empty() {
            return Err(Error::EmptySentence);
        }
        Ok((self.spans.embed(tape, &h, &spans, None)?, spans))
    }

    fn coref_head(&self) -> Result<&CorefHead, Error> {
        self.coref.as_ref().ok_or_else(|| Error::Config("model has no coreference head".into()))
    }

    pub fn coref_loss(&self, tape: &mut Tape<'_>, doc: &CorefDocument) -> Result<NodeId, Error> {
        let head = self.coref_head()?;
        let (v, spans) = self.coref_embed(tape, doc)?;
        let ctx = PairContext::for_document(&head.config, doc, &spans);
        Ok(head.loss(tape, v, &spans, &doc.clusters, &ctx))
    }

    pub fn predict_coref(&self, params: &ParamStore, doc: &CorefDocument) -> Result<Vec<Vec<Span>>, Error> {
        let head = self.coref_head()?;
        let mut tape = Tape::eval(params);
        let (v, spans) = self.coref_embed(&mut tape, doc)?;
        let ctx = PairContext::for_document(&head.config, doc, &spans);
        let links = head.decode(&mut tape, v, spans.len(), &ctx);
        recover_clusters(&spans, &links)
    }

    /// Target used for a scaffold sentence: the placeholder for SRL models,
    /// none for coreference.
    fn scaffold_target(&self, inst: &ScaffoldInstance) -> Option<Span> {
        self.spec.task.is_srl().then_some(inst.target)
    }

    pub fn scaffold_loss(&self, tape: &mut Tape<'_>, inst: &ScaffoldInstance) -> Result<NodeId, Error> {
        let head = self.scaffold.as_ref().ok_or_else(|| Error::Config("model has no scaffold head".into()))?;
        let target = self.scaffold_target(inst);
        let h = self.encoder.run(tape, &self.spec.vocab, &inst.tokens, target)?;
        let v = self.spans.embed(tape, &h, &inst.spans, target)?;
        head.loss(tape, v, &inst.labels)
    }

    /// Most likely scaffold label per span; used for inspection only.
    pub fn predict_scaffold(&self, params: &ParamStore, inst: &ScaffoldInstance) -> Result<Vec<String>, Error> {
        let head = self.scaffold.as_ref().ok_or_else(|| Error::Config("model has no scaffold head".into()))?;
        let mut tape = Tape::eval(params);
        let target = self.scaffold_target(inst);
        let h = self.encoder.run(&mut tape, &self.spec.vocab, &inst.tokens, target)?;
        let v = self.spans.embed(&mut tape, &h, &inst.spans, target)?;
        let logits = head.logits(&mut tape, v);
        let t = tape.value(logits);
        Ok((0..t.rows())
            .map(|r| {
                let row = t.row(r);
                let best = (0..row.len()).fold(0, |b, k| if row[k] > row[b] { k } else { b });
                head.categories.labels()[best].clone()
            })
            .collect())
    }
}

/// Default span configuration with the given feature switch.
pub fn span_config(target_features: bool) -> SpanRepConfig {
    SpanRepConfig { target_features, ..SpanRepConfig::default() }
}
