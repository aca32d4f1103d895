//! Training, evaluation, prediction and scaffold extraction end to end.

use std::path::Path;

use scaffold_core::data::{build_vocab_seeded, CorefDocument, EmbeddingTable, SrlInstance, SrlSentence, SrlTarget};
use scaffold_core::metrics::{srl_counts, CorefScorer};
use scaffold_core::model::{Model, ModelSpec, ScaffoldSpec, TaskKind};
use scaffold_core::scaffold::{CategorySet, LabelScheme, ScaffoldInstance, Tree};
use scaffold_core::tensor::ParamStore;
use scaffold_core::train::{evaluate_coref, evaluate_srl, mix_seed, EpochStats, Primary, Trainer};
use scaffold_core::{rng_from_seed, Error};

use crate::checkpoint::{self, Metadata};
use crate::config::RunConfig;
use crate::corpus;
use crate::error::{AppError, Result};
use crate::report::{coref_report, srl_report, EpochLog, MetricLine};

#[derive(Debug, Clone, PartialEq)]
pub enum Corpus {
    Srl(Vec<SrlSentence>),
    Coref(Vec<CorefDocument>),
}

impl Corpus {
    pub fn read(task: TaskKind, path: &Path) -> Result<Self> {
        if task.is_srl() {
            corpus::read_srl(path).map(Corpus::Srl)
        } else {
            corpus::read_coref(path).map(Corpus::Coref)
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        match self {
            Corpus::Srl(s) => corpus::write_jsonl(path, s),
            Corpus::Coref(d) => corpus::write_jsonl(path, d),
        }
    }

    fn sentences(&self) -> Vec<&[String]> {
        match self {
            Corpus::Srl(s) => s.iter().map(|x| x.tokens.as_slice()).collect(),
            Corpus::Coref(d) => d.iter().flat_map(|x| x.sentences.iter().map(Vec::as_slice)).collect(),
        }
    }
}

/// In-memory inputs of a training run.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub train: Corpus,
    pub dev: Option<Corpus>,
    pub trees: Vec<Tree>,
    pub embeddings: EmbeddingTable,
}

impl TrainData {
    /// Reads every file named by the configuration.
    pub fn load(config: &RunConfig) -> Result<Self> {
        let train_path = config.train_path.as_deref().ok_or_else(|| AppError::Usage("no training corpus given (`train`)".into()))?;
        let train = Corpus::read(config.task, train_path)?;
        let dev = config.dev_path.as_deref().map(|p| Corpus::read(config.task, p)).transpose()?;
        let trees = if config.scaffold_enabled() {
            let p = config
                .treebank_path
                .as_deref()
                .ok_or_else(|| AppError::Usage("the scaffold needs a treebank (`treebank`)".into()))?;
            corpus::read_treebank(p)?
        } else {
            Vec::new()
        };
        let embeddings = match &config.embeddings_path {
            Some(p) => corpus::read_embeddings(p, Some(config.encoder.word_dim))?,
            None => EmbeddingTable::new(config.encoder.word_dim),
        };
        Ok(TrainData { train, dev, trees, embeddings })
    }
}

pub struct TrainOutcome {
    pub epochs: Vec<EpochStats>,
    pub dev_metrics: Vec<Option<f64>>,
    pub log_rows: Vec<String>,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
    pub model: Model,
    pub params: ParamStore,
    pub metadata: Metadata,
}

/// Primary metric: argument F1 for SRL, the CoNLL average for coreference.
pub fn score(model: &Model, params: &ParamStore, corpus: &Corpus) -> Result<f64> {
    Ok(match corpus {
        Corpus::Srl(s) => evaluate_srl(model, params, &corpus::srl_instances(s)?)?.0.f1,
        Corpus::Coref(d) => evaluate_coref(model, params, d)?.0.average_f1,
    })
}

pub fn train(config: &RunConfig) -> Result<TrainOutcome> {
    let data = TrainData::load(config)?;
    train_with(config, &data)
}

/// A freshly initialized model with its training instances.
pub struct Prepared {
    pub model: Model,
    pub params: ParamStore,
    /// SRL training instances; empty for coreference.
    pub srl: Vec<SrlInstance>,
    pub scaffold: Vec<ScaffoldInstance>,
}

/// Builds the vocabulary, label inventories and initial parameters.
pub fn prepare(config: &RunConfig, data: &TrainData) -> Result<Prepared> {
    config.validate()?;
    let srl = match &data.train {
        Corpus::Srl(s) => corpus::srl_instances(s)?,
        Corpus::Coref(_) => Vec::new(),
    };
    let scaffold: Vec<ScaffoldInstance> = match &config.scheme {
        Some(scheme) if config.scaffold_enabled() => corpus::scaffold_instances(&data.trees, scheme, config.max_width),
        _ => Vec::new(),
    };
    if config.scaffold_enabled() && scaffold.is_empty() {
        return Err(AppError::Data("the treebank is empty".into()));
    }
    let scaffold_spec = config.scheme.as_ref().filter(|_| config.scaffold_enabled()).map(|scheme: &LabelScheme| ScaffoldSpec {
        scheme: scheme.clone(),
        categories: CategorySet::for_instances(scheme, &scaffold),
    });

    let mut sentences = data.train.sentences();
    if let Some(dev) = &data.dev {
        sentences.extend(dev.sentences());
    }
    sentences.extend(scaffold.iter().map(|s| s.tokens.as_slice()));
    let vocab = build_vocab_seeded(sentences, &data.embeddings, mix_seed(&[config.train.seed, 1]));
    let (roles, frame_roles) =
        if config.task.is_srl() { ModelSpec::roles_from(&srl, config.task == TaskKind::FrameSrl) } else { Default::default() };
    let spec = ModelSpec {
        task: config.task,
        encoder: config.encoder,
        span: config.span,
        max_width: config.max_width,
        vocab,
        roles,
        frame_roles,
        coref: (!config.task.is_srl()).then(|| scaffold_core::coref::CorefConfig { max_width: config.max_width, ..config.coref.clone() }),
        scaffold: scaffold_spec,
        softmax_margin: config.softmax_margin,
    };
    let mut rng = rng_from_seed(mix_seed(&[config.train.seed, 2]));
    let table = spec.vocab.initial_table(&data.embeddings, config.encoder.word_dim, &mut rng);
    let mut params = ParamStore::new();
    let model = Model::build(spec, table, &mut params, &mut rng)?;
    Ok(Prepared { model, params, srl, scaffold })
}

pub fn train_with(config: &RunConfig, data: &TrainData) -> Result<TrainOutcome> {
    let Prepared { model, params, srl, scaffold } = prepare(config, data)?;
    let mut trainer = Trainer::new(model, params, config.train);

    let primary = match &data.train {
        Corpus::Srl(_) => Primary::Srl(&srl),
        Corpus::Coref(d) => Primary::Coref(d),
    };
    let mut log = EpochLog::create(config.log.as_deref())?;
    let mut epochs = Vec::new();
    let mut dev_metrics = Vec::new();
    let mut best: Option<(usize, Option<f64>, ParamStore)> = None;
    for epoch in 1..=config.train.epochs {
        let stats = trainer.train_epoch(epoch, primary, &scaffold)?;
        let dev = data.dev.as_ref().map(|d| score(&trainer.model, &trainer.params, d)).transpose()?;
        log.push(&stats, dev)?;
        epochs.push(stats);
        dev_metrics.push(dev);
        let improved = match (&best, dev) {
            (Some((_, Some(b), _)), Some(d)) if config.early_stopping => d > *b,
            _ => true,
        };
        if improved {
            let meta = Metadata { spec: trainer.model.spec.clone(), train: config.train, epoch, dev_metric: dev };
            if let Some(path) = &config.checkpoint {
                checkpoint::save(path, &meta, &trainer.params)?;
            }
            best = Some((epoch, dev, trainer.params.clone()));
        }
        if epoch >= config.min_epochs && matches!((dev, config.stop_metric), (Some(d), Some(t)) if d >= t) {
            break;
        }
    }
    let (best_epoch, dev_metric, params) = best.ok_or_else(|| AppError::Usage("epochs must be at least 1".into()))?;
    let metadata = Metadata { spec: trainer.model.spec.clone(), train: config.train, epoch: best_epoch, dev_metric };
    Ok(TrainOutcome { epochs, dev_metrics, log_rows: log.rows().to_vec(), best_epoch, model: trainer.model, params, metadata })
}

/// Metric lines for a model on a gold corpus.
pub fn evaluate_model(model: &Model, params: &ParamStore, gold: &Corpus) -> Result<Vec<MetricLine>> {
    Ok(match gold {
        Corpus::Srl(s) => srl_report(&evaluate_srl(model, params, &corpus::srl_instances(s)?)?.0),
        Corpus::Coref(d) => coref_report(&evaluate_coref(model, params, d)?.0),
    })
}

pub fn evaluate(checkpoint_path: &Path, corpus_path: &Path) -> Result<Vec<MetricLine>> {
    let (meta, model, params) = checkpoint::load(checkpoint_path)?;
    let gold = Corpus::read(meta.spec.task, corpus_path)?;
    evaluate_model(&model, &params, &gold)
}

/// Scores a prediction file against a gold file of the same shape.
pub fn evaluate_predictions(gold: &Corpus, predicted: &Corpus) -> Result<Vec<MetricLine>> {
    let mismatch = || AppError::Data("prediction file does not line up with the gold corpus".into());
    match (gold, predicted) {
        (Corpus::Srl(g), Corpus::Srl(p)) => {
            let (g, p) = (corpus::srl_instances(g)?, corpus::srl_instances(p)?);
            if g.len() != p.len() || g.iter().zip(&p).any(|(a, b)| a.tokens != b.tokens || a.target != b.target) {
                return Err(mismatch());
            }
            let gold_args: Vec<_> = g.into_iter().map(|i| i.arguments).collect();
            let pred_args: Vec<_> = p.into_iter().map(|i| i.arguments).collect();
            Ok(srl_report(&srl_counts(&gold_args, &pred_args).prf()))
        }
        (Corpus::Coref(g), Corpus::Coref(p)) => {
            if g.len() != p.len() {
                return Err(mismatch());
            }
            let mut scorer = CorefScorer::default();
            for (a, b) in g.iter().zip(p) {
                scorer.add_document(&a.clusters, &b.clusters);
            }
            Ok(coref_report(&scorer.report()))
        }
        _ => Err(mismatch()),
    }
}

/// Annotates a corpus: SRL arguments per target, or coreference clusters.
pub fn predict_corpus(model: &Model, params: &ParamStore, input: &Corpus) -> Result<Corpus> {
    Ok(match input {
        Corpus::Srl(sentences) => Corpus::Srl(
            sentences
                .iter()
                .map(|s| {
                    let targets = s
                        .instances()?
                        .iter()
                        .map(|inst| {
                            Ok(SrlTarget { span: inst.target, frame: inst.frame.clone(), arguments: model.predict_srl(params, inst)? })
                        })
                        .collect::<std::result::Result<Vec<_>, Error>>()?;
                    Ok(SrlSentence { tokens: s.tokens.clone(), targets })
                })
                .collect::<std::result::Result<Vec<_>, Error>>()?,
        ),
        Corpus::Coref(docs) => Corpus::Coref(
            docs.iter()
                .map(|d| Ok(CorefDocument { clusters: model.predict_coref(params, d)?, ..d.clone() }))
                .collect::<std::result::Result<Vec<_>, Error>>()?,
        ),
    })
}

pub fn predict(checkpoint_path: &Path, corpus_path: &Path, out: &Path) -> Result<usize> {
    let (meta, model, params) = checkpoint::load(checkpoint_path)?;
    let input = Corpus::read(meta.spec.task, corpus_path)?;
    let pred = predict_corpus(&model, &params, &input)?;
    pred.write(out)?;
    Ok(match &pred {
        Corpus::Srl(s) => s.len(),
        Corpus::Coref(d) => d.len(),
    })
}

pub fn extract_scaffold(treebank: &Path, scheme: &LabelScheme, max_width: usize, out: &Path) -> Result<usize> {
    if max_width == 0 {
        return Err(AppError::Usage("max_width must be at least 1".into()));
    }
    let trees = corpus::read_treebank(treebank)?;
    let inst = corpus::scaffold_instances(&trees, scheme, max_width);
    corpus::write_jsonl(out, &inst)?;
    Ok(inst.len())
}
