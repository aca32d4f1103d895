//! Joint training over alternating primary and scaffold batches, and
//! corpus-level evaluation.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::{build_schedule, primary_schedule, CorefDocument, SrlArgument, SrlInstance, TaskTag};
use crate::error::Error;
use crate::metrics::{srl_counts, CorefReport, CorefScorer, Prf};
use crate::model::Model;
use crate::scaffold::ScaffoldInstance;
use crate::spanrep::Span;
use crate::tensor::{adam_step, clip_global_norm, AdamConfig, AdamState, Gradients, Mode, NodeId, ParamStore, Tape};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Weight of the scaffold loss.
    pub delta: f64,
    pub adam: AdamConfig,
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 20, batch_size: 32, delta: 1.0, adam: AdamConfig::default(), clip_norm: 1.0, seed: 1 }
    }
}

/// The primary task's training data.
#[derive(Debug, Clone, Copy)]
pub enum Primary<'a> {
    Srl(&'a [SrlInstance]),
    Coref(&'a [CorefDocument]),
}

impl Primary<'_> {
    pub fn len(&self) -> usize {
        match self {
            Primary::Srl(x) => x.len(),
            Primary::Coref(x) => x.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Mean per-instance losses of one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub primary_loss: f64,
    pub scaffold_loss: f64,
    pub primary_instances: usize,
    pub scaffold_instances: usize,
    /// Primary instances whose gold structure cannot be represented.
    pub skipped: usize,
}

/// Mixes seed components into one stream id.
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x9e37_79b9_7f4a_7c15;
    for &p in parts {
        let mut z = h ^ p.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        h = z ^ (z >> 31);
    }
    h
}

pub struct Trainer {
    pub model: Model,
    pub params: ParamStore,
    pub adam: AdamState,
    pub config: TrainConfig,
}

impl Trainer {
    pub fn new(model: Model, params: ParamStore, config: TrainConfig) -> Self {
        Trainer { model, params, adam: AdamState::new(config.adam), config }
    }

    /// Whether scaffold batches are scheduled at all.
    pub fn scaffold_active(&self) -> bool {
        self.config.delta > 0.0 && self.model.scaffold.is_some()
    }

    /// One pass over the primary data, alternating with an equal number of
    /// resampled scaffold instances when the scaffold is active.
    pub fn train_epoch(&mut self, epoch: usize, primary: Primary<'_>, scaffold: &[ScaffoldInstance]) -> Result<EpochStats, Error> {
        if primary.is_empty() {
            return Err(Error::EmptyStream("primary"));
        }
        let seed = mix_seed(&[self.config.seed, epoch as u64]);
        let schedule = if self.scaffold_active() {
            build_schedule(primary.len(), scaffold.len(), self.config.batch_size, seed)?
        } else {
            primary_schedule(primary.len(), self.config.batch_size, seed)
        };
        let mut stats = EpochStats { epoch, primary_loss: 0.0, scaffold_loss: 0.0, primary_instances: 0, scaffold_instances: 0, skipped: 0 };
        for (b, batch) in schedule.batches.iter().enumerate() {
            let numerical = |detail: alloc::string::String| Error::Numerical { epoch, batch: b, detail };
            let mut grads = Gradients::zeroed(self.params.len());
            let mut used = 0;
            for (k, &idx) in batch.indices.iter().enumerate() {
                let mut tape = Tape::new(&self.params, Mode::Train, mix_seed(&[seed, b as u64, k as u64]));
                let (loss, weight) = match (batch.task, primary) {
                    (TaskTag::Primary, Primary::Srl(data)) => match self.model.srl_loss(&mut tape, &data[idx])? {
                        Some(l) => (l, 1.0),
                        None => {
                            stats.skipped += 1;
                            continue;
                        }
                    },
                    (TaskTag::Primary, Primary::Coref(data)) => (self.model.coref_loss(&mut tape, &data[idx])?, 1.0),
                    (TaskTag::Scaffold, _) => (self.model.scaffold_loss(&mut tape, &scaffold[idx])?, self.config.delta),
                };
                let value = tape.value(loss).item();
                if !value.is_finite() {
                    return Err(numerical(format!("loss is {value}")));
                }
                let g = tape.backward(loss).map_err(|e| numerical(format!("{e}")))?;
                grads.accumulate(&g, weight);
                used += 1;
                match batch.task {
                    TaskTag::Primary => {
                        stats.primary_loss += value;
                        stats.primary_instances += 1;
                    }
                    TaskTag::Scaffold => {
                        stats.scaffold_loss += value;
                        stats.scaffold_instances += 1;
                    }
                }
            }
            if used == 0 {
                continue;
            }
            let norm = clip_global_norm(&mut grads, self.config.clip_norm);
            if !norm.is_finite() {
                return Err(numerical(format!("gradient norm is {norm}")));
            }
            adam_step(&mut self.params, &grads, &mut self.adam)?;
        }
        if stats.primary_instances > 0 {
            stats.primary_loss /= stats.primary_instances as f64;
        }
        if stats.scaffold_instances > 0 {
            stats.scaffold_loss /= stats.scaffold_instances as f64;
        }
        Ok(stats)
    }
}

/// Loss of one primary instance without updating anything (dropout off).
pub fn primary_loss(model: &Model, params: &ParamStore, primary: Primary<'_>, idx: usize) -> Result<Option<f64>, Error> {
    let mut tape = Tape::eval(params);
    let node: Option<NodeId> = match primary {
        Primary::Srl(d) => model.srl_loss(&mut tape, &d[idx])?,
        Primary::Coref(d) => Some(model.coref_loss(&mut tape, &d[idx])?),
    };
    Ok(node.map(|n| tape.value(n).item()))
}

/// Micro-averaged argument scores and the predicted arguments.
pub fn evaluate_srl(model: &Model, params: &ParamStore, instances: &[SrlInstance]) -> Result<(Prf, Vec<Vec<SrlArgument>>), Error> {
    let predicted = instances.iter().map(|i| model.predict_srl(params, i)).collect::<Result<Vec<_>, Error>>()?;
    let gold: Vec<Vec<SrlArgument>> = instances.iter().map(|i| i.arguments.clone()).collect();
    Ok((srl_counts(&gold, &predicted).prf(), predicted))
}

/// Coreference scores and the predicted clusters of every document.
pub fn evaluate_coref(model: &Model, params: &ParamStore, docs: &[CorefDocument]) -> Result<(CorefReport, Vec<Vec<Vec<Span>>>), Error> {
    let mut scorer = CorefScorer::default();
    let mut out = Vec::with_capacity(docs.len());
    for d in docs {
        let pred = model.predict_coref(params, d)?;
        scorer.add_document(&d.clusters, &pred);
        out.push(pred);
    }
    Ok((scorer.report(), out))
}
