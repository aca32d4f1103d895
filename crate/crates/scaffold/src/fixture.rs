//! Small synthetic corpora for smoke tests and demonstrations.
//!
//! Sentences follow `NP V NP [PP]` with the verb as target; the subject is
//! `Agent`, the object `Theme` and the prepositional phrase `Place`. Trees
//! come from the same grammar with different draws.

use rand::seq::SliceRandom;
use rand::Rng as _;
use scaffold_core::data::{CorefDocument, SrlArgument, SrlSentence, SrlTarget};
use scaffold_core::model::TaskKind;
use scaffold_core::scaffold::{leaf, node, Tree};
use scaffold_core::{rng_from_seed, Rng, Span};

use crate::config::RunConfig;

const DETS: [&str; 2] = ["the", "a"];
const ADJS: [&str; 4] = ["old", "young", "small", "big"];
const AGENTS: [&str; 8] = ["chef", "farmer", "teacher", "doctor", "pilot", "artist", "baker", "driver"];
const THEMES: [&str; 8] = ["meal", "book", "car", "letter", "song", "picture", "cake", "box"];
const PLACES: [&str; 6] = ["kitchen", "garden", "school", "city", "park", "office"];
const PREPS: [&str; 3] = ["in", "at", "near"];
const VERBS: [(&str, &str); 6] =
    [("cooked", "Cooking"), ("read", "Reading"), ("moved", "Motion"), ("wrote", "Writing"), ("painted", "Painting"), ("carried", "Bringing")];

struct Clause {
    tokens: Vec<String>,
    tree: Tree,
    verb: usize,
    frame: &'static str,
    args: Vec<(Span, &'static str)>,
}

fn noun_phrase(rng: &mut Rng, nouns: &[&str]) -> (Vec<(&'static str, String)>, Tree) {
    let mut words = vec![("DT", DETS.choose(rng).unwrap().to_string())];
    if rng.gen_bool(0.3) {
        words.push(("JJ", ADJS.choose(rng).unwrap().to_string()));
    }
    words.push(("NN", nouns.choose(rng).unwrap().to_string()));
    let tree = node("NP", words.iter().map(|(t, w)| leaf(t, w)).collect::<Vec<_>>());
    (words, tree)
}

fn clause(rng: &mut Rng) -> Clause {
    let (subj, subj_tree) = noun_phrase(rng, &AGENTS);
    let (verb, frame) = *VERBS.choose(rng).unwrap();
    let (obj, obj_tree) = noun_phrase(rng, &THEMES);
    let mut tokens: Vec<String> = subj.iter().map(|(_, w)| w.clone()).collect();
    let mut args = vec![(Span::new(1, tokens.len()), "Agent")];
    tokens.push(verb.into());
    let v = tokens.len();
    let mut vp = vec![leaf("VBD", verb), obj_tree];
    args.push((Span::new(v + 1, v + obj.len()), "Theme"));
    tokens.extend(obj.into_iter().map(|(_, w)| w));
    if rng.gen_bool(0.5) {
        let prep = *PREPS.choose(rng).unwrap();
        let (place, place_tree) = noun_phrase(rng, &PLACES);
        let start = tokens.len() + 1;
        tokens.push(prep.into());
        tokens.extend(place.into_iter().map(|(_, w)| w));
        args.push((Span::new(start, tokens.len()), "Place"));
        vp.push(node("PP", [leaf("IN", prep), place_tree]));
    }
    let tree = node("S", [subj_tree, node("VP", vp)]);
    Clause { tokens, tree, verb: v, frame, args }
}

/// `n` single-target SRL sentences.
pub fn srl_sentences(n: usize, seed: u64) -> Vec<SrlSentence> {
    let mut rng = rng_from_seed(seed);
    (0..n)
        .map(|_| {
            let c = clause(&mut rng);
            SrlSentence {
                tokens: c.tokens,
                targets: vec![SrlTarget {
                    span: Span::new(c.verb, c.verb),
                    frame: c.frame.into(),
                    arguments: c.args.into_iter().map(|(span, role)| SrlArgument { span, role: role.into() }).collect(),
                }],
            }
        })
        .collect()
}

/// `n` phrase-structure trees.
pub fn trees(n: usize, seed: u64) -> Vec<Tree> {
    let mut rng = rng_from_seed(seed);
    (0..n).map(|_| clause(&mut rng).tree).collect()
}

/// Two-sentence documents: a clause, then a pronoun clause referring back
/// to its subject and object.
pub fn coref_documents(n: usize, seed: u64) -> Vec<CorefDocument> {
    let mut rng = rng_from_seed(seed);
    (0..n)
        .map(|_| {
            let c = clause(&mut rng);
            let subj = c.args[0].0;
            let obj = c.args[1].0;
            let off = c.tokens.len();
            let second: Vec<String> = ["he", "liked", "it"].iter().map(|s| s.to_string()).collect();
            CorefDocument {
                sentences: vec![c.tokens, second],
                clusters: vec![vec![subj, Span::new(off + 1, off + 1)], vec![obj, Span::new(off + 3, off + 3)]],
                genre: None,
                speakers: None,
            }
        })
        .collect()
}

/// A configuration sized for the fixtures: narrow layers, no dropout,
/// spans up to four tokens, and a larger learning rate than the default.
pub fn small_config(task: TaskKind) -> RunConfig {
    let mut c = RunConfig::defaults(task);
    c.scheme = Some(task.common_scheme());
    c.max_width = 4;
    c.encoder.word_dim = 16;
    c.encoder.target_dim = 8;
    c.encoder.hidden_dim = 16;
    c.encoder.layers = 2;
    c.encoder.recurrent_dropout = 0.0;
    c.encoder.freeze_embeddings = false;
    c.span.ffn_dim = 32;
    c.span.ffn_depth = 1;
    c.span.dropout = 0.0;
    c.span.features.width_dim = 8;
    c.span.features.distance_dim = 8;
    c.span.features.position_dim = 8;
    c.coref.ffn_dim = 32;
    c.coref.ffn_depth = 1;
    c.coref.dropout = 0.0;
    c.coref.distance_dim = 8;
    c.train.adam.lr = 0.01;
    c.train.epochs = 200;
    c
}
