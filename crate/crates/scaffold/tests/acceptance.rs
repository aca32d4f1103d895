//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

use std::collections::BTreeSet;
use std::panic::{self, AssertUnwindSafe};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::Rng as _;
use scaffold::config::RunConfig;
use scaffold::fixture;
use scaffold::pipeline::{self, Corpus, TrainData};
use scaffold_core::data::{build_schedule, CorefDocument, EmbeddingTable, SrlArgument, SrlSentence, SrlTarget, TaskTag};
use scaffold_core::math::log_sum_exp;
use scaffold_core::metrics::{ceaf_phi4, conll_average, max_assignment, muc, phi4, Prf};
use scaffold_core::model::TaskKind;
use scaffold_core::scaffold::{extract_span_labels, node, leaf, parse_tree, LabelScheme};
use scaffold_core::semicrf::{cost, log_partition, srl_loss_with_grad, viterbi, ScoreTable, Segment, Segmentation};
use scaffold_core::tensor::gradcheck::check_gradients;
use scaffold_core::train::EpochStats;
use scaffold_core::{rng_from_seed, Rng, Span};

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

// ---------- semi-CRF oracles ----------

/// Every segmentation of `1..=n` into spans of width at most `d` with any of
/// `l` labels.
fn all_segmentations(n: usize, d: usize, l: usize) -> Vec<Vec<Segment>> {
    fn go(start: usize, n: usize, d: usize, l: usize, cur: &mut Vec<Segment>, out: &mut Vec<Vec<Segment>>) {
        if start > n {
            out.push(cur.clone());
            return;
        }
        for end in start..=n.min(start + d - 1) {
            for r in 0..l {
                cur.push(Segment::new(start, end, r));
                go(end + 1, n, d, l, cur, out);
                cur.pop();
            }
        }
    }
    let mut out = Vec::new();
    go(1, n, d, l, &mut Vec::new(), &mut out);
    out
}

struct Instance {
    table: ScoreTable,
    segs: Vec<Vec<Segment>>,
    gold: Vec<Segment>,
}

fn random_instance(rng: &mut Rng, integer_scores: bool) -> Instance {
    let n = rng.gen_range(1..=6);
    let d = rng.gen_range(1..=3);
    let l = rng.gen_range(1..=3);
    let table = ScoreTable::from_fn(n, d, l, |_, _| {
        if integer_scores {
            rng.gen_range(0..2) as f64
        } else {
            rng.gen_range(-3.0..3.0)
        }
    });
    let segs = all_segmentations(n, d, l);
    let gold = segs.choose(rng).unwrap().clone();
    Instance { table, segs, gold }
}

fn score_of(table: &ScoreTable, segs: &[Segment]) -> f64 {
    segs.iter().map(|s| table.get(s.span, s.label).unwrap()).sum()
}

fn brute_log_partition(inst: &Instance, with_cost: bool) -> f64 {
    let gold: BTreeSet<(usize, usize, usize)> = inst.gold.iter().map(|s| (s.span.start, s.span.end, s.label)).collect();
    let terms: Vec<f64> = inst
        .segs
        .iter()
        .map(|segs| {
            let c = if with_cost { segs.iter().filter(|s| !gold.contains(&(s.span.start, s.span.end, s.label))).count() as f64 } else { 0.0 };
            score_of(&inst.table, segs) + c
        })
        .collect();
    log_sum_exp(&terms)
}

fn criterion_1() -> Check {
    let mut rng = rng_from_seed(101);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let inst = random_instance(&mut rng, false);
        let gold = Segmentation::new(inst.gold.clone(), inst.table.n()).map_err(|e| e.to_string())?;
        for with_cost in [false, true] {
            let got = log_partition(&inst.table, with_cost.then_some(&gold));
            let want = brute_log_partition(&inst, with_cost);
            worst = worst.max((got - want).abs() / want.abs().max(1e-300));
        }
    }
    ensure!(worst < 1e-9, "max relative error {worst:e}");
    Ok(format!("200 instances, with and without cost, max rel err {worst:.1e}"))
}

fn criterion_2() -> Check {
    let mut rng = rng_from_seed(202);
    let mut agree = 0;
    for k in 0..200 {
        // Every other instance uses 0/1 scores, which forces ties.
        let inst = random_instance(&mut rng, k % 2 == 1);
        let best = viterbi(&inst.table);
        let again = viterbi(&inst.table.clone());
        ensure!(best == again, "decoding is not deterministic on instance {k}");
        let max = inst.segs.iter().map(|s| score_of(&inst.table, s)).fold(f64::NEG_INFINITY, f64::max);
        if best.score(&inst.table) == Some(max) {
            agree += 1;
        }
    }
    ensure!(agree == 200, "{agree}/200 decoded scores equal the brute-force maximum");
    Ok("200/200 decoded scores equal the brute-force maximum, ties decoded identically on repeat".into())
}

// ---------- gradients ----------

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

fn toy_config(task: TaskKind) -> RunConfig {
    let mut c = RunConfig::defaults(task);
    c.scheme = Some(task.common_scheme());
    c.max_width = 3;
    c.encoder.word_dim = 4;
    c.encoder.target_dim = 2;
    c.encoder.hidden_dim = 4;
    c.encoder.layers = 2;
    c.encoder.freeze_embeddings = false;
    c.span.ffn_dim = 6;
    c.span.ffn_depth = 2;
    c.span.features.width_dim = 2;
    c.span.features.distance_dim = 2;
    c.span.features.position_dim = 2;
    c.coref.ffn_dim = 4;
    c.coref.ffn_depth = 2;
    c.coref.distance_dim = 2;
    c.coref.genre_dim = 2;
    c.coref.speaker_dim = 2;
    c.coref.genres = vec!["nw".into(), "bc".into()];
    c.coref.use_speaker = true;
    c
}

fn toy_trees() -> Vec<scaffold_core::scaffold::Tree> {
    ["(S (NP (NNP Kim)) (VP (VBD ate) (NP (NNS figs))))", "(S (NP (DT the) (NN dog)) (VP (VBD barked)))"]
        .iter()
        .map(|t| parse_tree(t).unwrap())
        .collect()
}

fn criterion_3() -> Check {
    let h = 1e-5;
    let tol = 1e-4;
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    let mut note = |what: &str, r: scaffold_core::tensor::gradcheck::GradCheck| -> Result<(), String> {
        checked += r.checked;
        worst = worst.max(r.max_rel_error());
        ensure!(r.max_rel_error() < tol, "{what}: {:?}", r.worst);
        Ok(())
    };

    let srl = vec![
        SrlSentence {
            tokens: words("the cat ate fish"),
            targets: vec![SrlTarget {
                span: Span::new(3, 3),
                frame: "Ingestion".into(),
                arguments: vec![
                    SrlArgument { span: Span::new(1, 2), role: "Ingestor".into() },
                    SrlArgument { span: Span::new(4, 4), role: "Ingestibles".into() },
                ],
            }],
        },
        SrlSentence {
            tokens: words("Kim slept"),
            targets: vec![SrlTarget {
                span: Span::new(2, 2),
                frame: "Sleep".into(),
                arguments: vec![SrlArgument { span: Span::new(1, 1), role: "Sleeper".into() }],
            }],
        },
    ];
    let data = TrainData { train: Corpus::Srl(srl), dev: None, trees: toy_trees(), embeddings: EmbeddingTable::new(4) };
    let p = pipeline::prepare(&toy_config(TaskKind::FrameSrl), &data).map_err(|e| e.to_string())?;
    for inst in &p.srl {
        let r = check_gradients(&p.params, h, |t| Ok(p.model.srl_loss(t, inst)?.expect("trainable"))).map_err(|e| e.to_string())?;
        note("srl_loss", r)?;
    }
    for inst in &p.scaffold {
        note("scaffold_loss", check_gradients(&p.params, h, |t| p.model.scaffold_loss(t, inst)).map_err(|e| e.to_string())?)?;
    }

    let docs = vec![CorefDocument {
        sentences: vec![words("Kim left"), words("she ran home")],
        clusters: vec![vec![Span::new(1, 1), Span::new(3, 3)]],
        genre: Some("bc".into()),
        speakers: Some(vec![vec!["A".into(); 2], vec!["B".into(); 3]]),
    }];
    let data = TrainData { train: Corpus::Coref(docs.clone()), dev: None, trees: toy_trees(), embeddings: EmbeddingTable::new(4) };
    let p = pipeline::prepare(&toy_config(TaskKind::Coref), &data).map_err(|e| e.to_string())?;
    for d in &docs {
        note("coref_loss", check_gradients(&p.params, h, |t| p.model.coref_loss(t, d)).map_err(|e| e.to_string())?)?;
    }
    for inst in &p.scaffold {
        note("coref scaffold_loss", check_gradients(&p.params, h, |t| p.model.scaffold_loss(t, inst)).map_err(|e| e.to_string())?)?;
    }
    Ok(format!("{checked} parameter values across srl, scaffold and coref losses, max rel err {worst:.1e}"))
}

fn criterion_4() -> Check {
    let mut rng = rng_from_seed(404);
    let mut min_gap = f64::INFINITY;
    for k in 0..100 {
        let inst = random_instance(&mut rng, false);
        let gold = Segmentation::new(inst.gold.clone(), inst.table.n()).map_err(|e| e.to_string())?;
        let margin = srl_loss_with_grad(&inst.table, &gold, true).map_err(|e| e.to_string())?.0;
        let nll = srl_loss_with_grad(&inst.table, &gold, false).map_err(|e| e.to_string())?.0;
        ensure!(margin >= nll, "table {k}: margin loss {margin} < nll {nll}");
        let gold_cost: f64 = gold.segments().iter().map(|s| cost(s, &gold)).sum();
        ensure!(gold_cost == 0.0, "table {k}: gold cost {gold_cost}");
        min_gap = min_gap.min(margin - nll);
    }
    Ok(format!("100 tables, margin loss minus nll >= {min_gap:.3}, gold cost 0"))
}

// ---------- overfit and determinism ----------

struct RunSummary {
    epochs: Vec<EpochStats>,
    dev: Vec<Option<f64>>,
    log_rows: Vec<String>,
    train_f1: f64,
    elapsed: Duration,
}

fn overfit_run() -> Result<RunSummary, String> {
    let mut config = fixture::small_config(TaskKind::FrameSrl);
    config.train.delta = 1.0;
    config.scheme = Some(LabelScheme::common_srl());
    config.train.epochs = 200;
    config.stop_metric = Some(0.99);
    config.min_epochs = 10;
    let train = Corpus::Srl(fixture::srl_sentences(50, 11));
    let data = TrainData { train: train.clone(), dev: Some(train.clone()), trees: fixture::trees(50, 12), embeddings: EmbeddingTable::new(16) };
    let start = Instant::now();
    let out = pipeline::train_with(&config, &data).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let train_f1 = pipeline::score(&out.model, &out.params, &train).map_err(|e| e.to_string())?;
    Ok(RunSummary { epochs: out.epochs, dev: out.dev_metrics, log_rows: out.log_rows, train_f1, elapsed })
}

fn first_run() -> &'static Result<RunSummary, String> {
    static RUN: OnceLock<Result<RunSummary, String>> = OnceLock::new();
    RUN.get_or_init(overfit_run)
}

fn strictly_decreasing(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[1] < w[0])
}

fn criterion_5() -> Check {
    let run = first_run().as_ref().map_err(Clone::clone)?;
    let reached = run.dev.iter().position(|d| d.is_some_and(|d| d >= 0.99)).map(|k| k + 1);
    ensure!(reached.is_some_and(|e| e <= 200), "train F1 never reached 0.99 (last {:?})", run.dev.last());
    ensure!(run.train_f1 >= 0.99, "kept parameters score F1 {}", run.train_f1);
    ensure!(run.elapsed < Duration::from_secs(300), "took {:?}", run.elapsed);
    ensure!(run.epochs.len() >= 10, "only {} epochs ran", run.epochs.len());
    let primary: Vec<f64> = run.epochs[..10].iter().map(|e| e.primary_loss).collect();
    let scaffold: Vec<f64> = run.epochs[..10].iter().map(|e| e.scaffold_loss).collect();
    ensure!(strictly_decreasing(&primary), "primary loss not strictly decreasing: {primary:?}");
    ensure!(strictly_decreasing(&scaffold), "scaffold loss not strictly decreasing: {scaffold:?}");
    Ok(format!(
        "train F1 {:.3} first reached 0.99 at epoch {}, {:.1}s, both losses strictly decreasing over epochs 1-10",
        run.train_f1,
        reached.unwrap(),
        run.elapsed.as_secs_f64()
    ))
}

fn criterion_9() -> Check {
    let a = first_run().as_ref().map_err(Clone::clone)?;
    let b = overfit_run()?;
    ensure!(a.log_rows == b.log_rows, "metric logs differ");
    let bits = |r: &RunSummary| -> Vec<(u64, u64)> { r.epochs.iter().map(|e| (e.primary_loss.to_bits(), e.scaffold_loss.to_bits())).collect() };
    ensure!(bits(a) == bits(&b), "epoch losses differ in their bits");
    ensure!(a.dev.iter().map(|d| d.map(f64::to_bits)).eq(b.dev.iter().map(|d| d.map(f64::to_bits))), "dev metrics differ");
    Ok(format!("two seeded runs, {} log rows identical", a.log_rows.len()))
}

// ---------- scaffold fixtures ----------

fn criterion_6() -> Check {
    let fig = parse_tree("(S (NP (NNS officials)) (VP (VBD helped) (PP (IN by) (S (VP (VBG encouraging) (NP (PRP them)))))))")
        .map_err(|e| e.to_string())?;
    let schemes = [LabelScheme::Identity, LabelScheme::Nonterminal, LabelScheme::NonterminalParent, LabelScheme::common_srl()];
    let expected_fig = ["1", "S|VP", "S|VP+par=PP", "OTHER"];
    for (scheme, want) in schemes.iter().zip(expected_fig) {
        let inst = extract_span_labels(&fig, scheme, 15);
        let k = inst.spans.iter().position(|s| *s == Span::new(4, 5)).ok_or("span (4,5) not enumerated")?;
        ensure!(inst.labels[k] == want, "{scheme}: `encouraging them` labeled {}, want {want}", inst.labels[k]);
    }

    // "(S (NP (DT the) (NN cat)) (VP (VBD sat)))", spans in (start, end) order.
    let toy = node("S", [node("NP", [leaf("DT", "the"), leaf("NN", "cat")]), node("VP", [leaf("VBD", "sat")])]);
    ensure!(parse_tree("(S (NP (DT the) (NN cat)) (VP (VBD sat)))").map_err(|e| e.to_string())? == toy, "toy tree parse");
    let spans = [(1, 1), (1, 2), (1, 3), (2, 2), (2, 3), (3, 3)];
    let expected_toy: [[&str; 6]; 4] = [
        ["0", "1", "1", "0", "0", "1"],
        ["null", "NP", "S", "null", "null", "VP"],
        ["null", "NP+par=S", "S+par=null", "null", "null", "VP+par=S"],
        ["null", "NP/PP", "OTHER", "null", "null", "OTHER"],
    ];
    for (scheme, want) in schemes.iter().zip(expected_toy) {
        let inst = extract_span_labels(&toy, scheme, 3);
        let got_spans: Vec<(usize, usize)> = inst.spans.iter().map(|s| (s.start, s.end)).collect();
        ensure!(got_spans == spans, "{scheme}: spans {got_spans:?}");
        ensure!(inst.labels == want, "{scheme}: toy labels {:?}, want {want:?}", inst.labels);
        ensure!(inst.target == Span::new(3, 3), "placeholder target {:?}", inst.target);
    }
    Ok("running-example span and all six toy-tree rows match under identity, nonterminal, nonterminal+parent and common".into())
}

// ---------- metric fixtures ----------

fn brute_assignment(sim: &[Vec<f64>]) -> f64 {
    fn go(g: usize, sim: &[Vec<f64>], used: &mut Vec<bool>) -> f64 {
        if g == sim.len() {
            return 0.0;
        }
        let mut best = go(g + 1, sim, used);
        for p in 0..used.len() {
            if !used[p] {
                used[p] = true;
                best = best.max(sim[g][p] + go(g + 1, sim, used));
                used[p] = false;
            }
        }
        best
    }
    let cols = sim.first().map_or(0, Vec::len);
    go(0, sim, &mut vec![false; cols])
}

fn random_clusters(rng: &mut Rng, k: usize) -> Vec<Vec<u32>> {
    let mut mentions: Vec<u32> = (0..14).collect();
    mentions.shuffle(rng);
    let mut clusters = vec![Vec::new(); k];
    for (i, m) in mentions.into_iter().enumerate() {
        if i < k {
            clusters[i].push(m);
        } else if rng.gen_bool(0.6) {
            let c = rng.gen_range(0..k);
            clusters[c].push(m);
        }
    }
    clusters
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() < 1e-12
}

fn criterion_7() -> Check {
    let m = muc(&[vec!['a', 'b', 'c']], &[vec!['a', 'b'], vec!['c']]);
    ensure!(close(m.precision, 1.0) && close(m.recall, 0.5) && close(m.f1, 2.0 / 3.0), "MUC example gave {m:?}");
    let c = ceaf_phi4(&[vec!['a', 'b']], &[vec!['b', 'c']]);
    ensure!(close(c.precision, 0.5) && close(c.recall, 0.5) && close(c.f1, 0.5), "CEAF example gave {c:?}");

    let mut rng = rng_from_seed(707);
    let mut cases = 0;
    for g in 1..=6 {
        for p in 1..=6 {
            for _ in 0..10 {
                let gold = random_clusters(&mut rng, g);
                let pred = random_clusters(&mut rng, p);
                let sim: Vec<Vec<f64>> = gold.iter().map(|a| pred.iter().map(|b| phi4(a, b)).collect()).collect();
                let (_, solver) = max_assignment(&sim);
                let brute = brute_assignment(&sim);
                ensure!((solver - brute).abs() < 1e-9, "assignment {solver} vs brute force {brute} for {gold:?} / {pred:?}");
                cases += 1;
            }
        }
    }

    let f = |f1: f64| Prf { precision: 0.0, recall: 0.0, f1: f1 / 100.0 };
    let avg = 100.0 * conll_average(&f(75.8), &f(65.0), &f(60.8));
    let rounded = (avg * 10.0).round() / 10.0;
    ensure!(rounded == 67.2, "average of 75.8, 65.0, 60.8 gave {avg}");
    Ok(format!("MUC and CEAF examples, {cases} assignments equal brute force, CoNLL average {rounded:.1}"))
}

fn criterion_8() -> Check {
    for (primary, scaffold) in [(100, 1000), (1000, 100)] {
        let s = build_schedule(primary, scaffold, 32, 8).map_err(|e| e.to_string())?;
        ensure!(s.count(TaskTag::Primary) == primary && s.count(TaskTag::Scaffold) == primary, "{primary}/{scaffold}: stream sizes differ");
        for (k, b) in s.batches.iter().enumerate() {
            let want = if k % 2 == 0 { TaskTag::Primary } else { TaskTag::Scaffold };
            ensure!(b.task == want, "{primary}/{scaffold}: batch {k} breaks alternation");
        }
        let mut seen: Vec<usize> = s.batches.iter().filter(|b| b.task == TaskTag::Primary).flat_map(|b| b.indices.clone()).collect();
        seen.sort_unstable();
        ensure!(seen == (0..primary).collect::<Vec<_>>(), "primary instances not each used once");
        ensure!(
            s.batches.iter().filter(|b| b.task == TaskTag::Scaffold).flat_map(|b| &b.indices).all(|&i| i < scaffold),
            "scaffold index out of range"
        );
        ensure!(build_schedule(primary, scaffold, 32, 8).map_err(|e| e.to_string())? == s, "same seed gave a different schedule");
    }
    Ok("100/1000 and 1000/100: matched sizes, strict alternation, identical under a fixed seed".into())
}

fn main() {
    let criteria: [(&str, fn() -> Check); 9] = [
        ("semi-CRF partition oracle", criterion_1),
        ("Viterbi oracle", criterion_2),
        ("gradient suite", criterion_3),
        ("margin dominance", criterion_4),
        ("overfit fixture", criterion_5),
        ("scaffold fixtures", criterion_6),
        ("coreference metric fixtures", criterion_7),
        ("scheduler", criterion_8),
        ("determinism", criterion_9),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {}: PASS {name}: {detail} [{secs:.2}s]", k + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {}: FAIL {name}: {detail} [{secs:.2}s]", k + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
