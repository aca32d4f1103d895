use std::fs;
use std::path::{Path, PathBuf};

use scaffold::checkpoint::{self, Metadata};
use scaffold::cli;
use scaffold::corpus;
use scaffold::fixture;
use scaffold::pipeline::{self, Corpus, TrainData};
use scaffold::report::MetricLine;
use scaffold::AppError;
use scaffold_core::data::EmbeddingTable;
use scaffold_core::model::TaskKind;
use scaffold_core::spanrep::enumerate_spans;
use tempfile::TempDir;

struct Output {
    code: i32,
    stdout: String,
    stderr: String,
}

fn run(args: &[&str]) -> Output {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = cli::run(std::iter::once("scaffold").chain(args.iter().copied()), &mut out, &mut err);
    Output { code, stdout: String::from_utf8(out).unwrap(), stderr: String::from_utf8(err).unwrap() }
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SRL_CONFIG: &str = "\
# small frame-SRL model
task = frame_srl
scaffold_scheme = common
max_width = 4
word_dim = 8
target_dim = 4
hidden_dim = 8
layers = 2
freeze_embeddings = false
span_ffn_dim = 16
span_ffn_depth = 1
width_dim = 4
distance_dim = 4
position_dim = 4
learning_rate = 0.01
epochs = 3
train = train.jsonl
dev = train.jsonl
treebank = trees.txt
";

/// A directory with a small SRL corpus, a treebank and a config.
fn srl_workspace() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    corpus::write_jsonl(&dir.path().join("train.jsonl"), &fixture::srl_sentences(12, 3)).unwrap();
    let trees: String = fixture::trees(12, 4).iter().map(|t| format!("{t}\n")).collect();
    fs::write(dir.path().join("trees.txt"), trees).unwrap();
    fs::write(dir.path().join("run.cfg"), SRL_CONFIG).unwrap();
    dir
}

fn train(dir: &Path, extra: &[&str]) -> PathBuf {
    let ckpt = dir.join("model.ckpt");
    let cfg = dir.join("run.cfg");
    let log = dir.join("log.csv");
    let mut args = vec!["train", "--config", p(&cfg), "--checkpoint", p(&ckpt), "--out", p(&log)];
    args.extend_from_slice(extra);
    let out = run(&args);
    assert_eq!(out.code, 0, "{}", out.stderr);
    ckpt
}

fn parse_report(text: &str) -> Vec<MetricLine> {
    text.lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

#[test]
fn train_writes_log_and_checkpoint() {
    let dir = srl_workspace();
    let ckpt = train(dir.path(), &[]);
    let log = fs::read_to_string(dir.path().join("log.csv")).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines[0], "epoch,primary_loss,scaffold_loss,dev_metric");
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("1,"));
    let (meta, _, _) = checkpoint::load(&ckpt).unwrap();
    assert!(meta.spec.scaffold.is_some());
    assert!((1..=3).contains(&meta.epoch));
}

#[test]
fn evaluate_is_repeatable_and_matches_predictions() {
    let dir = srl_workspace();
    let ckpt = train(dir.path(), &[]);
    let gold = dir.path().join("train.jsonl");
    let first = run(&["evaluate", "--checkpoint", p(&ckpt), "--corpus", p(&gold)]);
    assert_eq!(first.code, 0, "{}", first.stderr);
    let lines = parse_report(&first.stdout);
    assert_eq!(lines.len(), 1);
    assert_eq!(lines[0].metric, "srl");
    assert!(lines[0].precision.is_some() && lines[0].recall.is_some());
    let second = run(&["evaluate", "--checkpoint", p(&ckpt), "--corpus", p(&gold)]);
    assert_eq!(first.stdout, second.stdout);

    let pred = dir.path().join("pred.jsonl");
    let out = run(&["predict", "--checkpoint", p(&ckpt), "--corpus", p(&gold), "--out", p(&pred)]);
    assert_eq!(out.code, 0, "{}", out.stderr);
    let predicted = corpus::read_srl(&pred).unwrap();
    assert_eq!(predicted.len(), 12);
    for s in &predicted {
        for t in &s.targets {
            let mut spans: Vec<_> = t.arguments.iter().map(|a| a.span).collect();
            spans.sort();
            assert!(spans.windows(2).all(|w| w[0].end < w[1].start), "overlapping predictions");
        }
    }
    let report = dir.path().join("report.jsonl");
    let rescored =
        run(&["evaluate", "--predictions", p(&pred), "--corpus", p(&gold), "--task", "frame_srl", "--out", p(&report)]);
    assert_eq!(rescored.code, 0, "{}", rescored.stderr);
    assert_eq!(rescored.stdout, first.stdout);
    assert_eq!(fs::read_to_string(report).unwrap(), first.stdout);
}

#[test]
fn checkpoint_round_trip_preserves_scores() {
    let mut config = fixture::small_config(TaskKind::FrameSrl);
    config.train.epochs = 2;
    let train = Corpus::Srl(fixture::srl_sentences(10, 5));
    let data = TrainData { train: train.clone(), dev: None, trees: fixture::trees(10, 6), embeddings: EmbeddingTable::new(16) };
    let out = pipeline::train_with(&config, &data).unwrap();
    let before = pipeline::evaluate_model(&out.model, &out.params, &train).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    checkpoint::save(&path, &out.metadata, &out.params).unwrap();
    let (meta, model, params) = checkpoint::load(&path).unwrap();
    assert_eq!(meta, out.metadata);
    for ((_, a), (_, b)) in out.params.iter().zip(params.iter()) {
        assert_eq!(a.name, b.name);
        let bits = |t: &scaffold_core::tensor::Tensor| t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.value), bits(&b.value));
    }
    assert_eq!(pipeline::evaluate_model(&model, &params, &train).unwrap(), before);
}

#[test]
fn version_mismatch_is_a_data_error() {
    let dir = srl_workspace();
    let ckpt = train(dir.path(), &["--set", "epochs=1"]);
    let mut bytes = fs::read(&ckpt).unwrap();
    bytes[8..12].copy_from_slice(&99u32.to_le_bytes());
    fs::write(&ckpt, bytes).unwrap();
    assert!(matches!(checkpoint::load(&ckpt), Err(AppError::Data(m)) if m.contains("version 99")));
    let out = run(&["evaluate", "--checkpoint", p(&ckpt), "--corpus", p(&dir.path().join("train.jsonl"))]);
    assert_eq!(out.code, 2);
    assert!(out.stderr.contains("version"));
}

#[test]
fn zero_delta_checkpoint_has_no_scaffold_weights() {
    let dir = srl_workspace();
    let ckpt = train(dir.path(), &["--delta", "0", "--set", "epochs=1"]);
    let (meta, tensors): (Metadata, _) = checkpoint::read_from(fs::File::open(&ckpt).unwrap()).unwrap();
    assert!(meta.spec.scaffold.is_none());
    assert!(tensors.iter().all(|(name, _)| !name.starts_with("scaffold")));
    assert!(tensors.iter().any(|(name, _)| name.starts_with("encoder")));

    let with = train(dir.path(), &["--set", "epochs=1"]);
    let (_, tensors) = checkpoint::read_from(fs::File::open(&with).unwrap()).unwrap();
    assert!(tensors.iter().any(|(name, _)| name.starts_with("scaffold")));
}

#[test]
fn empty_corpus_gives_empty_predictions() {
    let dir = srl_workspace();
    let ckpt = train(dir.path(), &["--set", "epochs=1"]);
    let empty = dir.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    let pred = dir.path().join("pred.jsonl");
    let out = run(&["predict", "--checkpoint", p(&ckpt), "--corpus", p(&empty), "--out", p(&pred)]);
    assert_eq!(out.code, 0, "{}", out.stderr);
    assert_eq!(fs::read_to_string(pred).unwrap(), "");
}

#[test]
fn extract_scaffold_emits_one_row_per_span() {
    let dir = tempfile::tempdir().unwrap();
    let bank = dir.path().join("bank.txt");
    fs::write(
        &bank,
        "(S (NP (DT the) (NN cat)) (VP (VBD sat)))\n\n( (S (NP-SBJ (NNS officials)) (VP (VBD helped) (NP (-NONE- *)) (PP (IN by) (NP (PRP them))))))\n",
    )
    .unwrap();
    let out_path = dir.path().join("scaffold.jsonl");
    let out = run(&["extract-scaffold", "--treebank", p(&bank), "--scaffold-scheme", "identity", "--max-width", "3", "--out", p(&out_path)]);
    assert_eq!(out.code, 0, "{}", out.stderr);
    let rows = corpus::read_scaffold(&out_path).unwrap();
    assert_eq!(rows.len(), 2);
    for r in &rows {
        assert_eq!(r.spans, enumerate_spans(r.tokens.len(), 3));
        assert_eq!(r.labels.len(), r.spans.len());
        assert!(r.labels.iter().all(|l| l == "0" || l == "1"));
    }
    assert_eq!(rows[1].tokens, ["officials", "helped", "by", "them"]);
    assert_eq!(rows[1].target, scaffold_core::Span::new(2, 2));

    let out = run(&["extract-scaffold", "--treebank", p(&bank), "--scaffold-scheme", "common", "--max-width", "3", "--out", p(&out_path)]);
    assert_eq!(out.code, 0);
    let rows = corpus::read_scaffold(&out_path).unwrap();
    assert_eq!(rows[0].labels, ["null", "NP/PP", "OTHER", "null", "null", "OTHER"]);
}

#[test]
fn malformed_inputs_report_their_line() {
    let dir = tempfile::tempdir().unwrap();
    let bank = dir.path().join("bank.txt");
    fs::write(&bank, "(S (NN a))\n(S (NN b)))\n").unwrap();
    let out = run(&["extract-scaffold", "--treebank", p(&bank), "--scaffold-scheme", "nonterminal", "--out", p(&dir.path().join("o"))]);
    assert_eq!(out.code, 2);
    assert!(out.stderr.contains("bank.txt:2"), "{}", out.stderr);

    let srl = dir.path().join("bad.jsonl");
    fs::write(&srl, "{\"tokens\": [\"a\"], \"targets\": []}\n{\"tokens\": [\"a\"], \"targets\": [{\"span\": [1, 3], \"frame\": \"F\", \"arguments\": []}]}\n").unwrap();
    let err = corpus::read_srl(&srl).unwrap_err();
    assert!(matches!(&err, AppError::Data(m) if m.contains("bad.jsonl:2")), "{err}");

    let json = dir.path().join("broken.jsonl");
    fs::write(&json, "{\"tokens\": [\"a\"], \"targets\": []}\n\n{not json\n").unwrap();
    assert!(matches!(corpus::read_srl(&json), Err(AppError::Data(m)) if m.contains("broken.jsonl:3")));
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(run(&["frobnicate"]).code, 1);
    assert_eq!(run(&["predict", "--checkpoint", "x"]).code, 1);
    assert_eq!(run(&["train", "--delta", "lots"]).code, 1);
    assert_eq!(run(&["train", "--set", "epochs=3"]).code, 1, "no training corpus");
    assert_eq!(run(&["train", "--set", "bogus=3"]).code, 1);
    assert_eq!(run(&["train", "--task", "parsing"]).code, 1);
    assert_eq!(run(&["extract-scaffold", "--treebank", "t", "--scaffold-scheme", "shallow", "--out", "o"]).code, 1);
    let help = run(&["--help"]);
    assert_eq!(help.code, 0);
    assert!(help.stdout.contains("extract-scaffold"));
}

#[test]
fn missing_files_are_data_errors() {
    let out = run(&["evaluate", "--checkpoint", "/nonexistent/model.ckpt", "--corpus", "/nonexistent/c.jsonl"]);
    assert_eq!(out.code, 2);
}

#[test]
fn diverging_training_is_a_numerical_failure() {
    let dir = srl_workspace();
    let out = run(&["train", "--config", p(&dir.path().join("run.cfg")), "--set", "learning_rate=1e300"]);
    assert_eq!(out.code, 3, "{}", out.stderr);
    assert!(out.stderr.contains("epoch"), "{}", out.stderr);
}

#[test]
fn coreference_train_and_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let docs = fixture::coref_documents(6, 2);
    let path = dir.path().join("docs.jsonl");
    corpus::write_jsonl(&path, &docs).unwrap();
    let trees: String = fixture::trees(6, 4).iter().map(|t| format!("{t}\n")).collect();
    fs::write(dir.path().join("trees.txt"), trees).unwrap();
    let cfg = dir.path().join("coref.cfg");
    fs::write(
        &cfg,
        "task = coref\nscaffold_scheme = common\nmax_width = 3\nword_dim = 8\nhidden_dim = 8\nlayers = 1\nfreeze_embeddings = false\n\
         span_ffn_dim = 8\nspan_ffn_depth = 1\nwidth_dim = 4\ncoref_ffn_dim = 8\ncoref_ffn_depth = 1\nepochs = 2\n\
         train = docs.jsonl\ntreebank = trees.txt\n",
    )
    .unwrap();
    let ckpt = dir.path().join("coref.ckpt");
    let out = run(&["train", "--config", p(&cfg), "--checkpoint", p(&ckpt), "--seed", "4"]);
    assert_eq!(out.code, 0, "{}", out.stderr);
    let (meta, _, _) = checkpoint::load(&ckpt).unwrap();
    assert_eq!(meta.train.delta, 0.1);
    assert_eq!(meta.train.seed, 4);
    let eval = run(&["evaluate", "--checkpoint", p(&ckpt), "--corpus", p(&path)]);
    assert_eq!(eval.code, 0, "{}", eval.stderr);
    let metrics: Vec<String> = parse_report(&eval.stdout).into_iter().map(|m| m.metric).collect();
    assert_eq!(metrics, ["muc", "b_cubed", "ceaf_phi4", "conll_average"]);
    let pred = dir.path().join("pred.jsonl");
    assert_eq!(run(&["predict", "--checkpoint", p(&ckpt), "--corpus", p(&path), "--out", p(&pred)]).code, 0);
    let predicted = corpus::read_coref(&pred).unwrap();
    assert_eq!(predicted.len(), docs.len());
    assert!(predicted.iter().zip(&docs).all(|(a, b)| a.sentences == b.sentences));
    let rescored = run(&["evaluate", "--predictions", p(&pred), "--corpus", p(&path), "--task", "coref"]);
    assert_eq!(rescored.stdout, eval.stdout);
}
