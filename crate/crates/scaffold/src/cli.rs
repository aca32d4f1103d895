//! Command-line interface.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use scaffold_core::model::TaskKind;
use scaffold_core::scaffold::LabelScheme;

use crate::config::RunConfig;
use crate::error::{AppError, Result};
use crate::pipeline::{self, Corpus};
use crate::report;

#[derive(Debug, Parser)]
#[command(name = "scaffold", version, about = "Span-based SRL and coreference with syntactic scaffolds")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write its best checkpoint.
    Train {
        /// Flat `key = value` configuration file.
        #[arg(long)]
        config: Option<PathBuf>,
        /// frame_srl, propbank_srl or coref.
        #[arg(long)]
        task: Option<String>,
        /// identity, nonterminal, nonterminal_parent, common, or none.
        #[arg(long)]
        scaffold_scheme: Option<String>,
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Where to write the checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Where to write the per-epoch CSV log.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Extra `key=value` settings, applied after the config file.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Score a checkpoint on a gold corpus, or a prediction file against it.
    Evaluate {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Gold corpus.
        #[arg(long)]
        corpus: PathBuf,
        /// Score this prediction file instead of running a model.
        #[arg(long, conflicts_with = "checkpoint")]
        predictions: Option<PathBuf>,
        /// Task of the corpus when scoring a prediction file.
        #[arg(long)]
        task: Option<String>,
        /// Also write the line-JSON report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Annotate a corpus with a trained model.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Label every span of a treebank for the scaffold task.
    ExtractScaffold {
        /// One bracketed tree per line.
        #[arg(long)]
        treebank: PathBuf,
        #[arg(long)]
        scaffold_scheme: String,
        /// Picks the first-class categories of the `common` scheme.
        #[arg(long, default_value = "frame_srl")]
        task: String,
        #[arg(long)]
        max_width: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_task(s: &str) -> Result<TaskKind> {
    s.parse().map_err(|e: scaffold_core::Error| AppError::Usage(e.to_string()))
}

/// Configuration map from the file (if any) and the command-line overrides.
fn train_config(
    config: Option<&Path>,
    overrides: impl IntoIterator<Item = (&'static str, Option<String>)>,
    set: &[String],
) -> Result<RunConfig> {
    let (mut map, base) = match config {
        Some(p) => (RunConfig::read_map(p)?, p.parent().map(Path::to_path_buf).unwrap_or_default()),
        None => (BTreeMap::new(), PathBuf::new()),
    };
    for kv in set {
        let (k, v) = kv.split_once('=').ok_or_else(|| AppError::Usage(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        let parsed = RunConfig::parse_text(&format!("{}={}", k.trim(), v.trim()))?;
        map.extend(parsed);
    }
    for (k, v) in overrides {
        if let Some(v) = v {
            map.insert(k.to_string(), v);
        }
    }
    let mut c = RunConfig::from_map(&map, &base)?;
    // Paths given on the command line are relative to the working directory.
    for kv in set {
        if let Some((k, v)) = kv.split_once('=') {
            let p = Some(PathBuf::from(v.trim()));
            match k.trim() {
                "train" => c.train_path = p,
                "dev" => c.dev_path = p,
                "treebank" => c.treebank_path = p,
                "embeddings" => c.embeddings_path = p,
                "checkpoint" => c.checkpoint = p,
                "log" => c.log = p,
                _ => {}
            }
        }
    }
    Ok(c)
}

fn write_report(lines: &[report::MetricLine], out: Option<&Path>, stdout: &mut dyn Write) -> Result<()> {
    let text = report::render(lines);
    stdout.write_all(text.as_bytes()).map_err(|e| AppError::Data(e.to_string()))?;
    if let Some(p) = out {
        std::fs::write(p, &text).map_err(|e| AppError::io(p, e))?;
    }
    Ok(())
}

pub fn execute(cli: Cli, stdout: &mut dyn Write) -> Result<()> {
    let say = |stdout: &mut dyn Write, msg: String| writeln!(stdout, "{msg}").map_err(|e| AppError::Data(e.to_string()));
    match cli.command {
        Command::Train { config, task, scaffold_scheme, delta, seed, checkpoint, out, set } => {
            let mut c = train_config(
                config.as_deref(),
                [
                    ("task", task),
                    ("scaffold_scheme", scaffold_scheme),
                    ("delta", delta.map(|d| d.to_string())),
                    ("seed", seed.map(|s| s.to_string())),
                ],
                &set,
            )?;
            if checkpoint.is_some() {
                c.checkpoint = checkpoint;
            }
            if out.is_some() {
                c.log = out;
            }
            let outcome = pipeline::train(&c)?;
            let last = outcome.epochs.last().expect("at least one epoch");
            say(
                stdout,
                format!(
                    "trained {} epochs; kept epoch {}{}; last losses primary {:.6} scaffold {:.6}",
                    outcome.epochs.len(),
                    outcome.best_epoch,
                    outcome.metadata.dev_metric.map(|m| format!(" (dev {m:.4})")).unwrap_or_default(),
                    last.primary_loss,
                    last.scaffold_loss,
                ),
            )?;
            if let Some(p) = &c.checkpoint {
                say(stdout, format!("checkpoint written to {}", p.display()))?;
            }
            Ok(())
        }
        Command::Evaluate { checkpoint, corpus, predictions, task, out } => {
            let lines = match (checkpoint, predictions) {
                (Some(ck), None) => pipeline::evaluate(&ck, &corpus)?,
                (None, Some(pred)) => {
                    let task = parse_task(task.as_deref().ok_or_else(|| AppError::Usage("--predictions needs --task".into()))?)?;
                    pipeline::evaluate_predictions(&Corpus::read(task, &corpus)?, &Corpus::read(task, &pred)?)?
                }
                _ => return Err(AppError::Usage("evaluate needs --checkpoint or --predictions".into())),
            };
            write_report(&lines, out.as_deref(), stdout)
        }
        Command::Predict { checkpoint, corpus, out } => {
            let n = pipeline::predict(&checkpoint, &corpus, &out)?;
            say(stdout, format!("wrote {n} annotated records to {}", out.display()))
        }
        Command::ExtractScaffold { treebank, scaffold_scheme, task, max_width, out } => {
            let task = parse_task(&task)?;
            let scheme =
                LabelScheme::parse(&scaffold_scheme, &task.common_scheme()).map_err(|e| AppError::Usage(e.to_string()))?;
            let n = pipeline::extract_scaffold(&treebank, &scheme, max_width.unwrap_or(task.default_max_width()), &out)?;
            say(stdout, format!("wrote {n} sentences to {}", out.display()))
        }
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { stdout.write_all(text.as_bytes()) } else { stderr.write_all(text.as_bytes()) };
            return code;
        }
    };
    match execute(cli, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}
