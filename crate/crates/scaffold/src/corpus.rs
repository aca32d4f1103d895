//! Line-delimited JSON corpora and whitespace-separated embedding files.
//!
//! SRL: one sentence per line,
//! `{"tokens": [...], "targets": [{"span": [i, j], "frame": "...", "arguments": [{"span": [i, j], "role": "..."}]}]}`.
//! Coreference: one document per line,
//! `{"sentences": [[...]], "clusters": [[[i, j], ...]], "genre": "nw", "speakers": [[...]]}`
//! with spans in document token positions; `genre` and `speakers` are optional.
//! Spans are 1-based and inclusive.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use scaffold_core::data::{CorefDocument, EmbeddingTable, SrlInstance, SrlSentence};
use scaffold_core::scaffold::{extract_span_labels, parse_tree, LabelScheme, ScaffoldInstance, Tree};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{AppError, Result};

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| AppError::io(path, e))
}

/// Parses each non-blank line as JSON and checks it with `validate`.
pub fn read_jsonl_from<T: DeserializeOwned>(
    reader: impl BufRead,
    path: &Path,
    mut validate: impl FnMut(&T) -> std::result::Result<(), scaffold_core::Error>,
) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (k, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| AppError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item: T = serde_json::from_str(&line).map_err(|e| AppError::at_line(path, k + 1, e))?;
        validate(&item).map_err(|e| AppError::at_line(path, k + 1, e))?;
        out.push(item);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| AppError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        let line = serde_json::to_string(item).map_err(|e| AppError::Data(e.to_string()))?;
        writeln!(w, "{line}").map_err(|e| AppError::io(path, e))?;
    }
    w.flush().map_err(|e| AppError::io(path, e))
}

pub fn read_srl(path: &Path) -> Result<Vec<SrlSentence>> {
    read_jsonl_from(open(path)?, path, |s: &SrlSentence| s.instances().map(|_| ()))
}

/// All (sentence, target) instances of a corpus, in file order.
pub fn srl_instances(sentences: &[SrlSentence]) -> Result<Vec<SrlInstance>> {
    let mut out = Vec::new();
    for s in sentences {
        out.extend(s.instances()?);
    }
    Ok(out)
}

pub fn read_coref(path: &Path) -> Result<Vec<CorefDocument>> {
    read_jsonl_from(open(path)?, path, CorefDocument::validate)
}

pub fn read_scaffold(path: &Path) -> Result<Vec<ScaffoldInstance>> {
    read_jsonl_from(open(path)?, path, |i: &ScaffoldInstance| {
        if i.spans.len() != i.labels.len() {
            return Err(scaffold_core::Error::Config("spans and labels differ in length".into()));
        }
        i.spans.iter().chain([&i.target]).try_for_each(|s| s.check_bounds(i.tokens.len()))
    })
}

/// One bracketed tree per non-blank line.
pub fn read_treebank_from(reader: impl BufRead, path: &Path) -> Result<Vec<Tree>> {
    let mut out = Vec::new();
    for (k, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| AppError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_tree(&line).map_err(|e| AppError::at_line(path, k + 1, e))?);
    }
    Ok(out)
}

pub fn read_treebank(path: &Path) -> Result<Vec<Tree>> {
    read_treebank_from(open(path)?, path)
}

pub fn scaffold_instances(trees: &[Tree], scheme: &LabelScheme, max_width: usize) -> Vec<ScaffoldInstance> {
    trees.iter().map(|t| extract_span_labels(t, scheme, max_width)).collect()
}

/// Reads `token v_1 … v_d` lines. A leading `count dim` header line is
/// skipped. Every vector must have the same length, equal to `dim` if given.
pub fn read_embeddings_from(reader: impl BufRead, path: &Path, dim: Option<usize>) -> Result<EmbeddingTable> {
    let mut table: Option<EmbeddingTable> = dim.map(EmbeddingTable::new);
    for (k, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| AppError::io(path, e))?;
        let mut fields = line.split_whitespace();
        let Some(token) = fields.next() else { continue };
        let values: Vec<&str> = fields.collect();
        if k == 0 && values.len() == 1 && token.parse::<usize>().is_ok() && values[0].parse::<usize>().is_ok() {
            continue;
        }
        let vector = values
            .iter()
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| AppError::at_line(path, k + 1, e))?;
        let t = table.get_or_insert_with(|| EmbeddingTable::new(vector.len()));
        if vector.len() != t.dim() {
            return Err(AppError::at_line(path, k + 1, format!("vector has {} values, expected {}", vector.len(), t.dim())));
        }
        t.insert(token.to_string(), vector)?;
    }
    Ok(table.unwrap_or_default())
}

pub fn read_embeddings(path: &Path, dim: Option<usize>) -> Result<EmbeddingTable> {
    read_embeddings_from(open(path)?, path, dim)
}
