//! On-disk formats: one JSON record per line for datasets and predictions,
//! one name per line for relation sets, whitespace-separated text for
//! embeddings and tab-separated triples for the knowledge base.

use std::fs;
use std::io::Write;
use std::path::Path;

use relex_core::corpus::{
    ChainInstance, JointInstance, RelationInstance, RelationSet, Vocabulary, EmbeddingTable, MAX_SENTENCE_TOKENS,
};
use relex_core::mhred::{KbIndex, QaRecord};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{CliError, CliResult};

pub fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| CliError::io(path, e))
}

/// Records of a JSON-lines file; blank lines are skipped.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> CliResult<Vec<T>> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(line).map_err(|e| CliError::Format {
            path: path.into(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn to_jsonl<T: Serialize>(items: &[T]) -> String {
    let mut s = String::new();
    for it in items {
        s.push_str(&serde_json::to_string(it).expect("records serialize"));
        s.push('\n');
    }
    s
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> CliResult<()> {
    write_text(path, &to_jsonl(items))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut s = serde_json::to_string_pretty(value).expect("reports serialize");
    s.push('\n');
    write_text(path, &s)
}

/// What to do with sentences over the length limit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Overlong {
    Reject,
    Truncate,
}

fn in_record(path: &Path, index: usize, e: relex_core::Error) -> CliError {
    CliError::Core {
        path: path.into(),
        source: e.at_record(index),
    }
}

fn length_check(path: &Path, index: usize, n: usize, policy: Overlong) -> CliResult<bool> {
    if n <= MAX_SENTENCE_TOKENS {
        return Ok(false);
    }
    match policy {
        Overlong::Reject => Err(in_record(
            path,
            index,
            relex_core::Error::validation(
                "tokens",
                format!("{n} tokens exceed the limit of {MAX_SENTENCE_TOKENS}"),
            ),
        )),
        Overlong::Truncate => {
            log::warn!(
                "{}: record {index} truncated from {n} to {MAX_SENTENCE_TOKENS} tokens",
                path.display()
            );
            Ok(true)
        }
    }
}

pub fn read_sentences(path: &Path, relations: &RelationSet, policy: Overlong) -> CliResult<Vec<RelationInstance>> {
    let mut out: Vec<RelationInstance> = read_jsonl(path)?;
    for (i, r) in out.iter_mut().enumerate() {
        if length_check(path, i, r.tokens.len(), policy)? {
            r.truncate(MAX_SENTENCE_TOKENS).map_err(|e| in_record(path, i, e))?;
        }
        r.validate(relations).map_err(|e| in_record(path, i, e))?;
    }
    Ok(out)
}

pub fn read_joint(path: &Path, relations: &RelationSet, policy: Overlong) -> CliResult<Vec<JointInstance>> {
    let mut out: Vec<JointInstance> = read_jsonl(path)?;
    for (i, r) in out.iter_mut().enumerate() {
        if length_check(path, i, r.tokens.len(), policy)? {
            r.truncate(MAX_SENTENCE_TOKENS).map_err(|e| in_record(path, i, e))?;
        }
        r.validate(relations).map_err(|e| in_record(path, i, e))?;
    }
    Ok(out)
}

/// Chains are documents; the sentence length limit does not apply.
pub fn read_chains(path: &Path, relations: &RelationSet) -> CliResult<Vec<ChainInstance>> {
    let out: Vec<ChainInstance> = read_jsonl(path)?;
    for (i, r) in out.iter().enumerate() {
        r.validate(relations).map_err(|e| in_record(path, i, e))?;
    }
    Ok(out)
}

pub fn read_qa_records(path: &Path) -> CliResult<Vec<QaRecord>> {
    let out: Vec<QaRecord> = read_jsonl(path)?;
    for (i, r) in out.iter().enumerate() {
        r.validate().map_err(|e| in_record(path, i, e))?;
    }
    Ok(out)
}

/// One relation name per line; blank lines are ignored.
pub fn read_relations(path: &Path) -> CliResult<RelationSet> {
    let text = read_text(path)?;
    let names: Vec<&str> = text.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    RelationSet::new(names).map_err(|source| CliError::Core {
        path: path.into(),
        source,
    })
}

pub fn relations_text(relations: &RelationSet) -> String {
    let mut s = relations.names().join("\n");
    s.push('\n');
    s
}

/// `subject<TAB>object<TAB>relation` per line.
pub fn read_kb(path: &Path) -> CliResult<KbIndex> {
    let text = read_text(path)?;
    let mut kb = KbIndex::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 3 {
            return Err(CliError::Format {
                path: path.into(),
                line: i + 1,
                message: format!("expected 3 tab-separated fields, found {}", f.len()),
            });
        }
        kb.insert(f[0], f[1], f[2]);
    }
    Ok(kb)
}

/// Pretrained vectors for the vocabulary; rows missing from the file keep a
/// seeded uniform initialization and padding stays zero. A leading
/// `count dim` line is accepted and checked against `dim`.
pub fn load_embeddings(path: &Path, vocab: &Vocabulary, dim: usize, seed: u64) -> CliResult<EmbeddingTable> {
    let text = read_text(path)?;
    let mut table = EmbeddingTable::random(vocab.len(), dim, seed);
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(' ').collect();
        if i == 0 && fields.len() == 2 && fields.iter().all(|f| f.parse::<usize>().is_ok()) {
            let declared: usize = fields[1].parse().unwrap_or_default();
            if declared != dim {
                return Err(CliError::config(format!(
                    "{} holds {declared}-dimensional vectors, configuration asks for {dim}",
                    path.display()
                )));
            }
            continue;
        }
        let format_err = |message: String| CliError::Format {
            path: path.into(),
            line: i + 1,
            message,
        };
        if fields.len() != dim + 1 {
            return Err(format_err(format!(
                "expected a token and {dim} numbers, found {} fields",
                fields.len()
            )));
        }
        let values = fields[1..]
            .iter()
            .map(|f| f.parse::<f64>().map_err(|e| format_err(format!("{f:?}: {e}"))))
            .collect::<CliResult<Vec<f64>>>()?;
        if let Some(idx) = vocab.lookup(fields[0]) {
            table.set_row(idx, &values)?;
        }
    }
    Ok(table)
}
