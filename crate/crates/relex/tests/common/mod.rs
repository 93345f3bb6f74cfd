#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use relex_core::corpus::{tokenize_ws, RelationSet, Span};
use relex_core::mhred::{ExternalMention, QaDocument, QaRecord};
use serde::Serialize;

pub const LOCATED_IN: &str = "located_in_the_administrative_territorial_entity";

/// Tokenized document; a "." token closes a sentence. Mentions are found by
/// greedy longest match over `names` at each position.
pub fn document(text: &str, names: &[&str]) -> QaDocument {
    let tokens = tokenize_ws(text);
    let mut sent_ids = Vec::with_capacity(tokens.len());
    let mut s = 0;
    for t in &tokens {
        sent_ids.push(s);
        if t == "." {
            s += 1;
        }
    }
    let mut by_len: Vec<Vec<&str>> = names.iter().map(|n| n.split(' ').collect()).collect();
    by_len.sort_by_key(|n| std::cmp::Reverse(n.len()));
    let mut mentions = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        match by_len.iter().find(|n| tokens[i..].starts_with(&n.iter().map(|w| w.to_string()).collect::<Vec<_>>())) {
            Some(n) => {
                mentions.push(ExternalMention {
                    text: n.join(" "),
                    span: Span(i, i + n.len() - 1),
                });
                i += n.len();
            }
            None => i += 1,
        }
    }
    QaDocument {
        tokens,
        sent_ids,
        mentions,
    }
}

/// The three-document question about the lake and its administrative region.
pub fn zoo_lake_record() -> QaRecord {
    let doc1 = document(
        "Zoo Lake is a popular lake and public park in Johannesburg , South Africa . It is part of the \
         Hermann Eckstein Park and is opposite the Johannesburg Zoo . The Zoo Lake consists of two dams , \
         an upper feeder dam , and a larger lower dam , both constructed in natural marshland watered by \
         the Parktown Spruit .",
        &[
            "Zoo Lake",
            "Johannesburg",
            "South Africa",
            "Hermann Eckstein Park",
            "Johannesburg Zoo",
            "Parktown Spruit",
        ],
    );
    let doc2 = document(
        "Johannesburg is the largest city in South Africa and is one of the 50 largest urban areas in the \
         world . It is the provincial capital of Gauteng , which is the wealthiest province in South Africa .",
        &["Johannesburg", "South Africa", "Gauteng"],
    );
    let doc3 = document(
        "Mozambique is a country in Southeast Africa bordered by the Indian Ocean to the east , Tanzania to \
         the north , Malawi and Zambia to the northwest , Zimbabwe to the west , and Swaziland and South \
         Africa to the southwest . It is separated from Madagascar by the Mozambique Channel to the east .",
        &[
            "Mozambique",
            "Southeast Africa",
            "Indian Ocean",
            "Tanzania",
            "Malawi",
            "Zambia",
            "Zimbabwe",
            "Swaziland",
            "South Africa",
            "Madagascar",
            "Mozambique Channel",
        ],
    );
    QaRecord {
        relation: LOCATED_IN.into(),
        subject: "Zoo Lake".into(),
        candidates: vec!["Gauteng".into(), "Tanzania".into()],
        answer: "Gauteng".into(),
        documents: vec![doc1, doc2, doc3],
    }
}

pub fn zoo_lake_kb() -> &'static str {
    "Zoo Lake\tGauteng\tlocated_in_the_administrative_territorial_entity\nJohannesburg\tSouth Africa\tcountry\n"
}

pub fn jsonl<T: Serialize>(items: &[T]) -> String {
    items
        .iter()
        .map(|i| serde_json::to_string(i).unwrap() + "\n")
        .collect()
}

pub fn relations_file(dir: &Path, relations: &RelationSet) -> PathBuf {
    let p = dir.join("relations.txt");
    std::fs::write(&p, relations.names().join("\n") + "\n").unwrap();
    p
}

/// Runs the binary inside `dir`.
pub fn relex(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_relex"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn read(p: impl AsRef<Path>) -> String {
    std::fs::read_to_string(p.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", p.as_ref().display()))
}
