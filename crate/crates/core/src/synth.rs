//! Small seeded datasets whose labels follow from trigger words, for smoke
//! runs and demos. Every generator draws all randomness from `seed`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{
    tokenize_ws, ChainInstance, CommonEntity, JointInstance, JointTuple, RelationInstance, RelationSet, Span,
    NONE_LABEL,
};
use crate::error::Result;

const NAMES: [&str; 12] = [
    "Avalon", "Brill", "Corwin", "Dunmore", "Elgar", "Fenwick", "Garrow", "Hollis", "Ivers", "Jarrow", "Kestrel",
    "Lindqvist",
];
const PLACES: [&str; 10] = [
    "Ostrava", "Pelham", "Quarry", "Rovigo", "Sarnia", "Tolland", "Umberto", "Varna", "Wexford", "Yarrow",
];

fn pick<'a>(rng: &mut ChaCha8Rng, pool: &[&'a str]) -> &'a str {
    pool[rng.random_range(0..pool.len())]
}

/// Two distinct draws.
fn pick_two<'a>(rng: &mut ChaCha8Rng, pool: &[&'a str]) -> (&'a str, &'a str) {
    let a = rng.random_range(0..pool.len());
    let mut b = rng.random_range(0..pool.len() - 1);
    if b >= a {
        b += 1;
    }
    (pool[a], pool[b])
}

/// Sentence-level relation data: `born_in`, `works_for` and `None`, cycling
/// through the three labels.
pub fn relation_instances(n: usize, seed: u64) -> Result<(RelationSet, Vec<RelationInstance>)> {
    let relations = RelationSet::new(["born_in", "works_for"])?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let person = pick(&mut rng, &NAMES);
        let (relation, middle, other) = match k % 3 {
            0 => ("born_in", "was born in", pick(&mut rng, &PLACES)),
            1 => ("works_for", "works for", pick(&mut rng, &NAMES[6..])),
            _ => (NONE_LABEL, "wrote about", pick(&mut rng, &PLACES)),
        };
        let lead = if rng.random_bool(0.5) { "Yesterday" } else { "Reportedly" };
        let tokens = tokenize_ws(&format!("{lead} {person} {middle} {other} ."));
        let e2 = tokens.len() - 2;
        // verb-headed tree: the token after the subject heads the clause
        let head = 2;
        let dep_edges = (0..tokens.len()).filter(|&i| i != head).map(|i| (head, i)).collect();
        let inst = RelationInstance {
            tokens,
            e1_span: Span(1, 1),
            e2_span: Span(e2, e2),
            relation: relation.into(),
            dep_edges,
        };
        inst.validate(&relations)?;
        out.push(inst);
    }
    Ok((relations, out))
}

/// Sentence-level tuple data with one or two tuples per sentence.
pub fn joint_instances(n: usize, seed: u64) -> Result<(RelationSet, Vec<JointInstance>)> {
    let relations = RelationSet::new(["capital_of", "founded_by"])?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let mut tokens: Vec<String> = Vec::new();
        let mut tuples = Vec::new();
        let clauses = 1 + k % 2;
        for c in 0..clauses {
            if c > 0 {
                tokens.push("and".into());
            }
            let start = tokens.len();
            if (k + c) % 2 == 0 {
                let (city, country) = pick_two(&mut rng, &PLACES);
                tokens.extend(tokenize_ws(&format!("{city} is the capital of {country}")));
                tuples.push(JointTuple {
                    e1_span: Span(start + 5, start + 5),
                    e2_span: Span(start, start),
                    relation: "capital_of".into(),
                });
            } else {
                let firm = pick(&mut rng, &PLACES);
                let person = pick(&mut rng, &NAMES);
                tokens.extend(tokenize_ws(&format!("{firm} Group was founded by {person}")));
                tuples.push(JointTuple {
                    e1_span: Span(start, start + 1),
                    e2_span: Span(start + 5, start + 5),
                    relation: "founded_by".into(),
                });
            }
        }
        tokens.push(".".into());
        let inst = JointInstance { tokens, tuples };
        inst.validate(&relations)?;
        out.push(inst);
    }
    Ok((relations, out))
}

/// Two-document chains linked through one shared place; the trigger in the
/// second document decides the label.
pub fn chain_instances(n: usize, seed: u64) -> Result<(RelationSet, Vec<ChainInstance>)> {
    let relations = RelationSet::new(["located_in", "member_of"])?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let subject = pick(&mut rng, &NAMES);
        let (hub, object) = pick_two(&mut rng, &PLACES);
        let doc1 = tokenize_ws(&format!("{subject} sits beside {hub} . It is old ."));
        let (relation, trigger) = match k % 3 {
            0 => ("located_in", "lies within"),
            1 => ("member_of", "belongs to"),
            _ => (NONE_LABEL, "is unlike"),
        };
        let doc2 = tokenize_ws(&format!("{hub} {trigger} {object} ."));
        let sent_ids_1 = vec![0, 0, 0, 0, 0, 1, 1, 1, 1];
        let sent_ids_2 = vec![0; doc2.len()];
        let o = doc2.len() - 2;
        let inst = ChainInstance {
            doc1_tokens: doc1,
            doc2_tokens: doc2,
            sent_ids_1,
            sent_ids_2,
            subject_mentions: vec![Span(0, 0)],
            object_mentions: vec![Span(o, o)],
            common_entities: vec![CommonEntity {
                name: hub.into(),
                mentions_1: vec![Span(3, 3)],
                mentions_2: vec![Span(0, 0)],
            }],
            relation: relation.into(),
            other_mentions_1: Vec::new(),
            other_mentions_2: Vec::new(),
        };
        inst.validate(&relations)?;
        out.push(inst);
    }
    Ok((relations, out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generators_are_valid_and_seeded() {
        let (_, a) = relation_instances(30, 1).unwrap();
        assert_eq!(a, relation_instances(30, 1).unwrap().1);
        assert_eq!(a.iter().filter(|i| i.relation == NONE_LABEL).count(), 10);
        let (_, j) = joint_instances(30, 1).unwrap();
        assert_eq!(j.iter().map(|i| i.tuples.len()).sum::<usize>(), 45);
        let (_, c) = chain_instances(30, 1).unwrap();
        assert_eq!(c.len(), 30);
        assert_ne!(c, chain_instances(30, 2).unwrap().1);
    }
}
