use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::RelationSet;
use crate::error::{Error, Result};
use crate::params::INIT_RANGE;
use crate::tensor::Tensor;

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Shared word vocabulary. Indices below [`Vocabulary::FIRST_RELATION`] are
/// reserved, relation names follow, corpus tokens come last.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: BTreeMap<String, usize>,
    relations: usize,
}

impl Vocabulary {
    pub const PAD: usize = 0;
    pub const UNK: usize = 1;
    pub const SOS: usize = 2;
    pub const EOS: usize = 3;
    pub const FIELD_SEP: usize = 4;
    pub const TUPLE_SEP: usize = 5;
    pub const DOC_SEP: usize = 6;
    pub const FIRST_RELATION: usize = 7;

    pub const RESERVED: [&'static str; 7] = ["<pad>", "<unk>", "<sos>", "<eos>", ";", "|", "<doc>"];

    /// Builds from relation names and a token stream. Tokens occurring fewer
    /// than `min_count` times are left out; the rest are ordered by descending
    /// frequency, then lexicographically.
    pub fn build<'a>(
        relations: &RelationSet,
        tokens: impl IntoIterator<Item = &'a str>,
        min_count: usize,
    ) -> Self {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for t in tokens {
            *counts.entry(t).or_default() += 1;
        }
        let mut words: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|&(_, c)| c >= min_count.max(1))
            .collect();
        words.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let mut list: Vec<String> = Self::RESERVED.iter().map(|s| s.to_string()).collect();
        list.extend(relations.names().iter().cloned());
        list.extend(words.into_iter().map(|(w, _)| w.to_string()));
        Self::from_list(list, relations.len()).expect("reserved entries are distinct")
    }

    /// Rebuilds from the saved token list; `relations` is the number of
    /// relation entries following the reserved block.
    pub fn from_list(list: Vec<String>, relations: usize) -> Result<Self> {
        if list.len() < Self::FIRST_RELATION + relations {
            return Err(Error::validation("vocabulary", "too short for the reserved entries"));
        }
        for (i, r) in Self::RESERVED.iter().enumerate() {
            if list[i] != *r {
                return Err(Error::validation(
                    "vocabulary",
                    format!("entry {i} must be {r:?}, found {:?}", list[i]),
                ));
            }
        }
        let mut index = BTreeMap::new();
        let mut tokens = Vec::with_capacity(list.len());
        for t in list {
            // a corpus word spelled like a relation name shares its entry
            if index.contains_key(&t) {
                continue;
            }
            index.insert(t.clone(), tokens.len());
            tokens.push(t);
        }
        Ok(Vocabulary {
            tokens,
            index,
            relations,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn relation_count(&self) -> usize {
        self.relations
    }

    /// Index of `token`, or UNK.
    pub fn get(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(Self::UNK)
    }

    pub fn lookup(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, idx: usize) -> &str {
        &self.tokens[idx]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.get(t)).collect()
    }

    pub fn relation_index(&self, k: usize) -> usize {
        Self::FIRST_RELATION + k
    }

    pub fn is_relation(&self, idx: usize) -> bool {
        (Self::FIRST_RELATION..Self::FIRST_RELATION + self.relations).contains(&idx)
    }

    /// FNV-1a over the newline-joined token list; stored in checkpoints.
    pub fn hash(&self) -> u64 {
        let mut bytes = Vec::new();
        for t in &self.tokens {
            bytes.extend_from_slice(t.as_bytes());
            bytes.push(b'\n');
        }
        fnv1a64(&bytes)
    }
}

/// Character inventory for character-level word features.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CharVocab {
    chars: Vec<char>,
    index: BTreeMap<char, usize>,
}

impl CharVocab {
    pub const PAD: usize = 0;
    pub const UNK: usize = 1;

    pub fn build<'a>(tokens: impl IntoIterator<Item = &'a str>) -> Self {
        let mut set: Vec<char> = tokens.into_iter().flat_map(str::chars).collect();
        set.sort_unstable();
        set.dedup();
        Self::from_chars(set)
    }

    /// Characters in index order after the two reserved slots.
    pub fn from_chars(chars: Vec<char>) -> Self {
        let index = chars
            .iter()
            .enumerate()
            .map(|(i, &c)| (c, i + 2))
            .collect();
        CharVocab { chars, index }
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    /// Table size including the reserved rows.
    pub fn len(&self) -> usize {
        self.chars.len() + 2
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn encode(&self, word: &str) -> Vec<usize> {
        word.chars()
            .map(|c| self.index.get(&c).copied().unwrap_or(Self::UNK))
            .collect()
    }
}

/// Word vectors aligned with a [`Vocabulary`].
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub matrix: Tensor,
    pub trainable: bool,
}

impl EmbeddingTable {
    /// Seeded uniform rows in `[-0.1, 0.1]` with a zero padding row.
    pub fn random(rows: usize, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..rows * dim)
            .map(|_| rng.random_range(-INIT_RANGE..=INIT_RANGE))
            .collect();
        let mut matrix = Tensor::from_vec(rows, dim, data).expect("sized");
        if rows > 0 {
            matrix.row_mut(Vocabulary::PAD).fill(0.0);
        }
        EmbeddingTable {
            matrix,
            trainable: true,
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    /// Overwrites row `idx` with a pretrained vector; padding stays zero.
    pub fn set_row(&mut self, idx: usize, values: &[f64]) -> Result<()> {
        if values.len() != self.dim() {
            return Err(Error::config(format!(
                "vector of length {} for a table of dimension {}",
                values.len(),
                self.dim()
            )));
        }
        if idx != Vocabulary::PAD {
            self.matrix.row_mut(idx).copy_from_slice(values);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn vocab() -> Vocabulary {
        let rels = RelationSet::new(["capital", "country"]).unwrap();
        Vocabulary::build(&rels, "b a c a b a capital".split(' '), 1)
    }

    #[test]
    fn reserved_layout_and_order() {
        let v = vocab();
        assert_eq!(v.get(";"), Vocabulary::FIELD_SEP);
        assert_eq!(v.get("|"), Vocabulary::TUPLE_SEP);
        assert_eq!(v.get("capital"), v.relation_index(0));
        assert_eq!(v.get("country"), v.relation_index(1));
        assert_eq!(&v.tokens()[9..], &["a", "b", "c"]);
        assert_eq!(v.get("zebra"), Vocabulary::UNK);
        assert!(v.is_relation(8) && !v.is_relation(9));
    }

    #[test]
    fn list_round_trip_keeps_hash() {
        let v = vocab();
        let back = Vocabulary::from_list(v.tokens().to_vec(), 2).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.hash(), v.hash());
        let mut broken = v.tokens().to_vec();
        broken.swap(0, 1);
        assert!(Vocabulary::from_list(broken, 2).is_err());
    }

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
    }

    #[test]
    fn chars_reserve_pad_and_unk() {
        let c = CharVocab::build(["ab", "ba"]);
        assert_eq!(c.encode("abz"), vec![2, 3, CharVocab::UNK]);
        assert_eq!(c.len(), 4);
    }

    #[test]
    fn random_table_is_seeded_with_zero_padding() {
        let a = EmbeddingTable::random(5, 3, 9);
        assert_eq!(a, EmbeddingTable::random(5, 3, 9));
        assert!(a.matrix.row(0).iter().all(|&x| x == 0.0));
        assert!(a.matrix.data().iter().all(|x| x.abs() <= 0.1));
        let mut b = a.clone();
        b.set_row(2, &[0.1, 0.2, 0.3]).unwrap();
        assert_eq!(b.matrix.row(2), &[0.1, 0.2, 0.3]);
        assert!(b.set_row(2, &[0.1]).is_err());
    }
}
