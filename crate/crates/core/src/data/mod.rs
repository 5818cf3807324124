//! Session data: ingestion, filtering, prefix augmentation, synthetic
//! generation and the on-disk dataset bundle.

mod bundle;
mod load;
mod preprocess;
mod synthetic;

use std::collections::HashMap;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use bundle::{read_bundle, write_bundle, Bundle, DatasetStats};
pub use load::{load_sessions, parse_sessions, FormatDescriptor, OrderKey, OrderKind, RawSession, RawSessionLog};
pub use preprocess::{augment, augment_truncated, build_dataset, preprocess, split, FilterConfig, SplitPolicy};
pub use synthetic::{generate_synthetic, SyntheticConfig};

/// Index 0 is reserved for padding; real items are `1..=vocabulary.len()`.
pub const PADDING: usize = 0;

/// A prefix of interactions and the item that followed it.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Session {
    pub items: Vec<usize>,
    pub label: usize,
}

impl Session {
    pub fn new(items: Vec<usize>, label: usize) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::contract("session needs at least one item"));
        }
        if label == PADDING || items.contains(&PADDING) {
            return Err(Error::contract("padding index inside a session"));
        }
        Ok(Session { items, label })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn last_item(&self) -> usize {
        *self.items.last().expect("sessions are nonempty")
    }
}

/// Bijection between raw item ids and dense internal indices `1..=m`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Vocabulary {
    raw: Vec<i64>,
    index: HashMap<i64, usize>,
}

impl Vocabulary {
    /// Assigns indices in first-occurrence order.
    pub fn from_raw_ids(ids: impl IntoIterator<Item = i64>) -> Self {
        let mut vocab = Vocabulary::default();
        for id in ids {
            if !vocab.index.contains_key(&id) {
                vocab.raw.push(id);
                vocab.index.insert(id, vocab.raw.len());
            }
        }
        vocab
    }

    /// Vocabulary where raw id `i` maps to index `i` for `i in 1..=m`.
    pub fn identity(m: usize) -> Self {
        Self::from_raw_ids((1..=m as i64).collect::<Vec<_>>())
    }

    /// Number of real items `m` (excluding padding).
    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    pub fn encode(&self, raw: i64) -> Option<usize> {
        self.index.get(&raw).copied()
    }

    pub fn decode(&self, index: usize) -> Option<i64> {
        index.checked_sub(1).and_then(|i| self.raw.get(i)).copied()
    }

    /// Raw ids in index order (`decode(1)`, `decode(2)`, ...).
    pub fn raw_ids(&self) -> &[i64] {
        &self.raw
    }

    /// Hex SHA-256 over the raw ids in index order.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for id in &self.raw {
            h.update(id.to_le_bytes());
        }
        hex(&h.finalize())
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Vec<Session>,
    pub test: Vec<Session>,
    pub vocabulary: Vocabulary,
}

impl Dataset {
    pub fn num_items(&self) -> usize {
        self.vocabulary.len()
    }

    /// Checks that every index lies inside the vocabulary.
    pub fn validate(&self) -> Result<()> {
        let m = self.vocabulary.len();
        for s in self.train.iter().chain(&self.test) {
            if s.label == PADDING || s.label > m || s.items.iter().any(|&i| i == PADDING || i > m) {
                return Err(Error::contract(format!("session {s:?} outside vocabulary of {m}")));
            }
        }
        Ok(())
    }

    /// Longest prefix in either split.
    pub fn max_len(&self) -> usize {
        self.train.iter().chain(&self.test).map(Session::len).max().unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn session_rejects_padding() {
        assert!(Session::new(vec![], 1).is_err());
        assert!(Session::new(vec![1, 0], 2).is_err());
        assert!(Session::new(vec![1], 0).is_err());
    }

    proptest! {
        #[test]
        fn vocabulary_round_trip(ids in proptest::collection::vec(-1000i64..1000, 1..60)) {
            let vocab = Vocabulary::from_raw_ids(ids.clone());
            for id in &ids {
                let idx = vocab.encode(*id).unwrap();
                prop_assert!(idx >= 1 && idx <= vocab.len());
                prop_assert_eq!(vocab.decode(idx), Some(*id));
            }
            prop_assert_eq!(vocab.decode(0), None);
        }
    }
}
