use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::bundle::{Bundle, DatasetStats};
use super::{Dataset, OrderKey, RawSession, RawSessionLog, Session, Vocabulary};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub min_item_count: usize,
    pub min_session_len: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            min_item_count: 5,
            min_session_len: 2,
        }
    }
}

/// Drops rare items and short sessions, alternating the two filters until
/// neither removes anything, then indexes the surviving items.
pub fn preprocess(log: &RawSessionLog, cfg: &FilterConfig) -> Result<(RawSessionLog, Vocabulary)> {
    if log.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut sessions = log.sessions.clone();
    loop {
        let mut counts: HashMap<i64, usize> = HashMap::new();
        for s in &sessions {
            for &item in &s.items {
                *counts.entry(item).or_default() += 1;
            }
        }
        let mut changed = false;
        for s in &mut sessions {
            let before = s.items.len();
            s.items.retain(|item| counts[item] >= cfg.min_item_count);
            changed |= s.items.len() != before;
        }
        let before = sessions.len();
        sessions.retain(|s| s.items.len() >= cfg.min_session_len.max(1));
        changed |= sessions.len() != before;
        if !changed {
            break;
        }
    }
    if sessions.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let vocab = Vocabulary::from_raw_ids(sessions.iter().flat_map(|s| s.items.iter().copied()));
    Ok((RawSessionLog { sessions }, vocab))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitPolicy {
    /// The most recent fraction of sessions (by last order key) is test.
    MostRecentFraction(f64),
    /// Sessions ending within `span` of the newest integer key are test.
    TimeCutoff(i64),
}

/// Splits into `(train, test)`, both in chronological order of their last
/// click. `train_recent_fraction` keeps only the newest share of training
/// sessions.
pub fn split(
    log: &RawSessionLog,
    policy: &SplitPolicy,
    train_recent_fraction: Option<f64>,
) -> Result<(RawSessionLog, RawSessionLog)> {
    let mut sessions: Vec<&RawSession> = log.sessions.iter().collect();
    sessions.sort_by(|a, b| a.last_key.cmp(&b.last_key));
    let n = sessions.len();
    let n_test = match *policy {
        SplitPolicy::MostRecentFraction(f) => {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::Config(format!("test fraction {f} outside [0, 1]")));
            }
            (f * n as f64).round() as usize
        }
        SplitPolicy::TimeCutoff(span) => {
            let OrderKey::Int(newest) = sessions.last().map(|s| s.last_key.clone()).ok_or(Error::EmptyInput)? else {
                return Err(Error::Config("time cutoff needs integer order keys".into()));
            };
            sessions
                .iter()
                .filter(|s| matches!(s.last_key, OrderKey::Int(k) if k > newest - span))
                .count()
        }
    };
    let (train, test) = sessions.split_at(n - n_test);
    let mut train: Vec<RawSession> = train.iter().map(|&s| s.clone()).collect();
    if let Some(f) = train_recent_fraction {
        if !(f > 0.0 && f <= 1.0) {
            return Err(Error::Config(format!("train fraction {f} outside (0, 1]")));
        }
        let keep = ((train.len() as f64 * f).ceil() as usize).min(train.len());
        train.drain(..train.len() - keep);
    }
    Ok((
        RawSessionLog { sessions: train },
        RawSessionLog {
            sessions: test.iter().map(|&s| s.clone()).collect(),
        },
    ))
}

/// Expands `[v1..vn]` into `([v1], v2), ..., ([v1..v(n-1)], vn)`.
pub fn augment(items: &[usize]) -> Result<Vec<Session>> {
    augment_truncated(items, usize::MAX)
}

/// As [`augment`], keeping at most the `max_len` most recent items of each
/// prefix.
pub fn augment_truncated(items: &[usize], max_len: usize) -> Result<Vec<Session>> {
    if items.len() < 2 {
        return Err(Error::contract(format!(
            "augmentation needs at least 2 items, got {}",
            items.len()
        )));
    }
    if max_len == 0 {
        return Err(Error::contract("max_len must be positive"));
    }
    (1..items.len())
        .map(|end| {
            let start = end.saturating_sub(max_len);
            Session::new(items[start..end].to_vec(), items[end])
        })
        .collect()
}

/// Indexes the training split, drops test sessions with unseen items and
/// augments both splits.
pub fn build_dataset(train: &RawSessionLog, test: &RawSessionLog, max_len: usize) -> Result<Bundle> {
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let vocabulary = Vocabulary::from_raw_ids(train.sessions.iter().flat_map(|s| s.items.iter().copied()));
    let encode = |s: &RawSession| -> Option<Vec<usize>> { s.items.iter().map(|&id| vocabulary.encode(id)).collect() };

    let mut clicks = 0;
    let mut raw_sessions = 0;
    let mut train_out = Vec::new();
    for s in train.sessions.iter().filter(|s| s.items.len() >= 2) {
        let items = encode(s).expect("training items are in the vocabulary");
        clicks += items.len();
        raw_sessions += 1;
        train_out.extend(augment_truncated(&items, max_len)?);
    }
    let mut dropped = 0;
    let mut test_out = Vec::new();
    for s in &test.sessions {
        match encode(s) {
            Some(items) if items.len() >= 2 => {
                clicks += items.len();
                raw_sessions += 1;
                test_out.extend(augment_truncated(&items, max_len)?);
            }
            _ => dropped += 1,
        }
    }
    let stats = DatasetStats {
        clicks,
        train_sessions: train_out.len(),
        test_sessions: test_out.len(),
        items: vocabulary.len(),
        avg_length: clicks as f64 / raw_sessions as f64,
    };
    Ok(Bundle {
        dataset: Dataset {
            train: train_out,
            test: test_out,
            vocabulary,
        },
        stats,
        dropped_test_sessions: dropped,
    })
}
