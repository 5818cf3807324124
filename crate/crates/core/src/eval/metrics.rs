use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{RankedList, Recommender};
use crate::data::Session;
use crate::error::{Error, Result};

fn check(lists: &[RankedList], labels: &[usize], k: usize) -> Result<()> {
    if k < 1 {
        return Err(Error::contract("k must be at least 1"));
    }
    if lists.len() != labels.len() {
        return Err(Error::contract(format!(
            "{} ranked lists for {} labels",
            lists.len(),
            labels.len()
        )));
    }
    Ok(())
}

/// Fraction of sessions whose label is among the first `k` entries.
pub fn recall_at_k(lists: &[RankedList], labels: &[usize], k: usize) -> Result<f64> {
    check(lists, labels, k)?;
    if lists.is_empty() {
        return Ok(0.0);
    }
    let hits = lists
        .iter()
        .zip(labels)
        .filter(|(l, &y)| l.0.iter().take(k).any(|&i| i == y))
        .count();
    Ok(hits as f64 / lists.len() as f64)
}

/// Mean of `1 / rank` over sessions, counting ranks past `k` as zero.
pub fn mrr_at_k(lists: &[RankedList], labels: &[usize], k: usize) -> Result<f64> {
    check(lists, labels, k)?;
    if lists.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = lists
        .iter()
        .zip(labels)
        .map(|(l, &y)| match l.0.iter().take(k).position(|&i| i == y) {
            Some(p) => 1.0 / (p + 1) as f64,
            None => 0.0,
        })
        .sum();
    Ok(total / lists.len() as f64)
}

/// Item occurrence counts in the (prefix-augmented) training set.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Popularity {
    counts: Vec<u64>,
}

impl Popularity {
    /// Counts every prefix item and every label of `train`.
    pub fn from_training(train: &[Session]) -> Self {
        let mut counts = Vec::new();
        let mut bump = |i: usize| {
            if counts.len() <= i {
                counts.resize(i + 1, 0);
            }
            counts[i] += 1;
        };
        for s in train {
            s.items.iter().for_each(|&i| bump(i));
            bump(s.label);
        }
        Popularity { counts }
    }

    pub fn from_counts(counts: Vec<u64>) -> Self {
        Popularity { counts }
    }

    pub fn get(&self, item: usize) -> Option<u64> {
        self.counts.get(item).copied().filter(|_| item != 0)
    }

    /// Largest item index with a slot (possibly zero).
    pub fn max_item(&self) -> usize {
        self.counts.len().saturating_sub(1)
    }
}

/// Average popularity of recommended items, each list's sum divided by `k`.
/// Returns the value and the number of recommended items without a count.
pub fn arp(lists: &[RankedList], popularity: &Popularity, k: usize) -> Result<(f64, usize)> {
    if k < 1 {
        return Err(Error::contract("k must be at least 1"));
    }
    if lists.is_empty() {
        return Ok((0.0, 0));
    }
    let mut missing = 0;
    let mut total = 0.0;
    for l in lists {
        let mut sum = 0.0;
        for &i in l.0.iter().take(k) {
            match popularity.get(i) {
                Some(c) => sum += c as f64,
                None => missing += 1,
            }
        }
        total += sum / k as f64;
    }
    Ok((total / lists.len() as f64, missing))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: String,
    pub k: usize,
    pub recall: f64,
    pub mrr: f64,
    pub arp: f64,
    pub n_sessions: usize,
    /// Recommended items absent from the popularity table.
    pub arp_missing: usize,
    /// For each last item of the evaluated sessions: how often each item was
    /// recommended to sessions ending in it.
    #[serde(skip_serializing_if = "BTreeMap::is_empty", default)]
    pub last_item_histograms: BTreeMap<usize, BTreeMap<usize, usize>>,
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str = "method,k,recall,mrr,arp,n_sessions";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.method, self.k, self.recall, self.mrr, self.arp, self.n_sessions
        )
    }
}

/// Recall, MRR and ARP of `rec` on `sessions`. Histograms are filled only
/// when `histograms` is set.
pub fn evaluate<R: Recommender + ?Sized>(
    rec: &R,
    sessions: &[Session],
    popularity: &Popularity,
    k: usize,
    histograms: bool,
) -> Result<MetricsReport> {
    let lists = rec.recommend(sessions, k)?;
    let labels: Vec<usize> = sessions.iter().map(|s| s.label).collect();
    let (arp, arp_missing) = arp(&lists, popularity, k)?;
    let mut last_item_histograms: BTreeMap<usize, BTreeMap<usize, usize>> = BTreeMap::new();
    if histograms {
        for (s, l) in sessions.iter().zip(&lists) {
            let h = last_item_histograms.entry(s.last_item()).or_default();
            for &i in l.items() {
                *h.entry(i).or_default() += 1;
            }
        }
    }
    Ok(MetricsReport {
        method: rec.name().to_string(),
        k,
        recall: recall_at_k(&lists, &labels, k)?,
        mrr: mrr_at_k(&lists, &labels, k)?,
        arp,
        n_sessions: sessions.len(),
        arp_missing,
        last_item_histograms,
    })
}
