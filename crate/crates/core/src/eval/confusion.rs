use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::Recommender;
use crate::data::Session;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionRow {
    pub item: usize,
    pub count: usize,
    /// 1-based position in the frequency ordering.
    pub rank: usize,
}

/// Recommendation histogram over a cohort of sessions sharing a last item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Confusion {
    pub last_item: usize,
    pub sessions: usize,
    pub k: usize,
    /// Most frequent first; equal counts by ascending item.
    pub rows: Vec<ConfusionRow>,
}

impl Confusion {
    pub fn distinct_items(&self) -> usize {
        self.rows.len()
    }

    pub fn count_of(&self, item: usize) -> usize {
        self.rows.iter().find(|r| r.item == item).map_or(0, |r| r.count)
    }

    pub const CSV_HEADER: &'static str = "item_id,count,rank";

    /// Rows with item ids rendered by `id`.
    pub fn to_csv(&self, id: impl Fn(usize) -> String) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for r in &self.rows {
            out.push_str(&format!("{},{},{}\n", id(r.item), r.count, r.rank));
        }
        out
    }

    /// Items recommended by either analysis with both counts, ordered by
    /// combined count.
    pub fn aligned(&self, other: &Confusion) -> Vec<(usize, usize, usize)> {
        let mut items: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
        for r in &self.rows {
            items.entry(r.item).or_default().0 = r.count;
        }
        for r in &other.rows {
            items.entry(r.item).or_default().1 = r.count;
        }
        let mut rows: Vec<(usize, usize, usize)> = items.into_iter().map(|(i, (a, b))| (i, a, b)).collect();
        rows.sort_by(|x, y| (y.1 + y.2).cmp(&(x.1 + x.2)).then(x.0.cmp(&y.0)));
        rows
    }
}

/// Counts how often each item appears across the top-`k` lists of a cohort.
pub fn confusion_analysis<R: Recommender + ?Sized>(rec: &R, cohort: &[Session], k: usize) -> Result<Confusion> {
    if cohort.len() < 2 {
        return Err(Error::contract(format!(
            "cohort of {} sessions; at least 2 needed",
            cohort.len()
        )));
    }
    let last_item = cohort[0].last_item();
    if cohort.iter().any(|s| s.last_item() != last_item) {
        return Err(Error::contract("cohort sessions end in different items"));
    }
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for list in rec.recommend(cohort, k)? {
        for &i in list.items() {
            *counts.entry(i).or_default() += 1;
        }
    }
    let mut rows: Vec<(usize, usize)> = counts.into_iter().collect();
    rows.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    Ok(Confusion {
        last_item,
        sessions: cohort.len(),
        k,
        rows: rows
            .into_iter()
            .enumerate()
            .map(|(r, (item, count))| ConfusionRow {
                item,
                count,
                rank: r + 1,
            })
            .collect(),
    })
}

/// The last item shared by the most sessions; ties go to the smaller index.
pub fn most_frequent_last_item(sessions: &[Session]) -> Option<usize> {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for s in sessions {
        *counts.entry(s.last_item()).or_default() += 1;
    }
    counts
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i)
}

/// Sessions ending in `last_item`, or in the most frequent last item.
pub fn select_cohort(sessions: &[Session], last_item: Option<usize>) -> Option<(usize, Vec<Session>)> {
    let item = last_item.or_else(|| most_frequent_last_item(sessions))?;
    let cohort = sessions.iter().filter(|s| s.last_item() == item).cloned().collect();
    Some((item, cohort))
}
