//! Ranking metrics, the popularity-bias metric, classical baselines and the
//! same-last-item confusion analysis.

mod baselines;
mod confusion;
mod metrics;

pub use baselines::{ItemKnn, Pop, SPop};
pub use confusion::{confusion_analysis, most_frequent_last_item, select_cohort, Confusion, ConfusionRow};
pub use metrics::{arp, evaluate, mrr_at_k, recall_at_k, MetricsReport, Popularity};

use std::cmp::Ordering;

use crate::data::Session;
use crate::error::Result;
use crate::model::Model;

/// Top-K items, best first. Equal scores are ordered by ascending index.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RankedList(pub Vec<usize>);

impl RankedList {
    /// Ranks items `1..=scores.len()`, where `scores[j]` belongs to item `j + 1`.
    pub fn from_scores(scores: &[f64], k: usize) -> Self {
        let order = |&a: &usize, &b: &usize| -> Ordering { scores[b - 1].total_cmp(&scores[a - 1]).then(a.cmp(&b)) };
        let mut idx: Vec<usize> = (1..=scores.len()).collect();
        let k = k.min(idx.len());
        if k == 0 {
            return RankedList(Vec::new());
        }
        if k < idx.len() {
            idx.select_nth_unstable_by(k - 1, order);
            idx.truncate(k);
        }
        idx.sort_unstable_by(order);
        RankedList(idx)
    }

    pub fn items(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// 1-based rank of `item`, if listed.
    pub fn rank_of(&self, item: usize) -> Option<usize> {
        self.0.iter().position(|&i| i == item).map(|p| p + 1)
    }
}

/// Anything that turns sessions into top-K lists.
pub trait Recommender {
    fn name(&self) -> &str;

    fn recommend(&self, sessions: &[Session], k: usize) -> Result<Vec<RankedList>>;
}

/// Sessions scored per forward pass in evaluation.
const EVAL_BATCH: usize = 256;

impl Recommender for Model {
    fn name(&self) -> &str {
        "simcgnn"
    }

    fn recommend(&self, sessions: &[Session], k: usize) -> Result<Vec<RankedList>> {
        let mut out = Vec::with_capacity(sessions.len());
        for chunk in sessions.chunks(EVAL_BATCH) {
            let logits = self.logits(chunk)?;
            for r in 0..logits.rows() {
                out.push(RankedList::from_scores(logits.row(r), k));
            }
        }
        Ok(out)
    }
}

/// A model under a display name, e.g. an ablation.
pub struct Named<'a, R: ?Sized> {
    pub name: String,
    pub inner: &'a R,
}

impl<R: Recommender + ?Sized> Recommender for Named<'_, R> {
    fn name(&self) -> &str {
        &self.name
    }

    fn recommend(&self, sessions: &[Session], k: usize) -> Result<Vec<RankedList>> {
        self.inner.recommend(sessions, k)
    }
}
