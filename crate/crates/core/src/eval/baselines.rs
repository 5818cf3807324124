use std::collections::HashMap;

use super::{Popularity, RankedList, Recommender};
use crate::data::Session;
use crate::error::Result;

fn global_ranking(popularity: &Popularity) -> Vec<usize> {
    let scores: Vec<f64> = (1..=popularity.max_item())
        .map(|i| popularity.get(i).unwrap_or(0) as f64)
        .collect();
    RankedList::from_scores(&scores, scores.len()).0
}

/// Most popular training items, regardless of the session.
#[derive(Debug, Clone)]
pub struct Pop {
    ranking: Vec<usize>,
}

impl Pop {
    pub fn fit(popularity: &Popularity) -> Self {
        Pop {
            ranking: global_ranking(popularity),
        }
    }
}

impl Recommender for Pop {
    fn name(&self) -> &str {
        "pop"
    }

    fn recommend(&self, sessions: &[Session], k: usize) -> Result<Vec<RankedList>> {
        let top = RankedList(self.ranking.iter().take(k).copied().collect());
        Ok(vec![top; sessions.len()])
    }
}

/// Items of the current session by in-session frequency, then global
/// popularity.
#[derive(Debug, Clone)]
pub struct SPop {
    popularity: Popularity,
    ranking: Vec<usize>,
}

impl SPop {
    pub fn fit(popularity: &Popularity) -> Self {
        SPop {
            popularity: popularity.clone(),
            ranking: global_ranking(popularity),
        }
    }

    fn recommend_one(&self, session: &Session, k: usize) -> RankedList {
        let mut counts: HashMap<usize, usize> = HashMap::new();
        for &i in &session.items {
            *counts.entry(i).or_default() += 1;
        }
        let mut own: Vec<(usize, usize)> = counts.into_iter().collect();
        own.sort_by(|a, b| {
            b.1.cmp(&a.1)
                .then_with(|| {
                    self.popularity
                        .get(b.0)
                        .unwrap_or(0)
                        .cmp(&self.popularity.get(a.0).unwrap_or(0))
                })
                .then(a.0.cmp(&b.0))
        });
        let mut list: Vec<usize> = own.iter().map(|&(i, _)| i).take(k).collect();
        for &i in &self.ranking {
            if list.len() >= k {
                break;
            }
            if !list.contains(&i) {
                list.push(i);
            }
        }
        RankedList(list)
    }
}

impl Recommender for SPop {
    fn name(&self) -> &str {
        "spop"
    }

    fn recommend(&self, sessions: &[Session], k: usize) -> Result<Vec<RankedList>> {
        Ok(sessions.iter().map(|s| self.recommend_one(s, k)).collect())
    }
}

/// Item-to-item neighbours by cosine similarity of binary item-session
/// incidence vectors. Each training example (prefix plus label) is one
/// session.
#[derive(Debug, Clone)]
pub struct ItemKnn {
    num_items: usize,
    neighbours: HashMap<usize, Vec<(usize, f64)>>,
}

impl ItemKnn {
    pub fn fit(train: &[Session], num_items: usize) -> Self {
        let mut occurrences: HashMap<usize, f64> = HashMap::new();
        let mut co: HashMap<(usize, usize), f64> = HashMap::new();
        for s in train {
            let mut set: Vec<usize> = s.items.iter().copied().chain([s.label]).collect();
            set.sort_unstable();
            set.dedup();
            for (x, &a) in set.iter().enumerate() {
                *occurrences.entry(a).or_default() += 1.0;
                for &b in &set[x + 1..] {
                    *co.entry((a, b)).or_default() += 1.0;
                }
            }
        }
        let mut neighbours: HashMap<usize, Vec<(usize, f64)>> = HashMap::new();
        for ((a, b), c) in co {
            let sim = c / (occurrences[&a] * occurrences[&b]).sqrt();
            neighbours.entry(a).or_default().push((b, sim));
            neighbours.entry(b).or_default().push((a, sim));
        }
        for list in neighbours.values_mut() {
            list.sort_unstable_by_key(|&(i, _)| i);
        }
        ItemKnn { num_items, neighbours }
    }

    /// Cosine similarity of two distinct items; zero for unseen items.
    pub fn similarity(&self, a: usize, b: usize) -> f64 {
        self.neighbours
            .get(&a)
            .and_then(|n| n.binary_search_by_key(&b, |&(i, _)| i).ok().map(|p| n[p].1))
            .unwrap_or(0.0)
    }

    fn scores(&self, session: &Session) -> Vec<f64> {
        let mut scores = vec![0.0; self.num_items];
        for &i in &session.items {
            for &(j, sim) in self.neighbours.get(&i).map_or(&[][..], Vec::as_slice) {
                if j >= 1 && j <= self.num_items {
                    scores[j - 1] += sim;
                }
            }
        }
        scores
    }
}

impl Recommender for ItemKnn {
    fn name(&self) -> &str {
        "itemknn"
    }

    fn recommend(&self, sessions: &[Session], k: usize) -> Result<Vec<RankedList>> {
        Ok(sessions
            .iter()
            .map(|s| RankedList::from_scores(&self.scores(s), k))
            .collect())
    }
}
