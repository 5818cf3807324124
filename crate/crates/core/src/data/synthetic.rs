//! Synthetic session generator for desk-scale experiments.
//!
//! Items `1..=m` are split into two latent clusters (odd / even ids). Each
//! session belongs to one cluster and walks it with a mix of Markov
//! successor steps, Zipf-popularity draws and repeats of earlier items. A
//! share of sessions has its final prefix item overwritten by one designated
//! item, so those sessions share a last item while their labels still follow
//! the cluster walk.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::bundle::{Bundle, DatasetStats};
use super::{Dataset, Session, Vocabulary};
use crate::error::{Error, Result};
use crate::rng::Seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub num_items: usize,
    pub num_sessions: usize,
    /// Zipf exponent of item popularity; 0 gives uniform popularity.
    pub popularity_exponent: f64,
    /// Fraction of sessions forced to end in [`SyntheticConfig::DESIGNATED_ITEM`].
    pub last_item_collision_rate: f64,
    /// Probability that a step repeats an item already in the session.
    pub repeat_rate: f64,
    /// Probability that a step moves to the current item's cluster successor.
    pub markov_rate: f64,
    pub min_len: usize,
    pub max_len: usize,
    pub test_fraction: f64,
    pub seed: u64,
}

impl SyntheticConfig {
    /// The most popular item; shared last item of collided sessions.
    pub const DESIGNATED_ITEM: usize = 1;

    pub fn new(num_items: usize, num_sessions: usize, seed: u64) -> Self {
        SyntheticConfig {
            num_items,
            num_sessions,
            popularity_exponent: 1.0,
            last_item_collision_rate: 0.0,
            repeat_rate: 0.0,
            markov_rate: 0.5,
            min_len: 2,
            max_len: 6,
            test_fraction: 0.2,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.num_items < 5 || self.num_sessions < 10 {
            return Err(Error::contract("synthetic data needs >= 5 items and >= 10 sessions"));
        }
        for (name, rate) in [
            ("collision rate", self.last_item_collision_rate),
            ("repeat rate", self.repeat_rate),
            ("markov rate", self.markov_rate),
            ("test fraction", self.test_fraction),
        ] {
            if !(0.0..=1.0).contains(&rate) {
                return Err(Error::contract(format!("{name} {rate} outside [0, 1]")));
            }
        }
        if self.repeat_rate + self.markov_rate > 1.0 {
            return Err(Error::contract("repeat rate + markov rate exceeds 1"));
        }
        if !(self.popularity_exponent >= 0.0) {
            return Err(Error::contract("popularity exponent must be >= 0"));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::contract("need 1 <= min_len <= max_len"));
        }
        Ok(())
    }

    pub fn generate(&self) -> Result<Bundle> {
        self.validate()?;
        let mut rng = Seed(self.seed).stream("synthetic");
        let m = self.num_items;
        let clusters: [Vec<usize>; 2] = [
            (1..=m).filter(|i| i % 2 == 1).collect(),
            (1..=m).filter(|i| i % 2 == 0).collect(),
        ];
        let zipf: Vec<WeightedIndex<f64>> = clusters
            .iter()
            .map(|c| {
                WeightedIndex::new(c.iter().map(|&i| (i as f64).powf(-self.popularity_exponent)))
                    .expect("positive weights")
            })
            .collect();
        let cluster_pick =
            WeightedIndex::new([clusters[0].len() as f64, clusters[1].len() as f64]).expect("nonempty clusters");
        // Cyclic successor inside an item's own cluster.
        let successor = |item: usize| {
            let c = &clusters[(item + 1) % 2];
            let pos = c.iter().position(|&x| x == item).expect("item in its cluster");
            c[(pos + 1) % c.len()]
        };

        let mut sessions = Vec::with_capacity(self.num_sessions);
        for _ in 0..self.num_sessions {
            let c = cluster_pick.sample(&mut rng);
            let len = rng.random_range(self.min_len..=self.max_len);
            let mut walk = vec![clusters[c][zipf[c].sample(&mut rng)]];
            while walk.len() < len + 1 {
                let u: f64 = rng.random();
                let next = if u < self.repeat_rate {
                    *walk.choose(&mut rng).expect("nonempty walk")
                } else if u < self.repeat_rate + self.markov_rate {
                    successor(*walk.last().expect("nonempty walk"))
                } else {
                    clusters[c][zipf[c].sample(&mut rng)]
                };
                walk.push(next);
            }
            let collide = rng.random::<f64>() < self.last_item_collision_rate;
            let session = if collide {
                let mut items = walk[..len - 1].to_vec();
                items.push(Self::DESIGNATED_ITEM);
                Session::new(items, walk[len - 1])?
            } else {
                Session::new(walk[..len].to_vec(), walk[len])?
            };
            sessions.push(session);
        }

        let n_train = ((1.0 - self.test_fraction) * self.num_sessions as f64).round() as usize;
        let test = sessions.split_off(n_train);
        let clicks: usize = sessions.iter().chain(&test).map(|s| s.len() + 1).sum();
        let stats = DatasetStats {
            clicks,
            train_sessions: sessions.len(),
            test_sessions: test.len(),
            items: m,
            avg_length: clicks as f64 / self.num_sessions as f64,
        };
        Ok(Bundle {
            dataset: Dataset {
                train: sessions,
                test,
                vocabulary: Vocabulary::identity(m),
            },
            stats,
            dropped_test_sessions: 0,
        })
    }
}

pub fn generate_synthetic(
    num_items: usize,
    num_sessions: usize,
    popularity_exponent: f64,
    last_item_collision_rate: f64,
    seed: u64,
) -> Result<Dataset> {
    let cfg = SyntheticConfig {
        popularity_exponent,
        last_item_collision_rate,
        ..SyntheticConfig::new(num_items, num_sessions, seed)
    };
    Ok(cfg.generate()?.dataset)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_collision_ends_every_session_in_designated_item() {
        let d = generate_synthetic(20, 200, 1.0, 1.0, 3).unwrap();
        assert!(d
            .train
            .iter()
            .chain(&d.test)
            .all(|s| s.last_item() == SyntheticConfig::DESIGNATED_ITEM));
    }

    #[test]
    fn same_seed_same_dataset() {
        let a = generate_synthetic(30, 100, 1.2, 0.5, 11).unwrap();
        let b = generate_synthetic(30, 100, 1.2, 0.5, 11).unwrap();
        let c = generate_synthetic(30, 100, 1.2, 0.5, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn rejects_bad_rates_and_sizes() {
        assert!(generate_synthetic(20, 100, 1.0, 1.5, 0).is_err());
        assert!(generate_synthetic(20, 100, 1.0, -0.1, 0).is_err());
        assert!(generate_synthetic(4, 100, 1.0, 0.0, 0).is_err());
        assert!(generate_synthetic(20, 9, 1.0, 0.0, 0).is_err());
    }

    #[test]
    fn zero_exponent_gives_uniform_frequencies() {
        // Every occurrence (prefix items and labels) counted; each item's
        // count must sit within 3 sigma of the multinomial expectation.
        let m = 20;
        let cfg = SyntheticConfig {
            popularity_exponent: 0.0,
            test_fraction: 0.0,
            ..SyntheticConfig::new(m, 5000, 5)
        };
        let d = cfg.generate().unwrap().dataset;
        let mut counts = vec![0usize; m + 1];
        for s in &d.train {
            for &i in &s.items {
                counts[i] += 1;
            }
            counts[s.label] += 1;
        }
        let total: usize = counts.iter().sum();
        let p = 1.0 / m as f64;
        let expected = total as f64 * p;
        let sigma = (total as f64 * p * (1.0 - p)).sqrt();
        for (item, &c) in counts.iter().enumerate().skip(1) {
            assert!(
                (c as f64 - expected).abs() <= 3.0 * sigma,
                "item {item}: {c} vs {expected:.1} +- {sigma:.1}"
            );
        }
    }

    #[test]
    fn labels_of_collided_sessions_follow_the_cluster() {
        let cfg = SyntheticConfig {
            last_item_collision_rate: 1.0,
            markov_rate: 1.0,
            min_len: 3,
            ..SyntheticConfig::new(12, 50, 1)
        };
        let d = cfg.generate().unwrap().dataset;
        for s in &d.train {
            let before = s.items[s.len() - 2];
            assert_eq!(before % 2, s.label % 2, "{s:?}");
        }
    }
}
