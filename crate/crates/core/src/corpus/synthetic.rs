//! Synthetic review corpora with planted aspect structure.
//!
//! Every user carries a preferred-aspect importance vector and a rejected
//! one; the rejected vector is a noisy cyclic shift of the preferred vector,
//! so the two polarities are correlated. Every item carries per-aspect
//! quality and defect levels. The clean score is
//! `pref · quality − rej · defect`, mapped affinely onto the rating scale.
//! Positive reviews draw words from the pools of the preferred aspects that
//! drove the rating, negative reviews from the rejected-aspect pools.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use super::documents::POLARITY_THRESHOLD;
use super::records::{InteractionRecord, MAX_RATING, MIN_RATING};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n_users: usize,
    pub n_items: usize,
    pub n_aspects: usize,
    /// Expected fraction of each user's reviews that are positive.
    pub imbalance_ratio: f64,
    /// Standard deviation of Gaussian rating noise.
    pub noise: f64,
    pub seed: u64,
    pub reviews_per_user: usize,
    pub words_per_review: usize,
    pub words_per_pool: usize,
    pub filler_words: usize,
    /// Probability that a review token comes from an aspect pool.
    pub aspect_word_rate: f64,
    /// Plant uniform importance on both sides for every user.
    pub uniform_importance: bool,
    /// Rating = `offset + scale · clean_score + noise`, clipped to [1, 5].
    pub rating_offset: f64,
    pub rating_scale: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_users: 500,
            n_items: 200,
            n_aspects: 2,
            imbalance_ratio: 0.5,
            noise: 0.0,
            seed: 1,
            reviews_per_user: 12,
            words_per_review: 6,
            words_per_pool: 8,
            filler_words: 20,
            aspect_word_rate: 0.75,
            uniform_importance: false,
            rating_offset: 3.0,
            rating_scale: 3.0,
        }
    }
}

/// The planted quantities behind a generated corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTruth {
    pub user_ids: Vec<String>,
    pub item_ids: Vec<String>,
    pub preferred_importance: Vec<Vec<f64>>,
    pub rejected_importance: Vec<Vec<f64>>,
    pub item_quality: Vec<Vec<f64>>,
    pub item_defect: Vec<Vec<f64>>,
    pub preferred_pools: Vec<Vec<String>>,
    pub rejected_pools: Vec<Vec<String>>,
}

impl SyntheticTruth {
    /// Noise-free rating before clipping.
    pub fn clean_score(&self, user: usize, item: usize) -> f64 {
        dot(&self.preferred_importance[user], &self.item_quality[item])
            - dot(&self.rejected_importance[user], &self.item_defect[item])
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn dirichlet_one(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let draws: Vec<f64> = (0..k).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    draws.into_iter().map(|x| x / total).collect()
}

fn pick_weighted(rng: &mut ChaCha8Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return rng.random_range(0..weights.len());
    }
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}

/// Generates `(records, truth)`; output is a pure function of `config`.
pub fn generate_synthetic(config: &SyntheticConfig) -> Result<(Vec<InteractionRecord>, SyntheticTruth)> {
    let c = config;
    if c.n_users == 0 || c.n_items == 0 || c.n_aspects == 0 {
        return Err(Error::Config("synthetic corpus needs users, items and aspects".into()));
    }
    if !(c.imbalance_ratio > 0.0 && c.imbalance_ratio < 1.0) {
        return Err(Error::Config("imbalance_ratio must lie in (0, 1)".into()));
    }
    if c.reviews_per_user == 0 || c.reviews_per_user > c.n_items {
        return Err(Error::Config("reviews_per_user must be in 1..=n_items".into()));
    }
    if c.words_per_review == 0 || c.words_per_pool == 0 {
        return Err(Error::Config("reviews and pools need at least one word".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
    let a = c.n_aspects;

    let user_ids: Vec<String> = (0..c.n_users).map(|u| format!("u{u:05}")).collect();
    let item_ids: Vec<String> = (0..c.n_items).map(|i| format!("i{i:05}")).collect();

    let mut preferred = Vec::with_capacity(c.n_users);
    let mut rejected = Vec::with_capacity(c.n_users);
    for _ in 0..c.n_users {
        if c.uniform_importance {
            preferred.push(vec![1.0 / a as f64; a]);
            rejected.push(vec![1.0 / a as f64; a]);
            continue;
        }
        let pref = dirichlet_one(&mut rng, a);
        let jitter = dirichlet_one(&mut rng, a);
        let rej: Vec<f64> = (0..a).map(|y| 0.8 * pref[(y + 1) % a] + 0.2 * jitter[y]).collect();
        preferred.push(pref);
        rejected.push(rej);
    }
    let mut quality = Vec::with_capacity(c.n_items);
    let mut defect = Vec::with_capacity(c.n_items);
    for _ in 0..c.n_items {
        quality.push((0..a).map(|_| rng.random::<f64>()).collect::<Vec<_>>());
        defect.push((0..a).map(|_| rng.random::<f64>()).collect::<Vec<_>>());
    }
    let preferred_pools: Vec<Vec<String>> =
        (0..a).map(|x| (0..c.words_per_pool).map(|k| format!("pro{x}w{k}")).collect()).collect();
    let rejected_pools: Vec<Vec<String>> =
        (0..a).map(|y| (0..c.words_per_pool).map(|k| format!("con{y}w{k}")).collect()).collect();
    let fillers: Vec<String> = (0..c.filler_words).map(|k| format!("filler{k}")).collect();

    let truth = SyntheticTruth {
        user_ids,
        item_ids,
        preferred_importance: preferred,
        rejected_importance: rejected,
        item_quality: quality,
        item_defect: defect,
        preferred_pools,
        rejected_pools,
    };

    let mut records = Vec::with_capacity(c.n_users * c.reviews_per_user);
    for u in 0..c.n_users {
        let ratings: Vec<f64> = (0..c.n_items)
            .map(|i| {
                let noise: f64 = if c.noise > 0.0 {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    c.noise * z
                } else {
                    0.0
                };
                (c.rating_offset + c.rating_scale * truth.clean_score(u, i) + noise).clamp(MIN_RATING, MAX_RATING)
            })
            .collect();
        let mut pos: Vec<usize> = (0..c.n_items).filter(|&i| ratings[i] >= POLARITY_THRESHOLD).collect();
        let mut neg: Vec<usize> = (0..c.n_items).filter(|&i| ratings[i] < POLARITY_THRESHOLD).collect();
        pos.shuffle(&mut rng);
        neg.shuffle(&mut rng);

        let mut chosen = Vec::with_capacity(c.reviews_per_user);
        for _ in 0..c.reviews_per_user {
            let want_pos = rng.random::<f64>() < c.imbalance_ratio;
            let item = match (want_pos, pos.is_empty(), neg.is_empty()) {
                (true, false, _) | (false, false, true) => pos.pop(),
                _ => neg.pop(),
            };
            chosen.push(item.expect("reviews_per_user <= n_items"));
        }
        for item in chosen {
            let rating = ratings[item];
            let positive = rating >= POLARITY_THRESHOLD;
            let weights: Vec<f64> = if positive {
                (0..a).map(|x| truth.preferred_importance[u][x] * truth.item_quality[item][x]).collect()
            } else {
                (0..a).map(|y| truth.rejected_importance[u][y] * truth.item_defect[item][y]).collect()
            };
            let pools = if positive { &truth.preferred_pools } else { &truth.rejected_pools };
            let mut words = Vec::with_capacity(c.words_per_review);
            for _ in 0..c.words_per_review {
                if fillers.is_empty() || rng.random::<f64>() < c.aspect_word_rate {
                    let aspect = pick_weighted(&mut rng, &weights);
                    let pool = &pools[aspect];
                    words.push(pool[rng.random_range(0..pool.len())].as_str());
                } else {
                    words.push(fillers[rng.random_range(0..fillers.len())].as_str());
                }
            }
            records.push(InteractionRecord {
                user_id: truth.user_ids[u].clone(),
                item_id: truth.item_ids[item].clone(),
                rating,
                review: words.join(" "),
            });
        }
    }
    Ok((records, truth))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_degenerate_config() {
        for cfg in [
            SyntheticConfig { n_users: 0, ..Default::default() },
            SyntheticConfig { n_items: 0, ..Default::default() },
            SyntheticConfig { n_aspects: 0, ..Default::default() },
            SyntheticConfig { imbalance_ratio: 1.0, ..Default::default() },
        ] {
            assert!(matches!(generate_synthetic(&cfg), Err(Error::Config(_))));
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let cfg = SyntheticConfig { n_users: 30, n_items: 40, ..Default::default() };
        let (a, _) = generate_synthetic(&cfg).unwrap();
        let (b, _) = generate_synthetic(&cfg).unwrap();
        let schema = crate::corpus::FieldSchema::amazon();
        assert_eq!(
            crate::corpus::to_json_lines(&a, &schema).into_bytes(),
            crate::corpus::to_json_lines(&b, &schema).into_bytes()
        );
    }

    #[test]
    fn imbalance_ratio_controls_positive_share() {
        let cfg = SyntheticConfig { imbalance_ratio: 0.95, n_users: 400, n_items: 100, ..Default::default() };
        let (recs, _) = generate_synthetic(&cfg).unwrap();
        let pos = recs.iter().filter(|r| r.rating >= POLARITY_THRESHOLD).count();
        let share = pos as f64 / recs.len() as f64;
        assert!(share >= 0.94, "positive share {share}");
    }

    #[test]
    fn uniform_importance_ratings_depend_on_items_only() {
        let cfg = SyntheticConfig { uniform_importance: true, n_users: 20, n_items: 30, ..Default::default() };
        let (recs, truth) = generate_synthetic(&cfg).unwrap();
        let item_index = |id: &str| truth.item_ids.iter().position(|x| x == id).unwrap();
        for r in &recs {
            let i = item_index(&r.item_id);
            let expected = (3.0 + 3.0 * truth.clean_score(0, i)).clamp(1.0, 5.0);
            assert_eq!(r.rating, expected);
        }
    }

    #[test]
    fn pairs_are_unique_per_user() {
        let (recs, _) = generate_synthetic(&SyntheticConfig { n_users: 50, ..Default::default() }).unwrap();
        let mut seen = std::collections::HashSet::new();
        assert!(recs.iter().all(|r| seen.insert((r.user_id.clone(), r.item_id.clone()))));
    }
}
