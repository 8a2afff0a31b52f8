//! End-to-end checks on a trained planted model.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rpr::corpus::{generate_synthetic, SyntheticConfig, SyntheticTruth, Vocabulary};
use rpr::eval::{classify_words, evaluate, top_aspect_words, MetricsReport};
use rpr::model::{ModelParams, Polarity, Predictor, Variant};
use rpr::train::{prepare, train, TrainConfig, TrainData};

struct Trained {
    data: TrainData,
    vocab: Vocabulary,
    truth: SyntheticTruth,
    params: ModelParams,
}

fn trained() -> &'static Trained {
    static CELL: OnceLock<Trained> = OnceLock::new();
    CELL.get_or_init(|| {
        let syn = SyntheticConfig { n_users: 300, n_items: 120, seed: 11, ..Default::default() };
        let (records, truth) = generate_synthetic(&syn).unwrap();
        let prepared = prepare(&records, 11, 16, 1, 100, false).unwrap();
        let cfg = TrainConfig {
            factors: 8,
            preferred_aspects: 2,
            rejected_aspects: 2,
            filters: 16,
            embedding_dim: 16,
            attention_hidden: 8,
            batch_size: 100,
            learning_rate: 1e-2,
            max_epochs: 40,
            patience: 10,
            dropout: 0.0,
            seed: 11,
            ..Default::default()
        };
        let outcome = train(&prepared.data, &cfg).unwrap();
        assert!(outcome.divergence.is_none());
        Trained { data: prepared.data, vocab: prepared.vocab, truth, params: outcome.params }
    })
}

/// Fraction of pool words whose majority aspect agrees with the best
/// pool-to-aspect matching (two aspects, so two candidate matchings).
fn pool_consistency(t: &Trained, side: Polarity) -> f64 {
    let pools = match side {
        Polarity::Preferred => &t.truth.preferred_pools,
        Polarity::Rejected => &t.truth.rejected_pools,
    };
    let mut votes: BTreeMap<usize, [usize; 2]> = BTreeMap::new();
    for docs in &t.data.documents {
        for (token, aspect) in classify_words(&t.params, side.document(docs), side).unwrap() {
            votes.entry(token).or_default()[aspect] += 1;
        }
    }
    let mut majority: Vec<(usize, usize)> = Vec::new();
    for (pool_index, pool) in pools.iter().enumerate() {
        for word in pool {
            if let Some(v) = t.vocab.lookup(word).and_then(|id| votes.get(&id)) {
                majority.push((pool_index, usize::from(v[1] > v[0])));
            }
        }
    }
    let identity = majority.iter().filter(|(p, a)| p == a).count();
    let swapped = majority.len() - identity;
    identity.max(swapped) as f64 / majority.len() as f64
}

#[test]
fn planted_pool_words_cluster_by_aspect() {
    let t = trained();
    for side in [Polarity::Preferred, Polarity::Rejected] {
        let c = pool_consistency(t, side);
        assert!(c >= 0.7, "{side:?}: {c}");
    }
}

#[test]
fn ranked_word_lists_are_disjoint_across_aspects() {
    let t = trained();
    for docs in t.data.documents.iter().take(50) {
        for side in [Polarity::Preferred, Polarity::Rejected] {
            let lists = top_aspect_words(&t.params, side.document(docs), side, 10).unwrap();
            let a: BTreeSet<usize> = lists[0].iter().map(|(w, _)| *w).collect();
            let b: BTreeSet<usize> = lists[1].iter().map(|(w, _)| *w).collect();
            assert!(a.is_disjoint(&b));
        }
    }
}

#[test]
fn metrics_match_scalar_loop() {
    let t = trained();
    let predictor = Predictor::new(&t.params, Variant::Base).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n_users = t.data.entities.n_users();
    let n_items = t.data.entities.n_items();
    let examples: Vec<_> = (0..1000)
        .map(|_| rpr::model::Example {
            user: rng.random_range(0..n_users),
            item: rng.random_range(0..n_items),
            rating: rng.random_range(1..=5) as f64,
        })
        .collect();
    let got = evaluate(&predictor, &t.data.documents, &examples, false).unwrap();
    let (mut se, mut ae) = (0.0, 0.0);
    for e in &examples {
        let r_hat = predictor.predict(&t.data.documents[e.user], e.user, e.item).unwrap().r_hat;
        se += (e.rating - r_hat) * (e.rating - r_hat);
        ae += (e.rating - r_hat).abs();
    }
    assert!((got.mse - se / 1000.0).abs() <= 1e-12);
    assert!((got.mae - ae / 1000.0).abs() <= 1e-12);
    assert_eq!(got.n, 1000);

    let pairs: Vec<(f64, f64)> = (0..1000).map(|_| (rng.random_range(1.0..5.0), rng.random_range(0.0..6.0))).collect();
    let m = MetricsReport::from_pairs(pairs.iter().copied());
    let mse = pairs.iter().map(|(r, p)| (r - p) * (r - p)).sum::<f64>() / 1000.0;
    let mae = pairs.iter().map(|(r, p)| (r - p).abs()).sum::<f64>() / 1000.0;
    assert!((m.mse - mse).abs() <= 1e-12 && (m.mae - mae).abs() <= 1e-12);
}

#[test]
fn trained_model_beats_constant_prediction() {
    let t = trained();
    let predictor = Predictor::new(&t.params, Variant::Base).unwrap();
    let m = evaluate(&predictor, &t.data.documents, &t.data.test, false).unwrap();
    let mean = t.data.train.iter().map(|e| e.rating).sum::<f64>() / t.data.train.len() as f64;
    let constant = MetricsReport::from_pairs(t.data.test.iter().map(|e| (e.rating, mean)));
    assert!(m.mse < constant.mse, "{} vs {}", m.mse, constant.mse);
}

