use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::kernel::{finite_diff_grad, max_relative_error, DEFAULT_STEP};

fn toy_dims(p: usize, r: usize) -> ModelDims {
    ModelDims {
        n_users: 2,
        n_items: 2,
        factors: 3,
        preferred_aspects: p,
        rejected_aspects: r,
        filters: 4,
        kernel_width: 3,
        embedding_dim: 3,
        attention_hidden: 5,
        vocab_size: 8,
    }
}

fn random_docs(n_users: usize, vocab: usize, len: usize, seed: u64) -> Vec<PolarityDocuments> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_users)
        .map(|_| PolarityDocuments {
            positive: (0..len).map(|_| rng.random_range(0..vocab)).collect(),
            negative: (0..len).map(|_| rng.random_range(0..vocab)).collect(),
        })
        .collect()
}

fn toy_batch() -> Vec<Example> {
    vec![
        Example { user: 0, item: 0, rating: 4.0 },
        Example { user: 0, item: 1, rating: 2.0 },
        Example { user: 1, item: 1, rating: 5.0 },
        Example { user: 1, item: 0, rating: 1.0 },
    ]
}

fn vec_t(v: &[f64]) -> Tensor {
    Tensor::vector(v.to_vec())
}

#[test]
fn aspect_scores_examples() {
    let m = Tensor::matrix(2, 1, vec![1.0, 1.0]).unwrap();
    let (sp, _) = aspect_scores(&vec_t(&[1.0, 2.0]), &vec_t(&[3.0, 4.0]), &m, &m).unwrap();
    assert_eq!(sp.data(), &[11.0]);

    let mv = Tensor::matrix(2, 2, vec![0.3, -1.2, 0.7, 2.0]).unwrap();
    let (sp, sr) = aspect_scores(&vec_t(&[1.0, 2.0]), &vec_t(&[0.0, 0.0]), &mv, &mv).unwrap();
    assert!(sp.data().iter().chain(sr.data()).all(|x| *x == 0.0));
    let (sp, sr) = aspect_scores(&vec_t(&[0.4, -2.0]), &vec_t(&[1.5, 0.1]), &mv, &mv).unwrap();
    assert_eq!(sp, sr);
}

#[test]
fn empty_document_is_uniform() {
    let params = ModelParams::random_uniform(toy_dims(3, 2), 4, 0.5).unwrap();
    for variant in [Variant::Base, Variant::CoarseGrained] {
        let rho = extract_importance(&params, &[], Polarity::Preferred, variant).unwrap();
        assert_eq!(rho.data(), &[1.0 / 3.0; 3]);
    }
}

#[test]
fn zero_head_is_uniform() {
    let mut params = ModelParams::random_uniform(toy_dims(2, 2), 5, 0.5).unwrap();
    params[ParamId::PreferredHeadWeight] = Tensor::zeros(&[2, 4]);
    params[ParamId::PreferredHeadBias] = Tensor::zeros(&[2]);
    let rho = extract_importance(&params, &[1, 2, 3, 1], Polarity::Preferred, Variant::Base).unwrap();
    assert_eq!(rho.data(), &[0.5, 0.5]);
}

#[test]
fn one_word_document_hand_built() {
    let dims = ModelDims { filters: 1, kernel_width: 1, embedding_dim: 1, vocab_size: 3, ..toy_dims(2, 2) };
    let mut params = ModelParams::zeros(dims).unwrap();
    params[ParamId::WordEmbeddings] = Tensor::matrix(3, 1, vec![1.0, 0.0, 0.0]).unwrap();
    params[ParamId::ConvKernel] = Tensor::matrix(1, 1, vec![1.0]).unwrap();
    params[ParamId::PreferredHeadWeight] = Tensor::matrix(2, 1, vec![2f64.ln(), 0.0]).unwrap();
    let rho = extract_importance(&params, &[0], Polarity::Preferred, Variant::Base).unwrap();
    assert!((rho.data()[0] - 2.0 / 3.0).abs() < 1e-15);
    assert!((rho.data()[1] - 1.0 / 3.0).abs() < 1e-15);
}

#[test]
fn attention_examples() {
    let mut params = ModelParams::random_uniform(toy_dims(3, 2), 8, 0.7).unwrap();
    params[ParamId::AttentionVector] = Tensor::zeros(&[5]);
    let phi = attention_map(&params, Direction::RejectedAttendsPreferred).unwrap();
    assert_eq!(phi.shape(), &[3, 2]);
    assert!(phi.data().iter().all(|x| *x == 1.0 / 3.0));

    let params = ModelParams::random_uniform(toy_dims(1, 3), 9, 0.7).unwrap();
    let phi = attention_map(&params, Direction::RejectedAttendsPreferred).unwrap();
    assert_eq!(phi.data(), &[1.0, 1.0, 1.0]);
}

/// Scalar-loop recomputation of the attention logits.
fn scalar_logit(params: &ModelParams, x: usize, y: usize) -> f64 {
    let d = params.dims();
    let (m, v) = (&params[ParamId::PreferredIndicators], &params[ParamId::RejectedIndicators]);
    let (wa, ba, ha) = (&params[ParamId::AttentionWeight], &params[ParamId::AttentionBias], &params[ParamId::AttentionVector]);
    let mut out = 0.0;
    for k in 0..d.attention_hidden {
        let mut pre = ba.data()[k];
        for j in 0..d.factors {
            pre += wa.get2(k, j) * v.get2(j, y) * m.get2(j, x);
        }
        out += ha.data()[k] * pre.max(0.0);
    }
    out
}

#[test]
fn attention_matches_scalar_loop() {
    let params = ModelParams::random_uniform(toy_dims(3, 4), 10, 0.9).unwrap();
    let phi = attention_map(&params, Direction::RejectedAttendsPreferred).unwrap();
    let psi = attention_map(&params, Direction::PreferredAttendsRejected).unwrap();
    assert_eq!(psi.shape(), &[4, 3]);
    for y in 0..4 {
        let logits: Vec<f64> = (0..3).map(|x| scalar_logit(&params, x, y)).collect();
        let z: f64 = logits.iter().map(|l| l.exp()).sum();
        for x in 0..3 {
            assert!((phi.get2(x, y) - logits[x].exp() / z).abs() < 1e-12);
        }
        let col: f64 = (0..3).map(|x| phi.get2(x, y)).sum();
        assert!((col - 1.0).abs() < 1e-12);
    }
    for x in 0..3 {
        let logits: Vec<f64> = (0..4).map(|y| scalar_logit(&params, x, y)).collect();
        let z: f64 = logits.iter().map(|l| l.exp()).sum();
        for y in 0..4 {
            assert!((psi.get2(y, x) - logits[y].exp() / z).abs() < 1e-12);
        }
    }
}

#[test]
fn enhance_examples() {
    let uniform_cols = Tensor::full(&[2, 3], 0.5);
    let psi = Tensor::full(&[3, 2], 1.0 / 3.0);
    let e = enhance_importance(&vec_t(&[0.2, 0.8]), &vec_t(&[0.1, 0.3, 0.6]), &uniform_cols, &psi).unwrap();
    assert!(e.mu_r.data().iter().all(|x| (x - 0.5).abs() < 1e-15));

    let e = enhance_importance(&vec_t(&[0.0, 0.0]), &vec_t(&[0.1, 0.3, 0.6]), &uniform_cols, &psi).unwrap();
    assert!(e.mu_r.data().iter().all(|x| *x == 0.0));
    assert_eq!(e.rho_r_plus.data(), &[0.1, 0.3, 0.6]);

    let eye = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    let e = enhance_importance(&vec_t(&[0.7, 0.3]), &vec_t(&[0.5, 0.5]), &eye, &eye).unwrap();
    assert_eq!(e.mu_r.data(), &[0.7, 0.3]);
}

#[test]
fn predict_examples() {
    let r = predict_rating(&vec_t(&[1.0, 0.0]), &vec_t(&[2.0, 5.0]), &vec_t(&[0.5, 0.5]), &vec_t(&[1.0, 1.0])).unwrap();
    assert_eq!(r, 1.0);
    let z = vec_t(&[0.0, 0.0]);
    assert_eq!(predict_rating(&vec_t(&[0.3, 0.9]), &z, &vec_t(&[0.2, 0.1]), &z).unwrap(), 0.0);
}

#[test]
fn loss_examples() {
    let dims = toy_dims(2, 2);
    let docs = random_docs(2, 8, 5, 1);
    let opts = ModelOptions::default();
    let mut params = ModelParams::random_uniform(dims, 2, 0.5).unwrap();
    params[ParamId::ItemFactors] = Tensor::zeros(&[2, 3]);
    let zero_pred = [Example { user: 0, item: 1, rating: 0.0 }];
    assert_eq!(loss(&params, &docs, &zero_pred, RegConfig::default(), opts).unwrap(), 0.0);
    let residual_two = [Example { user: 1, item: 0, rating: 2.0 }];
    assert_eq!(loss(&params, &docs, &residual_two, RegConfig::default(), opts).unwrap(), 2.0);

    let signs = vec![0.5, -0.5, -0.5, 0.5, 0.5, 0.5];
    params[ParamId::PreferredIndicators] = Tensor::matrix(3, 2, signs.clone()).unwrap();
    params[ParamId::RejectedIndicators] = Tensor::matrix(3, 2, signs).unwrap();
    let reg = RegConfig { beta1: 1.0, beta2: 0.0 };
    // six entries per matrix here, so the L1 sum is 2 · 6 · 0.5
    assert_eq!(loss(&params, &docs, &zero_pred, reg, opts).unwrap(), 6.0);
    let small = ModelDims { factors: 2, ..dims };
    let mut params = ModelParams::random_uniform(small, 2, 0.5).unwrap();
    params[ParamId::ItemFactors] = Tensor::zeros(&[2, 2]);
    let four = vec![0.5, -0.5, 0.5, -0.5];
    params[ParamId::PreferredIndicators] = Tensor::matrix(2, 2, four.clone()).unwrap();
    params[ParamId::RejectedIndicators] = Tensor::matrix(2, 2, four).unwrap();
    assert_eq!(loss(&params, &docs, &zero_pred, reg, opts).unwrap(), 4.0);
}

#[test]
fn l1_subgradient_zero_at_zero() {
    let dims = toy_dims(2, 2);
    let docs = random_docs(2, 8, 5, 3);
    let mut params = ModelParams::random_uniform(dims, 3, 0.5).unwrap();
    params[ParamId::PreferredIndicators] = Tensor::zeros(&[3, 2]);
    params[ParamId::RejectedIndicators] = Tensor::zeros(&[3, 2]);
    let opts = ModelOptions::default();
    let run = |beta1| {
        let out = forward_backward(&params, &docs, &toy_batch(), RegConfig { beta1, beta2: 0.0 }, opts, None, 0).unwrap();
        dense_grads(&out.grads, &params)
    };
    assert_eq!(run(0.0), run(1.0));
}

#[test]
fn l2_gradient_scales_with_beta2() {
    let dims = toy_dims(2, 2);
    let docs = random_docs(2, 8, 5, 4);
    let params = ModelParams::random_uniform(dims, 4, 0.5).unwrap();
    let opts = ModelOptions::default();
    let run = |beta2| {
        let out = forward_backward(&params, &docs, &toy_batch(), RegConfig { beta1: 0.0, beta2 }, opts, None, 0).unwrap();
        dense_grads(&out.grads, &params)
    };
    let (g0, g1, g2) = (run(0.0), run(0.3), run(0.6));
    for t in 0..g0.len() {
        for c in 0..g0[t].len() {
            let d1 = g1[t].data()[c] - g0[t].data()[c];
            let d2 = g2[t].data()[c] - g0[t].data()[c];
            assert!((d2 - 2.0 * d1).abs() <= 1e-12 * (1.0 + d1.abs()), "tensor {t} coord {c}");
        }
    }
}

#[test]
fn tape_and_predictor_agree_bit_exactly() {
    for variant in Variant::ALL {
        let dims = toy_dims(2, 3);
        let params = ModelParams::random_uniform(dims, 11, 0.6).unwrap();
        let mut docs = random_docs(2, 8, 5, 11);
        docs[1].negative.clear();
        let opts = ModelOptions { variant, ..Default::default() };
        let out = forward_backward(&params, &docs, &toy_batch(), RegConfig::default(), opts, None, 0).unwrap();
        let pred = Predictor::new(&params, variant).unwrap();
        for (ex, tape_value) in toy_batch().iter().zip(&out.predictions) {
            let prof = pred.predict(&docs[ex.user], ex.user, ex.item).unwrap();
            assert_eq!(prof.r_hat.to_bits(), tape_value.to_bits(), "{variant}");
        }
    }
}

#[test]
fn profile_invariants() {
    let params = ModelParams::random_uniform(toy_dims(3, 2), 12, 0.8).unwrap();
    let docs = random_docs(2, 8, 6, 12);
    let pred = Predictor::new(&params, Variant::Base).unwrap();
    let p = pred.predict(&docs[0], 0, 1).unwrap();
    for (plus, raw, mu) in [(&p.rho_p_plus, &p.rho_p, &p.mu_p), (&p.rho_r_plus, &p.rho_r, &p.mu_r)] {
        assert!((raw.sum() - 1.0).abs() < 1e-9);
        for k in 0..raw.len() {
            assert_eq!(plus.data()[k], raw.data()[k] + mu.data()[k]);
        }
    }
    assert!((p.r_hat - (p.positive_term() - p.negative_term())).abs() < 1e-12);
}

fn swap_polarity(params: &ModelParams) -> ModelParams {
    let d = *params.dims();
    let dims = ModelDims { preferred_aspects: d.rejected_aspects, rejected_aspects: d.preferred_aspects, ..d };
    let mut swapped = ModelParams::zeros(dims).unwrap();
    for (id, t) in params.iter() {
        let target = match id {
            ParamId::PreferredIndicators => ParamId::RejectedIndicators,
            ParamId::RejectedIndicators => ParamId::PreferredIndicators,
            ParamId::PreferredHeadWeight => ParamId::RejectedHeadWeight,
            ParamId::RejectedHeadWeight => ParamId::PreferredHeadWeight,
            ParamId::PreferredHeadBias => ParamId::RejectedHeadBias,
            ParamId::RejectedHeadBias => ParamId::PreferredHeadBias,
            other => other,
        };
        swapped.set(target, t.clone()).unwrap();
    }
    swapped
}

#[test]
fn polarity_swap_negates_prediction() {
    for seed in 0..5 {
        let params = ModelParams::random_uniform(toy_dims(2, 3), 20 + seed, 0.8).unwrap();
        let docs = random_docs(2, 8, 5, seed);
        let swapped = swap_polarity(&params);
        let flipped: Vec<PolarityDocuments> = docs
            .iter()
            .map(|d| PolarityDocuments { positive: d.negative.clone(), negative: d.positive.clone() })
            .collect();
        let a = Predictor::new(&params, Variant::Base).unwrap();
        let b = Predictor::new(&swapped, Variant::Base).unwrap();
        for (u, i) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            let ra = a.predict(&docs[u], u, i).unwrap().r_hat;
            let rb = b.predict(&flipped[u], u, i).unwrap().r_hat;
            assert!((ra + rb).abs() < 1e-12, "{ra} vs {rb}");
        }
    }
}

#[test]
fn uniform_importance_is_mean_difference() {
    let params = ModelParams::random_uniform(toy_dims(3, 3), 30, 0.8).unwrap();
    let docs = random_docs(2, 8, 5, 30);
    let prof = Predictor::new(&params, Variant::UniformImportance).unwrap().predict(&docs[1], 1, 0).unwrap();
    let expected = prof.s_p.sum() / 3.0 - prof.s_r.sum() / 3.0;
    assert!((prof.r_hat - expected).abs() < 1e-12);
}

#[test]
fn no_offset_empty_negative_document() {
    let params = ModelParams::random_uniform(toy_dims(2, 4), 31, 0.8).unwrap();
    let docs = PolarityDocuments { positive: vec![1, 2, 3], negative: vec![] };
    let prof = Predictor::new(&params, Variant::NoOffset).unwrap().predict(&docs, 0, 0).unwrap();
    assert_eq!(prof.rho_r.data(), &[0.25; 4]);
    assert_eq!(prof.rho_r_plus, prof.rho_r);
    assert!(prof.mu_r.data().iter().all(|x| *x == 0.0));
}

#[test]
fn zero_maps_reduce_base_to_no_offset() {
    let params = ModelParams::random_uniform(toy_dims(2, 3), 32, 0.8).unwrap();
    let docs = random_docs(2, 8, 5, 32);
    let base = Predictor::with_maps(&params, Variant::Base, Tensor::zeros(&[2, 3]), Tensor::zeros(&[3, 2])).unwrap();
    let plain = Predictor::new(&params, Variant::NoOffset).unwrap();
    for (u, i) in [(0, 0), (1, 1), (0, 1)] {
        assert_eq!(base.predict(&docs[u], u, i).unwrap().r_hat, plain.predict(&docs[u], u, i).unwrap().r_hat);
    }
}

#[test]
fn out_of_range_token_is_index_error() {
    let params = ModelParams::random_uniform(toy_dims(2, 2), 33, 0.5).unwrap();
    let err = extract_importance(&params, &[99], Polarity::Rejected, Variant::Base).unwrap_err();
    assert!(matches!(err, Error::Index { id: 99, .. }));
}

#[test]
fn non_finite_loss_is_divergence() {
    let mut params = ModelParams::random_uniform(toy_dims(2, 2), 34, 0.5).unwrap();
    params[ParamId::UserFactors].data_mut()[0] = 1e200;
    params[ParamId::ItemFactors].data_mut()[0] = 1e200;
    let docs = random_docs(2, 8, 5, 34);
    let err = forward_backward(&params, &docs, &toy_batch(), RegConfig::default(), ModelOptions::default(), None, 7)
        .unwrap_err();
    assert!(matches!(err, Error::Divergence { batch: 7 }));
}

fn gradcheck(variant: Variant, seed: u64) -> f64 {
    let dims = toy_dims(2, 2);
    let mut params = ModelParams::random_uniform(dims, seed, 0.5).unwrap();
    let docs = random_docs(2, 8, 5, seed + 100);
    let reg = RegConfig { beta1: 0.01, beta2: 0.05 };
    let opts = ModelOptions { variant, dropout: 0.0, train_embeddings: true };
    let batch = toy_batch();
    let out = forward_backward(&params, &docs, &batch, reg, opts, None, 0).unwrap();
    let analytic = dense_grads(&out.grads, &params);
    let numeric = finite_diff_grad(&mut params, |p| loss(p, &docs, &batch, reg, opts).unwrap(), DEFAULT_STEP).unwrap();
    max_relative_error(&analytic, &numeric)
}

#[test]
fn gradients_match_finite_differences_per_variant() {
    for variant in Variant::ALL {
        let err = gradcheck(variant, 41);
        assert!(err < 1e-4, "{variant}: {err}");
    }
}

#[test]
fn dropout_masks_are_deterministic() {
    let params = ModelParams::random_uniform(toy_dims(2, 2), 50, 0.5).unwrap();
    let docs = random_docs(2, 8, 5, 50);
    let opts = ModelOptions { dropout: 0.5, ..Default::default() };
    let run = |seed| forward_backward(&params, &docs, &toy_batch(), RegConfig::default(), opts, Some(seed), 0).unwrap();
    assert_eq!(run(9).loss.to_bits(), run(9).loss.to_bits());
    let plain = forward_backward(&params, &docs, &toy_batch(), RegConfig::default(), opts, None, 0).unwrap();
    assert_ne!(run(9).loss, plain.loss);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn importance_and_maps_on_simplex(seed in 0u64..10_000, p in 1usize..5, r in 1usize..5, len in 0usize..9) {
        let params = ModelParams::random_uniform(toy_dims(p, r), seed, 1.5).unwrap();
        let doc: Vec<usize> = random_docs(1, 8, len, seed)[0].positive.clone();
        for (side, variant) in [(Polarity::Preferred, Variant::Base), (Polarity::Rejected, Variant::CoarseGrained)] {
            let rho = extract_importance(&params, &doc, side, variant).unwrap();
            prop_assert!(rho.data().iter().all(|x| *x >= 0.0));
            prop_assert!((rho.sum() - 1.0).abs() < 1e-9);
        }
        for dir in [Direction::RejectedAttendsPreferred, Direction::PreferredAttendsRejected] {
            let map = attention_map(&params, dir).unwrap();
            for c in 0..map.cols() {
                let col: f64 = (0..map.rows()).map(|x| map.get2(x, c)).sum();
                prop_assert!((col - 1.0).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn toy_certification_is_deterministic_and_tight() {
    let a = certify_default(3, Variant::Base).unwrap();
    let b = certify_default(3, Variant::Base).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.per_param.len(), ParamId::ALL.len());
    assert!(a.max < 1e-4, "{:?}", a.per_param);
    let inst = toy_instance(3).unwrap();
    assert!(inst.docs.iter().all(|d| d.positive.len() == TOY_DOC_LEN && d.negative.len() == TOY_DOC_LEN));
    assert_eq!(inst.batch.len(), 4);
    assert!(kink_distance(&inst.params, &inst.docs).unwrap() >= KINK_MARGIN);
}

