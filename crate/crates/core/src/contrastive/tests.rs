use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::tests::{assert_close, numeric_grad};
use crate::graph::batch_graphs;
use crate::model::ModelConfig;
use crate::rng::Seed;

fn sessions(lasts: &[usize]) -> Vec<Session> {
    lasts.iter().map(|&l| Session::new(vec![9, l], 1).unwrap()).collect()
}

fn loss_value(anchor: &[f64], positive: &[f64], negs: &[Vec<f64>], tau: f64, literal: bool) -> f64 {
    let d = anchor.len();
    let mut tape = Tape::new(Mode::Eval);
    let a = tape.constant(Tensor::matrix(1, d, anchor.to_vec()).unwrap());
    let p = tape.constant(Tensor::matrix(1, d, positive.to_vec()).unwrap());
    let n = Negatives {
        vectors: negs.to_vec(),
        ..Negatives::default()
    };
    let l = contrastive_loss(&mut tape, a, p, &[n], tau, literal).unwrap();
    tape.value(l).item()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

#[test]
fn no_negatives_means_zero_loss() {
    assert_eq!(loss_value(&[1.0, 2.0], &[0.5, -1.0], &[], 12.0, false), 0.0);
}

#[test]
fn hand_computed_example() {
    let l = loss_value(&[1.0, 0.0], &[2.0, 0.0], &[vec![-3.0, 0.0]], 1.0, false);
    // -ln(e / (e + 1/e)) = ln(1 + e^-2)
    let expected = (1.0 + (-2.0f64).exp()).ln();
    assert!((l - expected).abs() < 1e-12);
    assert!((l - 0.1269).abs() < 5e-5);
}

#[test]
fn loss_falls_as_positive_similarity_rises() {
    let negs = vec![vec![0.2, 1.0], vec![-1.0, 0.4]];
    let mut prev = f64::INFINITY;
    for step in 0..=10 {
        let angle = std::f64::consts::PI * (1.0 - step as f64 / 10.0);
        let l = loss_value(&[1.0, 0.0], &[angle.cos(), angle.sin()], &negs, 0.5, false);
        assert!(l < prev);
        prev = l;
    }
}

#[test]
fn literal_denominator_matches_formula() {
    let (a, p) = ([0.3, -1.0, 0.2], [0.1, -0.8, 0.6]);
    let negs = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 1.0], vec![-0.5, 0.1, 0.3]];
    let tau = 0.7;
    let pos = (cosine(&a, &p) / tau).exp();
    let sum: f64 = negs.iter().map(|n| pos + (cosine(&a, n) / tau).exp()).sum();
    let expected = -(pos / sum).ln();
    let got = loss_value(&a, &p, &negs, tau, true);
    assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
}

#[test]
fn rejects_non_positive_temperature() {
    let mut tape = Tape::new(Mode::Eval);
    let a = tape.constant(Tensor::matrix(1, 2, vec![1.0, 0.0]).unwrap());
    assert!(matches!(
        contrastive_loss(&mut tape, a, a, &[Negatives::default()], 0.0, false),
        Err(Error::Contract(_))
    ));
}

#[test]
fn batch_loss_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut random =
        |r: usize, c: usize| Tensor::matrix(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let (a, p) = (random(3, 4), random(3, 4));
    let pool = random(5, 4);
    let negs: Vec<Negatives> = [3usize, 0, 5]
        .iter()
        .map(|&k| Negatives {
            vectors: (0..k).map(|j| pool.row(j).to_vec()).collect(),
            ..Negatives::default()
        })
        .collect();
    for literal in [false, true] {
        let build = |tape: &mut Tape, xs: &[Var]| contrastive_loss(tape, xs[0], xs[1], &negs, 0.5, literal).unwrap();
        let eval = |xs: &[Tensor]| {
            let mut tape = Tape::new(Mode::Eval);
            let v: Vec<Var> = xs.iter().map(|x| tape.variable(x.clone())).collect();
            let l = build(&mut tape, &v);
            tape.value(l).item()
        };
        let mut tape = Tape::new(Mode::Eval);
        let v = [tape.variable(a.clone()), tape.variable(p.clone())];
        let l = build(&mut tape, &v);
        let g = tape.backward(l).unwrap();
        let numeric = numeric_grad(&eval, &[a.clone(), p.clone()], 1e-3);
        assert_close(g.wrt(&tape, v[0]).data(), &numeric[0], "anchors");
        assert_close(g.wrt(&tape, v[1]).data(), &numeric[1], "positives");
    }
}

proptest! {
    #[test]
    fn loss_is_non_negative(
        a in prop::collection::vec(-1.0f64..1.0, 3),
        p in prop::collection::vec(-1.0f64..1.0, 3),
        negs in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 3), 0..6),
        tau in 0.25f64..20.0,
    ) {
        prop_assume!(a.iter().any(|x| x.abs() > 1e-3) && p.iter().any(|x| x.abs() > 1e-3));
        let l = loss_value(&a, &p, &negs, tau, false);
        prop_assert!(l >= 0.0);
        prop_assert_eq!(l == 0.0, negs.is_empty());
    }

    #[test]
    fn last_item_index_is_consistent(lasts in prop::collection::vec(1usize..6, 1..40)) {
        let bank = MemoryBank::new(&sessions(&lasts), 2);
        for (id, &last) in lasts.iter().enumerate() {
            for item in 1..6 {
                let listed = bank.sessions_ending_in(item).contains(&id);
                prop_assert_eq!(listed, item == last);
            }
        }
    }
}

#[test]
fn bank_starts_invalid_and_rejects_unknown_ids() {
    let mut bank = MemoryBank::new(&sessions(&[1, 1, 2]), 2);
    assert_eq!(bank.len(), 3);
    assert_eq!(bank.valid_count(), 0);
    assert!(bank.entry(0).is_none());
    assert!(matches!(bank.update(3, &[0.0; 2], &[0.0; 2]), Err(Error::Contract(_))));
    assert!(matches!(
        bank.update(0, &[0.0; 3], &[0.0; 2]),
        Err(Error::Dimension { .. })
    ));
    let mut rng = Seed(1).stream("negatives");
    let n = sample_negatives(&bank, 0, 4, NegativeStrategy::SameLastItem, &mut rng).unwrap();
    assert!(n.is_empty());
}

#[test]
fn single_partner_is_returned_exactly() {
    let mut bank = MemoryBank::new(&sessions(&[1, 2, 1]), 2);
    bank.update(1, &[5.0, 5.0], &[6.0, 6.0]).unwrap();
    bank.update(2, &[1.0, 2.0], &[3.0, 4.0]).unwrap();
    let mut rng = Seed(1).stream("negatives");
    let n = sample_negatives(&bank, 0, 32, NegativeStrategy::SameLastItem, &mut rng).unwrap();
    assert_eq!(n.sessions, vec![2]);
    assert_eq!(n.vectors, vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
    assert!(!n.fallback);

    bank.update(2, &[7.0, 8.0], &[9.0, 0.0]).unwrap();
    let n = sample_negatives(&bank, 0, 32, NegativeStrategy::SameLastItem, &mut rng).unwrap();
    assert_eq!(n.vectors, vec![vec![7.0, 8.0], vec![9.0, 0.0]]);
}

#[test]
fn self_only_bank_takes_fallback_path() {
    let mut bank = MemoryBank::new(&sessions(&[1]), 2);
    bank.update(0, &[1.0, 0.0], &[0.0, 1.0]).unwrap();
    let mut rng = Seed(1).stream("negatives");
    let n = sample_negatives(&bank, 0, 4, NegativeStrategy::SameLastItem, &mut rng).unwrap();
    assert!(n.fallback);
    assert!(n.is_empty());
}

#[test]
fn fallback_uses_other_valid_sessions() {
    let mut bank = MemoryBank::new(&sessions(&[1, 2, 3, 3]), 1);
    bank.update(1, &[1.0], &[1.0]).unwrap();
    bank.update(3, &[2.0], &[2.0]).unwrap();
    let mut rng = Seed(1).stream("negatives");
    let mut n = sample_negatives(&bank, 0, 4, NegativeStrategy::SameLastItem, &mut rng).unwrap();
    assert!(n.fallback);
    n.sessions.sort();
    assert_eq!(n.sessions, vec![1, 3]);
}

#[test]
fn seeded_subset_is_reproducible() {
    let mut bank = MemoryBank::new(&sessions(&[4; 11]), 1);
    for id in 0..11 {
        bank.update(id, &[id as f64], &[-(id as f64)]).unwrap();
    }
    let draw = || {
        let mut rng = Seed(8).stream("negatives");
        sample_negatives(&bank, 0, 2, NegativeStrategy::SameLastItem, &mut rng).unwrap()
    };
    let n = draw();
    assert_eq!(n.sessions.len(), 2);
    assert_eq!(n.vectors.len(), 4);
    assert!(!n.sessions.contains(&0));
    assert_eq!(n, draw());
}

#[test]
fn random_strategy_ignores_last_item() {
    let mut bank = MemoryBank::new(&sessions(&[1, 2, 3, 1]), 1);
    for id in 0..4 {
        bank.update(id, &[1.0], &[1.0]).unwrap();
    }
    let mut rng = Seed(2).stream("negatives");
    let mut n = sample_negatives(&bank, 0, 10, NegativeStrategy::Random, &mut rng).unwrap();
    n.sessions.sort();
    assert_eq!(n.sessions, vec![1, 2, 3]);
    assert!(!n.fallback);
}

fn twin_setup(dropout: f64) -> (Model, GraphBatch) {
    let cfg = ModelConfig {
        dim: 8,
        dropout,
        ..ModelConfig::default()
    };
    let model = Model::new(cfg, 6, Seed(4)).unwrap();
    let s: Vec<Session> = (0..100)
        .map(|i| Session::new(vec![1 + i % 6, 1 + (i / 6) % 6, 1 + (i * 7) % 6], 1).unwrap())
        .collect();
    (model, batch_graphs(&s).unwrap())
}

#[test]
fn twins_need_training_mode() {
    let (model, batch) = twin_setup(0.1);
    let mut tape = Tape::new(Mode::Eval);
    let p = model.bind(&mut tape);
    let mut rng = Seed(0).stream("dropout");
    assert!(matches!(
        twin_forward(&model, &mut tape, &p, &batch, &mut rng),
        Err(Error::Contract(_))
    ));
}

#[test]
fn twins_without_dropout_coincide() {
    let (model, batch) = twin_setup(0.0);
    let mut tape = Tape::new(Mode::Train);
    let p = model.bind(&mut tape);
    let mut rng = Seed(0).stream("dropout");
    let (a, b) = twin_forward(&model, &mut tape, &p, &batch, &mut rng).unwrap();
    assert_eq!(tape.value(a.hybrid), tape.value(b.hybrid));
}

#[test]
fn twins_with_dropout_differ() {
    let (model, batch) = twin_setup(0.1);
    let mut tape = Tape::new(Mode::Train);
    let p = model.bind(&mut tape);
    let mut rng = Seed(0).stream("dropout");
    let (a, b) = twin_forward(&model, &mut tape, &p, &batch, &mut rng).unwrap();
    let (a, b) = (tape.value(a.hybrid), tape.value(b.hybrid));
    let differ = (0..a.rows()).filter(|&r| a.row(r) != b.row(r)).count();
    assert!(differ >= 99, "{differ} of 100 pairs differ");
    for r in 0..a.rows() {
        let c = cosine(a.row(r), b.row(r));
        assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&c));
    }
}

#[test]
fn bank_update_writes_rows() {
    let mut bank = MemoryBank::new(&sessions(&[1, 2, 3]), 2);
    let f1 = Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let f2 = Tensor::matrix(2, 2, vec![5.0, 6.0, 7.0, 8.0]).unwrap();
    bank_update(&mut bank, &[2, 0], &f1, &f2).unwrap();
    assert_eq!(bank.entry(2), Some((&[1.0, 2.0][..], &[5.0, 6.0][..])));
    assert_eq!(bank.entry(0), Some((&[3.0, 4.0][..], &[7.0, 8.0][..])));
    assert_eq!(bank.valid_count(), 2);
    assert!(bank_update(&mut bank, &[1], &f1, &f2).is_err());
}

#[test]
fn config_validation() {
    assert!(ContrastiveConfig::default().validate().is_ok());
    assert!(ContrastiveConfig {
        temperature: 0.0,
        ..Default::default()
    }
    .validate()
    .is_err());
    assert!(ContrastiveConfig {
        negatives: 0,
        ..Default::default()
    }
    .validate()
    .is_err());
    assert!(ContrastiveConfig {
        beta: -1.0,
        ..Default::default()
    }
    .validate()
    .is_err());
    assert!(!ContrastiveConfig {
        beta: 0.0,
        ..Default::default()
    }
    .active());
    assert!(!ContrastiveConfig {
        enabled: false,
        ..Default::default()
    }
    .active());
}
