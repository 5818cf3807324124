use super::*;
use crate::data::generate_synthetic;
use crate::tensor::Tensor;

fn loss_of(logits: &[f64], cols: usize, targets: &[usize]) -> (f64, usize) {
    let mut tape = Tape::new(Mode::Eval);
    let x = tape.constant(Tensor::matrix(targets.len(), cols, logits.to_vec()).unwrap());
    let (l, clamped) = prediction_loss(&mut tape, x, targets).unwrap();
    (tape.value(l).item(), clamped)
}

fn small(seed: u64) -> TrainConfig {
    let mut c = TrainConfig {
        seed,
        ..TrainConfig::default()
    };
    c.model.dim = 8;
    c.schedule.epochs = 2;
    c.schedule.batch_size = 5;
    c.schedule.validation_fraction = 0.0;
    c
}

fn toy(n: usize, seed: u64) -> (Vec<Session>, usize) {
    let d = generate_synthetic(10, n, 1.0, 0.3, seed).unwrap();
    let m = d.num_items();
    (d.train, m)
}

#[test]
fn prediction_loss_examples() {
    assert_eq!(loss_of(&[0.0, -800.0], 2, &[0]).0, 0.0);
    let (l, _) = loss_of(&[0.3; 7], 7, &[4]);
    assert!((l - 7f64.ln()).abs() < 1e-12);
    // softmax([ln 3, 0]) = [0.75, 0.25]
    let (l, _) = loss_of(&[3f64.ln(), 0.0], 2, &[0]);
    assert!((l - 0.2877).abs() < 5e-5);
    assert!((l + 0.75f64.ln()).abs() < 1e-12);
    let (l, clamped) = loss_of(&[0.0, -1e4, 0.0, 0.0], 2, &[1, 0]);
    assert_eq!(clamped, 1);
    assert!((l - (-(1e-12f64).ln() - 0.5f64.ln()) / 2.0).abs() < 1e-9);
}

#[test]
fn total_loss_examples() {
    let mut tape = Tape::new(Mode::Eval);
    let pred = tape.constant(Tensor::scalar(1.0));
    let con = tape.constant(Tensor::scalar(2.0));
    let w = tape.variable(Tensor::zeros(&[3, 2]));
    let l = total_loss(&mut tape, pred, Some(con), 0.0, 0.0, &[w]).unwrap();
    assert_eq!(tape.value(l).item(), 1.0);
    let l = total_loss(&mut tape, pred, Some(con), 0.0, 0.5, &[w]).unwrap();
    assert_eq!(tape.value(l).item(), 1.0);
    let l = total_loss(&mut tape, pred, Some(con), 0.1, 0.0, &[w]).unwrap();
    assert!((tape.value(l).item() - 1.2).abs() < 1e-15);
}

#[test]
fn regularizer_gradient_is_two_lambda_theta() {
    let model = Model::new(
        ModelConfig {
            dim: 5,
            ..ModelConfig::default()
        },
        6,
        Seed(3),
    )
    .unwrap();
    let lambda = 1e-5;
    let mut tape = Tape::new(Mode::Train);
    let bound = model.bind(&mut tape);
    let zero = tape.constant(Tensor::scalar(0.0));
    let params = regularized(&mut tape, &bound).unwrap();
    let l = total_loss(&mut tape, zero, None, 0.0, lambda, &params).unwrap();
    let grads = tape.backward(l).unwrap().for_store(&model.params);
    for ((name, theta), g) in model.params.iter().zip(&grads) {
        for (r, (gr, tr)) in g
            .data()
            .chunks(theta.cols())
            .zip(theta.data().chunks(theta.cols()))
            .enumerate()
        {
            for (&gv, &tv) in gr.iter().zip(tr) {
                let expected = if name == "item_embeddings" && r == 0 {
                    0.0
                } else {
                    2.0 * lambda * tv
                };
                assert_eq!(gv, expected, "{name} row {r}");
            }
        }
    }
}

#[test]
fn learning_rate_schedule() {
    let s = Schedule::default();
    let lrs: Vec<f64> = (1..=13).map(|e| s.lr_at(e)).collect();
    assert_eq!(
        lrs,
        vec![1e-3, 1e-3, 1e-3, 1e-4, 1e-4, 1e-4, 1e-5, 1e-5, 1e-5, 1e-6, 1e-6, 1e-6, 1e-7]
    );
    let flat = Schedule {
        lr_decay: 1.0,
        ..Schedule::default()
    };
    assert_eq!(flat.lr_at(30), 1e-3);
    let half = Schedule {
        lr_decay: 0.5,
        lr_decay_every: 1,
        ..Schedule::default()
    };
    assert_eq!(half.lr_at(3), 2.5e-4);
}

#[test]
fn ten_sessions_batch_five_is_two_steps() {
    let (sessions, m) = toy(30, 1);
    let mut cfg = small(1);
    cfg.schedule.epochs = 1;
    let out = train(&sessions[..10], m, &cfg).unwrap();
    assert_eq!(out.report.epochs[0].steps, 2);
    assert_eq!(out.report.summary.steps, 2);
}

#[test]
fn same_seed_same_report() {
    let (sessions, m) = toy(40, 2);
    let mut cfg = small(5);
    cfg.schedule.validation_fraction = 0.2;
    let a = train(&sessions, m, &cfg).unwrap();
    let b = train(&sessions, m, &cfg).unwrap();
    assert_eq!(a.report.without_timing(), b.report.without_timing());
    assert_eq!(a.model, b.model);
    assert_eq!(a.valid_ids, b.valid_ids);
    assert!(a.report.epochs.iter().all(|e| e.valid_recall.is_some()));
    let c = train(&sessions, m, &TrainConfig { seed: 6, ..cfg }).unwrap();
    assert_ne!(a.model, c.model);
}

#[test]
fn zero_beta_matches_disabled_contrast() {
    let (sessions, m) = toy(40, 3);
    let mut zero_beta = small(7);
    zero_beta.contrastive.beta = 0.0;
    let mut off = small(7);
    off.contrastive.enabled = false;
    let a = train(&sessions, m, &zero_beta).unwrap();
    let b = train(&sessions, m, &off).unwrap();
    assert_eq!(a.report.without_timing(), b.report.without_timing());
    assert_eq!(a.model, b.model);
}

#[test]
fn flags_switch_their_own_paths() {
    let (sessions, m) = toy(40, 4);
    let on = train(&sessions, m, &small(1)).unwrap();
    assert!(on.report.epochs.iter().all(|e| e.twin_passes == e.steps));
    assert!(on.report.epochs[1].loss_con > 0.0);

    let mut cfg = small(1);
    cfg.set_flag(Ablation::Contrast, false);
    let off = train(&sessions, m, &cfg).unwrap();
    assert!(off
        .report
        .epochs
        .iter()
        .all(|e| e.twin_passes == 0 && e.loss_con == 0.0));

    // Norm and positional flags leave the contrastive path alone.
    for flag in [Ablation::Norm, Ablation::Pe] {
        let mut cfg = small(1);
        cfg.set_flag(flag, false);
        let r = train(&sessions, m, &cfg).unwrap();
        assert!(r.report.epochs.iter().all(|e| e.twin_passes == e.steps));
        assert_ne!(r.report.epochs[0].loss_pred, on.report.epochs[0].loss_pred);
    }
}

#[test]
fn weakneg_without_contrast_is_rejected() {
    let mut cfg = small(1);
    cfg.set_flag(Ablation::WeakNeg, true);
    assert!(cfg.validate().is_ok());
    cfg.set_flag(Ablation::Contrast, false);
    assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    assert!("bogus".parse::<Ablation>().is_err());
}

#[test]
fn non_finite_loss_aborts_with_initial_parameters() {
    let (sessions, m) = toy(20, 5);
    let mut cfg = small(2);
    cfg.schedule.weight_decay = f64::MAX;
    match train(&sessions, m, &cfg) {
        Err(Error::Diverged {
            epoch,
            step,
            last_finite,
        }) => {
            assert_eq!((epoch, step), (1, 1));
            let init = Model::new(cfg.model.clone(), m, Seed(2)).unwrap();
            assert_eq!(*last_finite, init.params);
        }
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn holdout_partitions_sessions() {
    let (train_ids, valid_ids) = holdout(20, 0.1, Seed(1));
    assert_eq!((train_ids.len(), valid_ids.len()), (18, 2));
    let mut all: Vec<usize> = train_ids.iter().chain(&valid_ids).copied().collect();
    all.sort_unstable();
    assert_eq!(all, (0..20).collect::<Vec<_>>());
    assert_eq!(holdout(5, 0.0, Seed(1)).1.len(), 0);
    assert_eq!(holdout(1, 0.5, Seed(1)).0, vec![0]);
}

#[test]
fn report_jsonl_round_trip() {
    let (sessions, m) = toy(20, 6);
    let out = train(&sessions, m, &small(3)).unwrap();
    let text = out.report.to_jsonl();
    assert_eq!(text.lines().count(), 3);
    assert!(text.lines().next().unwrap().starts_with("{\"record\":\"epoch\""));
    assert_eq!(TrainReport::from_jsonl(&text).unwrap(), out.report);
}

#[test]
fn loss_decreases_over_epochs() {
    let data = generate_synthetic(100, 800, 1.0, 0.3, 11).unwrap();
    let mut decreasing = 0;
    for seed in 0..10 {
        let mut cfg = TrainConfig {
            seed,
            ..TrainConfig::default()
        };
        cfg.model.dim = 16;
        cfg.schedule.epochs = 10;
        cfg.schedule.lr_decay = 1.0;
        let out = train(&data.train, data.num_items(), &cfg).unwrap();
        let losses: Vec<f64> = out.report.epochs.iter().map(|e| e.loss_median).collect();
        if losses.windows(2).all(|w| w[1] < w[0]) {
            decreasing += 1;
        }
    }
    assert!(decreasing >= 8, "{decreasing} of 10 runs decreased every epoch");
}
