use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

/// Central-difference gradient of `f` with respect to every entry of every
/// input, computed without touching the backward pass.
pub(crate) fn numeric_grad(f: &dyn Fn(&[Tensor]) -> f64, inputs: &[Tensor], h: f64) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for k in 0..inputs.len() {
        let mut g = Vec::with_capacity(inputs[k].len());
        for j in 0..inputs[k].len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[j] += h;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[j] -= h;
            g.push((f(&plus) - f(&minus)) / (2.0 * h));
        }
        out.push(g);
    }
    out
}

pub(crate) fn assert_close(analytic: &[f64], numeric: &[f64], what: &str) {
    for (j, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
        if n.abs() < 1e-4 {
            assert!((a - n).abs() < 1e-6, "{what}[{j}]: analytic {a} numeric {n}");
        } else {
            let rel = (a - n).abs() / a.abs().max(n.abs());
            assert!(rel < 1e-4, "{what}[{j}]: analytic {a} numeric {n} rel {rel}");
        }
    }
}

type Build = dyn Fn(&mut Tape, &[Var]) -> Var;

/// Checks autodiff against finite differences for a scalar function built
/// from `build`, which receives one leaf per input.
fn gradcheck(name: &str, inputs: Vec<Tensor>, build: &Build) {
    let eval = |xs: &[Tensor]| {
        let mut tape = Tape::new(Mode::Eval);
        let vars: Vec<Var> = xs.iter().map(|x| tape.variable(x.clone())).collect();
        let out = build(&mut tape, &vars);
        tape.value(out).item()
    };
    let mut tape = Tape::new(Mode::Eval);
    let vars: Vec<Var> = inputs.iter().map(|x| tape.variable(x.clone())).collect();
    let out = build(&mut tape, &vars);
    let grads = tape.backward(out).unwrap();
    let numeric = numeric_grad(&eval, &inputs, 1e-3);
    for (k, v) in vars.iter().enumerate() {
        assert_close(grads.wrt(&tape, *v).data(), &numeric[k], &format!("{name} input {k}"));
    }
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Reduces a tensor to a scalar through fixed random weights so every output
/// entry carries a distinct upstream gradient.
fn weighted_sum(tape: &mut Tape, x: Var, seed: u64) -> Var {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = tape.value(x).shape().to_vec();
    let w = tape.constant(random(&mut rng, &shape));
    let p = tape.mul(x, w).unwrap();
    tape.sum(p)
}

#[test]
fn forward_examples() {
    let mut tape = Tape::new(Mode::Eval);
    let zero = tape.constant(Tensor::vector(vec![0.0]));
    let s = tape.sigmoid(zero);
    assert_eq!(tape.value(s).data(), &[0.5]);

    let v = tape.constant(Tensor::vector(vec![3.0, 4.0]));
    let n = tape.l2_normalize(v);
    let got = tape.value(n).data();
    assert!((got[0] - 0.6).abs() < 1e-15 && (got[1] - 0.8).abs() < 1e-15);

    let z = tape.constant(Tensor::vector(vec![0.0, 0.0]));
    let sm = tape.softmax(z);
    assert_eq!(tape.value(sm).data(), &[0.5, 0.5]);
}

#[test]
fn square_sum_gradient() {
    let mut tape = Tape::new(Mode::Eval);
    let x = tape.variable(Tensor::vector(vec![1.0, 2.0]));
    let sq = tape.mul(x, x).unwrap();
    let loss = tape.sum(sq);
    let g = tape.backward(loss).unwrap();
    assert_eq!(g.wrt(&tape, x).data(), &[2.0, 4.0]);
}

#[test]
fn unreachable_parameter_gets_zero_gradient() {
    let mut store = ParameterStore::new();
    let used = store.insert("used", Tensor::vector(vec![1.0, -2.0]));
    let unused = store.insert("unused", Tensor::vector(vec![5.0]));
    let mut tape = Tape::new(Mode::Eval);
    let bound = store.bind(&mut tape);
    let loss = tape.sum(bound[used.index()]);
    let grads = tape.backward(loss).unwrap().for_store(&store);
    assert_eq!(grads[used.index()].data(), &[1.0, 1.0]);
    assert_eq!(grads[unused.index()].data(), &[0.0]);
}

#[test]
fn non_scalar_loss_is_rejected() {
    let mut tape = Tape::new(Mode::Eval);
    let x = tape.variable(Tensor::vector(vec![1.0, 2.0]));
    assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
}

#[test]
fn shape_errors_name_the_op() {
    let mut tape = Tape::new(Mode::Eval);
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[2, 3]));
    match tape.matmul(a, b) {
        Err(Error::Dimension { op, detail }) => {
            assert_eq!(op, "matmul");
            assert!(detail.contains("[2, 3]"));
        }
        other => panic!("expected dimension error, got {other:?}"),
    }
    let c = tape.constant(Tensor::zeros(&[3, 2]));
    assert!(matches!(tape.add(a, c), Err(Error::Dimension { op: "add", .. })));
}

#[test]
fn dropout_is_identity_in_eval_mode() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut tape = Tape::new(Mode::Eval);
    let x = tape.constant(random(&mut rng, &[4, 5]));
    let y = tape.dropout(x, 0.5, &mut rng).unwrap();
    assert_eq!(x, y);
}

#[test]
fn dropout_zeroes_expected_fraction() {
    let p = 0.1;
    let n = 10_000;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut tape = Tape::new(Mode::Train);
    let x = tape.constant(Tensor::filled(&[n, 1], 1.0));
    let y = tape.dropout(x, p, &mut rng).unwrap();
    let zeros = tape.value(y).data().iter().filter(|&&v| v == 0.0).count() as f64;
    let sd = (n as f64 * p * (1.0 - p)).sqrt();
    assert!((zeros - n as f64 * p).abs() < 4.0 * sd, "{zeros} zeroed");
    let survivors: Vec<f64> = tape.value(y).data().iter().copied().filter(|&v| v != 0.0).collect();
    assert!(survivors.iter().all(|&v| (v - 1.0 / 0.9).abs() < 1e-15));
}

#[test]
fn softmax_rows_are_distributions() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut tape = Tape::new(Mode::Eval);
    let x = tape.constant(random(&mut rng, &[6, 9]).map(|v| v * 30.0));
    let y = tape.softmax(x);
    for r in 0..6 {
        let row = tape.value(y).row(r);
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(row.iter().all(|&p| p > 0.0));
    }
}

#[test]
fn l2_normalize_handles_zero_rows() {
    let mut tape = Tape::new(Mode::Eval);
    let x = tape.variable(Tensor::matrix(2, 2, vec![0.0, 0.0, 1.0, 1.0]).unwrap());
    let y = tape.l2_normalize(x);
    assert_eq!(tape.value(y).row(0), &[0.0, 0.0]);
    let loss = weighted_sum(&mut tape, y, 11);
    let g = tape.backward(loss).unwrap().wrt(&tape, x);
    assert_eq!(&g.data()[..2], &[0.0, 0.0]);
    assert!(g.is_finite());
}

#[test]
fn masked_softmax_rejects_empty_rows() {
    let mut tape = Tape::new(Mode::Eval);
    let x = tape.constant(Tensor::zeros(&[2, 2]));
    let err = tape.masked_softmax(x, vec![true, false, false, false]).unwrap_err();
    assert!(matches!(err, Error::Contract(_)));
}

#[test]
fn gradcheck_primitives() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let a34 = random(&mut rng, &[3, 4]);
    let b34 = random(&mut rng, &[3, 4]);
    let b45 = random(&mut rng, &[4, 5]);
    let b54 = random(&mut rng, &[5, 4]);
    let row4 = random(&mut rng, &[4]);
    let pos34 = a34.map(|v| v.abs() + 0.2);

    gradcheck("matmul", vec![a34.clone(), b45.clone()], &|t, v| {
        let y = t.matmul(v[0], v[1]).unwrap();
        weighted_sum(t, y, 1)
    });
    gradcheck("matmul_nt", vec![a34.clone(), b54.clone()], &|t, v| {
        let y = t.matmul_nt(v[0], v[1]).unwrap();
        weighted_sum(t, y, 2)
    });
    gradcheck("add/sub/mul", vec![a34.clone(), b34.clone()], &|t, v| {
        let s = t.add(v[0], v[1]).unwrap();
        let d = t.sub(v[0], v[1]).unwrap();
        let m = t.mul(s, d).unwrap();
        weighted_sum(t, m, 3)
    });
    gradcheck("add_row", vec![a34.clone(), row4.clone()], &|t, v| {
        let y = t.add_row(v[0], v[1]).unwrap();
        let y = t.mul(y, y).unwrap();
        weighted_sum(t, y, 4)
    });
    gradcheck("scale/sigmoid/tanh", vec![a34.clone()], &|t, v| {
        let s = t.scale(v[0], 1.7);
        let a = t.sigmoid(s);
        let b = t.tanh(v[0]);
        let c = t.mul(a, b).unwrap();
        weighted_sum(t, c, 5)
    });
    gradcheck("log", vec![pos34.clone()], &|t, v| {
        let y = t.log(v[0], 1e-12);
        weighted_sum(t, y, 6)
    });
    gradcheck("softmax", vec![a34.clone()], &|t, v| {
        let y = t.softmax(v[0]);
        weighted_sum(t, y, 7)
    });
    gradcheck("masked_softmax", vec![a34.clone()], &|t, v| {
        let mask = vec![
            true, true, false, true, false, true, true, true, true, false, false, false,
        ];
        let y = t.masked_softmax(v[0], mask).unwrap();
        weighted_sum(t, y, 8)
    });
    gradcheck("concat/slice", vec![a34.clone(), b34.clone()], &|t, v| {
        let c = t.concat_cols(&[v[0], v[1], v[0]]).unwrap();
        let s = t.slice_rows(c, 1, 3).unwrap();
        let s = t.mul(s, s).unwrap();
        weighted_sum(t, s, 9)
    });
    gradcheck("l2_normalize", vec![a34.clone()], &|t, v| {
        let y = t.l2_normalize(v[0]);
        weighted_sum(t, y, 10)
    });
    gradcheck("mask", vec![a34.clone()], &|t, v| {
        let mask = (0..12).map(|i| if i % 3 == 0 { 0.0 } else { 1.25 }).collect();
        let y = t.apply_mask(v[0], mask);
        let y = t.mul(y, v[0]).unwrap();
        weighted_sum(t, y, 11)
    });
    gradcheck("sum_cols/pick", vec![a34.clone()], &|t, v| {
        let sq = t.mul(v[0], v[0]).unwrap();
        let s = t.sum_cols(sq);
        let p = t.pick(v[0], vec![3, 0, 2]).unwrap();
        let m = t.mul(s, p).unwrap();
        t.sum(m)
    });
    gradcheck("gather/scale_rows", vec![a34.clone()], &|t, v| {
        let g = t.gather_rows(v[0], vec![2, 0, 2, 1]).unwrap();
        let g = t.scale_rows(g, vec![0.5, -1.0, 2.0, 0.0]).unwrap();
        let g = t.mul(g, g).unwrap();
        weighted_sum(t, g, 12)
    });
    gradcheck(
        "block_matmul/reshape",
        vec![random(&mut rng, &[2, 2, 3]), random(&mut rng, &[6, 4])],
        &|t, v| {
            let a = t.reshape(v[0], vec![4, 3]).unwrap();
            let y = t.block_matmul(a, v[1], 2, 2, 3).unwrap();
            weighted_sum(t, y, 13)
        },
    );
}

#[test]
fn gradients_accumulate_over_reuse() {
    // f(x) = sum(x ⊙ x ⊙ x) uses x three times; df/dx = 3x².
    let mut tape = Tape::new(Mode::Eval);
    let x = tape.variable(Tensor::vector(vec![-1.0, 0.5, 2.0]));
    let x2 = tape.mul(x, x).unwrap();
    let x3 = tape.mul(x2, x).unwrap();
    let loss = tape.sum(x3);
    let g = tape.backward(loss).unwrap().wrt(&tape, x);
    assert_eq!(g.data(), &[3.0, 0.75, 12.0]);
}
