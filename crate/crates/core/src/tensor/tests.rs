use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn m(rows: usize, cols: usize, data: &[f64]) -> NumArray {
    NumArray::matrix(rows, cols, data.to_vec()).unwrap()
}

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> NumArray {
    let data: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
    NumArray::matrix(rows, cols, data).unwrap()
}

fn single_param(name: &str, value: NumArray) -> ParamSet {
    let mut ps = ParamSet::new();
    ps.insert(Parameter::new(name, value)).unwrap();
    ps
}

#[test]
fn matmul_examples() {
    let mut tape = Tape::new();
    let eye = tape.constant(m(2, 2, &[1.0, 0.0, 0.0, 1.0])).unwrap();
    let v = tape.constant(m(2, 1, &[5.0, 7.0])).unwrap();
    let out = tape.matmul(eye, v).unwrap();
    assert_eq!(tape.value(out).data(), &[5.0, 7.0]);

    let a = tape.constant(m(2, 2, &[1.0, 2.0, 3.0, 4.0])).unwrap();
    let ones = tape.constant(m(2, 1, &[1.0, 1.0])).unwrap();
    let out = tape.matmul(a, ones).unwrap();
    assert_eq!(tape.value(out).data(), &[3.0, 7.0]);

    let zero = tape.constant(NumArray::zeros(&[2, 3])).unwrap();
    let out = tape.matmul(a, zero).unwrap();
    assert!(tape.value(out).data().iter().all(|&v| v == 0.0));
}

#[test]
fn matmul_shape_mismatch_names_both_shapes() {
    let mut tape = Tape::new();
    let a = tape.constant(NumArray::zeros(&[2, 3])).unwrap();
    let b = tape.constant(NumArray::zeros(&[2, 3])).unwrap();
    let err = tape.matmul(a, b).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("[2, 3] and [2, 3]"), "{msg}");
}

#[test]
fn elementwise_examples() {
    let mut tape = Tape::new();
    let z = tape.constant(NumArray::zeros(&[1, 1])).unwrap();
    let s = tape.elementwise(ElemKind::Sigmoid, &[z]).unwrap();
    assert_eq!(tape.value(s).data(), &[0.5]);
    let t = tape.elementwise(ElemKind::Tanh, &[z]).unwrap();
    assert_eq!(tape.value(t).data(), &[0.0]);
    let c = tape.constant(NumArray::filled(&[1, 3], 2.5)).unwrap();
    let sm = tape.elementwise(ElemKind::Softmax, &[c]).unwrap();
    for &v in tape.value(sm).data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
}

#[test]
fn softmax_over_empty_axis_is_an_error() {
    let mut tape = Tape::new();
    let e = tape.constant(NumArray::zeros(&[2, 0])).unwrap();
    assert!(matches!(
        tape.softmax(e),
        Err(TensorError::EmptyAxis { op: "softmax" })
    ));
}

#[test]
fn concat_rejects_nonconforming() {
    let mut tape = Tape::new();
    let a = tape.constant(NumArray::zeros(&[2, 3])).unwrap();
    let b = tape.constant(NumArray::zeros(&[3, 3])).unwrap();
    assert!(tape.concat(&[a, b], 1).is_err());
    let out = tape.concat(&[a, b], 0).unwrap();
    assert_eq!(tape.value(out).shape(), &[5, 3]);
}

#[test]
fn non_finite_forward_names_the_op() {
    let mut tape = Tape::new();
    let big = tape.constant(NumArray::filled(&[1, 1], f64::MAX)).unwrap();
    let err = tape.add(big, big).unwrap_err();
    assert!(matches!(err, TensorError::NonFinite { op: "add" }));
}

#[test]
fn backward_product_rule() {
    let mut ps = ParamSet::new();
    ps.insert(Parameter::new("x", NumArray::filled(&[1, 1], 2.0))).unwrap();
    ps.insert(Parameter::new("y", NumArray::filled(&[1, 1], 3.0))).unwrap();
    let mut tape = Tape::new();
    let x = tape.param(&ps, 0).unwrap();
    let y = tape.param(&ps, 1).unwrap();
    let loss = tape.mul(x, y).unwrap();
    tape.backward(loss, &mut ps).unwrap();
    assert_eq!(ps.get("x").unwrap().grad.data(), &[3.0]);
    assert_eq!(ps.get("y").unwrap().grad.data(), &[2.0]);
}

#[test]
fn backward_square_and_sigmoid() {
    let mut ps = single_param("x", NumArray::filled(&[1, 1], 3.0));
    let mut tape = Tape::new();
    let x = tape.param(&ps, 0).unwrap();
    let loss = tape.mul(x, x).unwrap();
    tape.backward(loss, &mut ps).unwrap();
    assert_eq!(ps.by_index(0).grad.data(), &[6.0]);

    let mut ps = single_param("x", NumArray::filled(&[1, 1], 0.0));
    let mut tape = Tape::new();
    let x = tape.param(&ps, 0).unwrap();
    let loss = tape.sigmoid(x).unwrap();
    tape.backward(loss, &mut ps).unwrap();
    assert_eq!(ps.by_index(0).grad.data(), &[0.25]);
}

#[test]
fn backward_rejects_non_scalar_and_foreign_nodes() {
    let mut ps = single_param("x", NumArray::zeros(&[2, 2]));
    let mut tape = Tape::new();
    let x = tape.param(&ps, 0).unwrap();
    assert!(matches!(
        tape.backward(x, &mut ps),
        Err(TensorError::NonScalarLoss(_))
    ));
    let mut other = Tape::new();
    let y = other.constant(NumArray::scalar(1.0)).unwrap();
    assert!(matches!(
        tape.backward(y, &mut ps),
        Err(TensorError::UnknownNode)
    ));
}

#[test]
fn linear_model_gradient_is_exact() {
    let ps = single_param("w", NumArray::filled(&[1, 1], 0.7));
    let report = finite_diff_check(
        |tape, ps| {
            let w = tape.param(ps, 0)?;
            let x = tape.constant(NumArray::filled(&[1, 1], 1.9))?;
            tape.matmul(x, w)
        },
        &ps,
        1e-5,
        1e-4,
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-9, "{report:?}");
}

#[test]
fn frozen_parameters_are_still_checked() {
    let mut ps = single_param("w", NumArray::filled(&[1, 2], 0.3));
    ps.by_index_mut(0).frozen = true;
    let report = finite_diff_check(
        |tape, ps| {
            let w = tape.param(ps, 0)?;
            let s = tape.tanh(w)?;
            tape.mean(s)
        },
        &ps,
        1e-5,
        1e-4,
    )
    .unwrap();
    assert_eq!(report.per_param.len(), 1);
    assert_eq!(report.per_param[0].entries, 2);
    assert!(report.passed());
}

#[test]
fn backward_skips_frozen_parameters_only() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut ps = ParamSet::new();
    ps.insert(Parameter::new("a", random(&mut rng, 3, 2))).unwrap();
    ps.insert(Parameter::new("b", random(&mut rng, 2, 1))).unwrap();
    let x = random(&mut rng, 4, 3);
    let forward = |tape: &mut Tape, ps: &ParamSet| -> Result<NodeId, TensorError> {
        let a = tape.param(ps, 0)?;
        let b = tape.param(ps, 1)?;
        let x = tape.constant(x.clone())?;
        let h = tape.matmul(x, a)?;
        let h = tape.tanh(h)?;
        let y = tape.matmul(h, b)?;
        tape.mean(y)
    };
    let mut full = ps.clone();
    let mut tape = Tape::new();
    let loss = forward(&mut tape, &full).unwrap();
    tape.backward(loss, &mut full).unwrap();

    let mut partial = ps.clone();
    partial.by_index_mut(0).frozen = true;
    let mut tape = Tape::new();
    let loss = forward(&mut tape, &partial).unwrap();
    tape.backward(loss, &mut partial).unwrap();
    assert!(partial.by_index(0).grad.data().iter().all(|&g| g == 0.0));
    assert!(partial.by_index(1).grad.bitwise_eq(&full.by_index(1).grad));
    assert!(full.by_index(0).grad.data().iter().any(|&g| g != 0.0));
}

#[test]
fn non_deterministic_forward_is_detected() {
    use std::cell::Cell;
    let ps = single_param("w", NumArray::filled(&[1, 1], 0.3));
    let calls = Cell::new(0.0);
    let err = finite_diff_check(
        |tape, ps| {
            calls.set(calls.get() + 1.0);
            let w = tape.param(ps, 0)?;
            let c = tape.constant(NumArray::filled(&[1, 1], calls.get()))?;
            tape.mul(w, c)
        },
        &ps,
        1e-5,
        1e-4,
    )
    .unwrap_err();
    assert!(matches!(err, TensorError::NonDeterministic { .. }));
}

#[test]
fn step_must_be_positive() {
    let ps = single_param("w", NumArray::filled(&[1, 1], 0.3));
    let err = finite_diff_check(|tape, ps| tape.param(ps, 0), &ps, 0.0, 1e-4).unwrap_err();
    assert!(matches!(err, TensorError::InvalidStep(_)));
}

/// Reduces an arbitrary-shape node to a scalar with fixed random weights so
/// that each output entry's gradient differs.
fn weighted_mean(
    tape: &mut Tape,
    node: NodeId,
    seed: u64,
) -> Result<NodeId, TensorError> {
    let (r, c) = tape.value(node).dims2();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5);
    let w = random(&mut rng, r, c);
    let w = tape.constant(w)?;
    let prod = tape.mul(node, w)?;
    tape.mean(prod)
}

type Builder = fn(&mut Tape, &[NodeId], (usize, usize, usize)) -> Result<NodeId, TensorError>;

fn op_cases() -> Vec<(&'static str, usize, Builder)> {
    vec![
        ("matmul", 2, |t, a, _| t.matmul(a[0], a[1])),
        ("add", 2, |t, a, _| t.add(a[0], a[2])),
        ("sub", 2, |t, a, _| t.sub(a[0], a[2])),
        ("mul", 2, |t, a, _| t.mul(a[0], a[2])),
        ("add_row", 2, |t, a, _| t.add_row(a[0], a[3])),
        ("one_minus", 1, |t, a, _| t.one_minus(a[0])),
        ("sigmoid", 1, |t, a, _| t.sigmoid(a[0])),
        ("tanh", 1, |t, a, _| t.tanh(a[0])),
        ("softmax", 1, |t, a, _| t.softmax(a[0])),
        ("concat0", 2, |t, a, _| t.concat(&[a[0], a[2]], 0)),
        ("concat1", 2, |t, a, _| t.concat(&[a[0], a[2], a[0]], 1)),
        ("slice_cols", 1, |t, a, (_, k, _)| t.slice_cols(a[0], k / 2, k - k / 2)),
        ("row_dot", 2, |t, a, _| t.row_dot(a[0], a[2])),
        ("scale_rows", 2, |t, a, _| t.scale_rows(a[0], a[4])),
        ("mean", 1, |t, a, _| t.mean(a[0])),
    ]
}

#[test]
fn every_op_matches_central_differences() {
    for seed in [11u64, 23, 47] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = (
            rng.random_range(1..=8usize),
            rng.random_range(1..=8usize),
            rng.random_range(1..=8usize),
        );
        let (mm, k, n) = dims;
        let mut ps = ParamSet::new();
        ps.insert(Parameter::new("a", random(&mut rng, mm, k))).unwrap();
        ps.insert(Parameter::new("b", random(&mut rng, k, n))).unwrap();
        ps.insert(Parameter::new("c", random(&mut rng, mm, k))).unwrap();
        ps.insert(Parameter::new("row", random(&mut rng, 1, k))).unwrap();
        ps.insert(Parameter::new("col", random(&mut rng, mm, 1))).unwrap();

        for (name, _, build) in op_cases() {
            let report = finite_diff_check(
                |tape, ps| {
                    let leaves: Vec<NodeId> = (0..ps.len())
                        .map(|i| tape.param(ps, i))
                        .collect::<Result<_, _>>()?;
                    let out = build(tape, &leaves, dims)?;
                    weighted_mean(tape, out, seed)
                },
                &ps,
                1e-5,
                1e-4,
            )
            .unwrap();
            assert!(
                report.passed(),
                "op {name} seed {seed} dims {dims:?}: {report:?}"
            );
        }
    }
}

fn composite_loss(tape: &mut Tape, ps: &ParamSet) -> Result<NodeId, TensorError> {
    let a = tape.param(ps, 0)?;
    let b = tape.param(ps, 1)?;
    let prod = tape.matmul(a, b)?;
    let s = tape.sigmoid(prod)?;
    let t = tape.tanh(prod)?;
    let both = tape.mul(s, t)?;
    tape.mean(both)
}

#[test]
fn backward_is_idempotent_with_cleared_grads() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut ps = ParamSet::new();
    ps.insert(Parameter::new("a", random(&mut rng, 3, 4))).unwrap();
    ps.insert(Parameter::new("b", random(&mut rng, 4, 2))).unwrap();
    let mut tape = Tape::new();
    let loss = composite_loss(&mut tape, &ps).unwrap();
    tape.backward(loss, &mut ps).unwrap();
    let first: Vec<NumArray> = ps.iter().map(|p| p.grad.clone()).collect();
    ps.zero_grads();
    tape.backward(loss, &mut ps).unwrap();
    for (p, g) in ps.iter().zip(&first) {
        assert!(p.grad.bitwise_eq(g));
    }
}

#[test]
fn batch_gradient_is_sum_of_sample_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let samples: Vec<NumArray> = (0..5).map(|_| random(&mut rng, 1, 3)).collect();
    let mut ps = single_param("w", random(&mut rng, 3, 2));

    let sample_loss = |tape: &mut Tape, ps: &ParamSet, x: &NumArray| {
        let w = tape.param(ps, 0)?;
        let x = tape.constant(x.clone())?;
        let h = tape.matmul(x, w)?;
        let h = tape.tanh(h)?;
        tape.mean(h)
    };

    for x in &samples {
        let mut tape = Tape::new();
        let loss = sample_loss(&mut tape, &ps, x).unwrap();
        tape.backward(loss, &mut ps).unwrap();
    }
    let per_sample = ps.by_index(0).grad.clone();

    ps.zero_grads();
    let mut tape = Tape::new();
    let mut total = None;
    for x in &samples {
        let l = sample_loss(&mut tape, &ps, x).unwrap();
        total = Some(match total {
            None => l,
            Some(t) => tape.add(t, l).unwrap(),
        });
    }
    tape.backward(total.unwrap(), &mut ps).unwrap();
    assert!(ps.by_index(0).grad.bitwise_eq(&per_sample));
}
