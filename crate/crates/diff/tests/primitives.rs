//! Every primitive against central finite differences, plus the
//! basic forward/backward contracts of the tape.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sgo_diff::{forward_record, grad_check, Array64, DiffError, Tape64, Var};

type Program = Box<dyn Fn(&Tape64, &[Var]) -> Var>;

fn rand_array(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Array64 {
    Array64::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// Weighted sum so that every output coordinate matters.
fn reduce(t: &Tape64, y: Var) -> Var {
    let shape = t.shape(y);
    let n: usize = shape.iter().product();
    let w = Array64::from_fn(&shape, |i| 0.3 + ((i * 7919) % 17) as f64 / 11.0 - 0.5 * (i % 3) as f64);
    let _ = n;
    let w = t.constant(w);
    let p = t.mul(y, w);
    t.sum(p)
}

struct Case {
    name: &'static str,
    shapes: Vec<Vec<usize>>,
    range: (f64, f64),
    program: Program,
}

fn cases() -> Vec<Case> {
    fn case(name: &'static str, shapes: Vec<Vec<usize>>, range: (f64, f64), program: impl Fn(&Tape64, &[Var]) -> Var + 'static) -> Case {
        Case { name, shapes, range, program: Box::new(program) }
    }
    vec![
        case("add_broadcast", vec![vec![3, 4], vec![4]], (-2.0, 2.0), |t, v| { let y = t.add(v[0], v[1]); reduce(t, y) }),
        case("sub_col", vec![vec![3, 4], vec![3, 1]], (-2.0, 2.0), |t, v| { let y = t.sub(v[0], v[1]); reduce(t, y) }),
        case("mul", vec![vec![2, 3], vec![2, 3]], (-2.0, 2.0), |t, v| { let y = t.mul(v[0], v[1]); reduce(t, y) }),
        case("div", vec![vec![2, 3], vec![2, 3]], (0.5, 2.0), |t, v| { let y = t.div(v[0], v[1]); reduce(t, y) }),
        case("exp", vec![vec![5]], (-2.0, 2.0), |t, v| { let y = t.exp(v[0]); reduce(t, y) }),
        case("ln", vec![vec![5]], (0.3, 3.0), |t, v| { let y = t.ln(v[0]); reduce(t, y) }),
        case("sqrt", vec![vec![5]], (0.3, 3.0), |t, v| { let y = t.sqrt(v[0]); reduce(t, y) }),
        case("square", vec![vec![5]], (-2.0, 2.0), |t, v| { let y = t.square(v[0]); reduce(t, y) }),
        case("recip", vec![vec![5]], (0.5, 2.0), |t, v| { let y = t.recip(v[0]); reduce(t, y) }),
        case("sigmoid", vec![vec![5]], (-4.0, 4.0), |t, v| { let y = t.sigmoid(v[0]); reduce(t, y) }),
        case("softplus", vec![vec![5]], (-4.0, 4.0), |t, v| { let y = t.softplus(v[0]); reduce(t, y) }),
        case("tanh", vec![vec![5]], (-2.0, 2.0), |t, v| { let y = t.tanh(v[0]); reduce(t, y) }),
        case("silu", vec![vec![5]], (-3.0, 3.0), |t, v| { let y = t.silu(v[0]); reduce(t, y) }),
        case("scalar_ops", vec![vec![4]], (-2.0, 2.0), |t, v| { let a = t.mul_scalar(v[0], 1.7); let b = t.add_scalar(a, -0.3); let c = t.neg(b); reduce(t, c) }),
        case("sum_mean", vec![vec![3, 4]], (-2.0, 2.0), |t, v| { let s = t.sum(v[0]); let m = t.mean(v[0]); let p = t.mul(s, m); t.sum(p) }),
        case("sum_axis", vec![vec![2, 3, 4]], (-2.0, 2.0), |t, v| { let y = t.sum_axis(v[0], 1); reduce(t, y) }),
        case("matmul", vec![vec![3, 4], vec![4, 2]], (-1.0, 1.0), |t, v| { let y = t.matmul(v[0], v[1]); reduce(t, y) }),
        case("matmul_batched_rows", vec![vec![2, 3, 4], vec![4, 2]], (-1.0, 1.0), |t, v| { let y = t.matmul(v[0], v[1]); reduce(t, y) }),
        case("bmm", vec![vec![2, 3, 4], vec![2, 4, 5]], (-1.0, 1.0), |t, v| { let y = t.bmm(v[0], v[1], false); reduce(t, y) }),
        case("bmm_nt", vec![vec![2, 3, 4], vec![2, 5, 4]], (-1.0, 1.0), |t, v| { let y = t.bmm(v[0], v[1], true); reduce(t, y) }),
        case("softmax", vec![vec![3, 5]], (-2.0, 2.0), |t, v| { let y = t.softmax(v[0]); reduce(t, y) }),
        case("log_softmax", vec![vec![3, 5]], (-2.0, 2.0), |t, v| { let y = t.log_softmax(v[0]); reduce(t, y) }),
        case("layer_norm", vec![vec![3, 6]], (-2.0, 2.0), |t, v| { let y = t.layer_norm(v[0], 1e-5); reduce(t, y) }),
        case("reshape_permute", vec![vec![2, 3, 4]], (-2.0, 2.0), |t, v| { let r = t.reshape(v[0], &[3, 2, 4]); let p = t.permute(r, &[2, 0, 1]); reduce(t, p) }),
        case("concat_slice", vec![vec![2, 3], vec![2, 2]], (-2.0, 2.0), |t, v| { let c = t.concat(&[v[0], v[1]], 1); let s = t.slice(c, 1, 1, 4); let q = t.square(s); reduce(t, q) }),
        case("gather_rows", vec![vec![4, 3]], (-2.0, 2.0), |t, v| { let g = t.gather_rows(v[0], &[2, 0, 2, 3]); let q = t.square(g); reduce(t, q) }),
        case("broadcast_to", vec![vec![1, 3]], (-2.0, 2.0), |t, v| { let b = t.broadcast_to(v[0], &[4, 3]); let q = t.square(b); reduce(t, q) }),
        case("cols", vec![vec![4, 3]], (-2.0, 2.0), |t, v| { let a = t.col(v[0], 0); let b = t.col(v[0], 2); let m = t.mul(a, b); let s = t.stack_cols(&[m, a]); reduce(t, s) }),
        case("clamp_interior", vec![vec![5]], (-0.9, 0.9), |t, v| { let y = t.clamp(v[0], -1.0, 1.0); let q = t.square(y); reduce(t, q) }),
        case("linear", vec![vec![3, 4], vec![4, 2], vec![2]], (-1.0, 1.0), |t, v| { let y = t.linear(v[0], v[1], Some(v[2])); reduce(t, y) }),
    ]
}

#[test]
fn every_primitive_matches_finite_differences_on_100_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in cases() {
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let point: Vec<Array64> = case
                .shapes
                .iter()
                .map(|s| rand_array(&mut rng, s, case.range.0, case.range.1))
                .collect();
            let report = grad_check(&case.program, &point, 1e-5, 1e-4).unwrap();
            assert!(report.passed, "{}: {}", case.name, report.summary());
            worst = worst.max(report.max_rel_error);
        }
        assert!(worst <= 1e-4, "{} worst {worst}", case.name);
    }
}

#[test]
fn backward_is_linear_in_the_seed() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = rand_array(&mut rng, &[3, 4], -1.0, 1.0);
    let w = rand_array(&mut rng, &[4, 5], -1.0, 1.0);
    let seed = rand_array(&mut rng, &[3, 5], -1.0, 1.0);
    let t = Tape64::new();
    let xv = t.param(x);
    let wv = t.param(w);
    let y = t.matmul(xv, wv);
    let y = t.tanh(y);
    let g1 = t.backward(y, &seed).unwrap();
    let g2 = t.backward(y, &seed.scale(2.5)).unwrap();
    let a = g1.get(xv).unwrap().scale(2.5);
    let b = g2.get(xv).unwrap();
    assert!(a.max_abs_diff(b) <= 1e-15 * 10.0, "{}", a.max_abs_diff(b));
}

#[test]
fn recording_is_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = rand_array(&mut rng, &[6, 8], -1.0, 1.0);
        let w = rand_array(&mut rng, &[8, 8], -1.0, 1.0);
        let (leaves, outs, t) = forward_record(
            |t, v| {
                let h = t.matmul(v[0], v[1]);
                let h = t.layer_norm(h, 1e-5);
                let h = t.softmax(h);
                vec![t.sum(h)]
            },
            &[x, w],
        )
        .unwrap();
        let g = t.grad(outs[0]).unwrap();
        (t.item(outs[0]).to_bits(), g.get(leaves[1]).unwrap().clone())
    };
    let (a, ga) = run();
    let (b, gb) = run();
    assert_eq!(a, b);
    assert_eq!(
        ga.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        gb.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
}

#[test]
fn square_at_three() {
    let (leaves, outs, t) = forward_record(|t, v| vec![t.mul(v[0], v[0])], &[Array64::scalar(3.0)]).unwrap();
    assert_eq!(t.item(outs[0]), 9.0);
    // one leaf plus one multiply
    assert_eq!(t.len(), 2);
    assert_eq!(t.op_name(outs[0]), "mul");
    let g = t.backward(outs[0], &Array64::scalar(1.0)).unwrap();
    assert_eq!(g.get(leaves[0]).unwrap().item(), 6.0);
}

#[test]
fn softmax_of_equal_logits_is_uniform() {
    let (_, outs, t) = forward_record(|t, v| vec![t.softmax(v[0])], &[Array64::zeros(&[3])]).unwrap();
    for &p in t.value(outs[0]).data() {
        assert!((p - 1.0 / 3.0).abs() < 1e-15);
    }
}

#[test]
fn matmul_matches_direct_recomputation() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = rand_array(&mut rng, &[4, 4], -1.0, 1.0);
    let b = rand_array(&mut rng, &[4, 4], -1.0, 1.0);
    let (_, outs, t) = forward_record(|t, v| vec![t.matmul(v[0], v[1])], &[a.clone(), b.clone()]).unwrap();
    let c = t.value(outs[0]);
    for i in 0..4 {
        for j in 0..4 {
            let direct: f64 = (0..4).map(|k| a.at(&[i, k]) * b.at(&[k, j])).sum();
            assert!((c.at(&[i, j]) - direct).abs() < 1e-12);
        }
    }
}

#[test]
fn gradient_of_summed_softmax_vanishes() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = rand_array(&mut rng, &[2, 5], -3.0, 3.0);
    let (leaves, outs, t) = forward_record(|t, v| { let s = t.softmax(v[0]); vec![t.sum(s)] }, &[x]).unwrap();
    let g = t.grad(outs[0]).unwrap();
    for &v in g.get(leaves[0]).unwrap().data() {
        assert!(v.abs() < 1e-15, "{v}");
    }
}

fn normalize(t: &Tape64, q: Var) -> Var {
    let sq = t.square(q);
    let n2 = t.sum(sq);
    let n = t.sqrt(n2);
    t.div(q, n)
}

#[test]
fn quaternion_normalize_jacobian_is_tangent_projector() {
    let r = Array64::from_f64(&[4], &[1.0, 0.0, 0.0, 0.0]).unwrap();
    let t = Tape64::new();
    let q = t.param(r.clone());
    let y = normalize(&t, q);
    for i in 0..4 {
        let mut seed = Array64::zeros(&[4]);
        seed.data_mut()[i] = 1.0;
        let g = t.backward(y, &seed).unwrap();
        let row = g.get(q).unwrap();
        for j in 0..4 {
            let expected = if i == j { 1.0 } else { 0.0 } - r.data()[i] * r.data()[j];
            assert!((row.data()[j] - expected).abs() < 1e-12);
            // central difference of component i along j
            let h = 1e-5;
            let eval = |d: f64| {
                let mut p = r.clone();
                p.data_mut()[j] += d;
                let n = p.data().iter().map(|v| v * v).sum::<f64>().sqrt();
                p.data()[i] / n
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            assert!((row.data()[j] - fd).abs() < 1e-6, "J[{i}][{j}] {} vs {fd}", row.data()[j]);
        }
    }
}

#[test]
fn seed_shape_mismatch_is_an_error() {
    let t = Tape64::new();
    let x = t.param(Array64::zeros(&[3]));
    let y = t.exp(x);
    let err = t.backward(y, &Array64::zeros(&[4])).err().unwrap();
    assert!(matches!(err, DiffError::Shape { .. }));
}

#[test]
fn non_grad_leaves_are_absent() {
    let t = Tape64::new();
    let x = t.param(Array64::scalar(2.0));
    let c = t.constant(Array64::scalar(5.0));
    let y = t.mul(x, c);
    let g = t.grad(y).unwrap();
    assert_eq!(g.get(x).unwrap().item(), 5.0);
    assert!(g.get(c).is_none());
}

#[test]
fn nonfinite_intermediate_reports_op_index() {
    let err = forward_record(
        |t, v| {
            let l = t.ln(v[0]);
            vec![t.exp(l)]
        },
        &[Array64::from_f64(&[2], &[1.0, -1.0]).unwrap()],
    )
    .err()
    .unwrap();
    match err {
        DiffError::NonFinite { index, op } => {
            assert_eq!(index, 1);
            assert_eq!(op, "ln");
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn grad_check_passes_linear_layer() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = rand_array(&mut rng, &[5, 3], -1.0, 1.0);
    let w = rand_array(&mut rng, &[3, 4], -1.0, 1.0);
    let b = rand_array(&mut rng, &[4], -1.0, 1.0);
    let report = grad_check(
        |t, v| {
            let y = t.linear(v[0], v[1], Some(v[2]));
            let y = t.square(y);
            t.sum(y)
        },
        &[x, w, b],
        1e-5,
        1e-4,
    )
    .unwrap();
    assert!(report.passed, "{}", report.summary());
}

#[test]
fn grad_check_flags_exp_overflow_headroom() {
    let report = grad_check(|t, v| { let e = t.exp(v[0]); t.sum(e) }, &[Array64::scalar(700.0)], 1e-5, 1e-4).unwrap();
    assert!(report.overflow);
    assert!(!report.passed);
}

#[test]
fn grad_check_rejects_vector_programs() {
    let err = grad_check(|t, v| t.exp(v[0]), &[Array64::zeros(&[3])], 1e-5, 1e-4).err().unwrap();
    assert!(matches!(err, DiffError::NotScalar(_)));
}
