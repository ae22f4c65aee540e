use miss_autodiff::gradcheck::{self, Tolerance};
use miss_autodiff::{AutodiffError, Graph, Tensor, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn t(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Builds `f` on fresh parameter leaves, backprops, and compares against
/// central differences of the forward value.
fn grad_check<F>(inputs: Vec<Tensor>, f: F) -> gradcheck::GradCheckReport
where
    F: Fn(&mut Graph, &[Var]) -> Var,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|x| g.param(x.clone())).collect();
    let out = f(&mut g, &vars);
    let grads = g.backward(out).unwrap();
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(&inputs)
        .map(|(v, x)| grads.get(*v).cloned().unwrap_or_else(|| Tensor::zeros(x.shape())))
        .collect();
    let loss = |xs: &[Tensor]| {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|x| g.param(x.clone())).collect();
        let out = f(&mut g, &vars);
        g.value(out).item()
    };
    gradcheck::check(loss, &inputs, &analytic, Tolerance::default())
}

fn assert_grads(inputs: Vec<Tensor>, f: impl Fn(&mut Graph, &[Var]) -> Var) {
    let report = grad_check(inputs, f);
    assert!(
        report.rel_fraction() >= 0.99 && report.passed(),
        "gradcheck failed: {report:?}"
    );
}

/// Contracts any tensor to a scalar with a fixed, non-uniform weighting so
/// that every output element carries a distinct upstream gradient.
fn weighted_sum(g: &mut Graph, x: Var) -> Var {
    let n = g.value(x).numel();
    let w = Tensor::new(g.shape(x).to_vec(), (0..n).map(|i| 0.3 + 0.17 * (i % 7) as f64).collect()).unwrap();
    let w = g.constant(w);
    let p = g.mul(x, w).unwrap();
    g.sum(p)
}

#[test]
fn matmul_identity_and_selector() {
    let mut g = Graph::new();
    let i2 = g.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
    let m = g.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let out = g.matmul(i2, m).unwrap();
    assert_eq!(g.value(out).data(), &[1.0, 2.0, 3.0, 4.0]);

    let sel = g.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 0.0]));
    let m = g.constant(t(&[2, 2], &[5.0, 6.0, 7.0, 8.0]));
    let out = g.matmul(sel, m).unwrap();
    assert_eq!(g.value(out).data(), &[5.0, 6.0, 0.0, 0.0]);
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::zeros(&[2, 3]));
    let b = g.constant(Tensor::zeros(&[2, 3]));
    let err = g.matmul(a, b).unwrap_err();
    assert_eq!(
        err,
        AutodiffError::Shape {
            op: "matmul",
            lhs: vec![2, 3],
            rhs: vec![2, 3]
        }
    );
    assert!(err.to_string().contains("[2, 3]"));
}

#[test]
fn matmul_sum_gradient_is_ones_times_b_transpose() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = random(&mut rng, &[3, 4], -1.0, 1.0);
    let b = random(&mut rng, &[4, 2], -1.0, 1.0);
    let mut g = Graph::new();
    let av = g.param(a.clone());
    let bv = g.constant(b.clone());
    let c = g.matmul(av, bv).unwrap();
    let s = g.sum(c);
    let grads = g.backward(s).unwrap();
    let da = grads.get(av).unwrap();
    for i in 0..3 {
        for k in 0..4 {
            let expected = b.data()[k * 2] + b.data()[k * 2 + 1];
            assert!((da.data()[i * 4 + k] - expected).abs() < 1e-15);
        }
    }
    assert_grads(vec![a, b], |g, v| {
        let c = g.matmul(v[0], v[1]).unwrap();
        g.sum(c)
    });
}

#[test]
fn relu_examples() {
    let mut g = Graph::new();
    let x = g.param(Tensor::vector(vec![-1.0, 0.0, 2.0]));
    let y = g.relu(x);
    assert_eq!(g.value(y).data(), &[0.0, 0.0, 2.0]);

    let x = g.param(Tensor::vector(vec![-1.0, -0.5, -3.0]));
    let y = g.relu(x);
    let s = g.sum(y);
    assert_eq!(g.value(y).data(), &[0.0, 0.0, 0.0]);
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.get(x).unwrap().data(), &[0.0, 0.0, 0.0]);

    let mut g = Graph::new();
    let x = g.param(Tensor::scalar(3.0));
    let y = g.relu(x);
    let grads = g.backward(y).unwrap();
    assert_eq!(grads.get(x).unwrap().item(), 1.0);
}

#[test]
fn sigmoid_examples() {
    let mut g = Graph::new();
    let x = g.param(Tensor::scalar(0.0));
    let y = g.sigmoid(x);
    assert_eq!(g.value(y).item(), 0.5);
    let grads = g.backward(y).unwrap();
    assert_eq!(grads.get(x).unwrap().item(), 0.25);

    for v in [-5.0, 1.3, 40.0] {
        let s = miss_autodiff::sigmoid(v);
        assert!((s - (1.0 - miss_autodiff::sigmoid(-v))).abs() < 1e-15);
    }
    for v in [-700.0, 700.0] {
        assert!(miss_autodiff::sigmoid(v).is_finite());
    }
}

#[test]
fn cosine_examples() {
    let cases = [
        (vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0], 1.0),
        (vec![1.0, 0.0], vec![0.0, 1.0], 0.0),
        (vec![1.0, 1.0], vec![-1.0, -1.0], -1.0),
    ];
    for (a, b, expected) in cases {
        let mut g = Graph::new();
        let av = g.constant(Tensor::vector(a));
        let bv = g.constant(Tensor::vector(b));
        let c = g.cosine_similarity(av, bv, 1e-12).unwrap();
        assert!((g.value(c).item() - expected).abs() < 1e-12);
    }
    let mut g = Graph::new();
    let z = g.constant(Tensor::zeros(&[3]));
    let b = g.constant(Tensor::vector(vec![1.0, 2.0, 3.0]));
    let c = g.cosine_similarity(z, b, 1e-12).unwrap();
    assert_eq!(g.value(c).item(), 0.0);
}

#[test]
fn slice_window_examples() {
    let x = t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    let mut g = Graph::new();
    let xv = g.param(x.clone());
    let full = g.slice_window(xv, 1, 0, 3).unwrap();
    assert_eq!(g.value(full), &x);

    let parts: Vec<Var> = (0..3).map(|s| g.slice_window(xv, 1, s, 1).unwrap()).collect();
    let tiled = g.concat(&parts, 1).unwrap();
    assert_eq!(g.value(tiled), &x);

    let w = g.slice_window(xv, 1, 1, 2).unwrap();
    let s = g.sum(w);
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.get(xv).unwrap().data(), &[0.0, 1.0, 1.0, 0.0, 1.0, 1.0]);

    assert!(matches!(
        g.slice_window(xv, 1, 2, 2),
        Err(AutodiffError::Index { .. })
    ));
}

#[test]
fn gather_rows_scatters_additively() {
    let mut g = Graph::new();
    let table = g.param(Tensor::zeros(&[4, 2]));
    let rows = g.gather_rows(table, &[1, 3, 1]).unwrap();
    let s = g.sum(rows);
    let grads = g.backward(s).unwrap();
    assert_eq!(
        grads.get(table).unwrap().data(),
        &[0.0, 0.0, 2.0, 2.0, 0.0, 0.0, 1.0, 1.0]
    );
    assert!(g.gather_rows(table, &[4]).is_err());
}

#[test]
fn fan_out_gradients_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random(&mut rng, &[5], -2.0, 2.0);

    let mut g = Graph::new();
    let xv = g.param(x.clone());
    let f = g.exp(xv);
    let gx = g.relu(xv);
    let y = g.add(f, gx).unwrap();
    let s = g.sum(y);
    let combined = g.backward(s).unwrap().get(xv).unwrap().clone();

    let mut g1 = Graph::new();
    let x1 = g1.param(x.clone());
    let f1 = g1.exp(x1);
    let s1 = g1.sum(f1);
    let d1 = g1.backward(s1).unwrap().get(x1).unwrap().clone();

    let mut g2 = Graph::new();
    let x2 = g2.param(x.clone());
    let f2 = g2.relu(x2);
    let s2 = g2.sum(f2);
    let d2 = g2.backward(s2).unwrap().get(x2).unwrap().clone();

    for i in 0..5 {
        assert_eq!(combined.data()[i], d1.data()[i] + d2.data()[i]);
    }
}

#[test]
fn non_scalar_root_rejected() {
    let mut g = Graph::new();
    let x = g.param(Tensor::zeros(&[2]));
    assert!(matches!(g.backward(x), Err(AutodiffError::NonScalarRoot(_))));
}

#[test]
fn constant_only_graph_has_no_gradients() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::vector(vec![1.0, 2.0]));
    let s = g.sum(x);
    let grads = g.backward(s).unwrap();
    assert!(grads.get(x).is_none());
}

/// Every registered op, checked against central differences on random inputs.
#[test]
fn every_op_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..5 {
        let a = random(&mut rng, &[3, 4], -1.0, 1.0);
        let b = random(&mut rng, &[3, 4], -1.0, 1.0);
        let w = random(&mut rng, &[4, 2], -1.0, 1.0);
        let v = random(&mut rng, &[4], -1.0, 1.0);
        let c = random(&mut rng, &[3], -1.0, 1.0);
        let pos = random(&mut rng, &[3, 4], 0.2, 2.0);
        let t4 = random(&mut rng, &[2, 3, 4, 2], -1.0, 1.0);

        assert_grads(vec![a.clone(), w.clone()], |g, x| {
            let y = g.matmul(x[0], x[1]).unwrap();
            weighted_sum(g, y)
        });
        assert_grads(vec![a.clone()], |g, x| {
            let y = g.transpose(x[0]).unwrap();
            weighted_sum(g, y)
        });
        assert_grads(vec![a.clone(), b.clone()], |g, x| {
            let y = g.add(x[0], x[1]).unwrap();
            weighted_sum(g, y)
        });
        assert_grads(vec![a.clone(), b.clone()], |g, x| {
            let y = g.sub(x[0], x[1]).unwrap();
            weighted_sum(g, y)
        });
        assert_grads(vec![a.clone(), b.clone()], |g, x| {
            let y = g.mul(x[0], x[1]).unwrap();
            weighted_sum(g, y)
        });
        assert_grads(vec![a.clone()], |g, x| {
            let y = g.scale(x[0], -1.7);
            let y = g.add_scalar(y, 0.4);
            weighted_sum(g, y)
        });
        assert_grads(vec![a.clone(), v.clone()], |g, x| {
            let y = g.scale_by(x[0], x[1], 2).unwrap();
            weighted_sum(g, y)
        });
        assert_grads(vec![a.clone(), v.clone()], |g, x| {
            let y = g.add_row(x[0], x[1]).unwrap();
            weighted_sum(g, y)
        });
        assert_grads(vec![a.clone(), c.clone()], |g, x| {
            let y = g.mul_col(x[0], x[1]).unwrap();
            weighted_sum(g, y)
        });
        assert_grads(vec![v.clone()], |g, x| {
            let y = g.broadcast_rows(x[0], 3);
            weighted_sum(g, y)
        });
        assert_grads(vec![a.clone()], |g, x| {
            let y = g.relu(x[0]);
            weighted_sum(g, y)
        });
        assert_grads(vec![a.clone()], |g, x| {
            let y = g.sigmoid(x[0]);
            weighted_sum(g, y)
        });
        assert_grads(vec![a.clone()], |g, x| {
            let y = g.exp(x[0]);
            weighted_sum(g, y)
        });
        assert_grads(vec![pos.clone()], |g, x| {
            let y = g.log(x[0]);
            weighted_sum(g, y)
        });
        assert_grads(vec![a.clone()], |g, x| {
            let y = g.clamp(x[0], -0.5, 0.5);
            weighted_sum(g, y)
        });
        assert_grads(vec![a.clone()], |g, x| {
            let y = g.mean(x[0]).unwrap();
            g.scale(y, 3.0)
        });
        for axis in 0..4 {
            assert_grads(vec![t4.clone()], |g, x| {
                let y = g.sum_axis(x[0], axis).unwrap();
                weighted_sum(g, y)
            });
            assert_grads(vec![t4.clone()], |g, x| {
                let y = g.mean_axis(x[0], axis).unwrap();
                weighted_sum(g, y)
            });
            assert_grads(vec![t4.clone()], |g, x| {
                let len = g.shape(x[0])[axis] - 1;
                let y = g.slice_window(x[0], axis, 1, len).unwrap();
                weighted_sum(g, y)
            });
        }
        for axis in 0..2 {
            assert_grads(vec![a.clone(), b.clone()], |g, x| {
                let y = g.concat(&[x[0], x[1], x[0]], axis).unwrap();
                weighted_sum(g, y)
            });
        }
        assert_grads(vec![t4.clone()], |g, x| {
            let y = g.reshape(x[0], &[6, 8]).unwrap();
            let y = g.flatten(y);
            weighted_sum(g, y)
        });
        assert_grads(vec![a.clone()], |g, x| {
            let y = g.gather_rows(x[0], &[2, 0, 2, 1]).unwrap();
            weighted_sum(g, y)
        });
        assert_grads(vec![a.clone()], |g, x| {
            let y = g.gather(x[0], vec![11, 0, 5, 5, 7, 3], &[2, 3]).unwrap();
            weighted_sum(g, y)
        });
        assert_grads(vec![a.clone()], |g, x| {
            let y = g.row_normalize(x[0], 1e-12).unwrap();
            weighted_sum(g, y)
        });
        assert_grads(vec![a.clone()], |g, x| {
            let y = g.logsumexp_rows(x[0]).unwrap();
            weighted_sum(g, y)
        });
        assert_grads(vec![v.clone(), w.clone()], |g, x| {
            let col = g.slice_window(x[1], 1, 0, 1).unwrap();
            let col = g.flatten(col);
            g.cosine_similarity(x[0], col, 1e-12).unwrap()
        });
    }
}

#[test]
fn forward_is_bit_identical_across_runs() {
    let build = || {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = random(&mut rng, &[8, 6], -1.0, 1.0);
        let w = random(&mut rng, &[6, 5], -1.0, 1.0);
        let mut g = Graph::new();
        let av = g.param(a);
        let wv = g.param(w);
        let h = g.matmul(av, wv).unwrap();
        let h = g.relu(h);
        let n = g.row_normalize(h, 1e-12).unwrap();
        let l = g.logsumexp_rows(n).unwrap();
        let s = g.sum(l);
        let grads = g.backward(s).unwrap();
        (g.value(s).item().to_bits(), grads.get(wv).unwrap().clone())
    };
    let (a, ga) = build();
    let (b, gb) = build();
    assert_eq!(a, b);
    assert_eq!(
        ga.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        gb.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn cosine_in_range_and_gradients_match(
        a in proptest::collection::vec(-3.0f64..3.0, 5),
        b in proptest::collection::vec(-3.0f64..3.0, 5),
    ) {
        let mut g = Graph::new();
        let av = g.constant(Tensor::vector(a.clone()));
        let bv = g.constant(Tensor::vector(b.clone()));
        let c = g.cosine_similarity(av, bv, 1e-12).unwrap();
        let s = g.value(c).item();
        prop_assert!((-1.0 - 1e-9..=1.0 + 1e-9).contains(&s));

        let report = grad_check(vec![Tensor::vector(a), Tensor::vector(b)], |g, x| {
            g.cosine_similarity(x[0], x[1], 1e-12).unwrap()
        });
        prop_assert!(report.passed(), "{:?}", report);
    }

    #[test]
    fn mlp_chain_matches_finite_differences(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&mut rng, &[4, 3], -1.0, 1.0);
        let w1 = random(&mut rng, &[3, 5], -1.0, 1.0);
        let b1 = random(&mut rng, &[5], -0.5, 0.5);
        let w2 = random(&mut rng, &[5, 1], -1.0, 1.0);
        let report = grad_check(vec![x, w1, b1, w2], |g, v| {
            let h = g.matmul(v[0], v[1]).unwrap();
            let h = g.add_row(h, v[2]).unwrap();
            let h = g.relu(h);
            let o = g.matmul(h, v[3]).unwrap();
            let p = g.sigmoid(o);
            let l = g.log(p);
            g.mean(l).unwrap()
        });
        prop_assert!(report.rel_fraction() >= 0.99 && report.passed(), "{:?}", report);
    }
}
