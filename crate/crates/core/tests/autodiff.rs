use dttd_core::numerics::{grad_check, primitive_gradchecks, Graph, NumericsError, OpKind, Tensor, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-6;
const TOL: f64 = 1e-5;

fn rand_t(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

#[test]
fn relu_and_softmax_examples() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::vector(vec![-1.0, 0.0, 2.0]));
    let r = g.relu(x);
    assert_eq!(g.value(r).data(), &[0.0, 0.0, 2.0]);
    let z = g.constant(Tensor::vector(vec![0.0, 0.0]));
    let s = g.softmax(z);
    assert_eq!(g.value(s).data(), &[0.5, 0.5]);
}

#[test]
fn matmul_matches_triple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a = rand_t(&mut rng, &[2, 3]);
    let b = rand_t(&mut rng, &[3, 2]);
    let mut g = Graph::new();
    let (va, vb) = (g.constant(a.clone()), g.constant(b.clone()));
    let c = g.matmul(va, vb).unwrap();
    for i in 0..2 {
        for j in 0..2 {
            let mut want = 0.0;
            for k in 0..3 {
                want += a.at2(i, k) * b.at2(k, j);
            }
            assert!((g.value(c).at2(i, j) - want).abs() < 1e-12);
        }
    }
    let bt = g.transpose(vb).unwrap();
    let c2 = g.matmul_nt(va, bt).unwrap();
    assert!(g.value(c).max_abs_diff(g.value(c2)) < 1e-15);
}

#[test]
fn shape_errors_name_the_op() {
    let mut g = Graph::new();
    let a = g.constant(Tensor::zeros(&[2, 3]));
    let b = g.constant(Tensor::zeros(&[2, 3]));
    let err = g.matmul(a, b).unwrap_err();
    assert_eq!(
        err,
        NumericsError::ShapeMismatch {
            op: "matmul",
            lhs: vec![2, 3],
            rhs: vec![2, 3]
        }
    );
    assert!(err.to_string().contains("matmul"));
    let c = g.constant(Tensor::zeros(&[4]));
    assert!(g.add(a, c).is_err());
}

#[test]
fn log_of_nonpositive_is_an_error() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::vector(vec![1.0, 0.0]));
    assert!(matches!(g.log(x), Err(NumericsError::NonPositiveLog(_))));
}

#[test]
fn backward_basics() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::vector(vec![1.0, -2.0, 3.0]));
    let s = g.sum(x);
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.get(x).data(), &[1.0, 1.0, 1.0]);

    let mut g = Graph::new();
    let x = g.leaf(Tensor::scalar(3.0));
    let y = g.mul(x, x).unwrap();
    let grads = g.backward(y).unwrap();
    assert_eq!(grads.get(x).item(), 6.0);
}

#[test]
fn non_scalar_loss_rejected() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::vector(vec![1.0, 2.0]));
    assert!(matches!(g.backward(x), Err(NumericsError::NonScalarLoss { .. })));
}

#[test]
fn unused_input_gets_exact_zero() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::vector(vec![1.0, 2.0]));
    let unused = g.leaf(Tensor::vector(vec![5.0, 6.0, 7.0]));
    let _dangling = g.mul(unused, unused).unwrap();
    let y = g.mul(x, x).unwrap();
    let loss = g.sum(y);
    let grads = g.backward(loss).unwrap();
    assert!(grads.get(unused).data().iter().all(|v| *v == 0.0));
    assert_eq!(grads.get(x).data(), &[2.0, 4.0]);
}

#[test]
fn tagged_dispatch_matches_methods() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut g = Graph::new();
    let a = g.constant(rand_t(&mut rng, &[3, 4]));
    let b = g.constant(rand_t(&mut rng, &[4, 2]));
    let m1 = g.apply(OpKind::MatMul, &[a, b]).unwrap();
    let m2 = g.matmul(a, b).unwrap();
    assert_eq!(g.value(m1), g.value(m2));
    let mx = g.apply(OpKind::MaxReduce { axis: 0 }, &[a]).unwrap();
    assert_eq!(g.shape(mx), &[4]);
    assert!(g.apply(OpKind::Add, &[a]).is_err());
}

fn mlp_loss(g: &mut Graph, v: &[Var]) -> Result<Var, NumericsError> {
    let (x, w1, b1, w2, b2, w3, b3) = (v[0], v[1], v[2], v[3], v[4], v[5], v[6]);
    let h = g.matmul(x, w1)?;
    let h = g.add(h, b1)?;
    let h = g.sigmoid(h);
    let h = g.matmul(h, w2)?;
    let h = g.add(h, b2)?;
    let h = g.relu(h);
    let h = g.matmul(h, w3)?;
    let h = g.add(h, b3)?;
    let sq = g.mul(h, h)?;
    Ok(g.mean(sq))
}

#[test]
fn three_layer_mlp_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let inputs = vec![
        rand_t(&mut rng, &[5, 4]),
        rand_t(&mut rng, &[4, 6]),
        rand_t(&mut rng, &[6]),
        rand_t(&mut rng, &[6, 5]),
        rand_t(&mut rng, &[5]),
        rand_t(&mut rng, &[5, 2]),
        rand_t(&mut rng, &[2]),
    ];
    let report = grad_check::<NumericsError, _>(mlp_loss, &inputs, H).unwrap();
    assert!(report.passes(TOL), "{report:?}");
}

#[test]
fn every_primitive_matches_finite_differences() {
    let mut names = Vec::new();
    for point in 0..10u64 {
        for (name, report) in primitive_gradchecks(1000 + point, H).unwrap() {
            assert!(report.passes(TOL), "{name} point {point}: {report:?}");
            if point == 0 {
                names.push(name);
            }
        }
    }
    for expected in ["matmul", "softmax", "layer_norm", "dft", "idft", "chamfer", "attention"] {
        assert!(names.contains(&expected), "{expected} missing");
    }
}

#[test]
fn dft_op_round_trips_and_matches_library_transform() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = rand_t(&mut rng, &[16, 4]);
    let mut g = Graph::new();
    let v = g.constant(x.clone());
    let f = g.dft_rows(v, false).unwrap();
    let back = g.dft_rows(f, true).unwrap();
    assert!(g.value(back).max_abs_diff(&x) < 1e-12);

    let col = dttd_core::numerics::ComplexSeq::new(
        (0..16).map(|r| x.at2(r, 1)).collect(),
        (0..16).map(|r| x.at2(r, 3)).collect(),
    )
    .unwrap();
    let want = dttd_core::numerics::dft(&col);
    for r in 0..16 {
        assert!((g.value(f).at2(r, 1) - want.real[r]).abs() < 1e-12);
        assert!((g.value(f).at2(r, 3) - want.imag[r]).abs() < 1e-12);
    }
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(vals in prop::collection::vec(-30.0f64..30.0, 12)) {
        let mut g = Graph::new();
        let x = g.constant(Tensor::matrix(3, 4, vals).unwrap());
        let s = g.softmax(x);
        let t = g.value(s);
        for r in 0..3 {
            prop_assert!(t.row(r).iter().all(|v| *v >= 0.0));
            let sum: f64 = t.row(r).iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-12);
        }
    }
}
