use super::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn randn_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    use rand_distr::{Distribution, StandardNormal};
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

#[test]
fn matmul_identity_passes_through() {
    let eye = Tensor::from_vec(&[3, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
    let a = Tensor::from_vec(&[3, 3], vec![2.0, -1.5, 0.25, 3.0, 4.0, -2.0, 0.5, 7.0, 9.0]).unwrap();
    let out = eye.matmul(&a).unwrap();
    assert_eq!(out.to_vec(), a.to_vec());
}

#[test]
fn softmax_of_equal_logits_is_uniform() {
    let x = Tensor::from_vec(&[3], vec![0.0, 0.0, 0.0]).unwrap();
    let s = x.softmax().unwrap();
    for v in s.to_vec() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
}

#[test]
fn layer_norm_matches_straight_line_reference() {
    // Independent reference: evaluate (x - mean) / sqrt(var + eps) by hand.
    let x = vec![1.0, 2.0, 3.0];
    let eps = 1e-5;
    let mean = (1.0 + 2.0 + 3.0) / 3.0;
    let var = ((1.0f64 - mean).powi(2) + (2.0f64 - mean).powi(2) + (3.0f64 - mean).powi(2)) / 3.0;
    let expected: Vec<f64> = x.iter().map(|v| (v - mean) / (var + eps).sqrt()).collect();

    let t = Tensor::from_vec(&[3], x).unwrap();
    let gain = Tensor::full(&[3], 1.0).unwrap();
    let bias = Tensor::zeros(&[3]).unwrap();
    let out = t.layer_norm(&gain, &bias, eps).unwrap();
    for (a, e) in out.to_vec().iter().zip(&expected) {
        assert!((a - e).abs() < 1e-12, "got {a}, want {e}");
    }
}

#[test]
fn backward_of_sum_of_squares() {
    let x = Tensor::param(&[2], vec![1.0, 2.0]).unwrap();
    let loss = x.mul(&x).unwrap().sum_all().unwrap();
    loss.backward().unwrap();
    assert_eq!(x.grad().unwrap(), vec![2.0, 4.0]);
}

#[test]
fn cross_entropy_symmetric_two_way_gradient() {
    let logits = Tensor::param(&[1, 2], vec![0.0, 0.0]).unwrap();
    let loss = logits.cross_entropy(&[0]).unwrap();
    loss.backward().unwrap();
    let g = logits.grad().unwrap();
    assert!((g[0] + 0.5).abs() < 1e-15);
    assert!((g[1] - 0.5).abs() < 1e-15);
}

#[test]
fn gradient_accumulates_across_backward_calls() {
    let x = Tensor::param(&[2], vec![1.0, 2.0]).unwrap();
    let loss = x.mul(&x).unwrap().sum_all().unwrap();
    loss.backward().unwrap();
    let once = x.grad().unwrap();
    loss.backward().unwrap();
    let twice = x.grad().unwrap();
    for (a, b) in once.iter().zip(&twice) {
        assert_eq!(*b, 2.0 * *a); // exactly 2x, bitwise
    }
    x.zero_grad();
    assert!(x.grad().unwrap().iter().all(|&v| v == 0.0));
}

#[test]
fn forward_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a = Tensor::from_vec(&[4, 4], randn_vec(16, &mut rng)).unwrap();
    let b = Tensor::from_vec(&[4, 4], randn_vec(16, &mut rng)).unwrap();
    let r1 = a.matmul(&b).unwrap().softmax().unwrap().to_vec();
    let r2 = a.matmul(&b).unwrap().softmax().unwrap().to_vec();
    assert_eq!(r1, r2); // bit-identical
}

#[test]
fn shape_errors_name_the_op() {
    let a = Tensor::zeros(&[2, 3]).unwrap();
    let b = Tensor::zeros(&[4, 2]).unwrap();
    let err = a.matmul(&b).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("matmul"), "{msg}");
    assert!(msg.contains("[2, 3]") && msg.contains("[4, 2]"), "{msg}");

    let err = a.add(&b).unwrap_err();
    assert!(err.to_string().contains("add"));
}

#[test]
fn zero_size_shapes_are_rejected() {
    assert!(Tensor::from_vec(&[0], vec![]).is_err());
    assert!(Tensor::zeros(&[3, 0]).is_err());
}

#[test]
fn non_scalar_backward_rejected() {
    let x = Tensor::param(&[2], vec![1.0, 2.0]).unwrap();
    let y = x.scale(2.0).unwrap();
    assert!(matches!(
        y.backward(),
        Err(TensorError::NonScalarLoss { .. })
    ));
}

#[test]
fn finite_diff_linear_function_is_exact() {
    let x = Tensor::param(&[4], vec![0.3, -1.2, 2.0, 0.7]).unwrap();
    let err = finite_diff_check(|x| x.sum_all(), &x, 1e-4).unwrap();
    assert!(err < 1e-9, "err={err}");
}

#[test]
fn finite_diff_cubic_is_second_order_accurate() {
    let x = Tensor::param(&[1], vec![1.0]).unwrap();
    let err = finite_diff_check(
        |x| x.mul(x)?.mul(x)?.sum_all(),
        &x,
        1e-4,
    )
    .unwrap();
    assert!(err < 1e-6, "err={err}");
}

#[test]
fn finite_diff_rejects_bad_eps() {
    let x = Tensor::param(&[1], vec![1.0]).unwrap();
    assert!(matches!(
        finite_diff_check(|x| x.sum_all(), &x, 0.0),
        Err(TensorError::InvalidEps { .. })
    ));
    assert!(matches!(
        finite_diff_check(|x| x.sum_all(), &x, 0.5),
        Err(TensorError::InvalidEps { .. })
    ));
}

#[test]
fn two_layer_mlp_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let w1 = Tensor::param(&[3, 5], randn_vec(15, &mut rng)).unwrap();
    let b1 = Tensor::param(&[5], randn_vec(5, &mut rng)).unwrap();
    let w2 = Tensor::param(&[5, 2], randn_vec(10, &mut rng)).unwrap();
    let b2 = Tensor::param(&[2], randn_vec(2, &mut rng)).unwrap();
    let x = Tensor::from_vec(&[2, 3], randn_vec(6, &mut rng)).unwrap();
    let target = Tensor::from_vec(&[2, 2], randn_vec(4, &mut rng)).unwrap();

    let forward = |w1: &Tensor, b1: &Tensor, w2: &Tensor, b2: &Tensor| -> Result<Tensor, TensorError> {
        let h = x.matmul(w1)?.add_bias(b1)?.gelu()?;
        let y = h.matmul(w2)?.add_bias(b2)?;
        y.mse(&target)
    };

    for (name, p) in [("w1", &w1), ("b1", &b1), ("w2", &w2), ("b2", &b2)] {
        let err = finite_diff_check(|_| forward(&w1, &b1, &w2, &b2), p, 1e-4).unwrap();
        assert!(err < 1e-4, "{name}: err={err}");
    }
}

/// Every op in the suite, exercised through a scalarizing loss on random
/// inputs, must agree with central differences to 1e-4 relative error.
#[test]
fn per_op_finite_difference_sweep() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    type LossFn = Box<dyn Fn(&Tensor) -> Result<Tensor, TensorError>>;

    let other = Tensor::from_vec(&[3, 4], randn_vec(12, &mut rng)).unwrap();
    let square = Tensor::from_vec(&[4, 4], randn_vec(16, &mut rng)).unwrap();
    let gain = Tensor::from_vec(&[4], randn_vec(4, &mut rng)).unwrap();
    let bias = Tensor::from_vec(&[4], randn_vec(4, &mut rng)).unwrap();
    let target = Tensor::from_vec(&[3, 4], randn_vec(12, &mut rng)).unwrap();

    let cases: Vec<(&str, LossFn)> = vec![
        ("add", Box::new({
            let other = other.clone();
            move |x| x.add(&other)?.mse(&Tensor::zeros(&[3, 4])?)
        })),
        ("mul", Box::new({
            let other = other.clone();
            move |x| x.mul(&other)?.sum_all()
        })),
        ("matmul", Box::new({
            let square = square.clone();
            move |x| x.matmul(&square)?.mse(&Tensor::zeros(&[3, 4])?)
        })),
        ("transpose", Box::new(|x| x.transpose()?.mse(&Tensor::zeros(&[4, 3])?))),
        ("reshape", Box::new(|x| x.reshape(&[4, 3])?.mse(&Tensor::zeros(&[4, 3])?))),
        ("slice_rows", Box::new(|x| x.slice_rows(1, 2)?.sum_all())),
        ("slice_cols", Box::new(|x| x.slice_cols(1, 2)?.mse(&Tensor::zeros(&[3, 2])?))),
        ("concat_rows", Box::new(|x| {
            Tensor::concat_rows(&[x.slice_rows(2, 1)?, x.slice_rows(0, 2)?])?.mse(&Tensor::zeros(&[3, 4])?)
        })),
        ("concat_cols", Box::new(|x| {
            Tensor::concat_cols(&[x.slice_cols(2, 2)?, x.slice_cols(0, 2)?])?.sum_all()
        })),
        ("softmax", Box::new({
            let target = target.clone();
            move |x| x.softmax()?.mse(&target)
        })),
        ("layer_norm", Box::new({
            let gain = gain.clone();
            let bias = bias.clone();
            let target = target.clone();
            move |x| x.layer_norm(&gain, &bias, 1e-5)?.mse(&target)
        })),
        ("gelu", Box::new(|x| x.gelu()?.sum_all())),
        ("cross_entropy", Box::new(|x| x.cross_entropy(&[1, 3, 0]))),
        ("mse", Box::new({
            let target = target.clone();
            move |x| x.mse(&target)
        })),
        ("scale", Box::new(|x| x.scale(-2.5)?.sum_all())),
        ("add_bias", Box::new({
            let gain = gain.clone();
            move |x| x.add_bias(&gain)?.mse(&Tensor::zeros(&[3, 4])?)
        })),
    ];

    for (name, f) in &cases {
        let x = Tensor::param(&[3, 4], randn_vec(12, &mut rng)).unwrap();
        let err = finite_diff_check(f, &x, 1e-4).unwrap();
        assert!(err < 1e-4, "{name}: err={err}");
    }

    // embedding and layer-norm gain/bias paths, differentiating the tables.
    let table = Tensor::param(&[5, 4], randn_vec(20, &mut rng)).unwrap();
    let err = finite_diff_check(|t| t.embedding(&[3, 1, 1, 4])?.sum_all(), &table, 1e-4).unwrap();
    assert!(err < 1e-4, "embedding: err={err}");

    let x = Tensor::from_vec(&[3, 4], randn_vec(12, &mut rng)).unwrap();
    let g = Tensor::param(&[4], randn_vec(4, &mut rng)).unwrap();
    let b = Tensor::param(&[4], randn_vec(4, &mut rng)).unwrap();
    let err = finite_diff_check(
        |g| x.layer_norm(g, &b, 1e-5)?.mse(&target),
        &g,
        1e-4,
    )
    .unwrap();
    assert!(err < 1e-4, "layer_norm gain: err={err}");
    let err = finite_diff_check(
        |b| x.layer_norm(&g, b, 1e-5)?.mse(&target),
        &b,
        1e-4,
    )
    .unwrap();
    assert!(err < 1e-4, "layer_norm bias: err={err}");

    let bias_p = Tensor::param(&[4], randn_vec(4, &mut rng)).unwrap();
    let err = finite_diff_check(|bp| x.add_bias(bp)?.sum_all(), &bias_p, 1e-4).unwrap();
    assert!(err < 1e-4, "add_bias bias: err={err}");
}

#[test]
fn embedding_rejects_out_of_range_ids() {
    let table = Tensor::zeros(&[4, 2]).unwrap();
    assert!(matches!(
        table.embedding(&[4]),
        Err(TensorError::IndexOutOfBounds { .. })
    ));
}

#[test]
fn unreached_leaf_keeps_absent_gradient() {
    let x = Tensor::param(&[2], vec![1.0, 2.0]).unwrap();
    let unused = Tensor::param(&[2], vec![3.0, 4.0]).unwrap();
    let loss = x.sum_all().unwrap();
    loss.backward().unwrap();
    assert!(x.grad().is_some());
    assert!(unused.grad().is_none());
}

#[test]
fn shared_subgraph_gradients_sum() {
    // y = x + x => dy/dx = 2
    let x = Tensor::param(&[2], vec![1.0, -1.0]).unwrap();
    let loss = x.add(&x).unwrap().sum_all().unwrap();
    loss.backward().unwrap();
    assert_eq!(x.grad().unwrap(), vec![2.0, 2.0]);
}
