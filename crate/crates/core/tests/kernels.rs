//! Tensor kernels against nested-loop scalar oracles.

mod common;

use common::kernels::{
    batchnorm_oracle, block_diagonal, conv_oracle, dense_oracle, kernel_suite, pool_oracle, scaled_error, softmax_oracle,
};
use leaflite::tensor::{
    argmax, batchnorm, conv2d, dense, depthwise_conv2d, global_avg_pool, relu6, residual_add, softmax, Padding,
    Tensor,
};
use proptest::prelude::*;

fn assert_close(got: &Tensor, want: &[f64], rel: f64) {
    assert_eq!(got.len(), want.len());
    let err = scaled_error(got.data(), want);
    assert!(err <= rel, "scaled error {err}");
}

fn values(len: usize) -> impl Strategy<Value = Vec<f32>> {
    prop::collection::vec(-2.0f32..2.0, len)
}

#[derive(Debug, Clone)]
struct ConvCase {
    n: usize,
    h: usize,
    w: usize,
    cin: usize,
    cout: usize,
    k: usize,
    stride: usize,
    same: bool,
}

fn conv_case() -> impl Strategy<Value = ConvCase> {
    (1usize..3, 3usize..9, 3usize..9, 1usize..5, 1usize..5, prop::sample::select(vec![1usize, 3]), 1usize..3, any::<bool>())
        .prop_map(|(n, h, w, cin, cout, k, stride, same)| ConvCase {
            n,
            h,
            w,
            cin,
            cout,
            k,
            stride,
            same,
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn conv2d_matches_oracle(
        case in conv_case(),
        seed_x in values(2 * 8 * 8 * 4),
        seed_w in values(3 * 3 * 4 * 4),
        seed_b in values(4),
        with_bias in any::<bool>(),
    ) {
        let ConvCase { n, h, w, cin, cout, k, stride, same } = case;
        let padding = if same { Padding::Same } else { Padding::Valid };
        let x = seed_x[..n * h * w * cin].to_vec();
        let wt = seed_w[..k * k * cin * cout].to_vec();
        let bias = with_bias.then(|| seed_b[..cout].to_vec());
        let xt = Tensor::new(vec![n, h, w, cin], x.clone()).unwrap();
        let wtt = Tensor::new(vec![k, k, cin, cout], wt.clone()).unwrap();
        let got = conv2d(&xt, &wtt, bias.as_deref(), stride, padding).unwrap();
        let (want, dims) = conv_oracle(&x, [n, h, w, cin], &wt, k, cout, bias.as_deref(), stride, padding);
        prop_assert_eq!(got.dims(), &dims[..]);
        assert_close(&got, &want, 1e-5);
    }

    #[test]
    fn depthwise_matches_block_diagonal_conv(
        case in conv_case(),
        seed_x in values(2 * 8 * 8 * 4),
        seed_w in values(3 * 3 * 4),
    ) {
        let ConvCase { n, h, w, cin: c, k, stride, same, .. } = case;
        let padding = if same { Padding::Same } else { Padding::Valid };
        let x = seed_x[..n * h * w * c].to_vec();
        let wd = seed_w[..k * k * c].to_vec();
        let full = block_diagonal(&wd, k, c);
        let xt = Tensor::new(vec![n, h, w, c], x.clone()).unwrap();
        let got = depthwise_conv2d(&xt, &Tensor::new(vec![k, k, c], wd).unwrap(), stride, padding).unwrap();
        let (want, dims) = conv_oracle(&x, [n, h, w, c], &full, k, c, None, stride, padding);
        prop_assert_eq!(got.dims(), &dims[..]);
        assert_close(&got, &want, 1e-5);
    }

    #[test]
    fn batchnorm_matches_scalar_formula(
        (n, c) in (1usize..20, 1usize..6),
        x in values(20 * 6),
        gamma in values(6),
        beta in values(6),
        mean in values(6),
        var in prop::collection::vec(0.0f32..3.0, 6),
        eps in 1e-5f32..1e-2,
    ) {
        let x = &x[..n * c];
        let got = batchnorm(&Tensor::new(vec![n, c], x.to_vec()).unwrap(), &gamma[..c], &beta[..c], &mean[..c], &var[..c], eps).unwrap();
        let want = batchnorm_oracle(x, c, &gamma[..c], &beta[..c], &mean[..c], &var[..c], eps);
        assert_close(&got, &want, 1e-5);
    }

    #[test]
    fn dense_matches_matmul(
        (n, f, u) in (1usize..5, 1usize..9, 1usize..7),
        x in values(5 * 8),
        w in values(8 * 6),
        b in values(6),
    ) {
        let (x, w, b) = (&x[..n * f], &w[..f * u], &b[..u]);
        let got = dense(&Tensor::new(vec![n, f], x.to_vec()).unwrap(), &Tensor::new(vec![f, u], w.to_vec()).unwrap(), b).unwrap();
        let want = dense_oracle(x, n, f, w, b);
        assert_close(&got, &want, 1e-5);
    }

    #[test]
    fn softmax_matches_exp_ratio(
        (n, u) in (1usize..5, 1usize..11),
        x in prop::collection::vec(-30.0f32..30.0, 50),
    ) {
        let x = &x[..n * u];
        let got = softmax(&Tensor::new(vec![n, u], x.to_vec()).unwrap()).unwrap();
        let want = softmax_oracle(x, u);
        for (i, (&g, &w)) in got.data().iter().zip(&want).enumerate() {
            prop_assert!((g as f64 - w).abs() <= 1e-5 * w.max(1e-6) + 1e-7, "element {}: {} vs {}", i, g, w);
        }
        for row in got.data().chunks(u) {
            prop_assert!((row.iter().map(|&v| v as f64).sum::<f64>() - 1.0).abs() <= 1e-6);
        }
    }

    #[test]
    fn pooling_matches_mean(
        (n, h, w, c) in (1usize..3, 1usize..7, 1usize..7, 1usize..5),
        x in values(2 * 6 * 6 * 4),
    ) {
        let x = &x[..n * h * w * c];
        let got = global_avg_pool(&Tensor::new(vec![n, h, w, c], x.to_vec()).unwrap()).unwrap();
        prop_assert_eq!(got.dims(), &[n, 1, 1, c][..]);
        let want = pool_oracle(x, n, h * w, c);
        assert_close(&got, &want, 1e-6);
    }

    #[test]
    fn relu6_is_clamp(x in prop::collection::vec(-20.0f32..20.0, 1..64)) {
        let got = relu6(&Tensor::new(vec![x.len()], x.clone()).unwrap());
        for (&g, &v) in got.data().iter().zip(&x) {
            prop_assert_eq!(g, v.clamp(0.0, 6.0));
        }
    }

    #[test]
    fn residual_add_commutes(a in values(24), b in values(24)) {
        let ta = Tensor::new(vec![1, 2, 3, 4], a.clone()).unwrap();
        let tb = Tensor::new(vec![1, 2, 3, 4], b).unwrap();
        prop_assert_eq!(residual_add(&ta, &tb).unwrap(), residual_add(&tb, &ta).unwrap());
        let neg = Tensor::new(vec![1, 2, 3, 4], a.iter().map(|v| -v).collect()).unwrap();
        prop_assert!(residual_add(&ta, &neg).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn batch_rows_are_independent(x in values(2 * 5 * 5 * 2), w in values(3 * 3 * 2 * 3)) {
        let wt = Tensor::new(vec![3, 3, 2, 3], w).unwrap();
        let both = conv2d(&Tensor::new(vec![2, 5, 5, 2], x.clone()).unwrap(), &wt, None, 2, Padding::Same).unwrap();
        let mut swapped = x[50..].to_vec();
        swapped.extend_from_slice(&x[..50]);
        let rev = conv2d(&Tensor::new(vec![2, 5, 5, 2], swapped).unwrap(), &wt, None, 2, Padding::Same).unwrap();
        let half = both.len() / 2;
        prop_assert_eq!(&both.data()[..half], &rev.data()[half..]);
        prop_assert_eq!(&both.data()[half..], &rev.data()[..half]);
    }
}

#[test]
fn documented_small_cases() {
    let ones = Tensor::filled(&[1, 5, 5, 1], 1.0);
    let k = Tensor::filled(&[3, 3, 1, 1], 1.0);
    let out = conv2d(&ones, &k, None, 1, Padding::Valid).unwrap();
    assert_eq!(out.dims(), &[1, 3, 3, 1]);
    assert!(out.data().iter().all(|&v| v == 9.0));

    let pool = global_avg_pool(&Tensor::new(vec![1, 2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap()).unwrap();
    assert_eq!(pool.data(), &[2.5]);

    let d = dense(
        &Tensor::new(vec![1, 2], vec![1.0, 1.0]).unwrap(),
        &Tensor::new(vec![2, 1], vec![1.0, 1.0]).unwrap(),
        &[1.0],
    )
    .unwrap();
    assert_eq!(d.data(), &[3.0]);

    let r = relu6(&Tensor::new(vec![3], vec![7.0, -1.0, 3.5]).unwrap());
    assert_eq!(r.data(), &[6.0, 0.0, 3.5]);

    let s = softmax(&Tensor::new(vec![2, 2], vec![0.0, 0.0, 1000.0, 0.0]).unwrap()).unwrap();
    assert_eq!(s.data(), &[0.5, 0.5, 1.0, 0.0]);

    let shifted = softmax(&Tensor::new(vec![1, 3], vec![1.0 + 5.0, 2.0 + 5.0, 3.0 + 5.0]).unwrap()).unwrap();
    let base = softmax(&Tensor::new(vec![1, 3], vec![1.0, 2.0, 3.0]).unwrap()).unwrap();
    for (a, b) in shifted.data().iter().zip(base.data()) {
        assert!((a - b).abs() < 1e-6);
    }

    let bn = batchnorm(&Tensor::new(vec![1, 2], vec![1.0, -1.0]).unwrap(), &[1.0; 2], &[0.0; 2], &[0.0; 2], &[0.0; 2], 1e-3).unwrap();
    assert!(bn.all_finite());

    assert_eq!(argmax(&[0.25, 0.25, 0.25, 0.25]), 0);
}

#[test]
fn depthwise_cost_identity() {
    // Depthwise k*k*C*HW plus pointwise C*Cout*HW against a full k*k*C*Cout*HW.
    let (k, c, cout, hw) = (3u64, 32u64, 64u64, 16 * 16);
    let separable = k * k * c * hw + c * cout * hw;
    let full = k * k * c * cout * hw;
    let ratio = separable as f64 / full as f64;
    assert!((ratio - (1.0 / cout as f64 + 1.0 / (k * k) as f64)).abs() < 1e-12);
}

#[test]
fn kernels_are_deterministic() {
    let x: Vec<f32> = (0..2 * 9 * 9 * 3).map(|i| ((i * 37 % 101) as f32 / 50.0) - 1.0).collect();
    let w: Vec<f32> = (0..3 * 3 * 3 * 5).map(|i| ((i * 13 % 29) as f32 / 14.0) - 1.0).collect();
    let xt = Tensor::new(vec![2, 9, 9, 3], x).unwrap();
    let wt = Tensor::new(vec![3, 3, 3, 5], w).unwrap();
    let a = conv2d(&xt, &wt, None, 2, Padding::Same).unwrap();
    let b = conv2d(&xt, &wt, None, 2, Padding::Same).unwrap();
    assert_eq!(a.data(), b.data());
}

#[test]
fn seeded_suite_stays_within_tolerance() {
    for (kernel, err) in kernel_suite(100, 17) {
        assert!(err <= 1e-5, "{kernel}: {err}");
    }
}
