use leaflite::analysis::parameter_count;
use leaflite::imageproc::Image;
use leaflite::model::{
    build_mobilenet_v2, build_mobilenet_v2_with, init_backbone_weights, load_weights, predict, Backbone,
    BatchNormParams, Bundle, BundleManifest, DenseParams, HeadParams, HeadSpec, Model, MOBILENET_V2_SEQUENCES,
};
use leaflite::random::stream;
use leaflite::tensor::Tensor;
use leaflite::weights::WeightStore;
use leaflite::{Error, WeightError};
use proptest::prelude::*;
use rand::Rng;

#[test]
fn canonical_graph_shapes() {
    let g = build_mobilenet_v2();
    assert_eq!(g.blocks.len(), 17);
    assert_eq!(MOBILENET_V2_SEQUENCES.iter().map(|s| s.repeats).sum::<usize>(), 17);
    assert_eq!(g.input_side, 256);
    assert_eq!((g.stem.kernel, g.stem.cin, g.stem.cout, g.stem.stride), (3, 3, 32, 2));
    assert_eq!(g.feature_map_side(), 8);
    assert_eq!(g.feature_dim(), 1280);
    assert_eq!(g.head.classes, 10);
    assert_eq!((g.head.hidden1, g.head.hidden2), (128, 64));
}

/// Spatial side and channels after every block, worked out from the
/// sequence table alone.
fn shape_trace(input: usize) -> Vec<(usize, usize)> {
    let table = [(1, 16, 1, 1), (6, 24, 2, 2), (6, 32, 3, 2), (6, 64, 4, 2), (6, 96, 3, 1), (6, 160, 3, 2), (6, 320, 1, 1)];
    let mut side = (input + 1) / 2;
    let mut out = Vec::new();
    for (_, c, r, s) in table {
        for i in 0..r {
            if i == 0 && s == 2 {
                side = (side + 1) / 2;
            }
            out.push((side, c));
        }
    }
    out
}

#[test]
fn block_shapes_match_independent_trace() {
    for input in [256, 224, 100, 33] {
        let g = build_mobilenet_v2_with(input, 4);
        let trace = shape_trace(input);
        for (b, &(side, c)) in g.blocks.iter().zip(&trace) {
            assert_eq!((b.project.out_side, b.cout()), (side, c), "block {} at input {input}", b.index);
        }
        assert_eq!(g.final_conv.out_side, trace[16].0);
    }
    let sides: Vec<usize> = shape_trace(256).iter().map(|t| t.0).collect();
    assert_eq!(*sides.last().unwrap(), 8);
    assert!(sides.contains(&128) && sides.contains(&64) && sides.contains(&32) && sides.contains(&16));
}

#[test]
fn residual_adds_only_where_legal() {
    let g = build_mobilenet_v2();
    let residual: Vec<usize> = g.blocks.iter().filter(|b| b.residual).map(|b| b.index).collect();
    assert_eq!(residual, vec![2, 4, 5, 7, 8, 9, 11, 12, 14, 15]);
    for b in &g.blocks {
        assert_eq!(b.residual, b.stride() == 1 && b.cin() == b.cout());
        assert!(!b.project.relu6);
        assert!(b.depthwise.relu6);
        assert_eq!(b.expand.is_none(), b.expansion == 1);
    }
    assert!(g.stem.relu6 && g.final_conv.relu6);
}

#[test]
fn backbone_parameters_near_reference_total() {
    let g = build_mobilenet_v2();
    let store = init_backbone_weights(&g, 0);
    let counted: usize = g.backbone_param_shapes().iter().map(|(_, d)| d.iter().product::<usize>()).sum();
    assert_eq!(store.scalar_count(), counted);
    let report = parameter_count(&g, &g.head);
    assert_eq!(report.backbone_params() as usize, counted);
    let rel = (counted as f64 - 2.28e6).abs() / 2.28e6;
    assert!(rel <= 0.02, "backbone {counted} off by {rel}");
}

#[test]
fn head_count_formula_agrees_with_analysis() {
    let spec = HeadSpec::new(1280, 10);
    let formula = 1280 * 2 * 2 + (1280 * 128 + 128) + (128 * 64 + 64) + 64 * 2 * 2 + (64 * 10 + 10);
    let head = HeadParams::init(&spec, 0.5, 0).unwrap();
    assert_eq!(head.param_count(), formula);
    let g = build_mobilenet_v2();
    assert_eq!(parameter_count(&g, &spec).head_params() as usize, formula);
    assert_eq!(head.to_store().scalar_count(), formula);
}

#[test]
fn weight_file_errors_are_distinct() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.lwts");
    std::fs::write(&empty, b"").unwrap();
    assert!(matches!(load_weights(&empty), Err(Error::Weights(WeightError::Header))));

    let mut store = WeightStore::new();
    store.insert("a", Tensor::filled(&[2, 3], 0.5));
    store.insert("b", Tensor::filled(&[4], -1.0));
    let bytes = store.to_bytes();
    assert_eq!(WeightStore::from_bytes(&bytes).unwrap(), store);

    let mut flipped = bytes.clone();
    let last = flipped.len() - 1;
    flipped[last] ^= 0x01;
    assert!(matches!(WeightStore::from_bytes(&flipped), Err(WeightError::Checksum { .. })));

    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert!(matches!(WeightStore::from_bytes(&magic), Err(WeightError::BadMagic(_))));

    let mut version = bytes.clone();
    version[4] = 9;
    assert!(matches!(WeightStore::from_bytes(&version), Err(WeightError::UnsupportedVersion(9))));

    assert!(matches!(WeightStore::from_bytes(&bytes[..bytes.len() - 6]), Err(WeightError::Truncated(_))));
}

#[test]
fn missing_backbone_names_are_listed() {
    let g = build_mobilenet_v2_with(32, 3);
    let mut w = init_backbone_weights(&g, 1);
    w.remove("block_3_depthwise.kernel");
    w.remove("final_conv_bn.gamma");
    let err = Backbone::new(&g, &w).unwrap_err().to_string();
    assert!(err.contains("block_3_depthwise.kernel") && err.contains("final_conv_bn.gamma"), "{err}");

    let mut extra = init_backbone_weights(&g, 1);
    extra.insert("stray", Tensor::filled(&[1], 0.0));
    assert!(Backbone::new(&g, &extra).is_err());
}

#[test]
fn full_size_features_are_finite_and_batch_independent() {
    let g = build_mobilenet_v2();
    let w = init_backbone_weights(&g, 3);
    let before = w.clone();
    let bb = Backbone::new(&g, &w).unwrap();

    let zero = bb.forward_features(&Tensor::zeros(&[1, 256, 256, 3])).unwrap();
    assert_eq!(zero.dims(), &[1, 1280]);
    assert!(zero.all_finite());

    let map = bb.forward_map(&Tensor::zeros(&[1, 256, 256, 3])).unwrap();
    assert_eq!(map.dims(), &[1, 8, 8, 1280]);

    let mut rng = stream(4, &[]);
    let one: Vec<f32> = (0..256 * 256 * 3).map(|_| rng.gen_range(-1.0..=1.0)).collect();
    let pair = Tensor::new(vec![2, 256, 256, 3], [one.clone(), one].concat()).unwrap();
    let f = bb.forward_features(&pair).unwrap();
    assert_eq!(f.row(0), f.row(1));
    assert_eq!(w, before);

    assert!(bb.forward_features(&Tensor::zeros(&[1, 224, 224, 3])).is_err());
}

#[test]
fn batch_rows_permute_with_inputs() {
    let g = build_mobilenet_v2_with(32, 3);
    let bb = Backbone::new(&g, &init_backbone_weights(&g, 8)).unwrap();
    let mut rng = stream(9, &[]);
    let imgs: Vec<Vec<f32>> = (0..3).map(|_| (0..32 * 32 * 3).map(|_| rng.gen_range(-1.0..=1.0)).collect()).collect();
    let batch = |order: [usize; 3]| Tensor::new(vec![3, 32, 32, 3], order.iter().flat_map(|&i| imgs[i].clone()).collect()).unwrap();
    let a = bb.forward_features(&batch([0, 1, 2])).unwrap();
    let b = bb.forward_features(&batch([2, 0, 1])).unwrap();
    assert_eq!(b.row(0), a.row(2));
    assert_eq!(b.row(1), a.row(0));
    assert_eq!(b.row(2), a.row(1));
}

#[test]
fn miniature_head_matches_hand_calculation() {
    let spec = HeadSpec { features: 2, hidden1: 2, hidden2: 2, classes: 2 };
    let dense = |k: [f32; 4], b: [f32; 2]| DenseParams { kernel: Tensor::new(vec![2, 2], k.to_vec()).unwrap(), bias: b.to_vec() };
    let head = HeadParams {
        bn1: BatchNormParams { gamma: vec![2.0, 1.0], beta: vec![0.0, 0.5], moving_mean: vec![1.0, 0.0], moving_variance: vec![3.999, 0.999] },
        dense1: dense([1.0, -1.0, 0.5, 2.0], [0.0, 0.1]),
        dense2: dense([1.0, 0.0, -1.0, 1.0], [0.2, 0.0]),
        bn2: BatchNormParams::identity(2),
        out: dense([1.0, -1.0, 2.0, 0.0], [0.0, 0.3]),
        dropout_rate: 0.5,
    };
    assert_eq!(head.spec(), spec);
    // x = (3, 2). bn1: 2·(3−1)/2 = 2 and 1·2/1 + 0.5 = 2.5.
    // dense1: (2 + 1.25, −2 + 5 + 0.1) = (3.25, 3.1).
    // dense2: (3.25 − 3.1 + 0.2, 3.1) = (0.35, 3.1).
    // bn2 scales by 1/√1.001; out = (z0 + 2·z1, −z0 + 0.3).
    let s = 1.0f64 / 1.001f64.sqrt();
    let (z0, z1) = (0.35 * s, 3.1 * s);
    let logits = [z0 + 2.0 * z1, -z0 + 0.3];
    let e: Vec<f64> = logits.iter().map(|l| (l - logits[0]).exp()).collect();
    let want = [e[0] / (e[0] + e[1]), e[1] / (e[0] + e[1])];

    let got = head.infer(&Tensor::new(vec![1, 2], vec![3.0, 2.0]).unwrap()).unwrap();
    for (g, w) in got.logits.data().iter().zip(logits) {
        assert!((*g as f64 - w).abs() < 1e-5, "{g} vs {w}");
    }
    for (g, w) in got.probs.data().iter().zip(want) {
        assert!((*g as f64 - w).abs() < 1e-6, "{g} vs {w}");
    }
}

#[test]
fn train_mode_rejects_single_row() {
    let head = HeadParams::init(&HeadSpec::new(8, 3), 0.0, 1).unwrap();
    let x = Tensor::filled(&[1, 8], 0.3);
    assert!(matches!(head.forward_train_with_mask(&x, vec![1.0; 128]), Err(Error::Numeric(_))));
    assert!(head.infer(&x).is_ok());
    assert!(HeadParams::init(&HeadSpec::new(8, 3), 1.0, 1).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn inference_rows_are_distributions(seed in any::<u64>(), n in 1usize..6) {
        let head = HeadParams::init(&HeadSpec::new(1280, 10), 0.5, seed).unwrap();
        let mut rng = stream(seed, &[7]);
        let x = Tensor::new(vec![n, 1280], (0..n * 1280).map(|_| rng.gen_range(0.0..6.0)).collect()).unwrap();
        let p = head.infer(&x).unwrap().probs;
        for r in 0..n {
            let row = p.row(r);
            prop_assert_eq!(row.len(), 10);
            prop_assert!((row.iter().map(|&v| v as f64).sum::<f64>() - 1.0).abs() <= 1e-6);
        }
    }
}

fn small_bundle(dir: &std::path::Path, zero_head: bool) -> Model {
    let g = build_mobilenet_v2_with(32, 10);
    let mut head = HeadParams::init(&g.head, 0.5, 2).unwrap();
    if zero_head {
        for t in head.trainable_mut().into_iter().skip(2) {
            t.fill(0.0);
        }
    }
    let bundle = Bundle {
        manifest: BundleManifest {
            class_names: (0..10).map(|c| format!("c{c}")).collect(),
            input_side: 32,
            clahe: None,
            dropout_rate: 0.5,
        },
        backbone: init_backbone_weights(&g, 2),
        head,
    };
    bundle.save(dir).unwrap();
    let model = Model::load(dir).unwrap();
    assert_eq!(model.head, bundle.head);
    model
}

#[test]
fn zero_head_predicts_first_class() {
    let dir = tempfile::tempdir().unwrap();
    let model = small_bundle(&dir.path().join("bundle"), true);
    let img = dir.path().join("leaf.png");
    Image::from_fn(40, 30, |x, y| [(x * 6) as u8, (y * 8) as u8, 90]).save_png(&img).unwrap();
    let p = predict(&img, &model).unwrap();
    assert_eq!(p.class_id, 0);
    assert_eq!(p.class_name, "c0");
    assert!(p.probabilities.iter().all(|&v| (v - 0.1).abs() < 1e-6));
}

#[test]
fn prediction_is_stable_and_normalized() {
    let dir = tempfile::tempdir().unwrap();
    let model = small_bundle(&dir.path().join("bundle"), false);
    let img = dir.path().join("leaf.png");
    Image::from_fn(48, 48, |x, y| [(x * 5) as u8, 120, (y * 5) as u8]).save_png(&img).unwrap();
    let a = predict(&img, &model).unwrap();
    let b = predict(&img, &Model::load(&dir.path().join("bundle")).unwrap()).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.probabilities.len(), 10);
    assert!((a.probabilities.iter().map(|&v| v as f64).sum::<f64>() - 1.0).abs() <= 1e-6);

    let junk = dir.path().join("junk.png");
    std::fs::write(&junk, b"not a png").unwrap();
    assert!(matches!(predict(&junk, &model), Err(Error::Decode { .. })));
}
