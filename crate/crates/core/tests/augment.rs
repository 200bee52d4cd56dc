use leaflite::augment::{hflip, random_augment, rotate, shear, shift, AugmentConfig, AugmentDraw};
use leaflite::imageproc::Image;
use leaflite::random::stream;
use proptest::prelude::*;

fn pattern(w: usize, h: usize) -> Image {
    Image::from_fn(w, h, |x, y| [(x * 29 + y * 7) as u8, (y * 41 + 5) as u8, ((x ^ y) * 19) as u8])
}

fn image_strategy() -> impl Strategy<Value = Image> {
    (1usize..12, 1usize..12).prop_flat_map(|(w, h)| {
        prop::collection::vec(any::<u8>(), w * h * 3).prop_map(move |px| Image::new(w, h, px).unwrap())
    })
}

#[test]
fn identities() {
    let img = pattern(9, 7);
    assert_eq!(shift(&img, 0.0, 0.0), img);
    assert_eq!(rotate(&img, 0.0), img);
    assert_eq!(shear(&img, 0.0), img);
    assert_eq!(hflip(&hflip(&img)), img);
}

#[test]
fn shift_by_quarter_of_four_pixels() {
    let img = Image::from_fn(4, 4, |x, y| [(x * 10 + y) as u8, 0, 0]);
    let out = shift(&img, 0.25, 0.0);
    for y in 0..4 {
        assert_eq!(out.get(0, y), img.get(0, y), "vacated column copies the edge");
        for x in 1..4 {
            assert_eq!(out.get(x, y), img.get(x - 1, y));
        }
    }
}

#[test]
fn shift_round_trip_restores_interior() {
    let side = 40;
    let img = pattern(side, side);
    let back = shift(&shift(&img, 0.2, 0.2), -0.2, -0.2);
    let margin = (0.2 * side as f64) as usize;
    for y in margin + 1..side - margin - 1 {
        for x in margin + 1..side - margin - 1 {
            assert_eq!(back.get(x, y), img.get(x, y));
        }
    }
}

#[test]
fn quarter_turn_matches_permutation() {
    let img = Image::from_fn(5, 5, |x, y| [(x * 50) as u8, (y * 50) as u8, (x * 5 + y * 31) as u8]);
    let out = rotate(&img, 90.0);
    for y in 0..5 {
        for x in 0..5 {
            let want = img.get(4 - y, x);
            let got = out.get(x, y);
            for c in 0..3 {
                assert!((got[c] as i32 - want[c] as i32).abs() <= 1, "({x},{y})");
            }
        }
    }
}

#[test]
fn shear_anchors_bottom_row() {
    let img = pattern(10, 8);
    for f in [-0.3, 0.1, 0.2] {
        let out = shear(&img, f);
        for x in 0..10 {
            assert_eq!(out.get(x, 7), img.get(x, 7));
        }
    }
}

#[test]
fn hflip_permutes_indices_exhaustively() {
    let img = pattern(8, 8);
    let out = hflip(&img);
    for y in 0..8 {
        for x in 0..8 {
            assert_eq!(out.get(7 - x, y), img.get(x, y));
        }
    }
    let pair = Image::new(2, 1, vec![1, 2, 3, 4, 5, 6]).unwrap();
    assert_eq!(hflip(&pair).pixels(), &[4, 5, 6, 1, 2, 3]);
}

proptest! {
    #[test]
    fn transforms_keep_dims_and_constants(
        img in image_strategy(),
        rgb in any::<[u8; 3]>(),
        dx in -0.5f64..0.5, dy in -0.5f64..0.5,
        deg in -180.0f64..180.0,
        f in -0.5f64..0.5,
    ) {
        for out in [shift(&img, dx, dy), rotate(&img, deg), shear(&img, f), hflip(&img)] {
            prop_assert_eq!((out.width(), out.height()), (img.width(), img.height()));
        }
        let flat = Image::filled(img.width(), img.height(), rgb);
        for out in [shift(&flat, dx, dy), rotate(&flat, deg), shear(&flat, f), hflip(&flat)] {
            prop_assert_eq!(&out, &flat);
        }
    }

    #[test]
    fn augmentation_is_deterministic(img in image_strategy(), seed in any::<u64>()) {
        let cfg = AugmentConfig::default();
        let a = random_augment(&img, &cfg, &mut stream(seed, &[1]));
        let b = random_augment(&img, &cfg, &mut stream(seed, &[1]));
        prop_assert_eq!(a, b);
    }
}

#[test]
fn zero_probability_is_identity() {
    let img = pattern(12, 12);
    let cfg = AugmentConfig::disabled();
    for s in 0..50 {
        assert_eq!(random_augment(&img, &cfg, &mut stream(s, &[])), img);
    }
}

#[test]
fn firing_frequencies_and_ranges() {
    let cfg = AugmentConfig::default();
    let mut rng = stream(2024, &[0]);
    let n = 10_000;
    let mut fired = [0usize; 5];
    let mut seen: [(f64, f64); 4] = [(f64::MAX, f64::MIN); 4];
    for _ in 0..n {
        let d = AugmentDraw::sample(&cfg, &mut rng);
        let params = [d.width_shift, d.height_shift, d.rotation_degrees, d.shear];
        for (i, p) in params.iter().enumerate() {
            if let Some(v) = *p {
                fired[i] += 1;
                seen[i] = (seen[i].0.min(v), seen[i].1.max(v));
            }
        }
        fired[4] += d.hflip as usize;
    }
    for (i, &count) in fired.iter().enumerate() {
        let freq = count as f64 / n as f64;
        assert!((freq - cfg.probability).abs() <= 0.02, "transform {i} fired {freq}");
    }
    let ranges = [cfg.width_shift, cfg.height_shift, cfg.rotation_degrees, cfg.shear];
    for ((lo, hi), (min, max)) in ranges.iter().zip(seen) {
        assert!(min >= *lo && max <= *hi);
    }
}

#[test]
fn distinct_epochs_rarely_collide() {
    let img = pattern(16, 16);
    let cfg = AugmentConfig::default();
    let mut same = 0;
    for trial in 0..1000u64 {
        let a = random_augment(&img, &cfg, &mut stream(5, &[trial, 1]));
        let b = random_augment(&img, &cfg, &mut stream(5, &[trial, 2]));
        same += (a == b) as usize;
    }
    // Both draws come out empty with probability 0.5^5 each, so about 0.1%
    // of pairs are trivially identical.
    assert!(same < 10, "{same} identical pairs");
}
