mod support;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use shadowheight_core::grids::{GridTransform, RgbImage};
use shadowheight_core::shadow::{compute_shadow_map, ShadowParams};
use support::reference;

fn params_of(p: reference::RefParams) -> ShadowParams {
    ShadowParams {
        contrast_stretch: p.0,
        percentiles: p.1,
        blur_sigma: p.2,
        threshold: p.3,
    }
}

/// Dark blobs on a bright background so maps are neither empty nor full.
fn scene_like(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Vec<u8> {
    let mut data: Vec<u8> = (0..h * w * 3).map(|_| rng.random_range(60..=255)).collect();
    for _ in 0..rng.random_range(1..6) {
        let (t, l) = (rng.random_range(0..h), rng.random_range(0..w));
        let (bh, bw) = (rng.random_range(2..h / 2), rng.random_range(2..w / 2));
        for r in t..(t + bh).min(h) {
            for c in l..(l + bw).min(w) {
                for k in 0..3 {
                    data[(r * w + c) * 3 + k] = rng.random_range(0..30);
                }
            }
        }
    }
    data
}

#[test]
fn matches_reference_on_random_images() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut shadow_px = 0;
    for i in 0..100 {
        let data = if i % 2 == 0 {
            scene_like(&mut rng, 64, 64)
        } else {
            (0..64 * 64 * 3).map(|_| rng.random()).collect()
        };
        let img = RgbImage::new(64, 64, data.clone()).unwrap();
        let got = compute_shadow_map(&img, &ShadowParams::default());
        let want = reference::shadow_map(&data, 64, 64, reference::DEFAULT);
        assert_eq!(got.values(), &want[..], "image {i}");
        shadow_px += want.iter().filter(|&&v| v == 1).count();
    }
    assert!(shadow_px > 0);
}

#[test]
fn matches_reference_across_settings() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let settings: [reference::RefParams; 5] = [
        (false, (2.0, 98.0), 0.0, 15),
        (false, (2.0, 98.0), 1.0, 40),
        (true, (0.0, 100.0), 2.0, 30),
        (true, (10.0, 90.0), 0.5, 80),
        (true, (2.0, 98.0), 1.5, 200),
    ];
    for s in settings {
        let (h, w) = (rng.random_range(1..40), rng.random_range(1..40));
        let data = (0..h * w * 3).map(|_| rng.random()).collect::<Vec<u8>>();
        let img = RgbImage::new(h, w, data.clone()).unwrap();
        let got = compute_shadow_map(&img, &params_of(s));
        assert_eq!(got.values(), &reference::shadow_map(&data, h, w, s)[..], "{s:?} on {h}x{w}");
    }
}

#[test]
fn quarter_turns_commute_with_extraction() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..10 {
        let (h, w) = (rng.random_range(8..48), rng.random_range(8..48));
        let data = scene_like(&mut rng, h.max(w), h.max(w));
        let img = RgbImage::new(h.max(w), h.max(w), data).unwrap();
        let base = compute_shadow_map(&img, &ShadowParams::default());
        for k in 1..4 {
            let rotated = compute_shadow_map(&img.rotate90(k).unwrap(), &ShadowParams::default());
            assert_eq!(rotated, base.rotate90(k).unwrap(), "k={k}");
        }
    }
}

#[test]
fn reference_rotation_agrees_with_grid_rotation() {
    let data: Vec<u8> = (0..6 * 3).map(|v| v as u8).collect();
    let img = RgbImage::new(2, 3, data.clone()).unwrap();
    for k in 1..4 {
        let (d, h, w) = reference::rotate_cw(&data, 2, 3, 3, k);
        let r = img.rotate90(k).unwrap();
        assert_eq!((r.height(), r.width()), (h, w));
        assert_eq!(r.as_bytes(), &d[..]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn prop_matches_reference(
        h in 1usize..24,
        w in 1usize..24,
        seed in any::<u64>(),
        stretch in any::<bool>(),
        sigma in prop_oneof![Just(0.0), 0.3f64..2.5],
        thr in any::<u8>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<u8> = (0..h * w * 3).map(|_| rng.random()).collect();
        let p = (stretch, (2.0, 98.0), sigma, thr);
        let img = RgbImage::new(h, w, data.clone()).unwrap();
        let got = compute_shadow_map(&img, &params_of(p));
        prop_assert_eq!(got.values(), &reference::shadow_map(&data, h, w, p)[..]);
    }

    #[test]
    fn prop_rotation_equivariance(n in 1usize..20, m in 1usize..20, seed in any::<u64>(), k in 1u32..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let img = RgbImage::new(n, m, (0..n * m * 3).map(|_| rng.random()).collect()).unwrap();
        let p = ShadowParams { threshold: 90, ..ShadowParams::default() };
        let a = compute_shadow_map(&img.rotate90(k).unwrap(), &p);
        let b = compute_shadow_map(&img, &p).rotate90(k).unwrap();
        prop_assert_eq!(a, b);
    }
}
