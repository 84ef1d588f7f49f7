mod support;

use proptest::prelude::*;
use shadowheight_core::net::{pixel_shuffle, pixel_unshuffle, Tensor};
use support::shuffle_ref::depth_to_space;

fn values(len: usize, seed: u64) -> Vec<f32> {
    // distinct bit patterns, including negatives and subnormal-free extremes
    (0..len).map(|i| ((i as u64).wrapping_mul(2654435761).wrapping_add(seed) % 1_000_003) as f32 * if i % 3 == 0 { -0.37 } else { 1.13 }).collect()
}

#[test]
fn table_scale_case() {
    let x = Tensor::from_vec([1, 16, 16, 2048], values(16 * 16 * 2048, 1)).unwrap();
    let y = pixel_shuffle(&x, 2).unwrap();
    assert_eq!(y.shape(), [1, 32, 32, 512]);
    assert_eq!(y.data(), &depth_to_space(x.data(), 1, 16, 16, 2048, 2)[..]);
    assert_eq!(pixel_unshuffle(&y, 2).unwrap(), x);
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn matches_index_formula_and_inverts(n in 1usize..3, h in 1usize..7, w in 1usize..7, c in 1usize..5, s in 1usize..4, seed in any::<u64>()) {
        let cin = c * s * s;
        let x = Tensor::from_vec([n, h, w, cin], values(n * h * w * cin, seed)).unwrap();
        let y = pixel_shuffle(&x, s).unwrap();
        prop_assert_eq!(y.shape(), [n, h * s, w * s, c]);
        prop_assert_eq!(y.data(), &depth_to_space(x.data(), n, h, w, cin, s)[..]);
        let back = pixel_unshuffle(&y, s).unwrap();
        prop_assert!(back.data().iter().zip(x.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn preserves_the_value_multiset(h in 1usize..6, w in 1usize..6, c in 1usize..4, seed in any::<u64>()) {
        let x = Tensor::from_vec([1, h, w, 4 * c], values(h * w * 4 * c, seed)).unwrap();
        let mut a: Vec<u32> = x.data().iter().map(|v| v.to_bits()).collect();
        let mut b: Vec<u32> = pixel_shuffle(&x, 2).unwrap().data().iter().map(|v| v.to_bits()).collect();
        a.sort_unstable();
        b.sort_unstable();
        prop_assert_eq!(a, b);
    }
}
