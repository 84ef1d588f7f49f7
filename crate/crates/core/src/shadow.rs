//! Binary shadow extraction: contrast stretch, luma, Gaussian blur, threshold.
//!
//! The blur runs on integer-quantized Gaussian weights so the whole pipeline is
//! exact integer arithmetic. That keeps the output independent of summation
//! order, which makes the map exactly equivariant under quarter-turn rotation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grids::{RgbImage, ShadowMap};

/// Fixed-point scale of the quantized Gaussian taps.
const WEIGHT_SCALE: f64 = 4096.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShadowParams {
    pub contrast_stretch: bool,
    /// Lower and upper percentile (0..=100) mapped to 0 and 255.
    pub percentiles: (f64, f64),
    /// Gaussian sigma in pixels; 0 disables blurring.
    pub blur_sigma: f64,
    /// Pixels whose processed intensity is strictly below this are shadow.
    pub threshold: u8,
}

impl Default for ShadowParams {
    fn default() -> Self {
        Self {
            contrast_stretch: true,
            percentiles: (2.0, 98.0),
            blur_sigma: 1.0,
            threshold: 15,
        }
    }
}

impl ShadowParams {
    /// Plain threshold on luma, no stretch and no blur.
    pub fn threshold_only(threshold: u8) -> Self {
        Self {
            contrast_stretch: false,
            blur_sigma: 0.0,
            threshold,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.percentiles;
        if !(0.0..=100.0).contains(&lo) || !(0.0..=100.0).contains(&hi) || lo >= hi {
            return Err(Error::invalid(format!(
                "percentiles must satisfy 0 <= low < high <= 100, got ({lo}, {hi})"
            )));
        }
        if !(self.blur_sigma >= 0.0) || !self.blur_sigma.is_finite() {
            return Err(Error::invalid(format!("blur sigma must be >= 0, got {}", self.blur_sigma)));
        }
        Ok(())
    }
}

/// BT.601 luma, rounded half up: `floor(0.299 R + 0.587 G + 0.114 B + 0.5)`.
#[inline]
pub fn luma(rgb: [u8; 3]) -> u8 {
    let acc = 299 * rgb[0] as u32 + 587 * rgb[1] as u32 + 114 * rgb[2] as u32;
    ((acc + 500) / 1000) as u8
}

/// Single-channel 8-bit image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

pub fn to_grayscale(rgb: &RgbImage) -> GrayImage {
    GrayImage {
        height: rgb.height(),
        width: rgb.width(),
        data: rgb.pixels().map(luma).collect(),
    }
}

/// Linear-interpolated percentile of a 256-bin histogram holding `n` samples.
fn histogram_percentile(hist: &[usize; 256], n: usize, p: f64) -> f64 {
    let pos = p / 100.0 * (n - 1) as f64;
    let lo_rank = pos.floor() as usize;
    let frac = pos - lo_rank as f64;
    let value_at = |rank: usize| -> f64 {
        let mut seen = 0;
        for (v, &count) in hist.iter().enumerate() {
            seen += count;
            if seen > rank {
                return v as f64;
            }
        }
        255.0
    };
    let lo = value_at(lo_rank);
    if frac == 0.0 {
        lo
    } else {
        lo + frac * (value_at((lo_rank + 1).min(n - 1)) - lo)
    }
}

/// Per-channel lookup table stretching `[p_lo, p_hi]` onto `[0, 255]` with clipping.
pub(crate) fn stretch_tables(rgb: &RgbImage, percentiles: (f64, f64)) -> [[u8; 256]; 3] {
    let n = rgb.height() * rgb.width();
    let mut hists = [[0usize; 256]; 3];
    for px in rgb.pixels() {
        for c in 0..3 {
            hists[c][px[c] as usize] += 1;
        }
    }
    let mut tables = [[0u8; 256]; 3];
    for c in 0..3 {
        let lo = histogram_percentile(&hists[c], n, percentiles.0);
        let hi = histogram_percentile(&hists[c], n, percentiles.1);
        for v in 0..256 {
            tables[c][v] = if hi > lo {
                let s = (v as f64 - lo) * 255.0 / (hi - lo);
                (s.clamp(0.0, 255.0) + 0.5).floor() as u8
            } else {
                v as u8
            };
        }
    }
    tables
}

pub fn contrast_stretch(rgb: &RgbImage, percentiles: (f64, f64)) -> RgbImage {
    if rgb.height() * rgb.width() == 0 {
        return rgb.clone();
    }
    let tables = stretch_tables(rgb, percentiles);
    let data = rgb
        .as_bytes()
        .chunks_exact(3)
        .flat_map(|p| [tables[0][p[0] as usize], tables[1][p[1] as usize], tables[2][p[2] as usize]])
        .collect();
    RgbImage::new(rgb.height(), rgb.width(), data).expect("dimensions preserved")
}

/// Symmetric integer Gaussian taps for offsets `0..=radius`, radius = ceil(3 sigma).
pub fn gaussian_taps(sigma: f64) -> Vec<u64> {
    let radius = (3.0 * sigma).ceil() as usize;
    (0..=radius)
        .map(|i| {
            let x = i as f64;
            (WEIGHT_SCALE * (-x * x / (2.0 * sigma * sigma)).exp()).round().max(0.0) as u64
        })
        .collect()
}

/// Reflect-101 border index (`gfedcb|abcdefgh|gfedcba`).
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut m = i.rem_euclid(period);
    if m >= n as isize {
        m = period - m;
    }
    m as usize
}

/// Separable blur returning exact integer sums, i.e. `value * norm` per pixel.
fn blur_sums(gray: &GrayImage, taps: &[u64]) -> (Vec<u64>, u64) {
    let (h, w) = (gray.height, gray.width);
    let r = taps.len() as isize - 1;
    let tap = |d: isize| taps[d.unsigned_abs()];
    let mut horiz = vec![0u64; h * w];
    for y in 0..h {
        let row = &gray.data[y * w..(y + 1) * w];
        for x in 0..w {
            let mut acc = 0u64;
            for d in -r..=r {
                acc += tap(d) * row[reflect_index(x as isize + d, w)] as u64;
            }
            horiz[y * w + x] = acc;
        }
    }
    let mut out = vec![0u64; h * w];
    for y in 0..h {
        for d in -r..=r {
            let src = reflect_index(y as isize + d, h) * w;
            let t = tap(d);
            for x in 0..w {
                out[y * w + x] += t * horiz[src + x];
            }
        }
    }
    let sum1: u64 = taps[0] + 2 * taps[1..].iter().sum::<u64>();
    (out, sum1 * sum1)
}

/// Binary shadow map of an RGB image.
pub fn compute_shadow_map(rgb: &RgbImage, params: &ShadowParams) -> ShadowMap {
    let (h, w) = (rgb.height(), rgb.width());
    let stretched;
    let src = if params.contrast_stretch {
        stretched = contrast_stretch(rgb, params.percentiles);
        &stretched
    } else {
        rgb
    };
    let gray = to_grayscale(src);
    let threshold = params.threshold as u64;
    let data = if params.blur_sigma > 0.0 && h * w > 0 {
        let taps = gaussian_taps(params.blur_sigma);
        let (sums, norm) = blur_sums(&gray, &taps);
        sums.iter().map(|&s| (s < threshold * norm) as u8).collect()
    } else {
        gray.data.iter().map(|&g| ((g as u64) < threshold) as u8).collect()
    };
    ShadowMap::new(h, w, data).expect("binary and dimension preserving")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grids::GridTransform;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> RgbImage {
        let data = (0..h * w * 3).map(|_| rng.random()).collect();
        RgbImage::new(h, w, data).unwrap()
    }

    #[test]
    fn grayscale_examples() {
        assert_eq!(luma([255, 255, 255]), 255);
        assert_eq!(luma([0, 0, 0]), 0);
        assert_eq!(luma([255, 0, 0]), 76);
    }

    #[test]
    fn black_and_white_images() {
        let p = ShadowParams {
            contrast_stretch: false,
            ..ShadowParams::default()
        };
        let black = compute_shadow_map(&RgbImage::filled(8, 8, [0, 0, 0]), &p);
        assert!(black.values().iter().all(|&v| v == 1));
        let white = compute_shadow_map(&RgbImage::filled(8, 8, [255, 255, 255]), &p);
        assert!(white.values().iter().all(|&v| v == 0));
    }

    #[test]
    fn threshold_is_strict() {
        let p = ShadowParams::threshold_only(15);
        let img = RgbImage::new(1, 2, vec![15, 15, 15, 14, 14, 14]).unwrap();
        assert_eq!(compute_shadow_map(&img, &p).values(), &[0, 1]);
    }

    #[test]
    fn taps_are_symmetric_and_normalizable() {
        let taps = gaussian_taps(1.0);
        assert_eq!(taps.len(), 4);
        assert_eq!(taps[0], 4096);
        assert!(taps.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn reflect_101_borders() {
        assert_eq!(reflect_index(-1, 5), 1);
        assert_eq!(reflect_index(-2, 5), 2);
        assert_eq!(reflect_index(5, 5), 3);
        assert_eq!(reflect_index(9, 5), 1);
        assert_eq!(reflect_index(-7, 3), 1);
        assert_eq!(reflect_index(4, 1), 0);
    }

    #[test]
    fn invalid_params_rejected() {
        let mut p = ShadowParams::default();
        p.percentiles = (50.0, 50.0);
        assert!(p.validate().is_err());
        p.percentiles = (2.0, 98.0);
        p.blur_sigma = -1.0;
        assert!(p.validate().is_err());
        assert!(ShadowParams::default().validate().is_ok());
    }

    #[test]
    fn tiny_images_do_not_panic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (h, w) in [(1, 1), (1, 7), (2, 1), (3, 3)] {
            let img = random_image(&mut rng, h, w);
            let m = compute_shadow_map(&img, &ShadowParams::default());
            assert_eq!((m.height(), m.width()), (h, w));
        }
    }

    #[test]
    fn unblurred_unstretched_matches_luma_threshold() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut img = random_image(&mut rng, 16, 16);
        for px in img.pixels_mut() {
            for v in px.iter_mut() {
                *v /= 8;
            }
        }
        let p = ShadowParams::threshold_only(15);
        let m = compute_shadow_map(&img, &p);
        for (px, s) in img.pixels().zip(m.values()) {
            assert_eq!(*s, (luma(px) < 15) as u8);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn rotation_equivariance(seed in any::<u64>(), h in 1usize..24, w in 1usize..24, k in 1u32..4, sigma in 0.0f64..2.5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let img = random_image(&mut rng, h, w);
            let p = ShadowParams { blur_sigma: sigma, threshold: 90, ..ShadowParams::default() };
            let a = compute_shadow_map(&img.rotate90(k).unwrap(), &p);
            let b = compute_shadow_map(&img, &p).rotate90(k).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn darker_images_grow_shadow(seed in any::<u64>(), sigma in 0.0f64..2.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let img = random_image(&mut rng, 12, 12);
            let darker_bytes: Vec<u8> = img.as_bytes().iter().map(|&v| v.saturating_sub(rng.random_range(0..60))).collect();
            let darker = RgbImage::new(12, 12, darker_bytes).unwrap();
            let p = ShadowParams { contrast_stretch: false, blur_sigma: sigma, threshold: 100, ..ShadowParams::default() };
            let a = compute_shadow_map(&img, &p);
            let b = compute_shadow_map(&darker, &p);
            for (x, y) in a.values().iter().zip(b.values()) {
                prop_assert!(y >= x);
            }
        }

        #[test]
        fn deterministic(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let img = random_image(&mut rng, 10, 13);
            let p = ShadowParams::default();
            prop_assert_eq!(compute_shadow_map(&img, &p), compute_shadow_map(&img, &p));
        }
    }
}
