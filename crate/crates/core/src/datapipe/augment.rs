//! Augmentation, model-input assembly and deterministic batch order.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::PatchCatalog;
use crate::error::{Error, Result};
use crate::grids::{GridTransform, PatchSample, RgbImage, ShadowMap, Split};
use crate::net::Tensor;
use crate::shadow::{compute_shadow_map, ShadowParams};

/// Training-time perturbations. Shadow maps are recomputed after them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    /// Joint clockwise rotation of RGB and target by a uniform multiple of 90°.
    pub rotate: bool,
    pub color_shift: bool,
    /// Per-channel additive shift drawn from `[-shift_range, shift_range]`.
    pub shift_range: f64,
    pub contrast: bool,
    /// Contrast factor range, applied about each channel's mean.
    pub contrast_range: (f64, f64),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            rotate: true,
            color_shift: true,
            shift_range: 10.0,
            contrast: true,
            contrast_range: (0.9, 1.1),
        }
    }
}

impl AugmentConfig {
    pub fn none() -> Self {
        Self {
            rotate: false,
            color_shift: false,
            contrast: false,
            ..Self::default()
        }
    }

    pub fn is_identity(&self) -> bool {
        !(self.rotate || self.color_shift || self.contrast)
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.contrast_range;
        if !(self.shift_range >= 0.0 && self.shift_range.is_finite()) || !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::invalid(format!("bad augmentation magnitudes {self:?}")));
        }
        Ok(())
    }
}

/// SplitMix64 fold of several integers into one well-mixed seed.
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut z = 0x9E37_79B9_7F4A_7C15u64;
    for &p in parts {
        z ^= p;
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

/// Generator for the augmentation of one record in one epoch.
pub fn sample_rng(seed: u64, epoch: usize, record: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(&[seed, 1, epoch as u64, record as u64]))
}

/// Permutation of `0..n` for an epoch.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(&[seed, 0, epoch as u64])));
    order
}

/// Shuffled training record indices grouped into batches; the last batch may be short.
pub fn train_batches(catalog: &PatchCatalog, seed: u64, epoch: usize, batch_size: usize) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    let train = catalog.indices(Split::Train);
    if train.is_empty() {
        return Err(Error::EmptyInput("training split is empty".into()));
    }
    let order = epoch_order(train.len(), seed, epoch);
    Ok(order
        .chunks(batch_size)
        .map(|c| c.iter().map(|&i| train[i]).collect())
        .collect())
}

fn round_clip(v: f64) -> u8 {
    (v + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Rotates RGB and target together, perturbs RGB colors, then recomputes the shadow map.
///
/// Every random draw happens regardless of the toggles, so disabling one
/// perturbation leaves the others unchanged for a given generator state.
pub fn augment_sample<R: Rng>(s: &PatchSample, rng: &mut R, config: &AugmentConfig, params: &ShadowParams) -> Result<PatchSample> {
    let k: u32 = rng.random_range(0..4);
    let shifts: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..=1.0) * config.shift_range);
    let (lo, hi) = config.contrast_range;
    let factor = if hi > lo { rng.random_range(lo..=hi) } else { lo };
    if config.is_identity() {
        return Ok(s.clone());
    }
    let mut out = s.clone();
    if config.rotate && k != 0 {
        out.rgb = out.rgb.rotate90(k)?;
        out.target = out.target.rotate90(k)?;
    }
    if config.color_shift || config.contrast {
        let n = (out.rgb.height() * out.rgb.width()) as f64;
        let shift = |c: usize| if config.color_shift { shifts[c] } else { 0.0 };
        let mut means = [0.0f64; 3];
        for px in out.rgb.pixels() {
            for c in 0..3 {
                means[c] += f64::from(px[c]) + shift(c);
            }
        }
        means.iter_mut().for_each(|m| *m /= n.max(1.0));
        let f = if config.contrast { factor } else { 1.0 };
        for px in out.rgb.pixels_mut() {
            for c in 0..3 {
                let v = f64::from(px[c]) + shift(c);
                px[c] = round_clip(means[c] + f * (v - means[c]));
            }
        }
    }
    out.shadow = compute_shadow_map(&out.rgb, params);
    Ok(out)
}

/// `[1, H, W, 3]` RGB intensities in `[0, 255]`, plus the shadow bit as a fourth channel if given.
pub fn input_tensor(rgb: &RgbImage, shadow: Option<&ShadowMap>) -> Result<Tensor<f32>> {
    let (h, w) = (rgb.height(), rgb.width());
    if let Some(s) = shadow {
        if (s.height(), s.width()) != (h, w) {
            return Err(Error::invalid("shadow map and image sizes differ"));
        }
    }
    let c = if shadow.is_some() { 4 } else { 3 };
    let mut data = Vec::with_capacity(h * w * c);
    for (i, px) in rgb.pixels().enumerate() {
        data.extend(px.iter().map(|&v| f32::from(v)));
        if let Some(s) = shadow {
            data.push(f32::from(s.values()[i]));
        }
    }
    Tensor::from_vec([1, h, w, c], data)
}

/// Channels ordered R, G, B, shadow; no normalization beyond the cast.
pub fn assemble_input(rgb: &RgbImage, params: &ShadowParams) -> Tensor<f32> {
    let shadow = compute_shadow_map(rgb, params);
    input_tensor(rgb, Some(&shadow)).expect("shadow map matches its image")
}

/// Stacked inputs, targets and target validity for one optimizer step.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub input: Tensor<f32>,
    pub target: Tensor<f32>,
    pub mask: Vec<bool>,
    pub records: Vec<usize>,
}

/// Loads, optionally augments and stacks the given records.
///
/// With `augment = Some((config, seed, epoch))` each record draws from
/// [`sample_rng`], so batches do not depend on assembly order.
pub fn assemble_batch(
    catalog: &PatchCatalog,
    records: &[usize],
    augment: Option<(&AugmentConfig, u64, usize)>,
    params: &ShadowParams,
    use_shadow: bool,
) -> Result<Batch> {
    let mut inputs = Vec::with_capacity(records.len());
    let mut targets = Vec::with_capacity(records.len());
    let mut mask = Vec::new();
    for &i in records {
        let mut s = catalog.sample(i, params)?;
        if let Some((cfg, seed, epoch)) = augment {
            s = augment_sample(&s, &mut sample_rng(seed, epoch, i), cfg, params)?;
        }
        inputs.push(input_tensor(&s.rgb, use_shadow.then_some(&s.shadow))?);
        let (q, w) = (s.target.height(), s.target.width());
        targets.push(Tensor::from_vec([1, q, w, 1], s.target.values().to_vec())?);
        mask.extend_from_slice(s.target.valid_mask());
    }
    Ok(Batch {
        input: Tensor::stack(&inputs)?,
        target: Tensor::stack(&targets)?,
        mask,
        records: records.to_vec(),
    })
}
