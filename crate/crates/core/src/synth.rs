//! Procedural scenes of flat-roofed boxes with geometrically consistent shadows.
//!
//! Azimuth is measured clockwise from image-up (north). Shadows extend away
//! from the sun over ground pixels only.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::datapipe::{catalog_from_height, derive_seed, split_catalog, DatasetMode, PatchCatalog};
use crate::error::{Error, Result};
use crate::grids::{RasterGrid, RgbImage, ShadowMap};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneParams {
    /// Side length of the square RGB scene in pixels.
    pub world: usize,
    pub rgb_gsd: f64,
    pub ratio: usize,
    pub n_buildings: usize,
    pub height_range: (f64, f64),
    /// Footprint side lengths in RGB pixels.
    pub footprint_range: (usize, usize),
    pub sun_azimuth: f64,
    pub sun_elevation: f64,
    pub ground_band: (u8, u8),
    pub roof_band: (u8, u8),
    pub shadow_band: (u8, u8),
    pub noise_sigma: f64,
    pub seed: u64,
    /// Placement attempts per building before giving up.
    pub max_attempts: usize,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            world: 256,
            rgb_gsd: 0.5,
            ratio: 4,
            n_buildings: 12,
            height_range: (3.0, 30.0),
            footprint_range: (8, 32),
            sun_azimuth: 135.0,
            sun_elevation: 45.0,
            ground_band: (80, 160),
            roof_band: (170, 230),
            shadow_band: (0, 10),
            noise_sigma: 2.0,
            seed: 0,
            max_attempts: 1000,
        }
    }
}

impl SceneParams {
    pub fn validate(&self) -> Result<()> {
        check_elevation(self.sun_elevation)?;
        let bad = |m: &str| Err(Error::invalid(m.to_string()));
        if self.ratio == 0 || self.world == 0 || self.world % self.ratio != 0 {
            return bad("world must be a positive multiple of ratio");
        }
        if !(self.rgb_gsd > 0.0) {
            return bad("rgb_gsd must be positive");
        }
        let (h0, h1) = self.height_range;
        if !(h0 >= 0.0 && h0 <= h1 && h1.is_finite()) {
            return bad("height_range must be ordered and nonnegative");
        }
        let (f0, f1) = self.footprint_range;
        if f0 == 0 || f0 > f1 || f1 > self.world {
            return bad("footprint_range must be ordered, positive and fit the world");
        }
        for (lo, hi) in [self.ground_band, self.roof_band, self.shadow_band] {
            if lo > hi {
                return bad("intensity bands must be ordered");
            }
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma must be nonnegative");
        }
        Ok(())
    }
}

fn check_elevation(elevation: f64) -> Result<()> {
    if !(elevation > 0.0 && elevation < 90.0) {
        return Err(Error::invalid(format!("sun elevation {elevation} is outside (0, 90)")));
    }
    Ok(())
}

/// Ground length of the shadow of an `h`-meter object, in pixels.
pub fn shadow_length_px(h: f64, elevation: f64, gsd: f64) -> Result<usize> {
    check_elevation(elevation)?;
    if !(gsd > 0.0) || !(h >= 0.0) {
        return Err(Error::invalid("height must be nonnegative and gsd positive"));
    }
    Ok((h / elevation.to_radians().tan() / gsd).round() as usize)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Building {
    pub top: usize,
    pub left: usize,
    pub rows: usize,
    pub cols: usize,
    pub height_m: f64,
}

impl Building {
    fn overlaps(&self, o: &Building) -> bool {
        self.top < o.top + o.rows && o.top < self.top + self.rows && self.left < o.left + o.cols && o.left < self.left + self.cols
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub rgb: RgbImage,
    /// Block-averaged heights at `rgb_gsd * ratio`.
    pub target: RasterGrid,
    /// Heights at RGB resolution.
    pub heights: RasterGrid,
    /// Ground pixels the renderer darkened.
    pub shadow: ShadowMap,
    pub buildings: Vec<Building>,
}

/// Ground pixels covered by the sweep of a footprint along the shadow direction.
fn cast_shadow(b: &Building, length: f64, dir: (f64, f64), world: usize, mask: &mut [bool]) {
    if length <= 0.0 {
        return;
    }
    let (dr, dc) = dir;
    let (r0, r1) = (b.top as f64, (b.top + b.rows) as f64);
    let (c0, c1) = (b.left as f64, (b.left + b.cols) as f64);
    let lo_r = (r0 + dr.min(0.0) * length).floor().max(0.0) as usize;
    let hi_r = ((r1 + dr.max(0.0) * length).ceil() as usize).min(world);
    let lo_c = (c0 + dc.min(0.0) * length).floor().max(0.0) as usize;
    let hi_c = ((c1 + dc.max(0.0) * length).ceil() as usize).min(world);
    // t-interval where p - t*d stays inside [lo, hi) along one axis
    let slab = |p: f64, d: f64, lo: f64, hi: f64| -> (f64, f64) {
        if d.abs() < 1e-12 {
            if p >= lo && p < hi {
                (f64::NEG_INFINITY, f64::INFINITY)
            } else {
                (1.0, 0.0)
            }
        } else {
            let (a, b) = ((p - hi) / d, (p - lo) / d);
            (a.min(b), a.max(b))
        }
    };
    for r in lo_r..hi_r {
        let (ra, rb) = slab(r as f64 + 0.5, dr, r0, r1);
        for c in lo_c..hi_c {
            let (ca, cb) = slab(c as f64 + 0.5, dc, c0, c1);
            let t0 = ra.max(ca).max(0.0);
            let t1 = rb.min(cb).min(length);
            if t0 <= t1 {
                mask[r * world + c] = true;
            }
        }
    }
}

fn band<R: Rng>(rng: &mut R, (lo, hi): (u8, u8)) -> f64 {
    f64::from(rng.random_range(lo..=hi))
}

pub fn generate_scene(params: &SceneParams) -> Result<Scene> {
    params.validate()?;
    let n = params.world;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut buildings: Vec<Building> = Vec::with_capacity(params.n_buildings);
    let (f0, f1) = params.footprint_range;
    let (h0, h1) = params.height_range;
    for i in 0..params.n_buildings {
        let mut placed = false;
        for _ in 0..params.max_attempts.max(1) {
            let rows = rng.random_range(f0..=f1);
            let cols = rng.random_range(f0..=f1);
            let cand = Building {
                top: rng.random_range(0..=n - rows),
                left: rng.random_range(0..=n - cols),
                rows,
                cols,
                height_m: if h1 > h0 { rng.random_range(h0..=h1) } else { h0 },
            };
            if buildings.iter().all(|b| !b.overlaps(&cand)) {
                buildings.push(cand);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Generation(format!(
                "could not place building {} of {} without overlap after {} attempts",
                i + 1,
                params.n_buildings,
                params.max_attempts
            )));
        }
    }

    let mut heights = vec![0.0f64; n * n];
    let mut roof = vec![usize::MAX; n * n];
    for (k, b) in buildings.iter().enumerate() {
        for r in b.top..b.top + b.rows {
            for c in b.left..b.left + b.cols {
                heights[r * n + c] = b.height_m;
                roof[r * n + c] = k;
            }
        }
    }
    let az = params.sun_azimuth.to_radians();
    let dir = (az.cos(), -az.sin());
    let mut shadow = vec![false; n * n];
    for b in &buildings {
        let len = shadow_length_px(b.height_m, params.sun_elevation, params.rgb_gsd)? as f64;
        cast_shadow(b, len, dir, n, &mut shadow);
    }
    for (s, &k) in shadow.iter_mut().zip(&roof) {
        if k != usize::MAX {
            *s = false;
        }
    }

    let roof_colors: Vec<[f64; 3]> = buildings
        .iter()
        .map(|_| std::array::from_fn(|_| band(&mut rng, params.roof_band)))
        .collect();
    let noise = Normal::new(0.0, params.noise_sigma.max(f64::MIN_POSITIVE)).expect("finite sigma");
    let mut data = Vec::with_capacity(n * n * 3);
    for i in 0..n * n {
        for ch in 0..3 {
            let base = if roof[i] != usize::MAX {
                roof_colors[roof[i]][ch]
            } else if shadow[i] {
                band(&mut rng, params.shadow_band)
            } else {
                band(&mut rng, params.ground_band)
            };
            let v = if params.noise_sigma > 0.0 { base + noise.sample(&mut rng) } else { base };
            data.push((v + 0.5).floor().clamp(0.0, 255.0) as u8);
        }
    }

    let r = params.ratio;
    let q = n / r;
    let mut target = Vec::with_capacity(q * q);
    for i in 0..q {
        for j in 0..q {
            let mut s = 0.0;
            for y in i * r..(i + 1) * r {
                s += heights[y * n + j * r..y * n + (j + 1) * r].iter().sum::<f64>();
            }
            target.push((s / (r * r) as f64) as f32);
        }
    }
    Ok(Scene {
        rgb: RgbImage::new(n, n, data)?,
        target: RasterGrid::from_values(q, q, target, params.rgb_gsd * r as f64)?,
        heights: RasterGrid::from_values(n, n, heights.iter().map(|&h| h as f32).collect(), params.rgb_gsd)?,
        shadow: ShadowMap::new(n, n, shadow.iter().map(|&s| u8::from(s)).collect())?,
        buildings,
    })
}

/// Generates `n_scenes` scenes, cuts them into non-overlapping patches and splits 70/15/15.
///
/// Scene `i` is seeded from the template seed and `i`; the split uses the template seed.
pub fn generate_dataset(template: &SceneParams, n_scenes: usize, mode: &DatasetMode) -> Result<PatchCatalog> {
    if n_scenes == 0 {
        return Err(Error::invalid("n_scenes must be at least 1"));
    }
    if mode.ratio != template.ratio || (mode.rgb_gsd - template.rgb_gsd).abs() > 1e-9 * template.rgb_gsd {
        return Err(Error::invalid(format!(
            "dataset mode (ratio {}, gsd {}) does not match scene parameters (ratio {}, gsd {})",
            mode.ratio, mode.rgb_gsd, template.ratio, template.rgb_gsd
        )));
    }
    let mut parts = Vec::with_capacity(n_scenes);
    for i in 0..n_scenes {
        let params = SceneParams {
            seed: derive_seed(&[template.seed, 2, i as u64]),
            ..template.clone()
        };
        let scene = generate_scene(&params)?;
        parts.push(catalog_from_height(&format!("scene{i:04}"), scene.rgb, scene.target, mode, mode.patch_rgb)?);
    }
    split_catalog(&PatchCatalog::concat(parts)?, template.seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shadow_lengths() {
        assert_eq!(shadow_length_px(10.0, 45.0, 0.25).unwrap(), 40);
        assert_eq!(shadow_length_px(7.5, 30.0, 0.25).unwrap(), 52);
        for h in [1.0, 5.0, 30.0] {
            assert!(shadow_length_px(h, 89.9, 0.25).unwrap() <= 1);
        }
        for e in [0.0, 90.0, -5.0, f64::NAN] {
            assert!(matches!(shadow_length_px(1.0, e, 0.25), Err(Error::InvalidArgument(_))));
        }
    }

    #[test]
    fn empty_scene_is_flat() {
        let s = generate_scene(&SceneParams {
            n_buildings: 0,
            noise_sigma: 0.0,
            ..Default::default()
        })
        .unwrap();
        assert!(s.target.values().iter().all(|&v| v == 0.0));
        assert_eq!(s.shadow.count(), 0);
        assert!(s.rgb.as_bytes().iter().all(|&v| (80..=160).contains(&v)));
    }

    #[test]
    fn overpacked_scene_fails() {
        let p = SceneParams {
            world: 32,
            footprint_range: (16, 16),
            n_buildings: 5,
            max_attempts: 50,
            ..Default::default()
        };
        assert!(matches!(generate_scene(&p), Err(Error::Generation(_))));
    }

    #[test]
    fn scenes_are_seed_deterministic() {
        let p = SceneParams::default();
        assert_eq!(generate_scene(&p).unwrap(), generate_scene(&p).unwrap());
        let q = SceneParams { seed: 1, ..p };
        assert_ne!(generate_scene(&q).unwrap().rgb, generate_scene(&SceneParams::default()).unwrap().rgb);
    }
}
