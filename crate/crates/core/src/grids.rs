//! Raster and image value types shared by every stage of the pipeline.
//!
//! All grids are stored row-major. Rotations are clockwise in quarter turns
//! and apply identically to values and validity masks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Value written into `RasterGrid::values` wherever the mask is false.
pub const NODATA_SENTINEL: f32 = -9999.0;

/// Axis-aligned pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl Rect {
    pub fn new(top: usize, left: usize, height: usize, width: usize) -> Self {
        Self {
            top,
            left,
            height,
            width,
        }
    }

    pub fn full(height: usize, width: usize) -> Self {
        Self::new(0, 0, height, width)
    }

    pub fn fits_in(&self, height: usize, width: usize) -> bool {
        self.top + self.height <= height && self.left + self.width <= width
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        row >= self.top && row < self.top + self.height && col >= self.left && col < self.left + self.width
    }

    /// Where this rectangle lands after rotating its `height × width` host clockwise by `k` quarter turns.
    pub fn rotated(&self, host_height: usize, host_width: usize, k: u32) -> Rect {
        let (h, w) = (host_height, host_width);
        match k % 4 {
            0 => *self,
            1 => Rect::new(self.left, h - self.top - self.height, self.width, self.height),
            2 => Rect::new(
                h - self.top - self.height,
                w - self.left - self.width,
                self.height,
                self.width,
            ),
            _ => Rect::new(w - self.left - self.width, self.top, self.width, self.height),
        }
    }
}

/// Quarter-turn and crop transforms shared by all raster-like types.
pub trait GridTransform: Sized {
    fn dims(&self) -> (usize, usize);

    /// Rotate clockwise by `k` quarter turns; `k` must be in `0..4`.
    fn rotate90(&self, k: u32) -> Result<Self>;

    fn crop(&self, rect: Rect) -> Result<Self>;
}

fn check_k(k: u32) -> Result<()> {
    if k > 3 {
        return Err(Error::invalid(format!("rotation count {k} not in 0..=3")));
    }
    Ok(())
}

fn check_rect(rect: &Rect, height: usize, width: usize) -> Result<()> {
    if !rect.fits_in(height, width) {
        return Err(Error::invalid(format!(
            "crop {rect:?} exceeds {height}x{width} grid"
        )));
    }
    Ok(())
}

/// Rotates an interleaved buffer with `chans` values per pixel.
pub(crate) fn rotate_buffer<T: Copy>(data: &[T], h: usize, w: usize, chans: usize, k: u32) -> (Vec<T>, usize, usize) {
    let (nh, nw) = if k % 2 == 1 { (w, h) } else { (h, w) };
    if k == 0 {
        return (data.to_vec(), h, w);
    }
    let mut out = Vec::with_capacity(data.len());
    for r in 0..nh {
        for c in 0..nw {
            let (sr, sc) = match k {
                1 => (h - 1 - c, r),
                2 => (h - 1 - r, w - 1 - c),
                _ => (c, w - 1 - r),
            };
            let base = (sr * w + sc) * chans;
            out.extend_from_slice(&data[base..base + chans]);
        }
    }
    (out, nh, nw)
}

pub(crate) fn crop_buffer<T: Copy>(data: &[T], w: usize, chans: usize, rect: Rect) -> Vec<T> {
    let mut out = Vec::with_capacity(rect.height * rect.width * chans);
    for r in rect.top..rect.top + rect.height {
        let start = (r * w + rect.left) * chans;
        out.extend_from_slice(&data[start..start + rect.width * chans]);
    }
    out
}

/// Elevation or height raster with an explicit validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterGrid {
    height: usize,
    width: usize,
    values: Vec<f32>,
    valid: Vec<bool>,
    gsd: f64,
    pub origin: Option<(f64, f64)>,
}

impl RasterGrid {
    pub fn new(height: usize, width: usize, values: Vec<f32>, valid: Vec<bool>, gsd: f64) -> Result<Self> {
        if values.len() != height * width || valid.len() != height * width {
            return Err(Error::invalid(format!(
                "raster buffers ({} values, {} mask) do not match {height}x{width}",
                values.len(),
                valid.len()
            )));
        }
        if !(gsd > 0.0) || !gsd.is_finite() {
            return Err(Error::invalid(format!("gsd must be positive, got {gsd}")));
        }
        let values = values
            .into_iter()
            .zip(&valid)
            .map(|(v, &ok)| if ok { v } else { NODATA_SENTINEL })
            .collect();
        Ok(Self {
            height,
            width,
            values,
            valid,
            gsd,
            origin: None,
        })
    }

    /// Fully valid grid.
    pub fn from_values(height: usize, width: usize, values: Vec<f32>, gsd: f64) -> Result<Self> {
        let valid = vec![true; values.len()];
        Self::new(height, width, values, valid, gsd)
    }

    pub fn filled(height: usize, width: usize, value: f32, gsd: f64) -> Result<Self> {
        Self::from_values(height, width, vec![value; height * width], gsd)
    }

    /// Builds a grid treating non-finite values and `nodata` (if given) as invalid.
    pub fn from_raw(height: usize, width: usize, raw: Vec<f32>, nodata: Option<f32>, gsd: f64) -> Result<Self> {
        let valid = raw
            .iter()
            .map(|v| v.is_finite() && nodata.is_none_or(|nd| *v != nd))
            .collect();
        Self::new(height, width, raw, valid, gsd)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn gsd(&self) -> f64 {
        self.gsd
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn valid_mask(&self) -> &[bool] {
        &self.valid
    }

    pub fn get(&self, row: usize, col: usize) -> Option<f32> {
        let i = row * self.width + col;
        self.valid[i].then_some(self.values[i])
    }

    pub fn is_valid(&self, row: usize, col: usize) -> bool {
        self.valid[row * self.width + col]
    }

    /// Iterator over values of valid pixels only.
    pub fn valid_values(&self) -> impl Iterator<Item = f32> + '_ {
        self.values
            .iter()
            .zip(&self.valid)
            .filter_map(|(v, ok)| ok.then_some(*v))
    }

    pub fn mean_valid(&self) -> Option<f64> {
        let (sum, n) = self
            .valid_values()
            .fold((0.0f64, 0usize), |(s, n), v| (s + v as f64, n + 1));
        (n > 0).then(|| sum / n as f64)
    }

    pub fn all_valid(&self) -> bool {
        self.valid.iter().all(|&v| v)
    }

    /// Applies `f` to every valid pixel; invalid pixels keep the sentinel.
    pub fn map_valid(&self, mut f: impl FnMut(f32) -> f32) -> RasterGrid {
        let values = self
            .values
            .iter()
            .zip(&self.valid)
            .map(|(&v, &ok)| if ok { f(v) } else { NODATA_SENTINEL })
            .collect();
        RasterGrid {
            values,
            ..self.clone()
        }
    }

    pub fn with_gsd(mut self, gsd: f64) -> Result<Self> {
        if !(gsd > 0.0) {
            return Err(Error::invalid(format!("gsd must be positive, got {gsd}")));
        }
        self.gsd = gsd;
        Ok(self)
    }
}

impl GridTransform for RasterGrid {
    fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    fn rotate90(&self, k: u32) -> Result<Self> {
        check_k(k)?;
        let (values, h, w) = rotate_buffer(&self.values, self.height, self.width, 1, k);
        let (valid, _, _) = rotate_buffer(&self.valid, self.height, self.width, 1, k);
        Ok(RasterGrid {
            height: h,
            width: w,
            values,
            valid,
            gsd: self.gsd,
            origin: self.origin,
        })
    }

    fn crop(&self, rect: Rect) -> Result<Self> {
        check_rect(&rect, self.height, self.width)?;
        let origin = self.origin.map(|(x, y)| {
            (
                x + rect.left as f64 * self.gsd,
                y - rect.top as f64 * self.gsd,
            )
        });
        Ok(RasterGrid {
            height: rect.height,
            width: rect.width,
            values: crop_buffer(&self.values, self.width, 1, rect),
            valid: crop_buffer(&self.valid, self.width, 1, rect),
            gsd: self.gsd,
            origin,
        })
    }
}

/// Three-channel 8-bit image, pixels interleaved as `[r, g, b]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width * 3 {
            return Err(Error::invalid(format!(
                "rgb buffer of {} bytes does not match {height}x{width}x3",
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, rgb: [u8; 3]) -> Self {
        let data = rgb.iter().copied().cycle().take(height * width * 3).collect();
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.data
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.data
    }

    pub fn pixel(&self, row: usize, col: usize) -> [u8; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, row: usize, col: usize, rgb: [u8; 3]) {
        let i = (row * self.width + col) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn pixels(&self) -> impl Iterator<Item = [u8; 3]> + '_ {
        self.data.chunks_exact(3).map(|p| [p[0], p[1], p[2]])
    }

    pub fn pixels_mut(&mut self) -> impl Iterator<Item = &mut [u8]> + '_ {
        self.data.chunks_exact_mut(3)
    }
}

impl GridTransform for RgbImage {
    fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    fn rotate90(&self, k: u32) -> Result<Self> {
        check_k(k)?;
        let (data, height, width) = rotate_buffer(&self.data, self.height, self.width, 3, k);
        Ok(Self { height, width, data })
    }

    fn crop(&self, rect: Rect) -> Result<Self> {
        check_rect(&rect, self.height, self.width)?;
        Ok(Self {
            height: rect.height,
            width: rect.width,
            data: crop_buffer(&self.data, self.width, 3, rect),
        })
    }
}

/// Binary shadow raster; every value is 0 or 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShadowMap {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl ShadowMap {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::invalid(format!(
                "shadow buffer of {} values does not match {height}x{width}",
                data.len()
            )));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(Error::invalid("shadow map values must be 0 or 1"));
        }
        Ok(Self { height, width, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.data[row * self.width + col]
    }

    pub fn count(&self) -> usize {
        self.data.iter().map(|&v| v as usize).sum()
    }
}

impl GridTransform for ShadowMap {
    fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    fn rotate90(&self, k: u32) -> Result<Self> {
        check_k(k)?;
        let (data, height, width) = rotate_buffer(&self.data, self.height, self.width, 1, k);
        Ok(Self { height, width, data })
    }

    fn crop(&self, rect: Rect) -> Result<Self> {
        check_rect(&rect, self.height, self.width)?;
        Ok(Self {
            height: rect.height,
            width: rect.width,
            data: crop_buffer(&self.data, self.width, 1, rect),
        })
    }
}

/// Train/validation/test membership of a patch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid(format!("unknown split `{other}`"))),
        }
    }
}

/// Aligned training/evaluation unit.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSample {
    pub rgb: RgbImage,
    pub shadow: ShadowMap,
    pub target: RasterGrid,
    pub source_id: String,
    pub offset: (usize, usize),
    pub split: Option<Split>,
    pub valid: bool,
}
