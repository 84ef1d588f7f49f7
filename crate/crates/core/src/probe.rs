//! Sliding-mask sensitivity of predictions to imposed or removed shadows.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grids::Rect;
use crate::net::{Model, Tensor};

pub const SUMMARY_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskTarget {
    /// Black out the color channels.
    RgbZero,
    /// Mark the region as shadow in the shadow channel.
    ShadowOne,
    /// Clear the shadow channel.
    ShadowZero,
    /// Raise color channels to at least the configured level.
    RgbBrighten,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregate {
    MaxAbs,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    pub mask_size: usize,
    pub stride: usize,
    pub target: MaskTarget,
    pub aggregate: Aggregate,
    /// Intensity floor used by `rgb_brighten`.
    pub brighten_level: f32,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            mask_size: 32,
            stride: 32,
            target: MaskTarget::ShadowOne,
            aggregate: Aggregate::MaxAbs,
            brighten_level: 160.0,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 {
            return Err(Error::invalid("probe stride must be at least 1"));
        }
        if !(0.0..=255.0).contains(&self.brighten_level) {
            return Err(Error::invalid("brighten_level must lie in [0, 255]"));
        }
        Ok(())
    }
}

/// Copy of a `[1, H, W, C]` input with `target` applied inside `rect`.
pub fn apply_mask(input: &Tensor<f32>, rect: Rect, target: MaskTarget, brighten_level: f32) -> Result<Tensor<f32>> {
    let [n, h, w, c] = input.shape();
    if n != 1 {
        return Err(Error::invalid("masks apply to single inputs"));
    }
    if !rect.fits_in(h, w) {
        return Err(Error::invalid(format!("mask {rect:?} lies outside the {h}x{w} input")));
    }
    if matches!(target, MaskTarget::ShadowOne | MaskTarget::ShadowZero) && c < 4 {
        return Err(Error::invalid("shadow-channel masks need a 4-channel input"));
    }
    let mut out = input.clone();
    let data = out.data_mut();
    for r in rect.top..rect.top + rect.height {
        for col in rect.left..rect.left + rect.width {
            let px = &mut data[(r * w + col) * c..(r * w + col + 1) * c];
            match target {
                MaskTarget::RgbZero => px[..3].fill(0.0),
                MaskTarget::ShadowOne => px[3] = 1.0,
                MaskTarget::ShadowZero => px[3] = 0.0,
                MaskTarget::RgbBrighten => px[..3].iter_mut().for_each(|v| *v = v.max(brighten_level)),
            }
        }
    }
    Ok(out)
}

/// Top-left corners of masks on the stride grid, row-major.
pub fn mask_positions(height: usize, width: usize, mask: usize, stride: usize) -> Vec<(usize, usize)> {
    if mask > height || mask > width || stride == 0 {
        return Vec::new();
    }
    let tops: Vec<usize> = (0..=height - mask).step_by(stride).collect();
    let lefts: Vec<usize> = (0..=width - mask).step_by(stride).collect();
    tops.iter().flat_map(|&t| lefts.iter().map(move |&l| (t, l))).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub positions: Vec<(usize, usize)>,
    pub baseline: Tensor<f32>,
    /// `masked - baseline` per position, each shaped like the model output.
    pub deltas: Vec<Tensor<f32>>,
    /// Per output pixel reduction over positions.
    pub aggregate: Vec<f32>,
}

impl SweepResult {
    pub fn max_abs(&self, i: usize) -> f32 {
        self.deltas[i].data().iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn mean_delta(&self, i: usize) -> f64 {
        let d = self.deltas[i].data();
        d.iter().map(|&v| f64::from(v)).sum::<f64>() / d.len().max(1) as f64
    }
}

pub fn sensitivity_sweep(model: &Model<f32>, input: &Tensor<f32>, config: &ProbeConfig) -> Result<SweepResult> {
    config.validate()?;
    let [_, h, w, _] = input.shape();
    let baseline = model.forward_eval(input)?;
    let positions = mask_positions(h, w, config.mask_size, config.stride);
    let mut deltas = Vec::with_capacity(positions.len());
    for &(top, left) in &positions {
        let rect = Rect::new(top, left, config.mask_size, config.mask_size);
        let masked = apply_mask(input, rect, config.target, config.brighten_level)?;
        let delta = if masked == *input {
            Tensor::zeros(baseline.shape())
        } else {
            let y = model.forward_eval(&masked)?;
            let mut d = y;
            for (v, &b) in d.data_mut().iter_mut().zip(baseline.data()) {
                *v -= b;
            }
            d
        };
        deltas.push(delta);
    }
    let mut aggregate = vec![0.0f32; baseline.len()];
    if !deltas.is_empty() {
        for (j, a) in aggregate.iter_mut().enumerate() {
            *a = match config.aggregate {
                Aggregate::MaxAbs => deltas.iter().fold(0.0f32, |m, d| m.max(d.data()[j].abs())),
                Aggregate::Mean => {
                    (deltas.iter().map(|d| f64::from(d.data()[j])).sum::<f64>() / deltas.len() as f64) as f32
                }
            };
        }
    }
    Ok(SweepResult {
        positions,
        baseline,
        deltas,
        aggregate,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionSummary {
    pub top: usize,
    pub left: usize,
    pub max_abs_delta: f32,
    pub mean_delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSummary {
    pub schema_version: u32,
    pub config: ProbeConfig,
    pub output_size: (usize, usize),
    pub positions: Vec<PositionSummary>,
    /// Mask position with the largest `max_abs_delta`.
    pub argmax: Option<(usize, usize)>,
    pub max_abs_delta: f32,
}

pub fn summarize(result: &SweepResult, config: &ProbeConfig) -> ProbeSummary {
    let positions: Vec<PositionSummary> = result
        .positions
        .iter()
        .enumerate()
        .map(|(i, &(top, left))| PositionSummary {
            top,
            left,
            max_abs_delta: result.max_abs(i),
            mean_delta: result.mean_delta(i),
        })
        .collect();
    let best = positions
        .iter()
        .enumerate()
        .fold(None, |acc: Option<(usize, f32)>, (i, p)| match acc {
            Some((_, m)) if m >= p.max_abs_delta => acc,
            _ => Some((i, p.max_abs_delta)),
        });
    ProbeSummary {
        schema_version: SUMMARY_SCHEMA_VERSION,
        config: *config,
        output_size: (result.baseline.height(), result.baseline.width()),
        argmax: best.map(|(i, _)| (positions[i].top, positions[i].left)),
        max_abs_delta: best.map_or(0.0, |(_, m)| m),
        positions,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn input(h: usize, w: usize) -> Tensor<f32> {
        Tensor::from_vec([1, h, w, 4], (0..h * w * 4).map(|i| ((i * 7) % 256) as f32).collect()).unwrap()
    }

    #[test]
    fn position_grid() {
        assert_eq!(mask_positions(256, 256, 32, 32).len(), 64);
        assert_eq!(mask_positions(64, 64, 16, 8).len(), 49);
        assert_eq!(mask_positions(64, 64, 0, 16).len(), 25);
        assert!(mask_positions(8, 8, 9, 1).is_empty());
    }

    #[test]
    fn mask_semantics() {
        let x = input(8, 8);
        assert_eq!(apply_mask(&x, Rect::new(2, 2, 0, 0), MaskTarget::RgbZero, 0.0).unwrap(), x);
        let r = Rect::new(1, 2, 3, 4);
        for t in [MaskTarget::RgbZero, MaskTarget::ShadowOne, MaskTarget::ShadowZero, MaskTarget::RgbBrighten] {
            let once = apply_mask(&x, r, t, 200.0).unwrap();
            assert_eq!(apply_mask(&once, r, t, 200.0).unwrap(), once);
            for row in 0..8 {
                for col in 0..8 {
                    let inside = r.contains(row, col);
                    for c in 0..4 {
                        let (a, b) = (once.at(0, row, col, c), x.at(0, row, col, c));
                        if !inside {
                            assert_eq!(a, b);
                        }
                    }
                }
            }
        }
        let black = apply_mask(&x, r, MaskTarget::RgbZero, 0.0).unwrap();
        assert_eq!(black.at(0, 1, 2, 0), 0.0);
        assert_eq!(black.at(0, 1, 2, 3), x.at(0, 1, 2, 3));
        assert_eq!(apply_mask(&black, r, MaskTarget::RgbZero, 0.0).unwrap(), black);
        assert!(apply_mask(&x, Rect::new(6, 6, 3, 3), MaskTarget::ShadowOne, 0.0).is_err());
        let rgb_only = Tensor::<f32>::zeros([1, 4, 4, 3]);
        assert!(apply_mask(&rgb_only, Rect::new(0, 0, 1, 1), MaskTarget::ShadowOne, 0.0).is_err());
    }
}
