//! Tiled whole-image prediction and MAE/RMSE evaluation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::datapipe::{input_tensor, DatasetName, PatchCatalog};
use crate::error::{Error, Result};
use crate::grids::{GridTransform, PatchSample, RasterGrid, Rect, RgbImage, Split};
use crate::net::{Model, Tensor};
use crate::shadow::{compute_shadow_map, reflect_index, ShadowParams};

pub const REPORT_SCHEMA_VERSION: u32 = 1;
const EVAL_BATCH: usize = 16;

/// Non-overlapping tiling of an image padded up to whole patches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileLayout {
    pub patch: usize,
    pub ratio: usize,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub pad_bottom: usize,
    pub pad_right: usize,
    pub out_height: usize,
    pub out_width: usize,
}

impl TileLayout {
    /// RGB rectangle of tile `(row, col)` in the padded image.
    pub fn tile_rect(&self, row: usize, col: usize) -> Rect {
        Rect::new(row * self.patch, col * self.patch, self.patch, self.patch)
    }

    pub fn tile_count(&self) -> usize {
        self.grid_rows * self.grid_cols
    }
}

pub fn plan_tiles(height: usize, width: usize, patch: usize, ratio: usize) -> Result<TileLayout> {
    if patch == 0 || ratio == 0 || patch % ratio != 0 {
        return Err(Error::invalid(format!("patch {patch} is not divisible by ratio {ratio}")));
    }
    if height == 0 || width == 0 {
        return Err(Error::invalid("cannot tile an empty image"));
    }
    let (rows, cols) = (height.div_ceil(patch), width.div_ceil(patch));
    Ok(TileLayout {
        patch,
        ratio,
        grid_rows: rows,
        grid_cols: cols,
        pad_bottom: rows * patch - height,
        pad_right: cols * patch - width,
        out_height: height / ratio,
        out_width: width / ratio,
    })
}

/// Extends an image to `height × width` by mirroring about its last row and column.
pub fn reflect_pad(rgb: &RgbImage, height: usize, width: usize) -> RgbImage {
    let mut out = RgbImage::filled(height, width, [0; 3]);
    for r in 0..height {
        let sr = reflect_index(r as isize, rgb.height());
        for c in 0..width {
            out.set_pixel(r, c, rgb.pixel(sr, reflect_index(c as isize, rgb.width())));
        }
    }
    out
}

/// Network input for one patch, with or without the shadow channel per the model.
pub fn patch_input(model: &Model<f32>, rgb: &RgbImage, params: &ShadowParams) -> Result<Tensor<f32>> {
    if model.spec().uses_shadow_channel() {
        input_tensor(rgb, Some(&compute_shadow_map(rgb, params)))
    } else {
        input_tensor(rgb, None)
    }
}

/// Eval-mode prediction of one model-sized patch, unclamped.
pub fn predict_patch(model: &Model<f32>, rgb: &RgbImage, params: &ShadowParams) -> Result<Tensor<f32>> {
    model.forward_eval(&patch_input(model, rgb, params)?)
}

/// Tiles, predicts, stitches, crops and clamps a whole image.
pub fn predict_full(model: &Model<f32>, rgb: &RgbImage, params: &ShadowParams, rgb_gsd: f64) -> Result<RasterGrid> {
    let spec = model.spec();
    let (patch, ratio) = (spec.input_size, spec.ratio());
    let layout = plan_tiles(rgb.height(), rgb.width(), patch, ratio)?;
    let padded = reflect_pad(
        rgb,
        layout.grid_rows * patch,
        layout.grid_cols * patch,
    );
    let q = spec.output_size;
    let full_w = layout.grid_cols * q;
    let mut stitched = vec![0.0f32; layout.grid_rows * q * full_w];
    for tr in 0..layout.grid_rows {
        for tc in 0..layout.grid_cols {
            let tile = padded.crop(layout.tile_rect(tr, tc))?;
            let y = predict_patch(model, &tile, params)?;
            for i in 0..q {
                let dst = (tr * q + i) * full_w + tc * q;
                stitched[dst..dst + q].copy_from_slice(&y.data()[i * q..(i + 1) * q]);
            }
        }
    }
    let (oh, ow) = (layout.out_height, layout.out_width);
    let mut values = Vec::with_capacity(oh * ow);
    for i in 0..oh {
        values.extend(stitched[i * full_w..i * full_w + ow].iter().map(|&v| v.max(0.0)));
    }
    RasterGrid::from_values(oh, ow, values, rgb_gsd * ratio as f64)
}

/// Running sums for MAE and RMSE.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ErrorSums {
    pub n: u64,
    pub abs: f64,
    pub sq: f64,
}

impl ErrorSums {
    pub fn add(&mut self, pred: f32, target: f32) {
        let r = f64::from(pred) - f64::from(target);
        self.n += 1;
        self.abs += r.abs();
        self.sq += r * r;
    }

    pub fn merge(&mut self, other: &ErrorSums) {
        self.n += other.n;
        self.abs += other.abs;
        self.sq += other.sq;
    }

    pub fn mae(&self) -> f64 {
        self.abs / self.n as f64
    }

    pub fn rmse(&self) -> f64 {
        (self.sq / self.n as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub id: String,
    pub mae: f64,
    pub rmse: f64,
    pub n_pixels: u64,
}

/// Pooled metrics over a split plus a per-source breakdown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub mode: DatasetName,
    pub split: Split,
    #[serde(rename = "MAE")]
    pub mae: f64,
    #[serde(rename = "RMSE")]
    pub rmse: f64,
    pub n_pixels: u64,
    pub n_patches: usize,
    pub used_shadow_channel: bool,
    pub per_image: Vec<ImageMetrics>,
}

/// Scores an arbitrary predictor; it receives each sample and returns `patch_out²` heights.
///
/// Predictions are clamped at zero and only valid target pixels count.
pub fn evaluate_with<F>(
    catalog: &PatchCatalog,
    split: Split,
    params: &ShadowParams,
    used_shadow_channel: bool,
    mut predict: F,
) -> Result<EvalReport>
where
    F: FnMut(&[PatchSample]) -> Result<Vec<Vec<f32>>>,
{
    let idx = catalog.indices(split);
    if idx.is_empty() {
        return Err(Error::EmptyInput(format!("{split:?} split is empty").to_lowercase()));
    }
    let mut total = ErrorSums::default();
    let mut per: BTreeMap<String, ErrorSums> = BTreeMap::new();
    for chunk in idx.chunks(EVAL_BATCH) {
        let samples = chunk
            .iter()
            .map(|&i| catalog.sample(i, params))
            .collect::<Result<Vec<_>>>()?;
        let preds = predict(&samples)?;
        if preds.len() != samples.len() {
            return Err(Error::invalid("predictor returned the wrong number of patches"));
        }
        for (s, p) in samples.iter().zip(&preds) {
            if p.len() != s.target.values().len() {
                return Err(Error::invalid("prediction size does not match the target"));
            }
            let acc = per.entry(s.source_id.clone()).or_default();
            for ((&y, &t), &ok) in p.iter().zip(s.target.values()).zip(s.target.valid_mask()) {
                if ok {
                    acc.add(y.max(0.0), t);
                    total.add(y.max(0.0), t);
                }
            }
        }
    }
    if total.n == 0 {
        return Err(Error::EmptyInput("no valid target pixels in split".into()));
    }
    let (mae, rmse) = (total.mae(), total.rmse());
    assert!(rmse + 1e-9 * rmse.max(1.0) >= mae, "rmse {rmse} < mae {mae}");
    Ok(EvalReport {
        schema_version: REPORT_SCHEMA_VERSION,
        mode: catalog.mode.name,
        split,
        mae,
        rmse,
        n_pixels: total.n,
        n_patches: idx.len(),
        used_shadow_channel,
        per_image: per
            .into_iter()
            .filter(|(_, s)| s.n > 0)
            .map(|(id, s)| ImageMetrics {
                id,
                mae: s.mae(),
                rmse: s.rmse(),
                n_pixels: s.n,
            })
            .collect(),
    })
}

/// Eval-mode model predictions over a split, batched.
pub fn evaluate(model: &Model<f32>, catalog: &PatchCatalog, split: Split, params: &ShadowParams) -> Result<EvalReport> {
    let uses_shadow = model.spec().uses_shadow_channel();
    evaluate_with(catalog, split, params, uses_shadow, |samples| {
        let inputs = samples
            .iter()
            .map(|s| input_tensor(&s.rgb, uses_shadow.then_some(&s.shadow)))
            .collect::<Result<Vec<_>>>()?;
        let y = model.forward_eval(&Tensor::stack(&inputs)?)?;
        Ok((0..samples.len()).map(|i| y.item(i).into_vec()).collect())
    })
}

/// Median of all valid train-split target pixels (lower median for even counts).
pub fn train_median(catalog: &PatchCatalog) -> Result<f32> {
    let mut values = Vec::new();
    for i in catalog.indices(Split::Train) {
        let (_, h) = catalog.patch(i)?;
        values.extend(h.valid_values());
    }
    if values.is_empty() {
        return Err(Error::EmptyInput("no valid train pixels".into()));
    }
    let mid = (values.len() - 1) / 2;
    let (_, m, _) = values.select_nth_unstable_by(mid, f32::total_cmp);
    Ok(*m)
}

/// Scores the predictor that outputs `value` everywhere.
pub fn evaluate_constant(catalog: &PatchCatalog, split: Split, params: &ShadowParams, value: f32) -> Result<EvalReport> {
    let n = catalog.mode.patch_out * catalog.mode.patch_out;
    evaluate_with(catalog, split, params, false, |samples| Ok(vec![vec![value; n]; samples.len()]))
}
