//! Patch enumeration, train/val/test splitting and on-disk catalogs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{compute_height_ground_truth, validate_patch, DatasetMode, RejectReason};
use crate::error::{Error, Result};
use crate::grids::{GridTransform, PatchSample, RasterGrid, Rect, RgbImage, Split};
use crate::io;
use crate::shadow::{compute_shadow_map, ShadowParams};

pub const CATALOG_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_SPLIT: (f64, f64, f64) = (0.70, 0.15, 0.15);
const MANIFEST: &str = "manifest.json";
const PATCH_DIR: &str = "patches";

/// Descriptor of one candidate patch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchRecord {
    pub source_id: String,
    /// Top-left corner in source RGB pixels.
    pub offset: (usize, usize),
    pub split: Option<Split>,
    pub valid: bool,
    pub reject_reason: Option<RejectReason>,
}

impl PatchRecord {
    fn file_stem(&self) -> String {
        format!("{}_{}_{}", self.source_id, self.offset.0, self.offset.1)
    }
}

/// Full-size RGB raster and its aligned height grid, kept in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceRasters {
    pub rgb: RgbImage,
    pub height: RasterGrid,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchCatalog {
    pub schema_version: u32,
    pub mode: DatasetMode,
    pub records: Vec<PatchRecord>,
    /// Directory holding the manifest and per-patch files, once saved.
    #[serde(skip)]
    pub storage_root: Option<PathBuf>,
    #[serde(skip)]
    sources: BTreeMap<String, Arc<SourceRasters>>,
    /// Patches of a stored catalog already read from disk.
    #[serde(skip)]
    cache: BTreeMap<usize, Arc<(RgbImage, RasterGrid)>>,
}

impl PartialEq for PatchCatalog {
    fn eq(&self, other: &Self) -> bool {
        self.schema_version == other.schema_version && self.mode == other.mode && self.records == other.records
    }
}

/// Computes ground truth and enumerates patches of one scene.
pub fn build_catalog(
    source_id: &str,
    rgb: &RgbImage,
    dsm: &RasterGrid,
    dtm: &RasterGrid,
    mode: &DatasetMode,
    stride: usize,
) -> Result<PatchCatalog> {
    let height = compute_height_ground_truth(dsm, dtm, mode)?;
    catalog_from_height(source_id, rgb.clone(), height, mode, stride)
}

/// Enumerates patches row-major over an RGB raster and its height grid.
///
/// `stride` is in RGB pixels and must keep targets aligned (a multiple of the ratio).
pub fn catalog_from_height(
    source_id: &str,
    rgb: RgbImage,
    height: RasterGrid,
    mode: &DatasetMode,
    stride: usize,
) -> Result<PatchCatalog> {
    mode.validate()?;
    if source_id.is_empty() || source_id.contains(['/', '\\']) {
        return Err(Error::invalid(format!("source id `{source_id}` is not a plain name")));
    }
    let r = mode.ratio;
    if rgb.height() != r * height.height() || rgb.width() != r * height.width() {
        return Err(Error::invalid(format!(
            "RGB {}x{} is not {r} times the elevation grid {}x{}",
            rgb.height(),
            rgb.width(),
            height.height(),
            height.width()
        )));
    }
    if stride == 0 || stride % r != 0 {
        return Err(Error::invalid(format!("stride {stride} must be a positive multiple of {r}")));
    }
    let height = height.with_gsd(mode.lidar_gsd)?;
    let (p, q) = (mode.patch_rgb, mode.patch_out);
    let mut records = Vec::new();
    if rgb.height() >= p && rgb.width() >= p {
        for top in (0..=rgb.height() - p).step_by(stride) {
            for left in (0..=rgb.width() - p).step_by(stride) {
                let target = height.crop(Rect::new(top / r, left / r, q, q))?;
                let reason = validate_patch(&target, mode).reason();
                records.push(PatchRecord {
                    source_id: source_id.to_string(),
                    offset: (top, left),
                    split: None,
                    valid: reason.is_none(),
                    reject_reason: reason,
                });
            }
        }
    }
    let mut sources = BTreeMap::new();
    sources.insert(source_id.to_string(), Arc::new(SourceRasters { rgb, height }));
    Ok(PatchCatalog {
        schema_version: CATALOG_SCHEMA_VERSION,
        mode: *mode,
        records,
        storage_root: None,
        sources,
        cache: BTreeMap::new(),
    })
}

/// Default 70/15/15 split of the valid records.
pub fn split_catalog(catalog: &PatchCatalog, seed: u64) -> Result<PatchCatalog> {
    split_catalog_with(catalog, seed, DEFAULT_SPLIT)
}

fn round_half_up(x: f64) -> usize {
    // Products like 0.15 * 10 land a hair off the half; the nudge keeps them on the intended side.
    (x + 0.5 + 1e-9).floor() as usize
}

/// Shuffles valid records with a seeded generator and assigns validation,
/// test and training membership in that order of the shuffled list.
pub fn split_catalog_with(catalog: &PatchCatalog, seed: u64, ratios: (f64, f64, f64)) -> Result<PatchCatalog> {
    let (tr, va, te) = ratios;
    if [tr, va, te].iter().any(|r| !(0.0..=1.0).contains(r)) || (tr + va + te - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("split ratios {ratios:?} must be in [0,1] and sum to 1")));
    }
    let mut valid: Vec<usize> = (0..catalog.records.len()).filter(|&i| catalog.records[i].valid).collect();
    if valid.is_empty() {
        return Err(Error::EmptyInput("catalog has no valid patches to split".into()));
    }
    let n = valid.len();
    let n_val = round_half_up(va * n as f64).min(n);
    let n_test = round_half_up(te * n as f64).min(n - n_val);
    valid.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut out = catalog.clone();
    for rec in &mut out.records {
        rec.split = None;
    }
    for (rank, &i) in valid.iter().enumerate() {
        out.records[i].split = Some(if rank < n_val {
            Split::Val
        } else if rank < n_val + n_test {
            Split::Test
        } else {
            Split::Train
        });
    }
    Ok(out)
}

impl PatchCatalog {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn valid_count(&self) -> usize {
        self.records.iter().filter(|r| r.valid).count()
    }

    /// Record indices in a split, in catalog order.
    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.records.len())
            .filter(|&i| self.records[i].split == Some(split))
            .collect()
    }

    pub fn count(&self, split: Split) -> usize {
        self.records.iter().filter(|r| r.split == Some(split)).count()
    }

    /// Appends another catalog of the same mode; source ids must not collide.
    pub fn merge(&mut self, other: PatchCatalog) -> Result<()> {
        if other.mode != self.mode {
            return Err(Error::invalid("cannot merge catalogs of different dataset modes"));
        }
        for id in other.sources.keys() {
            if self.sources.contains_key(id) || self.records.iter().any(|r| &r.source_id == id) {
                return Err(Error::invalid(format!("duplicate source id `{id}`")));
            }
        }
        let shift = self.records.len();
        self.records.extend(other.records);
        self.sources.extend(other.sources);
        self.cache.extend(other.cache.into_iter().map(|(i, p)| (i + shift, p)));
        Ok(())
    }

    /// Concatenates per-scene catalogs in order.
    pub fn concat(parts: Vec<PatchCatalog>) -> Result<PatchCatalog> {
        let mut it = parts.into_iter();
        let mut first = it
            .next()
            .ok_or_else(|| Error::EmptyInput("no catalogs to combine".into()))?;
        for c in it {
            first.merge(c)?;
        }
        Ok(first)
    }

    pub fn source(&self, id: &str) -> Option<&SourceRasters> {
        self.sources.get(id).map(|s| s.as_ref())
    }

    /// RGB patch and target grid of record `index`, from memory or from storage.
    pub fn patch(&self, index: usize) -> Result<(RgbImage, RasterGrid)> {
        let rec = self
            .records
            .get(index)
            .ok_or_else(|| Error::invalid(format!("record {index} out of range")))?;
        let (p, q, r) = (self.mode.patch_rgb, self.mode.patch_out, self.mode.ratio);
        if let Some(src) = self.sources.get(&rec.source_id) {
            let (top, left) = rec.offset;
            let rgb = src.rgb.crop(Rect::new(top, left, p, p))?;
            let target = src.height.crop(Rect::new(top / r, left / r, q, q))?;
            return Ok((rgb, target));
        }
        if let Some(p) = self.cache.get(&index) {
            return Ok(p.as_ref().clone());
        }
        let root = self.storage_root.as_ref().ok_or_else(|| {
            Error::invalid(format!("source `{}` is neither loaded nor stored", rec.source_id))
        })?;
        if !rec.valid {
            return Err(Error::invalid(format!("rejected patch {index} has no stored files")));
        }
        let stem = root.join(PATCH_DIR).join(rec.file_stem());
        let rgb = io::read_rgb(&with_suffix(&stem, "_rgb.png"))?;
        let target = io::read_raster(&with_suffix(&stem, "_height.tif"))?;
        if (rgb.height(), rgb.width(), target.height(), target.width()) != (p, p, q, q) {
            return Err(Error::invalid(format!("stored patch {} has wrong dimensions", rec.file_stem())));
        }
        Ok((rgb, target))
    }

    /// Full sample of record `index` with its shadow map.
    pub fn sample(&self, index: usize, params: &ShadowParams) -> Result<PatchSample> {
        let (rgb, target) = self.patch(index)?;
        let rec = &self.records[index];
        Ok(PatchSample {
            shadow: compute_shadow_map(&rgb, params),
            rgb,
            target,
            source_id: rec.source_id.clone(),
            offset: rec.offset,
            split: rec.split,
            valid: rec.valid,
        })
    }

    /// Writes `manifest.json` and one RGB PNG plus one float GeoTIFF target per valid patch.
    pub fn save(&mut self, dir: &Path) -> Result<()> {
        let patches = dir.join(PATCH_DIR);
        std::fs::create_dir_all(&patches).map_err(|e| Error::io(&patches, e))?;
        for i in 0..self.records.len() {
            if !self.records[i].valid {
                continue;
            }
            let stem = patches.join(self.records[i].file_stem());
            let rgb_path = with_suffix(&stem, "_rgb.png");
            let height_path = with_suffix(&stem, "_height.tif");
            if self.storage_root.as_deref() == Some(dir) && rgb_path.exists() && height_path.exists() {
                continue;
            }
            let (rgb, target) = self.patch(i)?;
            io::write_rgb_png(&rgb_path, &rgb)?;
            io::write_raster_tiff(&height_path, &target)?;
        }
        let manifest = dir.join(MANIFEST);
        let tmp = dir.join(format!("{MANIFEST}.tmp"));
        std::fs::write(&tmp, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, &manifest).map_err(|e| Error::io(&manifest, e))?;
        self.storage_root = Some(dir.to_path_buf());
        Ok(())
    }

    /// Opens a saved catalog; patches are read lazily from its directory.
    pub fn open(dir: &Path) -> Result<PatchCatalog> {
        let manifest = dir.join(MANIFEST);
        let text = std::fs::read_to_string(&manifest).map_err(|e| Error::io(&manifest, e))?;
        let mut cat: PatchCatalog = serde_json::from_str(&text)?;
        if cat.schema_version != CATALOG_SCHEMA_VERSION {
            return Err(Error::invalid(format!(
                "catalog schema {} is not the supported {CATALOG_SCHEMA_VERSION}",
                cat.schema_version
            )));
        }
        cat.mode.validate()?;
        cat.storage_root = Some(dir.to_path_buf());
        Ok(cat)
    }

    /// Reads every valid patch of a stored catalog into memory.
    pub fn preload(&mut self) -> Result<()> {
        for i in 0..self.records.len() {
            if self.records[i].valid && !self.sources.contains_key(&self.records[i].source_id) && !self.cache.contains_key(&i) {
                let patch = self.patch(i)?;
                self.cache.insert(i, Arc::new(patch));
            }
        }
        Ok(())
    }
}

fn with_suffix(stem: &Path, suffix: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}
