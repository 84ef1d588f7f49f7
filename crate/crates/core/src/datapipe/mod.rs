//! From (RGB, DSM, DTM) rasters to validated, split patch catalogs and model inputs.

mod augment;
mod catalog;

pub use augment::{
    assemble_batch, assemble_input, augment_sample, derive_seed, epoch_order, input_tensor, sample_rng,
    train_batches, AugmentConfig, Batch,
};
pub use catalog::{build_catalog, catalog_from_height, split_catalog, split_catalog_with, PatchCatalog, PatchRecord,
    SourceRasters, CATALOG_SCHEMA_VERSION, DEFAULT_SPLIT};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grids::{RasterGrid, NODATA_SENTINEL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetName {
    ManchesterBuildings,
    DfcFull,
    Synthetic,
}

/// Resolution geometry and preprocessing thresholds of a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMode {
    pub name: DatasetName,
    pub rgb_gsd: f64,
    pub lidar_gsd: f64,
    pub ratio: usize,
    pub patch_rgb: usize,
    pub patch_out: usize,
    /// Heights strictly below this become zero.
    pub low_cut: Option<f32>,
    /// Patches with any height above this are rejected.
    pub high_cut: f32,
}

impl DatasetMode {
    pub const HIGH_CUT: f32 = 100.0;

    pub fn manchester() -> Self {
        Self {
            name: DatasetName::ManchesterBuildings,
            rgb_gsd: 0.25,
            lidar_gsd: 1.0,
            ratio: 4,
            patch_rgb: 256,
            patch_out: 64,
            low_cut: Some(1.5),
            high_cut: Self::HIGH_CUT,
        }
    }

    pub fn dfc() -> Self {
        Self {
            name: DatasetName::DfcFull,
            rgb_gsd: 0.05,
            lidar_gsd: 0.5,
            ratio: 10,
            patch_rgb: 520,
            patch_out: 52,
            low_cut: None,
            high_cut: Self::HIGH_CUT,
        }
    }

    /// Ratio-4, 64-pixel patches for the small presets.
    pub fn synthetic(rgb_gsd: f64) -> Self {
        Self {
            name: DatasetName::Synthetic,
            rgb_gsd,
            lidar_gsd: rgb_gsd * 4.0,
            ratio: 4,
            patch_rgb: 64,
            patch_out: 16,
            low_cut: None,
            high_cut: Self::HIGH_CUT,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ratio == 0 || self.patch_out == 0 || self.patch_rgb != self.ratio * self.patch_out {
            return Err(Error::invalid(format!(
                "patch_rgb {} must equal ratio {} times patch_out {}",
                self.patch_rgb, self.ratio, self.patch_out
            )));
        }
        if !(self.rgb_gsd > 0.0 && self.lidar_gsd > 0.0) {
            return Err(Error::invalid("ground sample distances must be positive"));
        }
        let implied = self.lidar_gsd / self.rgb_gsd;
        if (implied - self.ratio as f64).abs() > 1e-6 * implied {
            return Err(Error::invalid(format!(
                "lidar/rgb gsd ratio {implied} disagrees with ratio {}",
                self.ratio
            )));
        }
        if !(self.high_cut > 0.0) {
            return Err(Error::invalid("high_cut must be positive"));
        }
        Ok(())
    }
}

impl FromStr for DatasetMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "manchester" | "manchester_buildings" => Ok(Self::manchester()),
            "dfc" | "dfc_full" => Ok(Self::dfc()),
            "synthetic" => Ok(Self::synthetic(0.5)),
            other => Err(Error::invalid(format!("unknown dataset mode `{other}`"))),
        }
    }
}

/// Height above ground: DSM minus DTM, negatives clamped, optional low cut.
pub fn compute_height_ground_truth(dsm: &RasterGrid, dtm: &RasterGrid, mode: &DatasetMode) -> Result<RasterGrid> {
    if (dsm.height(), dsm.width()) != (dtm.height(), dtm.width()) {
        return Err(Error::invalid(format!(
            "DSM is {}x{} but DTM is {}x{}",
            dsm.height(),
            dsm.width(),
            dtm.height(),
            dtm.width()
        )));
    }
    if (dsm.gsd() - dtm.gsd()).abs() > 1e-9 * dsm.gsd() {
        return Err(Error::invalid(format!(
            "DSM gsd {} differs from DTM gsd {}",
            dsm.gsd(),
            dtm.gsd()
        )));
    }
    let n = dsm.values().len();
    let mut values = Vec::with_capacity(n);
    let mut valid = Vec::with_capacity(n);
    for i in 0..n {
        let ok = dsm.valid_mask()[i] && dtm.valid_mask()[i];
        valid.push(ok);
        if !ok {
            values.push(NODATA_SENTINEL);
            continue;
        }
        let mut h = (dsm.values()[i] - dtm.values()[i]).max(0.0);
        if mode.low_cut.is_some_and(|cut| h < cut) {
            h = 0.0;
        }
        values.push(h);
    }
    let mut out = RasterGrid::new(dsm.height(), dsm.width(), values, valid, dsm.gsd())?;
    out.origin = dsm.origin;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RejectReason {
    NoData,
    Extreme,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RejectReason::NoData => "nodata",
            RejectReason::Extreme => "extreme",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PatchValidity {
    Valid,
    Invalid(RejectReason),
}

impl PatchValidity {
    pub fn is_valid(self) -> bool {
        self == PatchValidity::Valid
    }

    pub fn reason(self) -> Option<RejectReason> {
        match self {
            PatchValidity::Valid => None,
            PatchValidity::Invalid(r) => Some(r),
        }
    }
}

/// A single missing pixel rejects the patch, as does any height above `high_cut`.
/// Missing data takes precedence when both occur.
pub fn validate_patch(h: &RasterGrid, mode: &DatasetMode) -> PatchValidity {
    if !h.all_valid() {
        return PatchValidity::Invalid(RejectReason::NoData);
    }
    if h.values().iter().any(|&v| v > mode.high_cut || !v.is_finite()) {
        return PatchValidity::Invalid(RejectReason::Extreme);
    }
    PatchValidity::Valid
}
