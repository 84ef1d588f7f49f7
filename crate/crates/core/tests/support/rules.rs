//! Data-rule checks shared by the integration tests and the acceptance run.
//! Each returns a short description of what held, or what broke.

use shadowheight_core::datapipe::{
    build_catalog, compute_height_ground_truth, split_catalog, validate_patch, DatasetMode, PatchCatalog,
    PatchValidity, RejectReason,
};
use shadowheight_core::grids::{RasterGrid, RgbImage, Split};

pub type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn grid(h: usize, w: usize, v: Vec<f32>, gsd: f64) -> RasterGrid {
    RasterGrid::from_values(h, w, v, gsd).unwrap()
}

/// Raw heights and the values the manchester rule must produce for them.
pub fn low_cut_zeroing() -> Check {
    let m = DatasetMode::manchester();
    let raw = [0.0f32, 0.3, 1.2, 1.49, 1.5, 1.51, 2.0, 7.0, -3.0];
    let want = [0.0f32, 0.0, 0.0, 0.0, 1.5, 1.51, 2.0, 7.0, 0.0];
    let dtm = grid(1, raw.len(), vec![20.0; raw.len()], 1.0);
    let dsm = grid(1, raw.len(), raw.iter().map(|h| 20.0 + h).collect(), 1.0);
    let got = compute_height_ground_truth(&dsm, &dtm, &m).map_err(|e| e.to_string())?;
    for ((&r, &w), &g) in raw.iter().zip(&want).zip(got.values()) {
        // the raw height went through f32 addition, so compare with its own rounding
        let w = if w == 0.0 { 0.0 } else { (20.0f32 + r) - 20.0 };
        ensure(g == w, || format!("raw {r} -> {g}, expected {w}"))?;
    }
    let dfc = compute_height_ground_truth(&dsm, &dtm, &DatasetMode::dfc()).map_err(|e| e.to_string())?;
    ensure(dfc.values()[2] > 1.0, || "dfc mode must keep 1.2 m".into())?;
    Ok("manchester zeroes h < 1.5 (1.49 -> 0, 1.5 kept), dfc keeps 1.2".into())
}

pub fn high_cut_exclusion() -> Check {
    let m = DatasetMode::manchester();
    let mut v = vec![5.0f32; 64 * 64];
    ensure(validate_patch(&grid(64, 64, v.clone(), 1.0), &m) == PatchValidity::Valid, || "flat patch rejected".into())?;
    v[100] = 100.0;
    ensure(validate_patch(&grid(64, 64, v.clone(), 1.0), &m).is_valid(), || "100.0 exactly must stay valid".into())?;
    for bad in [100.01f32, 150.0, f32::INFINITY] {
        v[100] = bad;
        ensure(
            validate_patch(&grid(64, 64, v.clone(), 1.0), &m) == PatchValidity::Invalid(RejectReason::Extreme),
            || format!("{bad} not rejected as extreme"),
        )?;
    }
    Ok("100.0 valid, 100.01 / 150 / inf rejected as extreme".into())
}

/// One masked pixel anywhere in the target footprint rejects exactly the patches covering it.
pub fn single_bad_pixel() -> Check {
    let m = DatasetMode::manchester();
    let mut v = vec![2.0f32; 64 * 64];
    let mut valid = vec![true; 64 * 64];
    valid[64 * 63 + 63] = false;
    let one = RasterGrid::new(64, 64, v.clone(), valid, 1.0).unwrap();
    ensure(
        validate_patch(&one, &m) == PatchValidity::Invalid(RejectReason::NoData),
        || "single nodata pixel accepted".into(),
    )?;

    // 512x512 RGB -> 2x2 patches; spoil DSM pixel (70, 10) which lies in the lower-left target
    let rgb = RgbImage::filled(512, 512, [120, 120, 120]);
    let dtm = grid(128, 128, vec![0.0; 128 * 128], 1.0);
    let mut dsm_valid = vec![true; 128 * 128];
    dsm_valid[70 * 128 + 10] = false;
    v = vec![3.0; 128 * 128];
    let dsm = RasterGrid::new(128, 128, v, dsm_valid, 1.0).unwrap();
    let c = build_catalog("tile", &rgb, &dsm, &dtm, &m, 256).map_err(|e| e.to_string())?;
    let flags: Vec<(bool, Option<RejectReason>)> = c.records.iter().map(|r| (r.valid, r.reject_reason)).collect();
    let want = vec![(true, None), (true, None), (false, Some(RejectReason::NoData)), (true, None)];
    ensure(flags == want, || format!("catalog flags {flags:?}"))?;
    ensure(split_catalog(&c, 0).map_err(|e| e.to_string())?.records[2].split.is_none(), || "rejected patch was split".into())?;
    Ok("one nodata pixel rejects its patch only; rejected records never enter a split".into())
}

fn n_valid_catalog(n: usize) -> PatchCatalog {
    let m = DatasetMode::synthetic(0.5);
    let rgb = RgbImage::filled(64, 64 * n, [100, 100, 100]);
    let h = grid(16, 16 * n, vec![1.0; 16 * 16 * n], 2.0);
    shadowheight_core::datapipe::catalog_from_height("strip", rgb, h, &m, 64).unwrap()
}

pub fn split_examples() -> Check {
    let mut seen = Vec::new();
    for (n, want) in [(100, (70, 15, 15)), (10, (6, 2, 2)), (2000, (1400, 300, 300)), (3, (3, 0, 0)), (1, (1, 0, 0))] {
        let c = n_valid_catalog(n);
        let s = split_catalog(&c, 42).map_err(|e| e.to_string())?;
        let got = (s.count(Split::Train), s.count(Split::Val), s.count(Split::Test));
        ensure(got == want, || format!("{n} patches split {got:?}, expected {want:?}"))?;
        let again = split_catalog(&c, 42).map_err(|e| e.to_string())?;
        ensure(again.records == s.records, || format!("{n} patches: rerun differs"))?;
        seen.push(format!("{n}->{}/{}/{}", want.0, want.1, want.2));
    }
    let c = n_valid_catalog(100);
    let a = split_catalog(&c, 1).map_err(|e| e.to_string())?;
    let b = split_catalog(&c, 2).map_err(|e| e.to_string())?;
    ensure(a.records != b.records, || "different seeds gave the same split".into())?;
    Ok(format!("{}; seed-stable, seed-sensitive", seen.join(", ")))
}
