//! Reading and writing images, elevation rasters and shadow maps.
//!
//! Elevation rasters are single-band GeoTIFFs (32-bit float, pixel scale in
//! tag 33550, NoData in tag 42113) or PNGs with a JSON sidecar next to them
//! (`name.png.json`) carrying the ground sample distance and value encoding.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tiff::decoder::{Decoder, DecodingResult};
use tiff::encoder::{colortype, Compression, DeflateLevel, TiffEncoder};
use tiff::tags::Tag;

use crate::error::{Error, Result};
use crate::grids::{RasterGrid, RgbImage, ShadowMap, NODATA_SENTINEL};

/// Value encoding of a PNG raster: `meters = raw * scale + offset`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RasterSidecar {
    pub gsd: f64,
    /// Raw sample value marking missing data.
    #[serde(default)]
    pub nodata: Option<f64>,
    #[serde(default = "unit_scale")]
    pub scale: f64,
    #[serde(default)]
    pub offset: f64,
}

fn unit_scale() -> f64 {
    1.0
}

/// Raw value of PNG16 pixels without data.
pub const PNG16_NODATA: u16 = u16::MAX;
/// Meters per PNG16 count.
pub const PNG16_SCALE: f64 = 0.01;

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn extension(path: &Path) -> String {
    path.extension()
        .and_then(|e| e.to_str())
        .unwrap_or_default()
        .to_ascii_lowercase()
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

/// Loads an 8-bit RGB image (PNG or TIFF); alpha is dropped, gray is expanded.
pub fn read_rgb(path: &Path) -> Result<RgbImage> {
    let img = image::ImageReader::new(open(path)?)
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()?
        .to_rgb8();
    let (w, h) = img.dimensions();
    RgbImage::new(h as usize, w as usize, img.into_raw())
}

pub fn write_rgb_png(path: &Path, rgb: &RgbImage) -> Result<()> {
    image::save_buffer_with_format(
        path,
        rgb.as_bytes(),
        rgb.width() as u32,
        rgb.height() as u32,
        image::ExtendedColorType::Rgb8,
        image::ImageFormat::Png,
    )
    .map_err(Error::from)
}

/// Writes a 1-bit grayscale PNG: shadow pixels white, the rest black.
pub fn write_shadow_png(path: &Path, map: &ShadowMap) -> Result<()> {
    let (h, w) = (map.height(), map.width());
    let row_bytes = w.div_ceil(8);
    let mut packed = vec![0u8; row_bytes * h];
    for r in 0..h {
        for c in 0..w {
            if map.get(r, c) == 1 {
                packed[r * row_bytes + c / 8] |= 0x80 >> (c % 8);
            }
        }
    }
    let mut enc = png::Encoder::new(create(path)?, w as u32, h as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::One);
    let codec = |e: png::EncodingError| Error::Codec(e.to_string());
    let mut writer = enc.write_header().map_err(codec)?;
    writer.write_image_data(&packed).map_err(codec)?;
    writer.finish().map_err(codec)
}

/// Reads a shadow map back from any grayscale image; nonzero pixels are shadow.
pub fn read_shadow_png(path: &Path) -> Result<ShadowMap> {
    let img = image::ImageReader::new(open(path)?)
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()?
        .to_luma8();
    let (w, h) = img.dimensions();
    let bits = img.into_raw().into_iter().map(|v| u8::from(v != 0)).collect();
    ShadowMap::new(h as usize, w as usize, bits)
}

/// Loads an elevation raster from GeoTIFF or sidecar-described PNG.
pub fn read_raster(path: &Path) -> Result<RasterGrid> {
    match extension(path).as_str() {
        "tif" | "tiff" => read_geotiff(path),
        "png" => read_png_raster(path),
        other => Err(Error::invalid(format!(
            "unsupported raster extension `{other}` for {}",
            path.display()
        ))),
    }
}

fn read_sidecar(path: &Path) -> Result<Option<RasterSidecar>> {
    let side = sidecar_path(path);
    if !side.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    Ok(Some(serde_json::from_str(&text)?))
}

fn read_geotiff(path: &Path) -> Result<RasterGrid> {
    let mut dec = Decoder::new(open(path)?)?;
    let (w, h) = dec.dimensions()?;
    let scale = dec
        .find_tag(Tag::ModelPixelScaleTag)?
        .map(|v| v.into_f64_vec())
        .transpose()?;
    let origin = dec
        .find_tag(Tag::ModelTiepointTag)?
        .map(|v| v.into_f64_vec())
        .transpose()?
        .filter(|t| t.len() >= 5)
        .map(|t| (t[3], t[4]));
    let tag_nodata = dec
        .find_tag(Tag::GdalNodata)?
        .map(|v| v.into_string())
        .transpose()?
        .and_then(|s| s.trim_matches(char::from(0)).trim().parse::<f64>().ok());
    let raw: Vec<f64> = match dec.read_image()? {
        DecodingResult::F32(v) => v.into_iter().map(f64::from).collect(),
        DecodingResult::F64(v) => v,
        DecodingResult::U8(v) => v.into_iter().map(f64::from).collect(),
        DecodingResult::U16(v) => v.into_iter().map(f64::from).collect(),
        DecodingResult::I16(v) => v.into_iter().map(f64::from).collect(),
        DecodingResult::U32(v) => v.into_iter().map(f64::from).collect(),
        DecodingResult::I32(v) => v.into_iter().map(f64::from).collect(),
        _ => return Err(Error::Codec(format!("unsupported sample type in {}", path.display()))),
    };
    if raw.len() != (w as usize) * (h as usize) {
        return Err(Error::Codec(format!(
            "{} is not a single-band raster",
            path.display()
        )));
    }
    let side = read_sidecar(path)?;
    let gsd = match (&scale, &side) {
        (Some(s), _) if !s.is_empty() && s[0] > 0.0 => s[0],
        (_, Some(sc)) => sc.gsd,
        _ => {
            return Err(Error::invalid(format!(
                "{} carries no pixel scale and has no sidecar",
                path.display()
            )))
        }
    };
    let nodata = tag_nodata.or(side.and_then(|s| s.nodata));
    let mut grid = grid_from_raw(h as usize, w as usize, &raw, nodata, 1.0, 0.0, gsd)?;
    grid.origin = origin;
    Ok(grid)
}

fn read_png_raster(path: &Path) -> Result<RasterGrid> {
    let side = read_sidecar(path)?.ok_or_else(|| {
        Error::invalid(format!(
            "PNG raster {} needs a sidecar {}",
            path.display(),
            sidecar_path(path).display()
        ))
    })?;
    let img = image::ImageReader::new(open(path)?)
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()?
        .to_luma16();
    let (w, h) = img.dimensions();
    let raw: Vec<f64> = img.into_raw().into_iter().map(f64::from).collect();
    grid_from_raw(h as usize, w as usize, &raw, side.nodata, side.scale, side.offset, side.gsd)
}

fn grid_from_raw(
    h: usize,
    w: usize,
    raw: &[f64],
    nodata: Option<f64>,
    scale: f64,
    offset: f64,
    gsd: f64,
) -> Result<RasterGrid> {
    let mut values = Vec::with_capacity(raw.len());
    let mut valid = Vec::with_capacity(raw.len());
    for &r in raw {
        let ok = r.is_finite() && nodata.is_none_or(|nd| r != nd);
        valid.push(ok);
        values.push(if ok { (r * scale + offset) as f32 } else { NODATA_SENTINEL });
    }
    RasterGrid::new(h, w, values, valid, gsd)
}

/// Writes a single-band 32-bit float GeoTIFF (deflate compressed).
pub fn write_raster_tiff(path: &Path, grid: &RasterGrid) -> Result<()> {
    let mut enc = TiffEncoder::new(create(path)?)?.with_compression(Compression::Deflate(DeflateLevel::Balanced));
    let mut image = enc.new_image::<colortype::Gray32Float>(grid.width() as u32, grid.height() as u32)?;
    let gsd = grid.gsd();
    let (x0, y0) = grid.origin.unwrap_or((0.0, 0.0));
    let dir = image.encoder();
    dir.write_tag(Tag::ModelPixelScaleTag, &[gsd, gsd, 0.0][..])?;
    dir.write_tag(Tag::ModelTiepointTag, &[0.0, 0.0, 0.0, x0, y0, 0.0][..])?;
    dir.write_tag(Tag::GdalNodata, format!("{NODATA_SENTINEL}").as_str())?;
    image.write_data(grid.values())?;
    Ok(())
}

/// Writes heights as 16-bit PNG counts of centimeters plus a sidecar.
///
/// Invalid pixels are stored as [`PNG16_NODATA`]; values outside
/// `[0, 655.34]` m are rejected.
pub fn write_raster_png16(path: &Path, grid: &RasterGrid) -> Result<()> {
    let mut raw = Vec::with_capacity(grid.values().len());
    for (&v, &ok) in grid.values().iter().zip(grid.valid_mask()) {
        if !ok {
            raw.push(PNG16_NODATA);
            continue;
        }
        let counts = (f64::from(v) / PNG16_SCALE).round();
        if !(0.0..f64::from(PNG16_NODATA)).contains(&counts) {
            return Err(Error::invalid(format!(
                "height {v} m does not fit the 16-bit centimeter encoding"
            )));
        }
        raw.push(counts as u16);
    }
    let img = image::ImageBuffer::<image::Luma<u16>, _>::from_raw(grid.width() as u32, grid.height() as u32, raw)
        .expect("buffer sized from grid");
    img.save_with_format(path, image::ImageFormat::Png)?;
    let side = RasterSidecar {
        gsd: grid.gsd(),
        nodata: Some(f64::from(PNG16_NODATA)),
        scale: PNG16_SCALE,
        offset: 0.0,
    };
    let sp = sidecar_path(path);
    std::fs::write(&sp, serde_json::to_string_pretty(&side)?).map_err(|e| Error::io(&sp, e))
}

/// Writes the grid in the format implied by the extension (`.tif`/`.tiff` or `.png`).
pub fn write_raster(path: &Path, grid: &RasterGrid) -> Result<()> {
    match extension(path).as_str() {
        "tif" | "tiff" => write_raster_tiff(path, grid),
        "png" => write_raster_png16(path, grid),
        other => Err(Error::invalid(format!("unsupported raster extension `{other}`"))),
    }
}

/// Five-stop color ramp (dark blue, cyan, green, yellow, red) for `t` in `[0, 1]`.
pub fn relief_color(t: f64) -> [u8; 3] {
    const STOPS: [[f64; 3]; 5] = [
        [0.0, 0.0, 128.0],
        [0.0, 200.0, 255.0],
        [40.0, 200.0, 60.0],
        [255.0, 230.0, 0.0],
        [220.0, 20.0, 20.0],
    ];
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let x = t * (STOPS.len() - 1) as f64;
    let i = (x.floor() as usize).min(STOPS.len() - 2);
    let f = x - i as f64;
    let mut out = [0u8; 3];
    for c in 0..3 {
        out[c] = (STOPS[i][c] + f * (STOPS[i + 1][c] - STOPS[i][c])).round() as u8;
    }
    out
}

/// Color-relief rendering of `values` (row-major, `height × width`) over `[lo, hi]`.
///
/// Non-finite values render black.
pub fn heatmap(values: &[f32], height: usize, width: usize, lo: f64, hi: f64) -> Result<RgbImage> {
    if values.len() != height * width {
        return Err(Error::invalid("heat map buffer does not match its dimensions"));
    }
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut data = Vec::with_capacity(values.len() * 3);
    for &v in values {
        let px = if v.is_finite() { relief_color((f64::from(v) - lo) / span) } else { [0; 3] };
        data.extend_from_slice(&px);
    }
    RgbImage::new(height, width, data)
}

/// Heat map of a raster's valid pixels, scaled to their own range.
pub fn write_heatmap_png(path: &Path, grid: &RasterGrid) -> Result<()> {
    let (lo, hi) = grid
        .valid_values()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v.into()), hi.max(v.into())));
    let masked: Vec<f32> = grid
        .values()
        .iter()
        .zip(grid.valid_mask())
        .map(|(&v, &ok)| if ok { v } else { f32::NAN })
        .collect();
    let (lo, hi) = if lo.is_finite() { (lo, hi) } else { (0.0, 1.0) };
    write_rgb_png(path, &heatmap(&masked, grid.height(), grid.width(), lo, hi)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiff_round_trip_keeps_values_gsd_and_nodata() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("h.tif");
        let mut g = RasterGrid::new(2, 3, vec![1.5, -2.25, 0.0, 7.0, 100.125, 3.0], vec![true, true, false, true, true, true], 0.5)
            .unwrap();
        g.origin = Some((350000.0, 400000.0));
        write_raster_tiff(&p, &g).unwrap();
        let back = read_raster(&p).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn png16_round_trip_at_centimeter_precision() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("h.png");
        let g = RasterGrid::new(1, 3, vec![0.0, 12.34, 655.0], vec![true, true, false], 1.0).unwrap();
        write_raster_png16(&p, &g).unwrap();
        let back = read_raster(&p).unwrap();
        assert_eq!(back.valid_mask(), g.valid_mask());
        assert!((back.values()[1] - 12.34).abs() < 1e-4);
        assert_eq!(back.gsd(), 1.0);
        let neg = RasterGrid::filled(1, 1, -1.0, 1.0).unwrap();
        assert!(write_raster_png16(&p, &neg).is_err());
    }

    #[test]
    fn png_raster_without_sidecar_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.png");
        write_rgb_png(&p, &RgbImage::filled(2, 2, [1, 2, 3])).unwrap();
        assert!(matches!(read_raster(&p), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn shadow_png_is_one_bit_and_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.png");
        let bits: Vec<u8> = (0..11 * 5).map(|i| u8::from(i % 3 == 0)).collect();
        let m = ShadowMap::new(5, 11, bits).unwrap();
        write_shadow_png(&p, &m).unwrap();
        let dec = png::Decoder::new(open(&p).unwrap()).read_info().unwrap();
        assert_eq!(dec.info().bit_depth, png::BitDepth::One);
        assert_eq!(read_shadow_png(&p).unwrap(), m);
    }

    #[test]
    fn rgb_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.png");
        let img = RgbImage::new(2, 2, (0..12).map(|v| v * 20).collect()).unwrap();
        write_rgb_png(&p, &img).unwrap();
        assert_eq!(read_rgb(&p).unwrap(), img);
    }

    #[test]
    fn ramp_endpoints() {
        assert_eq!(relief_color(0.0), [0, 0, 128]);
        assert_eq!(relief_color(1.0), [220, 20, 20]);
        assert_eq!(relief_color(f64::NAN), [0, 0, 128]);
    }
}
