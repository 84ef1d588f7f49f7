//! Per-pixel shadow extraction written from the rule text, sharing no code with the crate.

/// `(contrast_stretch, (p_lo, p_hi), sigma, threshold)`.
pub type RefParams = (bool, (f64, f64), f64, u8);

pub const DEFAULT: RefParams = (true, (2.0, 98.0), 1.0, 15);

fn percentile(sorted: &[u8], p: f64) -> f64 {
    let pos = p / 100.0 * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let j = (i + 1).min(sorted.len() - 1);
    let a = sorted[i] as f64;
    a + (pos - i as f64) * (sorted[j] as f64 - a)
}

fn mirror(i: i64, n: i64) -> i64 {
    // reflect without repeating the edge sample
    let mut i = i;
    while i < 0 || i >= n {
        if n == 1 {
            return 0;
        }
        i = if i < 0 { -i } else { 2 * (n - 1) - i };
    }
    i
}

fn weight(d: i64, sigma: f64) -> u64 {
    let d = d as f64;
    (4096.0 * (-(d * d) / (2.0 * sigma * sigma)).exp()).round() as u64
}

/// Row-major 0/1 map of an interleaved RGB buffer.
pub fn shadow_map(rgb: &[u8], h: usize, w: usize, params: RefParams) -> Vec<u8> {
    let (stretch, (plo, phi), sigma, thr) = params;
    let mut img = rgb.to_vec();
    if stretch {
        for c in 0..3 {
            let mut ch: Vec<u8> = img.iter().skip(c).step_by(3).copied().collect();
            ch.sort_unstable();
            let lo = percentile(&ch, plo);
            let hi = percentile(&ch, phi);
            if hi > lo {
                for k in (c..img.len()).step_by(3) {
                    let s = ((img[k] as f64 - lo) * 255.0 / (hi - lo)).clamp(0.0, 255.0);
                    img[k] = (s + 0.5).floor() as u8;
                }
            }
        }
    }
    let gray: Vec<u64> = img
        .chunks(3)
        .map(|p| {
            let k = 299 * p[0] as u64 + 587 * p[1] as u64 + 114 * p[2] as u64;
            (k as f64 / 1000.0 + 0.5).floor() as u64
        })
        .collect();
    let mut out = vec![0u8; h * w];
    if sigma <= 0.0 {
        for (o, g) in out.iter_mut().zip(&gray) {
            *o = (*g < thr as u64) as u8;
        }
        return out;
    }
    let r = (3.0 * sigma).ceil() as i64;
    let total: u64 = (-r..=r).map(|d| weight(d, sigma)).sum();
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let mut acc = 0u64;
            for dy in -r..=r {
                for dx in -r..=r {
                    let yy = mirror(y + dy, h as i64) as usize;
                    let xx = mirror(x + dx, w as i64) as usize;
                    acc += weight(dy, sigma) * weight(dx, sigma) * gray[yy * w + xx];
                }
            }
            out[y as usize * w + x as usize] = (acc < thr as u64 * total * total) as u8;
        }
    }
    out
}

/// Clockwise quarter turns of an interleaved buffer.
pub fn rotate_cw(data: &[u8], h: usize, w: usize, chans: usize, k: u32) -> (Vec<u8>, usize, usize) {
    let (mut d, mut h, mut w) = (data.to_vec(), h, w);
    for _ in 0..k {
        let mut o = vec![0u8; d.len()];
        // (r, c) lands at (c, h-1-r)
        for r in 0..h {
            for c in 0..w {
                let dst = (c * h + (h - 1 - r)) * chans;
                o[dst..dst + chans].copy_from_slice(&d[(r * w + c) * chans..(r * w + c + 1) * chans]);
            }
        }
        d = o;
        std::mem::swap(&mut h, &mut w);
    }
    (d, h, w)
}
